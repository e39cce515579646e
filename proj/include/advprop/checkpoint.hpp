#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "advprop/layers.hpp"
#include "advprop/optim.hpp"

namespace advprop {

/// Versioned binary container of named tensor records. Used for model
/// checkpoints (parameters, running statistics, optimizer state) and for
/// serialized datasets. Integers are little-endian, payloads are raw IEEE
/// values in the container's precision.
namespace container {

constexpr uint32_t kMagic = 0x41504350;  // "APCP"
constexpr uint32_t kVersion = 1;

enum class RecordKind : uint8_t { param = 0, running_stat = 1, opt_state = 2, data = 3 };

struct Record {
    std::string name;
    RecordKind kind = RecordKind::param;
    uint8_t role = 0;
    Shape shape;
    std::vector<double> values;  // widened on read; written in file precision
};

inline void put_u16(std::ostream& os, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw IoError("truncated container");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("truncated container");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

template <class Real>
void write(const std::string& path, const std::vector<Record>& records, uint32_t completed_epochs) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(concat("cannot open '", path, "' for writing"));
    put_u32(os, kMagic);
    put_u32(os, kVersion);
    os.put(static_cast<char>(sizeof(Real)));
    os.put(0);
    put_u16(os, 0);
    put_u32(os, completed_epochs);
    put_u32(os, static_cast<uint32_t>(records.size()));
    for (const auto& r : records) {
        put_u16(os, static_cast<uint16_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        os.put(static_cast<char>(r.kind));
        os.put(static_cast<char>(r.role));
        os.put(static_cast<char>(r.shape.size()));
        for (int d : r.shape) put_u32(os, static_cast<uint32_t>(d));
        for (double v : r.values) {
            Real x = static_cast<Real>(v);
            char buf[sizeof(Real)];
            std::memcpy(buf, &x, sizeof(Real));
            os.write(buf, sizeof(Real));
        }
    }
    if (!os) throw IoError(concat("failed writing '", path, "'"));
}

struct File {
    uint8_t precision = 0;
    uint32_t completed_epochs = 0;
    std::vector<Record> records;
};

inline File read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(concat("cannot open '", path, "'"));
    uint32_t magic = get_u32(is);
    if (magic != kMagic)
        throw IoError(concat("bad container magic ", magic, " in '", path, "'"));
    uint32_t version = get_u32(is);
    if (version != kVersion)
        throw IoError(concat("unsupported container version ", version, " (supported: ", kVersion, ")"));
    File f;
    f.precision = static_cast<uint8_t>(is.get());
    is.get();
    get_u16(is);
    f.completed_epochs = get_u32(is);
    uint32_t count = get_u32(is);
    for (uint32_t i = 0; i < count; ++i) {
        Record r;
        uint16_t nlen = get_u16(is);
        r.name.resize(nlen);
        is.read(r.name.data(), nlen);
        r.kind = static_cast<RecordKind>(is.get());
        r.role = static_cast<uint8_t>(is.get());
        int ndim = is.get();
        if (!is) throw IoError("truncated container");
        for (int d = 0; d < ndim; ++d) r.shape.push_back(static_cast<int>(get_u32(is)));
        std::size_t n = numel(r.shape);
        r.values.resize(n);
        if (f.precision == 4) {
            std::vector<float> buf(n);
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
            for (std::size_t j = 0; j < n; ++j) r.values[j] = buf[j];
        } else if (f.precision == 8) {
            is.read(reinterpret_cast<char*>(r.values.data()), static_cast<std::streamsize>(n * 8));
        } else {
            throw IoError(concat("unknown container precision tag ", int(f.precision)));
        }
        if (!is) throw IoError("truncated container");
        f.records.push_back(std::move(r));
    }
    return f;
}

}  // namespace container

template <class Real>
std::vector<container::Record> network_records(Network<Real>& net, SgdMomentum<Real>* opt) {
    std::vector<container::Record> records;
    auto registry = net.params();
    for (auto& p : registry) {
        container::Record r;
        r.name = p.name;
        r.kind = container::RecordKind::param;
        r.role = static_cast<uint8_t>(p.role);
        r.shape = p.tensor->shape;
        r.values.assign(p.tensor->data.begin(), p.tensor->data.end());
        records.push_back(std::move(r));
    }
    for (auto& b : net.buffers()) {
        container::Record r;
        r.name = b.name;
        r.kind = container::RecordKind::running_stat;
        r.shape = {static_cast<int>(b.values->size())};
        r.values.assign(b.values->begin(), b.values->end());
        records.push_back(std::move(r));
    }
    if (opt) {
        opt->resize(registry.size());
        for (std::size_t i = 0; i < registry.size(); ++i) {
            container::Record r;
            r.name = concat("opt.velocity.", registry[i].name);
            r.kind = container::RecordKind::opt_state;
            r.shape = {static_cast<int>(opt->velocity[i].size())};
            r.values.assign(opt->velocity[i].begin(), opt->velocity[i].end());
            records.push_back(std::move(r));
        }
    }
    return records;
}

template <class Real>
void save_checkpoint(const std::string& path, Network<Real>& net, SgdMomentum<Real>* opt,
                     uint32_t completed_epochs) {
    container::write<Real>(path, network_records(net, opt), completed_epochs);
}

/// Loads parameters and running statistics into an already-built network of
/// the same architecture and precision; optimizer state when `opt` is given.
/// Returns the stored completed-epoch count.
template <class Real>
uint32_t load_checkpoint(const std::string& path, Network<Real>& net, SgdMomentum<Real>* opt) {
    container::File f = container::read(path);
    if (f.precision != sizeof(Real))
        throw IoError(concat("checkpoint precision f", f.precision * 8, " does not match engine f",
                             sizeof(Real) * 8));
    auto registry = net.params();
    auto buffers = net.buffers();
    if (opt) opt->resize(registry.size());
    auto find = [&](const std::string& name, container::RecordKind kind) -> container::Record* {
        for (auto& r : f.records)
            if (r.name == name && r.kind == kind) return &r;
        return nullptr;
    };
    for (std::size_t i = 0; i < registry.size(); ++i) {
        auto* r = find(registry[i].name, container::RecordKind::param);
        if (!r) throw IoError(concat("checkpoint missing parameter '", registry[i].name, "'"));
        if (r->shape != registry[i].tensor->shape)
            throw IoError(concat("checkpoint shape mismatch for '", registry[i].name, "'"));
        for (std::size_t j = 0; j < r->values.size(); ++j)
            registry[i].tensor->data[j] = static_cast<Real>(r->values[j]);
        if (opt) {
            auto* v = find(concat("opt.velocity.", registry[i].name), container::RecordKind::opt_state);
            if (v) {
                opt->velocity[i].resize(v->values.size());
                for (std::size_t j = 0; j < v->values.size(); ++j)
                    opt->velocity[i][j] = static_cast<Real>(v->values[j]);
            }
        }
    }
    for (auto& b : buffers) {
        auto* r = find(b.name, container::RecordKind::running_stat);
        if (!r) throw IoError(concat("checkpoint missing running statistic '", b.name, "'"));
        if (r->values.size() != b.values->size())
            throw IoError(concat("checkpoint size mismatch for '", b.name, "'"));
        for (std::size_t j = 0; j < r->values.size(); ++j) (*b.values)[j] = static_cast<Real>(r->values[j]);
    }
    return f.completed_epochs;
}

}  // namespace advprop
