#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "advprop/checkpoint.hpp"
#include "advprop/rng.hpp"
#include "advprop/tensor.hpp"
#include "advprop/trainers.hpp"

namespace advprop {

template <class Real>
struct Dataset {
    Tensor<Real> images;  // [N,C,H,W], values in [0,1]
    std::vector<int> labels;
    int classes = 0;
    std::string split;

    int size() const { return images.ndim() ? images.dim(0) : 0; }

    void validate() const {
        if (static_cast<int>(labels.size()) != size())
            throw IoError(concat("dataset has ", size(), " images but ", labels.size(), " labels"));
        for (int y : labels)
            if (y < 0 || y >= classes) throw IoError(concat("label ", y, " outside [0,", classes, ")"));
        for (Real v : images.data)
            if (!(v >= Real(0) && v <= Real(1))) throw IoError("dataset pixel outside [0,1]");
    }
};

// ---------------------------------------------------------------------------
// IDX ingestion (big-endian, magic 2051 for images / 2049 for labels)

namespace detail {

inline uint32_t read_be_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError(concat("truncated IDX file while reading ", what));
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace detail

template <class Real>
Dataset<Real> load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw IoError(concat("cannot open '", images_path, "'"));
    uint32_t magic = detail::read_be_u32(imgs, "image magic");
    if (magic != 2051)
        throw IoError(concat("bad IDX image magic ", magic, " (expected 2051) in '", images_path, "'"));
    uint32_t n = detail::read_be_u32(imgs, "image count");
    uint32_t h = detail::read_be_u32(imgs, "image rows");
    uint32_t w = detail::read_be_u32(imgs, "image cols");

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw IoError(concat("cannot open '", labels_path, "'"));
    uint32_t lmagic = detail::read_be_u32(labs, "label magic");
    if (lmagic != 2049)
        throw IoError(concat("bad IDX label magic ", lmagic, " (expected 2049) in '", labels_path, "'"));
    uint32_t ln = detail::read_be_u32(labs, "label count");
    if (ln != n)
        throw IoError(concat("IDX image count ", n, " does not match label count ", ln));

    Dataset<Real> ds;
    ds.images = Tensor<Real>(Shape{static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
    std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
    for (uint32_t i = 0; i < n; ++i) {
        imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!imgs) throw IoError(concat("truncated IDX image data in '", images_path, "'"));
        Real* dst = ds.images.data.data() + static_cast<std::size_t>(i) * buf.size();
        for (std::size_t p = 0; p < buf.size(); ++p) dst[p] = static_cast<Real>(buf[p]) / Real(255);
    }
    ds.labels.resize(n);
    int max_label = 0;
    for (uint32_t i = 0; i < n; ++i) {
        int c = labs.get();
        if (c < 0) throw IoError(concat("truncated IDX label data in '", labels_path, "'"));
        ds.labels[i] = c;
        max_label = std::max(max_label, c);
    }
    ds.classes = max_label + 1;
    ds.split = "idx";
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic class-blob images

/// Class-conditional images: a gaussian intensity bump whose location
/// identifies the class (jittered a little per example) over a noisy
/// background, clipped to [0,1]. `separation` scales the bump amplitude;
/// zero makes the classes indistinguishable.
template <class Real>
Dataset<Real> synth_blobs(int n, int classes, const Shape& chw, double separation, uint64_t seed) {
    if (chw.size() != 3) throw ConfigError("synth_blobs expects a [C,H,W] shape");
    if (n < classes) throw ConfigError("synth_blobs needs at least one example per class");
    if (classes < 2) throw ConfigError("synth_blobs needs at least 2 classes");
    int C = chw[0], H = chw[1], W = chw[2];
    const double bg_noise = 0.12;
    const double radius = H / 5.0;
    const double ring = H / 3.2;
    const int jitter = H >= 16 ? 2 : 1;
    Dataset<Real> ds;
    ds.images = Tensor<Real>(Shape{n, C, H, W});
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.classes = classes;
    ds.split = "synth";
    for (int i = 0; i < n; ++i) {
        int y = i % classes;
        ds.labels[static_cast<std::size_t>(i)] = y;
        Rng rng(derive_seed(seed, SeedStream::data_synth, static_cast<uint64_t>(i)));
        double angle = 6.283185307179586 * y / classes;
        double cx = W / 2.0 + ring * std::cos(angle) + rng.uniform_int(-jitter, jitter);
        double cy = H / 2.0 + ring * std::sin(angle) + rng.uniform_int(-jitter, jitter);
        Real* img = ds.images.data.data() + static_cast<std::size_t>(i) * C * H * W;
        for (int c = 0; c < C; ++c)
            for (int r = 0; r < H; ++r)
                for (int col = 0; col < W; ++col) {
                    double v = 0.5 + bg_noise * rng.normal();
                    double dx = col - cx, dy = r - cy;
                    v += separation * std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
                    img[(static_cast<std::size_t>(c) * H + r) * W + col] =
                        static_cast<Real>(std::min(1.0, std::max(0.0, v)));
                }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Corruptions (severity parameter table is published in the README)

enum class CorruptionType : uint8_t { gaussian_noise, impulse_noise, gaussian_blur, contrast, brightness };

constexpr std::array<CorruptionType, 5> kAllCorruptions = {
    CorruptionType::gaussian_noise, CorruptionType::impulse_noise, CorruptionType::gaussian_blur,
    CorruptionType::contrast, CorruptionType::brightness};

inline const char* to_string(CorruptionType t) {
    switch (t) {
        case CorruptionType::gaussian_noise: return "gaussian_noise";
        case CorruptionType::impulse_noise: return "impulse_noise";
        case CorruptionType::gaussian_blur: return "gaussian_blur";
        case CorruptionType::contrast: return "contrast";
        case CorruptionType::brightness: return "brightness";
    }
    return "?";
}

inline CorruptionType corruption_from_string(const std::string& s) {
    for (CorruptionType t : kAllCorruptions)
        if (s == to_string(t)) return t;
    throw ConfigError(concat("unknown corruption type '", s, "'"));
}

struct CorruptionSpec {
    CorruptionType type = CorruptionType::gaussian_noise;
    int severity = 1;  // 1..3; 0 is the identity
    uint64_t seed = 0;
};

namespace detail {

// severity-indexed magnitudes (index 0 unused)
constexpr std::array<double, 4> kGaussianSigma = {0.0, 0.04, 0.08, 0.12};
constexpr std::array<double, 4> kImpulseFraction = {0.0, 0.02, 0.05, 0.10};
constexpr std::array<double, 4> kBlurSigma = {0.0, 0.5, 0.8, 1.2};
constexpr std::array<double, 4> kContrastFactor = {1.0, 0.65, 0.45, 0.30};
constexpr std::array<double, 4> kBrightnessDelta = {0.0, 0.10, 0.18, 0.26};

template <class Real>
void separable_blur(std::vector<Real>& img, int C, int H, int W, double sigma) {
    int radius = static_cast<int>(std::ceil(2.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += k[static_cast<std::size_t>(i + radius)];
    }
    for (auto& v : k) v /= sum;
    std::vector<Real> tmp(img.size());
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    for (int c = 0; c < C; ++c) {
        std::size_t base = static_cast<std::size_t>(c) * H * W;
        for (int r = 0; r < H; ++r)
            for (int col = 0; col < W; ++col) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<std::size_t>(i + radius)] *
                           img[base + static_cast<std::size_t>(r) * W + clampi(col + i, W)];
                tmp[base + static_cast<std::size_t>(r) * W + col] = static_cast<Real>(acc);
            }
        for (int r = 0; r < H; ++r)
            for (int col = 0; col < W; ++col) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<std::size_t>(i + radius)] *
                           tmp[base + static_cast<std::size_t>(clampi(r + i, H)) * W + col];
                img[base + static_cast<std::size_t>(r) * W + col] = static_cast<Real>(acc);
            }
    }
}

}  // namespace detail

/// Applies one corruption to a [C,H,W] image in [0,1]; output is clipped
/// back to [0,1]. Deterministic given the spec's seed. Severity 0 is the
/// identity for every type.
template <class Real>
Tensor<Real> corrupt(const Tensor<Real>& image, const CorruptionSpec& spec) {
    if (image.ndim() != 3) throw ConfigError("corrupt expects a [C,H,W] image");
    if (spec.severity < 0 || spec.severity > 3)
        throw ConfigError(concat("corruption severity ", spec.severity, " outside [0,3]"));
    Tensor<Real> out = image;
    if (spec.severity == 0) return out;
    int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    Rng rng(spec.seed);
    switch (spec.type) {
        case CorruptionType::gaussian_noise: {
            double sigma = detail::kGaussianSigma[static_cast<std::size_t>(spec.severity)];
            for (auto& v : out.data) v += static_cast<Real>(sigma * rng.normal());
            break;
        }
        case CorruptionType::impulse_noise: {
            double frac = detail::kImpulseFraction[static_cast<std::size_t>(spec.severity)];
            for (auto& v : out.data)
                if (rng.next_unit() < frac) v = rng.next_unit() < 0.5 ? Real(0) : Real(1);
            break;
        }
        case CorruptionType::gaussian_blur:
            detail::separable_blur(out.data, C, H, W,
                                   detail::kBlurSigma[static_cast<std::size_t>(spec.severity)]);
            break;
        case CorruptionType::contrast: {
            double f = detail::kContrastFactor[static_cast<std::size_t>(spec.severity)];
            double mean = 0;
            for (Real v : out.data) mean += v;
            mean /= static_cast<double>(out.data.size());
            for (auto& v : out.data) v = static_cast<Real>(mean + f * (v - mean));
            break;
        }
        case CorruptionType::brightness: {
            double d = detail::kBrightnessDelta[static_cast<std::size_t>(spec.severity)];
            for (auto& v : out.data) v += static_cast<Real>(d);
            break;
        }
    }
    for (auto& v : out.data) v = std::min(Real(1), std::max(Real(0), v));
    return out;
}

template <class Real>
Dataset<Real> corrupt_dataset(const Dataset<Real>& ds, CorruptionType type, int severity, uint64_t seed) {
    Dataset<Real> out = ds;
    int n = ds.size();
    std::size_t stride = ds.images.size() / static_cast<std::size_t>(n);
    Shape img_shape(ds.images.shape.begin() + 1, ds.images.shape.end());
    for (int i = 0; i < n; ++i) {
        Tensor<Real> img(img_shape);
        std::copy(ds.images.data.begin() + static_cast<long>(i) * static_cast<long>(stride),
                  ds.images.data.begin() + static_cast<long>(i + 1) * static_cast<long>(stride),
                  img.data.begin());
        Tensor<Real> c = corrupt(img, {type, severity, derive_seed(seed, SeedStream::corruption,
                                                                   static_cast<uint64_t>(i))});
        std::copy(c.data.begin(), c.data.end(),
                  out.images.data.begin() + static_cast<long>(i) * static_cast<long>(stride));
    }
    out.split = concat(ds.split, "+", to_string(type), "@", severity);
    return out;
}

// ---------------------------------------------------------------------------
// Corruption-robustness suite

struct SuiteEntry {
    CorruptionType type;
    int severity;
    double error;
};

struct SuiteResult {
    std::vector<SuiteEntry> entries;
    std::vector<double> per_type_error;  // mean over severities, kAllCorruptions order
    double mean_error = 0;
    double mean_accuracy = 0;
    bool normalized = false;
    double score = 0;  // 100 * mean over types of (error / reference error) when normalized
};

/// Evaluates the 5 x 3 corruption grid. When the reference model's per-type
/// errors are given, the score is the reference-normalized mean (reference
/// model scores exactly 100); otherwise the unnormalized mean error is
/// reported as the score and `normalized` stays false.
template <class Real>
SuiteResult corruption_suite_eval(Network<Real>& net, const Dataset<Real>& ds, uint64_t seed,
                                  const std::vector<double>* reference_per_type_errors = nullptr,
                                  CostLedger* ledger = nullptr) {
    if (reference_per_type_errors && reference_per_type_errors->size() != kAllCorruptions.size())
        throw ConfigError("reference errors must cover every corruption type");
    SuiteResult res;
    std::size_t ti = 0;
    for (CorruptionType t : kAllCorruptions) {
        double type_err = 0;
        for (int sev = 1; sev <= 3; ++sev) {
            Dataset<Real> corrupted =
                corrupt_dataset(ds, t, sev, derive_seed(seed, SeedStream::corruption,
                                                        static_cast<uint64_t>(ti), static_cast<uint64_t>(sev)));
            double err = 1.0 - evaluate(net, corrupted.images, corrupted.labels, 256, ledger);
            res.entries.push_back({t, sev, err});
            type_err += err;
            res.mean_error += err;
        }
        res.per_type_error.push_back(type_err / 3.0);
        ++ti;
    }
    res.mean_error /= static_cast<double>(res.entries.size());
    res.mean_accuracy = 1.0 - res.mean_error;
    if (reference_per_type_errors) {
        bool ok = true;
        for (double r : *reference_per_type_errors)
            if (!(r > 0)) ok = false;
        if (ok) {
            double s = 0;
            for (std::size_t i = 0; i < res.per_type_error.size(); ++i)
                s += res.per_type_error[i] / (*reference_per_type_errors)[i];
            res.score = 100.0 * s / static_cast<double>(res.per_type_error.size());
            res.normalized = true;
        }
    }
    if (!res.normalized) res.score = 100.0 * res.mean_error;
    return res;
}

// ---------------------------------------------------------------------------
// Batching

/// Epoch batching plan: seed-shuffled order cut into full batches (the
/// remainder is dropped), each batch later read as `shards` contiguous
/// statistic shards.
inline std::vector<std::vector<int>> make_batches(int n, int total_batch, int shards, uint64_t seed,
                                                  bool drop_last = true) {
    if (total_batch < 1 || total_batch % shards != 0)
        throw ConfigError(concat("batch of ", total_batch, " not divisible into ", shards, " shards"));
    std::vector<int> order = random_permutation(n, seed);
    std::vector<std::vector<int>> batches;
    for (int at = 0; at + total_batch <= n; at += total_batch)
        batches.emplace_back(order.begin() + at, order.begin() + at + total_batch);
    if (!drop_last && n % total_batch != 0)
        batches.emplace_back(order.begin() + (n - n % total_batch), order.end());
    return batches;
}

template <class Real>
Batch<Real> fetch_batch(const Dataset<Real>& ds, const std::vector<int>& indices) {
    Batch<Real> b;
    b.x = gather_rows(ds.images, indices);
    b.y.reserve(indices.size());
    for (int i : indices) b.y.push_back(ds.labels[static_cast<std::size_t>(i)]);
    return b;
}

// ---------------------------------------------------------------------------
// Dataset serialization through the tensor-record container

template <class Real>
void save_dataset(const std::string& path, const Dataset<Real>& ds) {
    std::vector<container::Record> records(3);
    records[0].name = "images";
    records[0].kind = container::RecordKind::data;
    records[0].shape = ds.images.shape;
    records[0].values.assign(ds.images.data.begin(), ds.images.data.end());
    records[1].name = "labels";
    records[1].kind = container::RecordKind::data;
    records[1].shape = {ds.size()};
    records[1].values.assign(ds.labels.begin(), ds.labels.end());
    records[2].name = "classes";
    records[2].kind = container::RecordKind::data;
    records[2].shape = {1};
    records[2].values = {static_cast<double>(ds.classes)};
    container::write<Real>(path, records, 0);
}

template <class Real>
Dataset<Real> load_dataset(const std::string& path) {
    container::File f = container::read(path);
    Dataset<Real> ds;
    for (auto& r : f.records) {
        if (r.name == "images") {
            ds.images = Tensor<Real>(r.shape);
            for (std::size_t i = 0; i < r.values.size(); ++i)
                ds.images.data[i] = static_cast<Real>(r.values[i]);
        } else if (r.name == "labels") {
            for (double v : r.values) ds.labels.push_back(static_cast<int>(v));
        } else if (r.name == "classes") {
            ds.classes = static_cast<int>(r.values.at(0));
        }
    }
    if (ds.size() == 0 || ds.classes == 0)
        throw IoError(concat("'", path, "' is not a serialized dataset"));
    ds.split = "file";
    ds.validate();
    return ds;
}

}  // namespace advprop
