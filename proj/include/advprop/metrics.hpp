#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advprop/cost_ledger.hpp"
#include "advprop/trainers.hpp"

namespace advprop {

using json = nlohmann::json;

/// One logging event (one per epoch). Per-pass training statistics feed the
/// leakage diagnostic; the ledger snapshot feeds budget reports.
struct MetricsRecord {
    std::string run_id;
    int epoch = 0;
    int64_t step = 0;
    double lr = 0;
    double loss_clean = 0, acc_clean = 0;
    int64_t n_clean = 0;
    double loss_noise = 0, acc_noise = 0;
    int64_t n_noise = 0;
    double loss_adv = 0, acc_adv = 0;
    int64_t n_adv = 0;
    double val_acc = 0;
    bool has_val = false;
    int64_t units_clean = 0, units_attack_noise = 0, units_adversarial = 0, units_eval = 0;
    double wall_s = 0;
};

inline json to_json(const MetricsRecord& r) {
    json j;
    j["run_id"] = r.run_id;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["lr"] = r.lr;
    if (r.n_clean > 0) {
        j["loss_clean"] = r.loss_clean;
        j["acc_clean"] = r.acc_clean;
        j["n_clean"] = r.n_clean;
    }
    if (r.n_noise > 0) {
        j["loss_noise"] = r.loss_noise;
        j["acc_noise"] = r.acc_noise;
        j["n_noise"] = r.n_noise;
    }
    if (r.n_adv > 0) {
        j["loss_adv"] = r.loss_adv;
        j["acc_adv"] = r.acc_adv;
        j["n_adv"] = r.n_adv;
    }
    if (r.has_val) j["val_acc"] = r.val_acc;
    j["units"] = {{"clean", r.units_clean},
                  {"attack_noise", r.units_attack_noise},
                  {"adversarial", r.units_adversarial},
                  {"eval", r.units_eval}};
    j["wall_s"] = r.wall_s;
    return j;
}

inline MetricsRecord metrics_from_json(const json& j) {
    MetricsRecord r;
    r.run_id = j.value("run_id", "");
    r.epoch = j.value("epoch", 0);
    r.step = j.value("step", int64_t(0));
    r.lr = j.value("lr", 0.0);
    r.loss_clean = j.value("loss_clean", 0.0);
    r.acc_clean = j.value("acc_clean", 0.0);
    r.n_clean = j.value("n_clean", int64_t(0));
    r.loss_noise = j.value("loss_noise", 0.0);
    r.acc_noise = j.value("acc_noise", 0.0);
    r.n_noise = j.value("n_noise", int64_t(0));
    r.loss_adv = j.value("loss_adv", 0.0);
    r.acc_adv = j.value("acc_adv", 0.0);
    r.n_adv = j.value("n_adv", int64_t(0));
    if (j.contains("val_acc")) {
        r.val_acc = j["val_acc"].get<double>();
        r.has_val = true;
    }
    if (j.contains("units")) {
        const auto& u = j["units"];
        r.units_clean = u.value("clean", int64_t(0));
        r.units_attack_noise = u.value("attack_noise", int64_t(0));
        r.units_adversarial = u.value("adversarial", int64_t(0));
        r.units_eval = u.value("eval", int64_t(0));
    }
    r.wall_s = j.value("wall_s", 0.0);
    return r;
}

/// Append-only line-delimited writer; one flushed line per record so a
/// crashed run stays parseable up to the last complete line.
class JsonlWriter {
  public:
    explicit JsonlWriter(const std::string& path) : os_(path, std::ios::app) {
        if (!os_) throw IoError(concat("cannot open '", path, "' for appending"));
    }
    void write(const json& j) {
        os_ << j.dump() << '\n';
        os_.flush();
    }

  private:
    std::ofstream os_;
};

/// Parses a JSONL file, ignoring a trailing incomplete line.
inline std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError(concat("cannot open '", path, "'"));
    std::vector<json> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;  // torn tail of a crashed run
        out.push_back(std::move(j));
    }
    return out;
}

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
    std::vector<MetricsRecord> out;
    for (const auto& j : read_jsonl(path)) out.push_back(metrics_from_json(j));
    return out;
}

inline std::vector<EpochPassStats> epoch_pass_stats(const std::vector<MetricsRecord>& records) {
    std::vector<EpochPassStats> out;
    for (const auto& r : records) {
        EpochPassStats e;
        e.epoch = r.epoch;
        e.acc_clean = r.acc_clean;
        e.has_clean = r.n_clean > 0;
        e.acc_adv = r.acc_adv;
        e.has_adv = r.n_adv > 0;
        out.push_back(e);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ledger persistence (line-delimited alongside the metrics)

class LedgerWriter {
  public:
    LedgerWriter(const std::string& path, int64_t examples_per_epoch, std::size_t already_flushed)
        : writer_(path), flushed_(already_flushed) {
        if (already_flushed == 0)
            writer_.write(json{{"meta", {{"examples_per_epoch", examples_per_epoch}}}});
    }

    /// Appends any ledger records not yet on disk plus the epoch marker.
    void flush_epoch(const CostLedger& ledger, int epoch) {
        const auto& rec = ledger.records();
        for (; flushed_ < rec.size(); ++flushed_) {
            const auto& r = rec[flushed_];
            writer_.write(json{{"epoch", r.epoch},
                               {"step", r.step},
                               {"kind", to_string(r.kind)},
                               {"n", r.count}});
        }
        writer_.write(json{{"epoch_complete", epoch}});
    }

  private:
    JsonlWriter writer_;
    std::size_t flushed_;
};

struct LoadedLedger {
    CostLedger ledger;
    int64_t examples_per_epoch = 0;
    std::size_t record_count = 0;
};

inline LoadedLedger load_ledger(const std::string& path) {
    LoadedLedger out;
    for (const auto& j : read_jsonl(path)) {
        if (j.contains("meta")) {
            out.examples_per_epoch = j["meta"].value("examples_per_epoch", int64_t(0));
        } else if (j.contains("epoch_complete")) {
            out.ledger.mark_epoch_complete(j["epoch_complete"].get<int>());
        } else if (j.contains("kind")) {
            out.ledger.begin_epoch(j.value("epoch", 0));
            out.ledger.record_pass(pass_kind_from_string(j["kind"].get<std::string>()),
                                   j.value("n", int64_t(0)));
            ++out.record_count;
        }
    }
    return out;
}

}  // namespace advprop
