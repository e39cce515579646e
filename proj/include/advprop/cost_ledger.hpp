#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advprop/common.hpp"
#include "advprop/rational.hpp"

namespace advprop {

enum class TrainMode : uint8_t { vanilla, advprop, fast };

inline const char* to_string(TrainMode m) {
    switch (m) {
        case TrainMode::vanilla: return "vanilla";
        case TrainMode::advprop: return "advprop";
        case TrainMode::fast: return "fast";
    }
    return "?";
}

enum class PassKind : uint8_t { clean, attack_noise, adversarial, eval };

inline const char* to_string(PassKind k) {
    switch (k) {
        case PassKind::clean: return "clean";
        case PassKind::attack_noise: return "attack_noise";
        case PassKind::adversarial: return "adversarial";
        case PassKind::eval: return "eval";
    }
    return "?";
}

inline PassKind pass_kind_from_string(const std::string& s) {
    if (s == "clean") return PassKind::clean;
    if (s == "attack_noise") return PassKind::attack_noise;
    if (s == "adversarial") return PassKind::adversarial;
    if (s == "eval") return PassKind::eval;
    throw IoError(concat("unknown pass kind '", s, "'"));
}

/// Append-only account of forward-backward pass-units. One unit is one
/// example through one forward+backward, regardless of which gradients the
/// pass produced. Eval passes are kept out of training totals.
class CostLedger {
  public:
    struct Record {
        int epoch;
        int64_t step;
        PassKind kind;
        int64_t count;
    };

    void record_pass(PassKind kind, int64_t n) {
        if (n < 1) throw GraphError("ledger record must count at least one example");
        records_.push_back({epoch_, step_, kind, n});
    }

    void begin_epoch(int epoch) { epoch_ = epoch; }
    void next_step() { ++step_; }
    void mark_epoch_complete(int epoch) { complete_epochs_.push_back(epoch); }

    const std::vector<Record>& records() const { return records_; }
    const std::vector<int>& complete_epochs() const { return complete_epochs_; }

    int64_t total(PassKind kind) const {
        int64_t t = 0;
        for (const auto& r : records_)
            if (r.kind == kind) t += r.count;
        return t;
    }

    /// All training pass-units (eval excluded).
    int64_t training_total() const {
        int64_t t = 0;
        for (const auto& r : records_)
            if (r.kind != PassKind::eval) t += r.count;
        return t;
    }

    int64_t training_total_for_epoch(int epoch) const {
        int64_t t = 0;
        for (const auto& r : records_)
            if (r.kind != PassKind::eval && r.epoch == epoch) t += r.count;
        return t;
    }

  private:
    std::vector<Record> records_;
    std::vector<int> complete_epochs_;
    int epoch_ = 0;
    int64_t step_ = 0;
};

/// Parameters of the per-epoch cost formulas.
struct BudgetModel {
    TrainMode mode = TrainMode::vanilla;
    int64_t n = 0;  // examples per epoch
    int k = 1;
    Rational p_adv{0, 1};
};

/// Exact pass-units per epoch: vanilla N, advprop (K+2)N,
/// fast (1 + p_adv K)N. Integer arithmetic throughout.
inline int64_t theoretical_cost_per_epoch(const BudgetModel& m) {
    if (m.n < 1) throw ConfigError("budget model needs n >= 1");
    if (m.k < 1) throw ConfigError("budget model needs k >= 1");
    switch (m.mode) {
        case TrainMode::vanilla:
            return m.n;
        case TrainMode::advprop:
            return (static_cast<int64_t>(m.k) + 2) * m.n;
        case TrainMode::fast: {
            int64_t extra_num = m.p_adv.num * m.k * m.n;
            if (extra_num % m.p_adv.den != 0)
                throw ConfigError(concat("fast budget not integral: p_adv=", to_string(m.p_adv),
                                         " K=", m.k, " N=", m.n));
            return m.n + extra_num / m.p_adv.den;
        }
    }
    throw ConfigError("unknown training mode");
}

struct AuditReport {
    bool match = false;
    int64_t theoretical_per_epoch = 0;
    std::vector<int64_t> measured_per_epoch;
    int64_t total_measured = 0;
    int64_t total_theoretical = 0;
    int64_t max_discrepancy = 0;  // max |measured - theoretical| over epochs
};

/// Compares each complete epoch's measured training pass-units against the
/// model. Exact: match only when every epoch agrees to the unit.
inline AuditReport audit(const CostLedger& ledger, const BudgetModel& model) {
    if (ledger.complete_epochs().empty())
        throw ConfigError("audit requires at least one complete epoch in the ledger");
    AuditReport rep;
    rep.theoretical_per_epoch = theoretical_cost_per_epoch(model);
    rep.match = true;
    for (int e : ledger.complete_epochs()) {
        int64_t measured = ledger.training_total_for_epoch(e);
        rep.measured_per_epoch.push_back(measured);
        rep.total_measured += measured;
        rep.total_theoretical += rep.theoretical_per_epoch;
        int64_t d = measured - rep.theoretical_per_epoch;
        if (d < 0) d = -d;
        rep.max_discrepancy = std::max(rep.max_discrepancy, d);
        if (measured != rep.theoretical_per_epoch) rep.match = false;
    }
    return rep;
}

}  // namespace advprop
