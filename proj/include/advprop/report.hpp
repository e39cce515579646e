#pragma once

#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "advprop/experiment.hpp"

namespace advprop {

/// One report row; numeric fields below zero mean "not available".
struct RunSummary {
    std::string run_id;
    std::string mode = "-";
    std::string p_adv = "-";
    int k = -1;
    int epochs_completed = -1;
    int epochs_target = -1;
    int64_t units_measured = -1;
    int64_t units_theoretical = -1;
    int budget_match = -1;  // 1/0, -1 unknown
    double clean_acc = -1;
    double corr_score = -1;
    bool corr_normalized = false;
    int leakage = -1;  // 1/0, -1 unknown or not applicable
    std::string flags = "-";  // sync/rebalance/random_init/shuffle ablation axes
    bool complete = false;
};

inline RunSummary summarize_run(const std::string& dir) {
    RunPaths paths{dir};
    RunSummary s;
    s.run_id = run_id_of(dir);
    if (!std::filesystem::exists(paths.config())) return s;
    ExperimentConfig cfg = load_config(paths.config());
    s.mode = to_string(cfg.train.mode);
    s.p_adv = cfg.train.mode == TrainMode::fast ? to_string(cfg.train.p_adv) : "-";
    s.k = cfg.train.mode == TrainMode::vanilla ? 0 : cfg.train.attack.steps;
    s.epochs_target = schedule_for(cfg.train).effective_epochs;
    s.flags = concat(cfg.train.sync_update_speed ? "sync" : "nosync", ",",
                     cfg.train.rebalance ? "rebal" : "norebal", ",",
                     cfg.train.attack.random_init ? "rndinit" : "noinit", ",",
                     cfg.train.shuffle_bn ? "shuffle" : "noshuffle");

    if (std::filesystem::exists(paths.metrics())) {
        auto records = read_metrics(paths.metrics());
        if (!records.empty()) {
            const auto& last = records.back();
            if (last.has_val) s.clean_acc = last.val_acc;
            if (cfg.train.mode == TrainMode::fast) {
                bool per_pass = true;
                for (const auto& r : records)
                    if (r.n_clean == 0 || r.n_adv == 0) per_pass = false;
                if (per_pass) s.leakage = leakage_diagnostic(epoch_pass_stats(records)).flagged ? 1 : 0;
            }
        }
    }
    if (std::filesystem::exists(paths.ledger())) {
        try {
            RunAudit ra = audit_run(dir);
            s.units_measured = ra.report.total_measured;
            s.units_theoretical = ra.report.total_theoretical;
            s.budget_match = ra.report.match ? 1 : 0;
            s.epochs_completed = static_cast<int>(ra.report.measured_per_epoch.size());
        } catch (const std::exception&) {
            // partial run without a complete epoch: leave the fields missing
        }
    }
    if (std::filesystem::exists(paths.eval())) {
        std::ifstream is(paths.eval());
        json j = json::parse(is, nullptr, false);
        if (!j.is_discarded() && j.contains("corruption")) {
            s.corr_score = j["corruption"].value("score", -1.0);
            s.corr_normalized = j["corruption"].value("normalized", false);
        }
    }
    s.complete = s.epochs_completed >= 0 && s.epochs_completed == s.epochs_target;
    return s;
}

namespace detail {

inline std::string cell_num(double v, int prec) {
    if (v < 0) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

inline std::string cell_int(int64_t v) { return v < 0 ? "-" : std::to_string(v); }

inline std::string cell_bool(int v) { return v < 0 ? "-" : (v ? "yes" : "no"); }

}  // namespace detail

inline std::vector<std::vector<std::string>> report_cells(const std::vector<RunSummary>& rows) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"run", "mode", "p_adv", "K", "epochs", "budget_measured", "budget_theoretical",
                     "budget_match", "clean_acc", "corruption_score", "leakage", "flags", "complete"});
    for (const auto& s : rows) {
        std::string epochs = s.epochs_completed < 0
                                 ? concat("-/", s.epochs_target)
                                 : concat(s.epochs_completed, "/", s.epochs_target);
        cells.push_back({s.run_id, s.mode, s.p_adv, s.k < 0 ? "-" : std::to_string(s.k), epochs,
                         detail::cell_int(s.units_measured), detail::cell_int(s.units_theoretical),
                         detail::cell_bool(s.budget_match), detail::cell_num(s.clean_acc, 4),
                         s.corr_score < 0 ? "-"
                                          : concat(detail::cell_num(s.corr_score, 1),
                                                   s.corr_normalized ? "" : "*"),
                         detail::cell_bool(s.leakage), s.flags, s.complete ? "yes" : "no"});
    }
    return cells;
}

inline std::string format_report_csv(const std::vector<RunSummary>& rows) {
    std::ostringstream os;
    for (const auto& row : report_cells(rows)) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << '\n';
    }
    return os.str();
}

inline std::string format_report_table(const std::vector<RunSummary>& rows) {
    auto cells = report_cells(rows);
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& row : cells)
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    std::ostringstream os;
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i)
            os << std::left << std::setw(static_cast<int>(width[i]) + 2) << row[i];
        os << '\n';
    }
    return os.str();
}

}  // namespace advprop
