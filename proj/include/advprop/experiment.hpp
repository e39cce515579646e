#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "advprop/checkpoint.hpp"
#include "advprop/config.hpp"
#include "advprop/data.hpp"
#include "advprop/metrics.hpp"

namespace advprop {

struct RunPaths {
    std::string dir;
    std::string config() const { return dir + "/config.json"; }
    std::string metrics() const { return dir + "/metrics.jsonl"; }
    std::string ledger() const { return dir + "/ledger.jsonl"; }
    std::string checkpoint() const { return dir + "/checkpoint.bin"; }
    std::string eval() const { return dir + "/eval.json"; }
};

inline std::string run_id_of(const std::string& dir) {
    auto p = std::filesystem::path(dir);
    std::string name = p.filename().string();
    return name.empty() ? p.parent_path().filename().string() : name;
}

template <class Real>
std::pair<Dataset<Real>, Dataset<Real>> build_datasets(const DataConfig& d) {
    if (d.kind == "synth") {
        Shape chw{d.channels, d.hw, d.hw};
        Dataset<Real> train = synth_blobs<Real>(d.n, d.classes, chw, d.separation, d.seed);
        train.split = "train";
        Dataset<Real> val = synth_blobs<Real>(d.val_n, d.classes, chw, d.separation,
                                              derive_seed(d.seed, SeedStream::data_synth, 0x76616CULL));
        val.split = "val";
        return {std::move(train), std::move(val)};
    }
    Dataset<Real> train, val;
    if (d.kind == "idx") {
        train = load_idx<Real>(d.images, d.labels);
        if (!d.val_images.empty()) val = load_idx<Real>(d.val_images, d.val_labels);
    } else {
        train = load_dataset<Real>(d.train_file);
        if (!d.val_file.empty()) val = load_dataset<Real>(d.val_file);
    }
    if (val.size() == 0) {
        // no validation source given: hold out the trailing tenth
        int n_val = std::max(1, train.size() / 10);
        int n_train = train.size() - n_val;
        val.images = slice_rows(train.images, n_train, train.size());
        val.labels.assign(train.labels.begin() + n_train, train.labels.end());
        val.classes = train.classes;
        train.images = slice_rows(train.images, 0, n_train);
        train.labels.resize(static_cast<std::size_t>(n_train));
    }
    train.split = "train";
    val.split = "val";
    return {std::move(train), std::move(val)};
}

template <class Real>
CnnSpec cnn_spec_for(const ExperimentConfig& cfg, const Dataset<Real>& train) {
    if (train.images.dim(2) != train.images.dim(3))
        throw ConfigError("reference model expects square images");
    CnnSpec spec;
    spec.in_channels = train.images.dim(1);
    spec.image_hw = train.images.dim(2);
    spec.classes = train.classes;
    spec.conv_channels = cfg.model.conv_channels;
    spec.pool = cfg.model.pool;
    return spec;
}

struct RunOutcome {
    int epochs_completed = 0;
    int epochs_target = 0;
    double final_val_acc = 0;
    bool aborted = false;
    std::string error;
};

/// Full training run into `dir` (config.json, metrics.jsonl, ledger.jsonl,
/// checkpoint.bin). Resumes from the last completed epoch when the directory
/// already holds a checkpoint for the same config.
template <class Real>
RunOutcome run_training(const ExperimentConfig& cfg, const std::string& dir, std::ostream& log) {
    cfg.validate();
    RunPaths paths{dir};
    std::filesystem::create_directories(dir);
    if (std::filesystem::exists(paths.config())) {
        ExperimentConfig existing = load_config(paths.config());
        if (config_to_json(existing) != config_to_json(cfg))
            throw ConfigError(concat("run directory '", dir, "' holds a different config"));
    } else {
        save_config(paths.config(), cfg);
    }

    auto [train_ds, val_ds] = build_datasets<Real>(cfg.data);
    train_ds.validate();
    val_ds.validate();
    Network<Real> net = build_cnn<Real>(cnn_spec_for(cfg, train_ds), cfg.train.seed);
    SgdMomentum<Real> opt;
    opt.lr = static_cast<Real>(cfg.train.lr);
    opt.momentum = static_cast<Real>(cfg.train.momentum);
    opt.weight_decay = static_cast<Real>(cfg.train.weight_decay);

    Schedule sched = schedule_for(cfg.train);
    int total_batch = cfg.train.total_batch();
    int n_batches = train_ds.size() / total_batch;
    if (n_batches < 1)
        throw ConfigError(concat("dataset of ", train_ds.size(), " is smaller than one batch of ", total_batch));
    int64_t examples_per_epoch = static_cast<int64_t>(n_batches) * total_batch;

    CostLedger ledger;
    std::size_t flushed_records = 0;
    int start_epoch = 0;
    if (std::filesystem::exists(paths.checkpoint())) {
        start_epoch = static_cast<int>(load_checkpoint(paths.checkpoint(), net, &opt));
        LoadedLedger loaded = load_ledger(paths.ledger());
        ledger = std::move(loaded.ledger);
        flushed_records = loaded.record_count;
        log << "resuming '" << run_id_of(dir) << "' at epoch " << start_epoch << "\n";
    }

    RunOutcome out;
    out.epochs_target = sched.effective_epochs;
    out.epochs_completed = start_epoch;
    if (start_epoch >= sched.effective_epochs) {
        if (std::filesystem::exists(paths.metrics())) {
            auto records = read_metrics(paths.metrics());
            if (!records.empty() && records.back().has_val) out.final_val_acc = records.back().val_acc;
        }
        return out;
    }

    LedgerWriter ledger_writer(paths.ledger(), examples_per_epoch, flushed_records);
    JsonlWriter metrics_writer(paths.metrics());
    std::string run_id = run_id_of(dir);
    auto t0 = std::chrono::steady_clock::now();

    for (int epoch = start_epoch; epoch < sched.effective_epochs; ++epoch) {
        ledger.begin_epoch(epoch);
        double lr = cfg.train.lr * sched.lr_multiplier_at(epoch);
        auto batches = make_batches(train_ds.size(), total_batch, cfg.train.shards,
                                    derive_seed(cfg.train.seed, SeedStream::epoch_order,
                                                static_cast<uint64_t>(epoch)));
        MetricsRecord rec;
        rec.run_id = run_id;
        rec.epoch = epoch;
        rec.lr = lr;
        double wl_clean = 0, wa_clean = 0, wl_noise = 0, wa_noise = 0, wl_adv = 0, wa_adv = 0;
        int failed = 0;
        int64_t step_in_epoch = 0;
        for (const auto& idx : batches) {
            Batch<Real> b = fetch_batch(train_ds, idx);
            StepResult<Real> r;
            switch (cfg.train.mode) {
                case TrainMode::vanilla:
                    r = vanilla_step(net, b, opt, cfg.train, ledger, lr);
                    break;
                case TrainMode::advprop:
                    r = advprop_step(net, b, opt, cfg.train, ledger, lr,
                                     derive_seed(cfg.train.seed, SeedStream::attack_noise,
                                                 static_cast<uint64_t>(epoch),
                                                 static_cast<uint64_t>(step_in_epoch)));
                    break;
                case TrainMode::fast:
                    r = fast_advprop_step(net, b, opt, cfg.train, ledger, lr, epoch, step_in_epoch);
                    break;
            }
            ledger.next_step();
            ++step_in_epoch;
            ++rec.step;
            if (!r.applied) {
                ++failed;
                log << "epoch " << epoch << " step " << step_in_epoch << ": step skipped: " << r.error
                    << "\n";
                continue;
            }
            wl_clean += r.clean.loss * r.n_clean;
            wa_clean += r.clean.accuracy * r.n_clean;
            rec.n_clean += r.n_clean;
            wl_noise += r.noise.loss * r.n_noise;
            wa_noise += r.noise.accuracy * r.n_noise;
            rec.n_noise += r.n_noise;
            wl_adv += r.adv.loss * r.n_adv;
            wa_adv += r.adv.accuracy * r.n_adv;
            rec.n_adv += r.n_adv;
        }
        if (failed == static_cast<int>(batches.size())) {
            out.aborted = true;
            out.error = concat("every step of epoch ", epoch, " failed (non-finite training)");
            log << out.error << "\n";
            return out;
        }
        if (rec.n_clean > 0) {
            rec.loss_clean = wl_clean / rec.n_clean;
            rec.acc_clean = wa_clean / rec.n_clean;
        }
        if (rec.n_noise > 0) {
            rec.loss_noise = wl_noise / rec.n_noise;
            rec.acc_noise = wa_noise / rec.n_noise;
        }
        if (rec.n_adv > 0) {
            rec.loss_adv = wl_adv / rec.n_adv;
            rec.acc_adv = wa_adv / rec.n_adv;
        }
        ledger.mark_epoch_complete(epoch);
        rec.val_acc = evaluate(net, val_ds.images, val_ds.labels, cfg.eval_batch, &ledger);
        rec.has_val = true;
        rec.units_clean = ledger.total(PassKind::clean);
        rec.units_attack_noise = ledger.total(PassKind::attack_noise);
        rec.units_adversarial = ledger.total(PassKind::adversarial);
        rec.units_eval = ledger.total(PassKind::eval);
        rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        metrics_writer.write(to_json(rec));
        ledger_writer.flush_epoch(ledger, epoch);
        save_checkpoint(paths.checkpoint(), net, &opt, static_cast<uint32_t>(epoch + 1));
        out.epochs_completed = epoch + 1;
        out.final_val_acc = rec.val_acc;
        log << "epoch " << epoch << "  lr " << lr << "  clean " << rec.acc_clean;
        if (rec.n_adv > 0) log << "  adv " << rec.acc_adv;
        log << "  val " << rec.val_acc << "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOutcome {
    double clean_acc = 0;
    bool has_suite = false;
    SuiteResult suite;
    std::string warning;
};

inline std::vector<double> reference_errors_from_eval_json(const std::string& eval_path) {
    std::ifstream is(eval_path);
    if (!is) throw IoError(concat("cannot open reference eval '", eval_path, "'"));
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded() || !j.contains("corruption"))
        throw IoError(concat("'", eval_path, "' holds no corruption results"));
    std::vector<double> out;
    for (CorruptionType t : kAllCorruptions)
        out.push_back(j["corruption"]["per_type_error"].at(to_string(t)).get<double>());
    return out;
}

inline json suite_to_json(const SuiteResult& s) {
    json per_type;
    for (std::size_t i = 0; i < kAllCorruptions.size(); ++i)
        per_type[to_string(kAllCorruptions[i])] = s.per_type_error[i];
    json entries = json::array();
    for (const auto& e : s.entries)
        entries.push_back({{"type", to_string(e.type)}, {"severity", e.severity}, {"error", e.error}});
    return json{{"score", s.score},
                {"normalized", s.normalized},
                {"mean_error", s.mean_error},
                {"mean_accuracy", s.mean_accuracy},
                {"per_type_error", per_type},
                {"entries", entries}};
}

/// Evaluates a run's checkpoint on its validation split: clean accuracy and,
/// when asked, the corruption suite (normalized against a reference run's
/// eval.json when given). Writes eval.json into the run directory.
template <class Real>
EvalOutcome run_eval(const std::string& run_dir, bool with_corruptions,
                     const std::string& reference_run_dir) {
    RunPaths paths{run_dir};
    ExperimentConfig cfg = load_config(paths.config());
    auto [train_ds, val_ds] = build_datasets<Real>(cfg.data);
    Network<Real> net = build_cnn<Real>(cnn_spec_for(cfg, train_ds), cfg.train.seed);
    load_checkpoint(paths.checkpoint(), net, static_cast<SgdMomentum<Real>*>(nullptr));
    EvalOutcome out;
    out.clean_acc = evaluate(net, val_ds.images, val_ds.labels, cfg.eval_batch);
    json j{{"clean_acc", out.clean_acc}};
    if (with_corruptions) {
        std::vector<double> ref;
        bool have_ref = false;
        if (!reference_run_dir.empty()) {
            ref = reference_errors_from_eval_json(RunPaths{reference_run_dir}.eval());
            have_ref = true;
        } else {
            out.warning = "no reference run given: reporting unnormalized mean corruption error";
        }
        // fixed suite seed: corruption draws depend on the dataset, not the run
        out.suite = corruption_suite_eval(net, val_ds, derive_seed(cfg.data.seed, SeedStream::corruption),
                                          have_ref ? &ref : nullptr);
        out.has_suite = true;
        j["corruption"] = suite_to_json(out.suite);
    }
    std::ofstream os(paths.eval());
    if (!os) throw IoError(concat("cannot write '", paths.eval(), "'"));
    os << j.dump(2) << '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Budget audit over a finished (or partial) run directory

struct RunAudit {
    BudgetModel model;
    AuditReport report;
};

inline RunAudit audit_run(const std::string& run_dir, const std::string& model_mode_override = "",
                          int model_k_override = 0, const std::string& model_p_adv_override = "") {
    RunPaths paths{run_dir};
    ExperimentConfig cfg = load_config(paths.config());
    LoadedLedger loaded = load_ledger(paths.ledger());
    if (loaded.examples_per_epoch <= 0)
        throw ConfigError(concat("ledger in '", run_dir, "' carries no examples_per_epoch meta"));
    RunAudit ra;
    ra.model.mode = cfg.train.mode;
    ra.model.n = loaded.examples_per_epoch;
    ra.model.k = cfg.train.attack.steps;
    ra.model.p_adv = cfg.train.mode == TrainMode::fast ? cfg.train.p_adv : Rational{0, 1};
    if (!model_mode_override.empty()) ra.model.mode = mode_from_string(model_mode_override);
    if (model_k_override > 0) ra.model.k = model_k_override;
    if (!model_p_adv_override.empty()) ra.model.p_adv = parse_rational(model_p_adv_override);
    ra.report = audit(loaded.ledger, ra.model);
    return ra;
}

}  // namespace advprop
