// Command-line front end: train / eval / report / cost-audit.
// Exit codes: 0 success, 1 bad configuration, 2 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advprop/experiment.hpp"
#include "advprop/report.hpp"

using namespace advprop;

namespace {

struct Overrides {
    std::optional<std::string> mode, p_adv, precision, attack_epsilon, attack_stats_mode,
        attack_step_size;
    std::optional<double> beta, lr, momentum, weight_decay, data_separation;
    std::optional<int> base_epochs, batch_size, shards, attack_steps, eval_batch, data_n, data_val_n,
        data_classes, data_channels, data_hw, model_pool;
    std::optional<uint64_t> seed, data_seed;
    std::optional<bool> shuffle_bn, rebalance, sync_update_speed, equal_budget, aux_weight_decay,
        rescale_before_combine, attack_random_init, attack_targeted, attack_clip_images;
    std::optional<std::vector<int>> decay_epochs, model_conv_channels;
    std::optional<std::string> data_kind, data_images, data_labels, data_val_images, data_val_labels,
        data_train_file, data_val_file;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--mode", o.mode, "vanilla | advprop | fast");
    cmd->add_option("--p_adv", o.p_adv, "adversarial fraction, e.g. 0.2 or 1/5");
    cmd->add_option("--beta", o.beta);
    cmd->add_option("--base_epochs", o.base_epochs);
    cmd->add_option("--decay_epochs", o.decay_epochs)->delimiter(',');
    cmd->add_option("--lr", o.lr);
    cmd->add_option("--momentum", o.momentum);
    cmd->add_option("--weight_decay", o.weight_decay);
    cmd->add_option("--batch_size", o.batch_size, "clean sub-batch size B");
    cmd->add_option("--shards", o.shards);
    cmd->add_option("--shuffle_bn", o.shuffle_bn);
    cmd->add_option("--rebalance", o.rebalance);
    cmd->add_option("--sync_update_speed", o.sync_update_speed);
    cmd->add_option("--equal_budget", o.equal_budget);
    cmd->add_option("--aux_weight_decay", o.aux_weight_decay);
    cmd->add_option("--rescale_before_combine", o.rescale_before_combine);
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--precision", o.precision, "f32 | f64");
    cmd->add_option("--eval_batch", o.eval_batch);
    cmd->add_option("--attack_epsilon", o.attack_epsilon, "radius, e.g. 1/255");
    cmd->add_option("--attack_steps", o.attack_steps, "K");
    cmd->add_option("--attack_random_init", o.attack_random_init);
    cmd->add_option("--attack_targeted", o.attack_targeted);
    cmd->add_option("--attack_stats_mode", o.attack_stats_mode, "batch | running");
    cmd->add_option("--attack_step_size", o.attack_step_size);
    cmd->add_option("--attack_clip_images", o.attack_clip_images);
    cmd->add_option("--data_kind", o.data_kind, "synth | idx | file");
    cmd->add_option("--data_n", o.data_n);
    cmd->add_option("--data_val_n", o.data_val_n);
    cmd->add_option("--data_classes", o.data_classes);
    cmd->add_option("--data_channels", o.data_channels);
    cmd->add_option("--data_hw", o.data_hw);
    cmd->add_option("--data_separation", o.data_separation);
    cmd->add_option("--data_seed", o.data_seed);
    cmd->add_option("--data_images", o.data_images);
    cmd->add_option("--data_labels", o.data_labels);
    cmd->add_option("--data_val_images", o.data_val_images);
    cmd->add_option("--data_val_labels", o.data_val_labels);
    cmd->add_option("--data_train_file", o.data_train_file);
    cmd->add_option("--data_val_file", o.data_val_file);
    cmd->add_option("--model_conv_channels", o.model_conv_channels)->delimiter(',');
    cmd->add_option("--model_pool", o.model_pool);
}

void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
    if (o.mode) cfg.train.mode = mode_from_string(*o.mode);
    if (o.p_adv) cfg.train.p_adv = parse_rational(*o.p_adv);
    if (o.beta) cfg.train.beta = *o.beta;
    if (o.base_epochs) cfg.train.base_epochs = *o.base_epochs;
    if (o.decay_epochs) cfg.train.decay_epochs = *o.decay_epochs;
    if (o.lr) cfg.train.lr = *o.lr;
    if (o.momentum) cfg.train.momentum = *o.momentum;
    if (o.weight_decay) cfg.train.weight_decay = *o.weight_decay;
    if (o.batch_size) cfg.train.batch_size = *o.batch_size;
    if (o.shards) cfg.train.shards = *o.shards;
    if (o.shuffle_bn) cfg.train.shuffle_bn = *o.shuffle_bn;
    if (o.rebalance) cfg.train.rebalance = *o.rebalance;
    if (o.sync_update_speed) cfg.train.sync_update_speed = *o.sync_update_speed;
    if (o.equal_budget) cfg.train.equal_budget = *o.equal_budget;
    if (o.aux_weight_decay) cfg.train.aux_weight_decay = *o.aux_weight_decay;
    if (o.rescale_before_combine) cfg.train.rescale_before_combine = *o.rescale_before_combine;
    if (o.seed) cfg.train.seed = *o.seed;
    if (o.precision) cfg.precision = *o.precision;
    if (o.eval_batch) cfg.eval_batch = *o.eval_batch;
    if (o.attack_epsilon) cfg.train.attack.epsilon = parse_rational(*o.attack_epsilon).value();
    if (o.attack_steps) cfg.train.attack.steps = *o.attack_steps;
    if (o.attack_random_init) cfg.train.attack.random_init = *o.attack_random_init;
    if (o.attack_targeted) cfg.train.attack.targeted = *o.attack_targeted;
    if (o.attack_stats_mode) cfg.train.attack.stats_mode = stats_mode_from_string(*o.attack_stats_mode);
    if (o.attack_step_size) cfg.train.attack.step_size = parse_rational(*o.attack_step_size).value();
    if (o.attack_clip_images) cfg.train.attack.clip_images = *o.attack_clip_images;
    if (o.data_kind) cfg.data.kind = *o.data_kind;
    if (o.data_n) cfg.data.n = *o.data_n;
    if (o.data_val_n) cfg.data.val_n = *o.data_val_n;
    if (o.data_classes) cfg.data.classes = *o.data_classes;
    if (o.data_channels) cfg.data.channels = *o.data_channels;
    if (o.data_hw) cfg.data.hw = *o.data_hw;
    if (o.data_separation) cfg.data.separation = *o.data_separation;
    if (o.data_seed) cfg.data.seed = *o.data_seed;
    if (o.data_images) cfg.data.images = *o.data_images;
    if (o.data_labels) cfg.data.labels = *o.data_labels;
    if (o.data_val_images) cfg.data.val_images = *o.data_val_images;
    if (o.data_val_labels) cfg.data.val_labels = *o.data_val_labels;
    if (o.data_train_file) cfg.data.train_file = *o.data_train_file;
    if (o.data_val_file) cfg.data.val_file = *o.data_val_file;
    if (o.model_conv_channels) cfg.model.conv_channels = *o.model_conv_channels;
    if (o.model_pool) cfg.model.pool = *o.model_pool;
}

int cmd_train(const std::string& config_path, const Overrides& o, const std::string& out_dir) {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    apply_overrides(cfg, o);
    cfg.validate();
    RunOutcome outcome;
    if (cfg.precision == "f64")
        outcome = run_training<double>(cfg, out_dir, std::cout);
    else
        outcome = run_training<float>(cfg, out_dir, std::cout);
    if (outcome.aborted) {
        std::cerr << "training aborted: " << outcome.error << "\n";
        return 2;
    }
    std::cout << "completed " << outcome.epochs_completed << "/" << outcome.epochs_target
              << " epochs, final validation accuracy " << outcome.final_val_acc << "\n";
    return 0;
}

int cmd_eval(const std::string& run_dir, bool corruptions, const std::string& reference) {
    ExperimentConfig cfg = load_config(RunPaths{run_dir}.config());
    EvalOutcome out;
    if (cfg.precision == "f64")
        out = run_eval<double>(run_dir, corruptions, reference);
    else
        out = run_eval<float>(run_dir, corruptions, reference);
    if (!out.warning.empty()) std::cerr << "warning: " << out.warning << "\n";
    std::cout << "clean_acc " << out.clean_acc << "\n";
    if (out.has_suite) {
        std::cout << "corruption_mean_acc " << out.suite.mean_accuracy << "\n";
        std::cout << (out.suite.normalized ? "corruption_score " : "corruption_mean_error_x100 ")
                  << out.suite.score << "\n";
        for (std::size_t i = 0; i < kAllCorruptions.size(); ++i)
            std::cout << "  " << to_string(kAllCorruptions[i]) << " error "
                      << out.suite.per_type_error[i] << "\n";
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& csv_path) {
    std::vector<RunSummary> rows;
    for (const auto& d : dirs) rows.push_back(summarize_run(d));
    std::cout << format_report_table(rows);
    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) throw IoError(concat("cannot write '", csv_path, "'"));
        os << format_report_csv(rows);
        std::cout << "wrote " << csv_path << "\n";
    }
    return 0;
}

int cmd_cost_audit(const std::string& run_dir, const std::string& mode, int k, const std::string& p_adv) {
    RunAudit ra = audit_run(run_dir, mode, k, p_adv);
    std::cout << "model: mode=" << to_string(ra.model.mode) << " N=" << ra.model.n
              << " K=" << ra.model.k << " p_adv=" << to_string(ra.model.p_adv) << "\n";
    std::cout << "theoretical per epoch: " << ra.report.theoretical_per_epoch << "\n";
    std::cout << "measured per epoch:";
    for (int64_t m : ra.report.measured_per_epoch) std::cout << " " << m;
    std::cout << "\n";
    std::cout << "total measured " << ra.report.total_measured << ", total theoretical "
              << ra.report.total_theoretical << "\n";
    std::cout << "match: " << (ra.report.match ? "true" : "false");
    if (!ra.report.match) std::cout << " (max per-epoch discrepancy " << ra.report.max_discrepancy << ")";
    std::cout << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fast AdvProp training engine and experiment harness"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    auto* train = app.add_subcommand("train", "train a model into a run directory");
    std::string config_path, out_dir;
    Overrides overrides;
    train->add_option("--config", config_path, "experiment config JSON");
    train->add_option("--out", out_dir, "run directory (created; resumed if it exists)")->required();
    add_override_flags(train, overrides);

    auto* eval = app.add_subcommand("eval", "evaluate a run's checkpoint");
    std::string eval_run, reference;
    bool corruptions = false;
    eval->add_option("--run", eval_run, "run directory")->required();
    eval->add_flag("--corruptions", corruptions, "also run the corruption suite");
    eval->add_option("--reference", reference, "reference run directory for score normalization");

    auto* report = app.add_subcommand("report", "summarize finished runs");
    std::vector<std::string> report_dirs;
    std::string csv_path = "report.csv";
    report->add_option("dirs", report_dirs, "run directories")->required()->expected(-1);
    report->add_option("--csv", csv_path, "CSV output path ('' to skip)");

    auto* auditc = app.add_subcommand("cost-audit", "audit a run's ledger against a budget model");
    std::string audit_run_dir, model_mode, model_p_adv;
    int model_k = 0;
    auditc->add_option("--run", audit_run_dir, "run directory")->required();
    auditc->add_option("--model_mode", model_mode, "audit against this mode instead of the run's");
    auditc->add_option("--model_k", model_k, "audit against this K");
    auditc->add_option("--model_p_adv", model_p_adv, "audit against this p_adv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, overrides, out_dir);
        if (eval->parsed()) return cmd_eval(eval_run, corruptions, reference);
        if (report->parsed()) return cmd_report(report_dirs, csv_path);
        if (auditc->parsed()) return cmd_cost_audit(audit_run_dir, model_mode, model_k, model_p_adv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
