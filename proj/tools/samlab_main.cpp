#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "samlab/artifacts.hpp"
#include "samlab/diagnostics.hpp"
#include "samlab/errors.hpp"
#include "samlab/pipeline.hpp"
#include "samlab/rng.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_override;
    uint64_t seed_override = 0;
    bool seed_set = false;
    int threads_override = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_path, "experiment config (JSON)")->required();
    cmd->add_option("-o,--out", opts.out_override, "override the output directory");
    cmd->add_option("-s,--seed", opts.seed_override, "override the master seed")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("-t,--threads", opts.threads_override, "override the thread count (0 = auto)")
        ->check(CLI::NonNegativeNumber);
}

samlab::ExperimentConfig load_config(const CommonOpts& opts, CLI::App* cmd) {
    samlab::ExperimentConfig cfg = samlab::parse_config(opts.config_path);
    if (cmd->count("--seed") > 0) cfg.seed = opts.seed_override;
    if (!opts.out_override.empty()) cfg.out_dir = opts.out_override;
    if (opts.threads_override >= 0) cfg.threads = opts.threads_override;
    return cfg;
}

void print_run_summary(const samlab::RunManifest& man, const std::string& out_dir) {
    std::printf("status %s\n", man.status.c_str());
    for (size_t t = 0; t < man.task_accuracies.size(); ++t)
        std::printf("task %zu test_accuracy %.6f\n", t, man.task_accuracies[t]);
    for (const samlab::MergeOutcome& mo : man.merges)
        std::printf("merge %s alpha %.4g prune %.4g mean_abs %.6f mean_norm %.6f\n",
                    mo.method.c_str(), mo.best_alpha, mo.best_prune, mo.mean_abs_accuracy,
                    mo.mean_norm_accuracy);
    std::printf("manifest %s/manifest.json\n", out_dir.c_str());
}

int run_window(const CommonOpts& opts, CLI::App* cmd, samlab::Stage first, samlab::Stage last) {
    samlab::ExperimentConfig cfg = load_config(opts, cmd);
    samlab::RunManifest man = samlab::run_pipeline(cfg, first, last);
    print_run_summary(man, cfg.out_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sharpness-aware fine-tuning, model merging, and interference diagnostics"};
    app.set_version_flag("--version", std::string(samlab::kToolVersion));
    app.require_subcommand(1);

    CommonOpts run_opts;
    std::string run_stage;
    CLI::App* cmd_run = app.add_subcommand("run", "run the full pipeline");
    add_common(cmd_run, run_opts);
    cmd_run->add_option("--stage", run_stage,
                        "resume from this stage (pretrain, finetune, merge, diagnostics)");

    CommonOpts pre_opts;
    CLI::App* cmd_pre = app.add_subcommand("pretrain", "run only the pretraining stage");
    add_common(cmd_pre, pre_opts);

    CommonOpts ft_opts;
    CLI::App* cmd_ft = app.add_subcommand("finetune", "fine-tune each task from the stored base");
    add_common(cmd_ft, ft_opts);

    CommonOpts merge_opts;
    CLI::App* cmd_merge = app.add_subcommand("merge", "merge stored task checkpoints");
    add_common(cmd_merge, merge_opts);

    CommonOpts scan_opts;
    CLI::App* cmd_scan = app.add_subcommand("scan", "run diagnostics on stored checkpoints");
    add_common(cmd_scan, scan_opts);

    CommonOpts eval_opts;
    std::string eval_checkpoint;
    int eval_task = -1;
    CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on the task test sets");
    add_common(cmd_eval, eval_opts);
    cmd_eval->add_option("-k,--checkpoint", eval_checkpoint, "checkpoint file")->required();
    cmd_eval->add_option("--task", eval_task, "evaluate only this task id");

    CommonOpts hess_opts;
    std::string hess_checkpoint;
    int hess_task = 0;
    int hess_iters = 500;
    double hess_tol = 1e-10;
    CLI::App* cmd_hess =
        app.add_subcommand("hessian", "largest-magnitude loss curvature at a checkpoint");
    add_common(cmd_hess, hess_opts);
    cmd_hess->add_option("-k,--checkpoint", hess_checkpoint, "checkpoint file")->required();
    cmd_hess->add_option("--task", hess_task, "task whose test split defines the loss");
    cmd_hess->add_option("--max-iters", hess_iters, "power iteration cap");
    cmd_hess->add_option("--tol", hess_tol, "relative convergence tolerance");

    std::string report_path;
    CLI::App* cmd_report = app.add_subcommand("report", "summarize a run manifest");
    cmd_report->add_option("manifest", report_path, "manifest.json from a run")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_run->parsed()) {
            samlab::Stage first = samlab::Stage::Pretrain;
            if (!run_stage.empty()) first = samlab::stage_from_name(run_stage);
            return run_window(run_opts, cmd_run, first, samlab::Stage::Diagnostics);
        }
        if (cmd_pre->parsed())
            return run_window(pre_opts, cmd_pre, samlab::Stage::Pretrain, samlab::Stage::Pretrain);
        if (cmd_ft->parsed())
            return run_window(ft_opts, cmd_ft, samlab::Stage::Finetune, samlab::Stage::Finetune);
        if (cmd_merge->parsed())
            return run_window(merge_opts, cmd_merge, samlab::Stage::Merge, samlab::Stage::Merge);
        if (cmd_scan->parsed())
            return run_window(scan_opts, cmd_scan, samlab::Stage::Diagnostics,
                              samlab::Stage::Diagnostics);

        if (cmd_eval->parsed()) {
            samlab::ExperimentConfig cfg = load_config(eval_opts, cmd_eval);
            samlab::PreparedData data = samlab::prepare_experiment_data(cfg);
            samlab::LoadedCheckpoint lc = samlab::load_checkpoint(eval_checkpoint);
            if (lc.params.spec_hash != samlab::spec_digest(data.spec))
                throw samlab::ConfigError("checkpoint does not match the configured model");
            int num_tasks = static_cast<int>(data.tasks.size());
            if (eval_task >= num_tasks)
                throw samlab::ConfigError("--task is out of range for this config");
            for (int t = 0; t < num_tasks; ++t) {
                if (eval_task >= 0 && t != eval_task) continue;
                const samlab::TaskDataset& test = data.tasks[static_cast<size_t>(t)].test;
                std::printf("task %d accuracy %.6f loss %.10g\n", t,
                            samlab::accuracy(lc.params, data.spec, test),
                            samlab::loss(lc.params, data.spec, test));
            }
            return 0;
        }

        if (cmd_hess->parsed()) {
            samlab::ExperimentConfig cfg = load_config(hess_opts, cmd_hess);
            samlab::PreparedData data = samlab::prepare_experiment_data(cfg);
            samlab::LoadedCheckpoint lc = samlab::load_checkpoint(hess_checkpoint);
            if (lc.params.spec_hash != samlab::spec_digest(data.spec))
                throw samlab::ConfigError("checkpoint does not match the configured model");
            if (hess_task < 0 || hess_task >= static_cast<int>(data.tasks.size()))
                throw samlab::ConfigError("--task is out of range for this config");
            samlab::EigenResult res = samlab::dominant_eigenvalue(
                lc.params, data.spec, data.tasks[static_cast<size_t>(hess_task)].test, hess_iters,
                hess_tol, 0.0, samlab::sub_seed(cfg.seed, "cli_hessian"));
            std::printf("lambda_max %.10g iterations %d converged %s\n", res.value,
                        res.iterations, res.converged ? "yes" : "no");
            return 0;
        }

        if (cmd_report->parsed()) {
            samlab::RunManifest man = samlab::read_manifest(report_path);
            std::printf("tool %s\n", man.tool_version.c_str());
            std::printf("status %s\n", man.status.c_str());
            std::printf("seed %llu\n", static_cast<unsigned long long>(man.master_seed));
            std::printf("tasks %zu\n", man.task_accuracies.size());
            for (size_t t = 0; t < man.task_accuracies.size(); ++t) {
                std::printf("task %zu test_accuracy %.6f", t, man.task_accuracies[t]);
                if (t < man.task_lambda_max.size())
                    std::printf(" lambda_max %.6g", man.task_lambda_max[t]);
                std::printf("\n");
            }
            for (const samlab::MergeOutcome& mo : man.merges)
                std::printf("merge %s alpha %.4g prune %.4g mean_abs %.6f mean_norm %.6f\n",
                            mo.method.c_str(), mo.best_alpha, mo.best_prune, mo.mean_abs_accuracy,
                            mo.mean_norm_accuracy);
            std::printf("artifacts %zu\n", man.diagnostic_artifacts.size());
            std::printf("files %zu\n", man.file_digests.size());
            for (const samlab::StageRecord& sr : man.stages)
                std::printf("stage %s wall_seconds %.3f\n", sr.name.c_str(), sr.wall_seconds);
            return 0;
        }

        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const samlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const samlab::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const samlab::StageError& e) {
        std::cerr << "stage error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
