#include "samlab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "samlab/artifacts.hpp"
#include "samlab/errors.hpp"
#include "samlab/parallel.hpp"
#include "samlab/rng.hpp"

namespace samlab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const char* merge_method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::Average: return "average";
        case MergeMethod::Ties: return "ties";
        default: return "arithmetic";
    }
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

void append_g17(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

}  // namespace

PreparedData prepare_experiment_data(const ExperimentConfig& cfg) {
    PreparedData data;
    int input_dim = 0;
    int num_classes = 0;
    if (cfg.use_suite) {
        SuiteConfig sc = cfg.suite;
        sc.seed = sub_seed(cfg.seed, "suite");
        TaskSuite suite = generate_suite(sc);
        input_dim = sc.input_dim;
        num_classes = sc.num_classes;
        auto [ptr, pva] = split(suite.pretrain, sc.val_ratio, sub_seed(cfg.seed, "pretrain_split"));
        data.pretrain_train = std::move(ptr);
        data.pretrain_val = std::move(pva);
        data.has_pretrain = true;
        data.tasks = std::move(suite.tasks);
    } else {
        num_classes = cfg.csv_num_classes;
        int t = 0;
        for (const TaskDataConfig& td : cfg.task_csvs) {
            TaskSplits splits;
            TaskDataset train_all = load_csv(td.train_csv, num_classes);
            TaskDataset test = load_csv(td.test_csv, num_classes);
            if (input_dim == 0) input_dim = train_all.features.cols;
            if (train_all.features.cols != input_dim || test.features.cols != input_dim)
                throw std::runtime_error("task data width differs between CSV files");
            auto [tr, va] = split(train_all, cfg.csv_val_ratio,
                                  sub_seed(cfg.seed, "task_csv", static_cast<uint64_t>(t)));
            splits.train = std::move(tr);
            splits.val = std::move(va);
            splits.test = std::move(test);
            splits.train.task_id = splits.val.task_id = splits.test.task_id = t;
            splits.train.split = SplitTag::Train;
            splits.val.split = SplitTag::Val;
            splits.test.split = SplitTag::Test;
            data.tasks.push_back(std::move(splits));
            ++t;
        }
        if (!cfg.pretrain_csv.empty()) {
            TaskDataset pre = load_csv(cfg.pretrain_csv, num_classes);
            if (pre.features.cols != input_dim)
                throw std::runtime_error("pretrain data width differs from task data");
            auto [ptr, pva] = split(pre, cfg.csv_val_ratio, sub_seed(cfg.seed, "pretrain_split"));
            data.pretrain_train = std::move(ptr);
            data.pretrain_val = std::move(pva);
            data.has_pretrain = true;
        }
    }
    data.spec.layer_sizes.push_back(input_dim);
    for (int h : cfg.hidden) data.spec.layer_sizes.push_back(h);
    data.spec.layer_sizes.push_back(num_classes);
    data.spec.activation = cfg.activation;
    return data;
}

namespace {

TaskDataset concat_tests(const TaskDataset& a, const TaskDataset& b) {
    TaskDataset u;
    u.features = Matrix(a.features.rows + b.features.rows, a.features.cols);
    std::copy(a.features.data.begin(), a.features.data.end(), u.features.data.begin());
    std::copy(b.features.data.begin(), b.features.data.end(),
              u.features.data.begin() + static_cast<long>(a.features.data.size()));
    u.labels = a.labels;
    u.labels.insert(u.labels.end(), b.labels.begin(), b.labels.end());
    u.split = SplitTag::Test;
    u.task_id = -1;
    return u;
}

json merge_outcome_to_json(const MergeOutcome& mo) {
    json norm = json::array();
    for (double v : mo.task_norm_accuracy) {
        if (std::isnan(v)) norm.push_back(nullptr);  // fine-tuned accuracy was 0
        else norm.push_back(v);
    }
    return json{{"method", mo.method},
                {"best_alpha", mo.best_alpha},
                {"best_prune", mo.best_prune},
                {"search_score", mo.search_score},
                {"task_abs_accuracy", mo.task_abs_accuracy},
                {"task_norm_accuracy", norm},
                {"mean_abs_accuracy", mo.mean_abs_accuracy},
                {"mean_norm_accuracy", mo.mean_norm_accuracy},
                {"checkpoint_path", mo.checkpoint_path},
                {"search_table_path", mo.search_table_path}};
}

MergeOutcome merge_outcome_from_json(const json& j) {
    MergeOutcome mo;
    mo.method = j.at("method").get<std::string>();
    mo.best_alpha = j.at("best_alpha").get<double>();
    mo.best_prune = j.at("best_prune").get<double>();
    mo.search_score = j.at("search_score").get<double>();
    mo.task_abs_accuracy = j.at("task_abs_accuracy").get<std::vector<double>>();
    for (const json& e : j.at("task_norm_accuracy")) {
        if (e.is_null()) mo.task_norm_accuracy.push_back(std::numeric_limits<double>::quiet_NaN());
        else mo.task_norm_accuracy.push_back(e.get<double>());
    }
    mo.mean_abs_accuracy = j.at("mean_abs_accuracy").get<double>();
    mo.mean_norm_accuracy = j.at("mean_norm_accuracy").get<double>();
    mo.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    mo.search_table_path = j.at("search_table_path").get<std::string>();
    return mo;
}

// Scoped wall-clock: records the stage on destruction.
class StageTimer {
public:
    StageTimer(RunManifest& man, std::string name)
        : man_(man), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        man_.stages.push_back({name_, secs});
    }

private:
    RunManifest& man_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace

Stage stage_from_name(const std::string& name) {
    if (name == "pretrain") return Stage::Pretrain;
    if (name == "finetune") return Stage::Finetune;
    if (name == "merge") return Stage::Merge;
    if (name == "diagnostics") return Stage::Diagnostics;
    throw ConfigError("unknown stage '" + name +
                      "' (expected pretrain, finetune, merge, or diagnostics)");
}

std::string stage_name(Stage stage) {
    switch (stage) {
        case Stage::Pretrain: return "pretrain";
        case Stage::Finetune: return "finetune";
        case Stage::Merge: return "merge";
        default: return "diagnostics";
    }
}

void write_manifest(const RunManifest& man, const std::string& path) {
    json j;
    j["tool_version"] = man.tool_version;
    j["status"] = man.status;
    j["master_seed"] = man.master_seed;
    try {
        j["config"] = json::parse(man.config_echo);
    } catch (const json::exception&) {
        j["config"] = man.config_echo;  // echo was not JSON; keep it verbatim
    }
    j["defaults_applied"] = man.defaults_applied;
    j["pretrain_checkpoint"] = man.pretrain_checkpoint;
    j["task_checkpoints"] = man.task_checkpoints;
    j["task_accuracies"] = man.task_accuracies;
    j["task_lambda_max"] = man.task_lambda_max;
    json merges = json::array();
    for (const MergeOutcome& mo : man.merges) merges.push_back(merge_outcome_to_json(mo));
    j["merges"] = merges;
    j["diagnostic_artifacts"] = man.diagnostic_artifacts;
    json stages = json::array();
    for (const StageRecord& sr : man.stages)
        stages.push_back(json{{"name", sr.name}, {"wall_seconds", sr.wall_seconds}});
    j["stages"] = stages;
    j["file_digests"] = man.file_digests;
    write_text_file(path, j.dump(2) + "\n");
}

RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    json j;
    try {
        j = json::parse(in);
        RunManifest man;
        man.tool_version = j.at("tool_version").get<std::string>();
        man.status = j.at("status").get<std::string>();
        man.master_seed = j.at("master_seed").get<uint64_t>();
        if (j.at("config").is_string()) man.config_echo = j.at("config").get<std::string>();
        else man.config_echo = j.at("config").dump(2) + "\n";
        man.defaults_applied = j.at("defaults_applied").get<std::vector<std::string>>();
        man.pretrain_checkpoint = j.at("pretrain_checkpoint").get<std::string>();
        man.task_checkpoints = j.at("task_checkpoints").get<std::vector<std::string>>();
        man.task_accuracies = j.at("task_accuracies").get<std::vector<double>>();
        man.task_lambda_max = j.at("task_lambda_max").get<std::vector<double>>();
        for (const json& e : j.at("merges")) man.merges.push_back(merge_outcome_from_json(e));
        man.diagnostic_artifacts = j.at("diagnostic_artifacts").get<std::vector<std::string>>();
        for (const json& e : j.at("stages"))
            man.stages.push_back(
                {e.at("name").get<std::string>(), e.at("wall_seconds").get<double>()});
        man.file_digests =
            j.at("file_digests").get<std::map<std::string, std::string>>();
        return man;
    } catch (const json::exception& e) {
        throw IoError(path + ": malformed manifest (" + std::string(e.what()) + ")");
    }
}

RunManifest run_pipeline(const ExperimentConfig& cfg, Stage first, Stage last) {
    if (static_cast<int>(first) > static_cast<int>(last))
        throw ConfigError("pipeline: start stage comes after end stage");

    std::error_code ec;
    fs::create_directories(fs::path(cfg.out_dir) / "checkpoints", ec);
    if (!ec) fs::create_directories(fs::path(cfg.out_dir) / "diagnostics", ec);
    if (ec) throw IoError("cannot create output directory: " + cfg.out_dir);
    const std::string marker = (fs::path(cfg.out_dir) / "FAILED").string();

    RunManifest man;
    man.tool_version = kToolVersion;
    man.status = "ok";
    man.master_seed = cfg.seed;
    man.config_echo = config_to_json(cfg);
    man.defaults_applied = cfg.defaults_applied;

    std::vector<std::string> written;
    std::string current = "prepare";
    auto fail = [&](const std::string& why) {
        man.status = "failed:" + current;
        try {
            write_text_file(marker, current + ": " + why + "\n");
            write_manifest(man, (fs::path(cfg.out_dir) / "manifest.json").string());
        } catch (...) {
            // the failure being reported wins over reporting problems
        }
    };

    try {
        int threads = cfg.threads;
        if (threads == 0) {
            unsigned hw = std::thread::hardware_concurrency();
            threads = hw == 0 ? 1 : static_cast<int>(hw);
        }

        PreparedData data;
        {
            StageTimer timer(man, "prepare");
            data = prepare_experiment_data(cfg);
        }
        const ModelSpec& spec = data.spec;
        const int num_tasks = static_cast<int>(data.tasks.size());

        // pretrain: train theta_0 or load it when resuming later in the run
        current = "pretrain";
        ParamVector theta0;
        const std::string pre_path =
            (fs::path(cfg.out_dir) / "checkpoints" / "pretrain.json").string();
        {
            StageTimer timer(man, "pretrain");
            if (static_cast<int>(first) <= static_cast<int>(Stage::Pretrain)) {
                ParamVector init = init_params(spec, sub_seed(cfg.seed, "init"));
                if (data.has_pretrain) {
                    TrainConfig tc = cfg.pretrain.train;
                    tc.seed = sub_seed(cfg.seed, "pretrain_stage");
                    SharpnessConfig plain;  // pretraining never uses sharpness
                    plain.mode = SharpnessMode::None;
                    FineTuneResult r = finetune(init, spec, data.pretrain_train, data.pretrain_val,
                                                cfg.pretrain.optimizer, plain, tc);
                    theta0 = std::move(r.final_params);
                } else {
                    theta0 = std::move(init);
                }
                save_checkpoint(theta0, spec, {cfg.seed, "pretrain", 0}, pre_path);
            } else {
                LoadedCheckpoint lc = load_checkpoint(pre_path);
                if (lc.params.spec_hash != spec_digest(spec))
                    throw std::runtime_error("stored pretrain checkpoint does not match the "
                                             "configured model");
                theta0 = std::move(lc.params);
            }
            written.push_back(pre_path);
            man.pretrain_checkpoint = pre_path;
        }
        const uint64_t base_digest = param_digest(theta0);

        // fine-tune each task from theta_0 (or reload the checkpoints)
        current = "finetune";
        std::vector<ParamVector> best(static_cast<size_t>(num_tasks));
        std::vector<TaskVector> taus;
        if (static_cast<int>(last) >= static_cast<int>(Stage::Finetune)) {
            StageTimer timer(man, "finetune");
            std::vector<std::string> task_paths;
            for (int t = 0; t < num_tasks; ++t)
                task_paths.push_back((fs::path(cfg.out_dir) / "checkpoints" /
                                      ("task_" + std::to_string(t) + ".json"))
                                         .string());
            if (static_cast<int>(first) <= static_cast<int>(Stage::Finetune)) {
                std::vector<std::exception_ptr> errors(static_cast<size_t>(num_tasks));
                parallel_for(num_tasks, threads, [&](int t) {
                    try {
                        const StageConfig& sc =
                            cfg.per_task.empty() ? cfg.finetune : cfg.per_task[static_cast<size_t>(t)];
                        TrainConfig tc = sc.train;
                        tc.seed = sub_seed(cfg.seed, "task_stage", static_cast<uint64_t>(t));
                        FineTuneResult r =
                            finetune(theta0, spec, data.tasks[static_cast<size_t>(t)].train,
                                     data.tasks[static_cast<size_t>(t)].val, sc.optimizer,
                                     sc.sharpness, tc);
                        best[static_cast<size_t>(t)] = std::move(r.best_params);
                    } catch (...) {
                        errors[static_cast<size_t>(t)] = std::current_exception();
                    }
                });
                for (const std::exception_ptr& e : errors)
                    if (e) std::rethrow_exception(e);
                for (int t = 0; t < num_tasks; ++t)
                    save_checkpoint(best[static_cast<size_t>(t)], spec,
                                    {cfg.seed, "task_" + std::to_string(t), base_digest},
                                    task_paths[static_cast<size_t>(t)]);
            } else {
                for (int t = 0; t < num_tasks; ++t) {
                    LoadedCheckpoint lc = load_checkpoint(task_paths[static_cast<size_t>(t)]);
                    if (lc.params.spec_hash != spec_digest(spec))
                        throw std::runtime_error("stored task checkpoint does not match the "
                                                 "configured model");
                    if (lc.meta.base_digest != base_digest)
                        throw std::runtime_error(
                            "task checkpoint was fine-tuned from a different base");
                    best[static_cast<size_t>(t)] = std::move(lc.params);
                }
            }
            for (int t = 0; t < num_tasks; ++t) {
                taus.push_back(task_vector(best[static_cast<size_t>(t)], theta0, t));
                man.task_accuracies.push_back(accuracy(best[static_cast<size_t>(t)], spec,
                                                       data.tasks[static_cast<size_t>(t)].test));
                man.task_checkpoints.push_back(task_paths[static_cast<size_t>(t)]);
                written.push_back(task_paths[static_cast<size_t>(t)]);
            }
        }

        // merge + coefficient search, evaluated on the test splits
        current = "merge";
        if (static_cast<int>(last) >= static_cast<int>(Stage::Merge) &&
            static_cast<int>(first) <= static_cast<int>(Stage::Merge)) {
            StageTimer timer(man, "merge");
            std::vector<TaskDataset> val_sets;
            for (const TaskSplits& ts : data.tasks) val_sets.push_back(ts.val);
            int req_idx = 0;
            for (const MergeRequest& req : cfg.merges) {
                SearchResult res = coefficient_search(theta0, spec, taus, req.method, val_sets,
                                                      req.alpha_grid, req.prune_grid);
                MergeOutcome mo;
                mo.method = merge_method_name(req.method);
                mo.best_alpha = res.best.alpha;
                mo.best_prune = res.best.ties_prune_fraction;
                for (const SearchEntry& e : res.table) {
                    if (e.alpha == res.best.alpha &&
                        e.prune_fraction == res.best.ties_prune_fraction) {
                        mo.search_score = e.score;
                        break;
                    }
                }
                double sum_abs = 0.0, sum_norm = 0.0;
                int norm_count = 0;
                for (int t = 0; t < num_tasks; ++t) {
                    double abs_acc =
                        accuracy(res.merged, spec, data.tasks[static_cast<size_t>(t)].test);
                    mo.task_abs_accuracy.push_back(abs_acc);
                    sum_abs += abs_acc;
                    double fine = man.task_accuracies[static_cast<size_t>(t)];
                    if (fine == 0.0) {
                        mo.task_norm_accuracy.push_back(std::numeric_limits<double>::quiet_NaN());
                    } else {
                        double ratio = abs_acc / fine;
                        mo.task_norm_accuracy.push_back(ratio);
                        sum_norm += ratio;
                        ++norm_count;
                    }
                }
                mo.mean_abs_accuracy = sum_abs / num_tasks;
                mo.mean_norm_accuracy = norm_count == 0 ? 0.0 : sum_norm / norm_count;

                std::string tag = std::to_string(req_idx) + "_" + mo.method;
                mo.checkpoint_path =
                    (fs::path(cfg.out_dir) / "checkpoints" / ("merge_" + tag + ".json")).string();
                save_checkpoint(res.merged, spec, {cfg.seed, "merge_" + mo.method, base_digest},
                                mo.checkpoint_path);
                written.push_back(mo.checkpoint_path);

                std::string table = "alpha,prune_fraction,score";
                for (int t = 0; t < num_tasks; ++t) table += ",acc_task" + std::to_string(t);
                table += '\n';
                for (const SearchEntry& e : res.table) {
                    append_g17(table, e.alpha);
                    table += ',';
                    append_g17(table, e.prune_fraction);
                    table += ',';
                    append_g17(table, e.score);
                    for (double acc : e.per_task_accuracy) {
                        table += ',';
                        append_g17(table, acc);
                    }
                    table += '\n';
                }
                mo.search_table_path =
                    (fs::path(cfg.out_dir) / ("merge_" + tag + "_search.csv")).string();
                write_text_file(mo.search_table_path, table);
                written.push_back(mo.search_table_path);

                man.merges.push_back(std::move(mo));
                ++req_idx;
            }
        }

        // diagnostics on the test splits
        current = "diagnostics";
        if (static_cast<int>(last) >= static_cast<int>(Stage::Diagnostics) &&
            static_cast<int>(first) <= static_cast<int>(Stage::Diagnostics)) {
            StageTimer timer(man, "diagnostics");
            const DiagnosticsConfig& dc = cfg.diagnostics;
            const fs::path diag_dir = fs::path(cfg.out_dir) / "diagnostics";

            auto track_grid = [&](const GridScan& grid, const std::string& name) {
                std::string path = (diag_dir / name).string();
                emit_grid(grid, path);
                man.diagnostic_artifacts.push_back(path);
                written.push_back(path);
                written.push_back(path + ".meta.json");
            };
            auto track_curve = [&](const Curve& curve, const std::string& name) {
                std::string path = (diag_dir / name).string();
                emit_curve(curve, path);
                man.diagnostic_artifacts.push_back(path);
                written.push_back(path);
                written.push_back(path + ".meta.json");
            };

            std::vector<std::pair<int, int>> pairs = dc.pairs;
            if (pairs.empty())
                for (int a = 0; a < num_tasks; ++a)
                    for (int b = a + 1; b < num_tasks; ++b) pairs.emplace_back(a, b);

            for (const auto& [a, b] : pairs) {
                const TaskDataset& test_a = data.tasks[static_cast<size_t>(a)].test;
                const TaskDataset& test_b = data.tasks[static_cast<size_t>(b)].test;
                const TaskVector& tau_a = taus[static_cast<size_t>(a)];
                const TaskVector& tau_b = taus[static_cast<size_t>(b)];
                std::string suffix = std::to_string(a) + "_" + std::to_string(b) + ".csv";

                if (dc.xi_pair)
                    track_grid(disentanglement_grid_pair(theta0, tau_a, tau_b, spec, test_a,
                                                         test_b, dc.grid, threads),
                               "xi_pair_" + suffix);
                if (dc.xi_all)
                    track_grid(disentanglement_grid_all(theta0, taus, a, b, spec, test_a, test_b,
                                                        dc.fixed_alpha, dc.grid, threads),
                               "xi_all_" + suffix);
                if (dc.jtl_grid) {
                    std::vector<TaskVector> extras;
                    for (int s = 0; s < num_tasks; ++s)
                        if (s != a && s != b) extras.push_back(taus[static_cast<size_t>(s)]);
                    track_grid(jtl_landscape_grid(theta0, tau_a, tau_b, extras, dc.fixed_alpha,
                                                  spec, test_a, test_b, dc.grid, threads),
                               "jtl_" + suffix);
                }
                if (dc.ctl) {
                    TaskDataset joint = concat_tests(test_a, test_b);
                    CtlResult ctl =
                        ctl_block_metric(theta0, tau_a, tau_b, spec, joint.features, dc.ctl_lambda);
                    std::string body = "block,value\n";
                    for (size_t k = 0; k < ctl.per_block.size(); ++k) {
                        body += std::to_string(k);
                        body += ',';
                        append_g17(body, ctl.per_block[k]);
                        body += '\n';
                    }
                    std::string path = (diag_dir / ("ctl_" + suffix)).string();
                    write_text_file(path, body);
                    json meta{{"kind", "ctl_block"},
                              {"lambda", dc.ctl_lambda},
                              {"task_a", a},
                              {"task_b", b},
                              {"zero_norm_pairs", ctl.zero_norm_pairs},
                              {"blocks", ctl.per_block.size()}};
                    write_text_file(path + ".meta.json", meta.dump(2) + "\n");
                    man.diagnostic_artifacts.push_back(path);
                    written.push_back(path);
                    written.push_back(path + ".meta.json");
                }
                if (dc.barrier) {
                    TaskDataset joint = concat_tests(test_a, test_b);
                    track_curve(loss_barrier_path(best[static_cast<size_t>(a)],
                                                  best[static_cast<size_t>(b)], spec, joint,
                                                  dc.barrier_points),
                                "barrier_" + suffix);
                }
                if (dc.jtl_gap_curve) {
                    Curve gap;
                    gap.kind = CurveKind::JtlGap;
                    for (int k = 0; k < dc.gap_points; ++k) {
                        double alpha = static_cast<double>(k) / (dc.gap_points - 1);
                        gap.abscissa.push_back(alpha);
                        gap.values.push_back(jtl_gap(best[static_cast<size_t>(a)],
                                                     best[static_cast<size_t>(b)], spec, alpha,
                                                     test_a, test_b));
                    }
                    track_curve(gap, "jtl_gap_" + suffix);

                    BoundCheck bc = jtl_bound_check(
                        best[static_cast<size_t>(a)], best[static_cast<size_t>(b)], spec, 0.5,
                        test_a, test_b, dc.eigen_max_iters, dc.eigen_tol,
                        sub_seed(cfg.seed, "bound", static_cast<uint64_t>(a) * 1000 +
                                                        static_cast<uint64_t>(b)));
                    json bj{{"alpha", 0.5},
                            {"abs_delta", bc.abs_delta},
                            {"bound", bc.bound},
                            {"residual", bc.residual},
                            {"eigen_converged", bc.eigen_converged},
                            {"task_a", a},
                            {"task_b", b}};
                    std::string bpath =
                        (diag_dir / ("jtl_bound_" + std::to_string(a) + "_" + std::to_string(b) +
                                     ".json"))
                            .string();
                    write_text_file(bpath, bj.dump(2) + "\n");
                    man.diagnostic_artifacts.push_back(bpath);
                    written.push_back(bpath);
                }
            }

            if (dc.eigen_segment)
                for (int t = 0; t < num_tasks; ++t)
                    track_curve(
                        eigenvalue_along_segment(theta0, best[static_cast<size_t>(t)], spec,
                                                 data.tasks[static_cast<size_t>(t)].test,
                                                 dc.eigen_points, dc.eigen_max_iters, dc.eigen_tol,
                                                 0.0,
                                                 sub_seed(cfg.seed, "eigen_segment",
                                                          static_cast<uint64_t>(t))),
                        "eigen_segment_" + std::to_string(t) + ".csv");
            if (dc.task_eigenvalues)
                for (int t = 0; t < num_tasks; ++t)
                    man.task_lambda_max.push_back(
                        dominant_eigenvalue(best[static_cast<size_t>(t)], spec,
                                            data.tasks[static_cast<size_t>(t)].test,
                                            dc.eigen_max_iters, dc.eigen_tol, 0.0,
                                            sub_seed(cfg.seed, "task_eigen",
                                                     static_cast<uint64_t>(t)))
                            .value);
        }

        current = "manifest";
        for (const std::string& path : written) man.file_digests[path] = file_digest_hex(path);
        write_manifest(man, (fs::path(cfg.out_dir) / "manifest.json").string());
        fs::remove(marker, ec);
        return man;
    } catch (const IoError& e) {
        fail(e.what());
        throw;  // IO and digest problems keep their own exit code
    } catch (const std::exception& e) {
        fail(e.what());
        throw StageError(current + ": " + e.what());
    }
}

}  // namespace samlab
