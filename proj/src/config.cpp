#include "samlab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "samlab/errors.hpp"

namespace samlab {

namespace {

using nlohmann::json;

// Wraps one JSON object: typed field access with exact error names, default
// recording, and unknown-field detection via finish().
class Reader {
public:
    Reader(const json& j, std::string path, std::vector<std::string>* defaults)
        : j_(j), path_(std::move(path)), defaults_(defaults) {
        if (!j_.is_object())
            throw ConfigError((path_.empty() ? std::string("config") : path_) +
                              ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    // marks a key consumed and logs a default for it without reading anything
    void absent(const std::string& key) { note_default(key); }

    std::string dotted(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    double number(const std::string& key, double fallback) {
        if (!has(key)) {
            note_default(key);
            return fallback;
        }
        return require_number(key);
    }

    double require_number(const std::string& key) {
        if (!has(key)) throw ConfigError(dotted(key) + ": missing required field");
        const json& v = raw(key);
        if (!v.is_number()) throw ConfigError(dotted(key) + ": expected a number");
        return v.get<double>();
    }

    int integer(const std::string& key, int fallback) {
        if (!has(key)) {
            note_default(key);
            return fallback;
        }
        return require_integer(key);
    }

    int require_integer(const std::string& key) {
        if (!has(key)) throw ConfigError(dotted(key) + ": missing required field");
        const json& v = raw(key);
        if (!v.is_number_integer())
            throw ConfigError(dotted(key) + ": expected an integer");
        return static_cast<int>(v.get<int64_t>());
    }

    uint64_t unsigned64(const std::string& key, uint64_t fallback) {
        if (!has(key)) {
            note_default(key);
            return fallback;
        }
        const json& v = raw(key);
        if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0)))
            throw ConfigError(dotted(key) + ": expected a non-negative integer");
        return v.get<uint64_t>();
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) {
            note_default(key);
            return fallback;
        }
        const json& v = raw(key);
        if (!v.is_boolean()) throw ConfigError(dotted(key) + ": expected a boolean");
        return v.get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback) {
        if (!has(key)) {
            note_default(key);
            return fallback;
        }
        return require_text(key);
    }

    std::string require_text(const std::string& key) {
        if (!has(key)) throw ConfigError(dotted(key) + ": missing required field");
        const json& v = raw(key);
        if (!v.is_string()) throw ConfigError(dotted(key) + ": expected a string");
        return v.get<std::string>();
    }

    std::vector<double> number_list(const std::string& key, std::vector<double> fallback) {
        if (!has(key)) {
            note_default(key);
            return fallback;
        }
        const json& v = raw(key);
        if (!v.is_array()) throw ConfigError(dotted(key) + ": expected an array of numbers");
        std::vector<double> out;
        for (const json& e : v) {
            if (!e.is_number()) throw ConfigError(dotted(key) + ": expected an array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::vector<int> integer_list(const std::string& key, std::vector<int> fallback) {
        if (!has(key)) {
            note_default(key);
            return fallback;
        }
        const json& v = raw(key);
        if (!v.is_array()) throw ConfigError(dotted(key) + ": expected an array of integers");
        std::vector<int> out;
        for (const json& e : v) {
            if (!e.is_number_integer())
                throw ConfigError(dotted(key) + ": expected an array of integers");
            out.push_back(static_cast<int>(e.get<int64_t>()));
        }
        return out;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (seen_.find(it.key()) == seen_.end())
                throw ConfigError(dotted(it.key()) + ": unknown field");
    }

    std::vector<std::string>* defaults() const { return defaults_; }

private:
    void note_default(const std::string& key) {
        if (defaults_) defaults_->push_back(dotted(key));
    }

    const json& j_;
    std::string path_;
    std::vector<std::string>* defaults_;
    std::set<std::string> seen_;
};

template <typename Enum>
Enum pick(const std::string& field, const std::string& value,
          std::initializer_list<std::pair<const char*, Enum>> table) {
    for (const auto& [name, v] : table)
        if (value == name) return v;
    std::ostringstream msg;
    msg << field << ": unknown value '" << value << "' (expected one of:";
    for (const auto& [name, v] : table) msg << " " << name;
    msg << ")";
    throw ConfigError(msg.str());
}

Activation parse_activation(Reader& r, const std::string& key, Activation fallback) {
    if (!r.has(key)) {
        r.absent(key);
        return fallback;
    }
    return pick<Activation>(r.dotted(key), r.require_text(key),
                            {{"tanh", Activation::Tanh}, {"relu", Activation::Relu}});
}

OptimizerConfig parse_optimizer(const json& j, const std::string& path,
                                std::vector<std::string>* defaults) {
    Reader r(j, path, defaults);
    OptimizerConfig oc;
    if (r.has("base"))
        oc.base = pick<BaseOptimizer>(r.dotted("base"), r.require_text("base"),
                                      {{"sgd", BaseOptimizer::Sgd}, {"adamw", BaseOptimizer::Adamw}});
    else
        r.absent("base");
    oc.lr = r.number("lr", oc.lr);
    oc.momentum = r.number("momentum", oc.momentum);
    oc.beta1 = r.number("beta1", oc.beta1);
    oc.beta2 = r.number("beta2", oc.beta2);
    oc.weight_decay = r.number("weight_decay", oc.weight_decay);
    oc.eps = r.number("eps", oc.eps);
    r.finish();
    return oc;
}

SharpnessConfig parse_sharpness(const json& j, const std::string& path,
                                std::vector<std::string>* defaults) {
    Reader r(j, path, defaults);
    SharpnessConfig sc;
    if (r.has("mode"))
        sc.mode = pick<SharpnessMode>(r.dotted("mode"), r.require_text("mode"),
                                      {{"none", SharpnessMode::None},
                                       {"sam", SharpnessMode::Sam},
                                       {"asam", SharpnessMode::Asam}});
    else
        r.absent("mode");
    sc.rho = r.number("rho", sc.rho);
    if (r.has("asam_norm"))
        sc.asam_norm = pick<AsamNorm>(r.dotted("asam_norm"), r.require_text("asam_norm"),
                                      {{"paper", AsamNorm::Paper},
                                       {"original", AsamNorm::Original}});
    else
        r.absent("asam_norm");
    r.finish();
    return sc;
}

TrainConfig parse_train(const json& j, const std::string& path,
                        std::vector<std::string>* defaults) {
    Reader r(j, path, defaults);
    TrainConfig tc;
    tc.steps = r.integer("steps", tc.steps);
    tc.batch_size = r.integer("batch_size", tc.batch_size);
    if (r.has("schedule"))
        tc.schedule = pick<LrScheduleKind>(r.dotted("schedule"), r.require_text("schedule"),
                                           {{"cosine", LrScheduleKind::Cosine},
                                            {"constant", LrScheduleKind::Constant}});
    else
        r.absent("schedule");
    tc.warmup_steps = r.integer("warmup_steps", tc.warmup_steps);
    tc.linearized = r.boolean("linearized", tc.linearized);
    tc.eval_every = r.integer("eval_every", tc.eval_every);
    r.finish();
    if (tc.steps < 1) throw ConfigError(path + ".steps: must be at least 1");
    if (tc.batch_size < 1) throw ConfigError(path + ".batch_size: must be at least 1");
    if (tc.warmup_steps < 0) throw ConfigError(path + ".warmup_steps: must not be negative");
    if (tc.eval_every < 0) throw ConfigError(path + ".eval_every: must not be negative");
    return tc;
}

StageConfig parse_stage(const json& j, const std::string& path,
                        std::vector<std::string>* defaults, bool allow_sharpness) {
    Reader r(j, path, defaults);
    StageConfig sc;
    if (r.has("optimizer"))
        sc.optimizer = parse_optimizer(r.raw("optimizer"), r.dotted("optimizer"), defaults);
    else
        r.absent("optimizer");
    if (allow_sharpness) {
        if (r.has("sharpness"))
            sc.sharpness = parse_sharpness(r.raw("sharpness"), r.dotted("sharpness"), defaults);
        else
            r.absent("sharpness");
    }
    if (r.has("train"))
        sc.train = parse_train(r.raw("train"), r.dotted("train"), defaults);
    else
        r.absent("train");
    r.finish();  // a sharpness block where none is allowed lands here as unknown
    return sc;
}

SuiteConfig parse_suite(const json& j, const std::string& path,
                        std::vector<std::string>* defaults) {
    Reader r(j, path, defaults);
    SuiteConfig sc;
    sc.num_tasks = r.integer("num_tasks", sc.num_tasks);
    sc.input_dim = r.integer("input_dim", sc.input_dim);
    sc.num_classes = r.integer("num_classes", sc.num_classes);
    sc.train_per_task = r.integer("train_per_task", sc.train_per_task);
    sc.test_per_task = r.integer("test_per_task", sc.test_per_task);
    sc.pretrain_samples = r.integer("pretrain_samples", sc.pretrain_samples);
    sc.separation = r.number("separation", sc.separation);
    sc.noise_scale = r.number("noise_scale", sc.noise_scale);
    if (r.has("rotation_deg")) {
        sc.rotation_deg = r.number_list("rotation_deg", sc.rotation_deg);
    } else if (sc.num_tasks == static_cast<int>(sc.rotation_deg.size())) {
        r.absent("rotation_deg");
    } else {
        throw ConfigError(r.dotted("rotation_deg") +
                          ": required when num_tasks differs from the default");
    }
    if (static_cast<int>(sc.rotation_deg.size()) != sc.num_tasks)
        throw ConfigError(r.dotted("rotation_deg") + ": needs one entry per task");
    sc.val_ratio = r.number("val_ratio", sc.val_ratio);
    r.finish();  // note: a seed here is rejected; the master seed derives it
    return sc;
}

GridSpec parse_grid(const json& j, const std::string& path, std::vector<std::string>* defaults) {
    Reader r(j, path, defaults);
    GridSpec g;
    g.lo1 = r.number("lo1", g.lo1);
    g.hi1 = r.number("hi1", g.hi1);
    g.n1 = r.integer("n1", g.n1);
    g.lo2 = r.number("lo2", g.lo2);
    g.hi2 = r.number("hi2", g.hi2);
    g.n2 = r.integer("n2", g.n2);
    r.finish();
    return g;
}

DiagnosticsConfig parse_diagnostics(const json& j, const std::string& path,
                                    std::vector<std::string>* defaults) {
    Reader r(j, path, defaults);
    DiagnosticsConfig dc;
    dc.xi_pair = r.boolean("xi_pair", dc.xi_pair);
    dc.xi_all = r.boolean("xi_all", dc.xi_all);
    dc.jtl_grid = r.boolean("jtl_grid", dc.jtl_grid);
    dc.ctl = r.boolean("ctl", dc.ctl);
    dc.barrier = r.boolean("barrier", dc.barrier);
    dc.jtl_gap_curve = r.boolean("jtl_gap_curve", dc.jtl_gap_curve);
    dc.eigen_segment = r.boolean("eigen_segment", dc.eigen_segment);
    dc.task_eigenvalues = r.boolean("task_eigenvalues", dc.task_eigenvalues);
    if (r.has("pairs")) {
        const json& v = r.raw("pairs");
        if (!v.is_array()) throw ConfigError(r.dotted("pairs") + ": expected an array of pairs");
        for (const json& e : v) {
            if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
                !e[1].is_number_integer())
                throw ConfigError(r.dotted("pairs") + ": each entry must be [task_a, task_b]");
            dc.pairs.emplace_back(static_cast<int>(e[0].get<int64_t>()),
                                  static_cast<int>(e[1].get<int64_t>()));
        }
    } else {
        r.absent("pairs");  // empty means every unordered pair
    }
    dc.fixed_alpha = r.number("fixed_alpha", dc.fixed_alpha);
    dc.ctl_lambda = r.number("ctl_lambda", dc.ctl_lambda);
    if (r.has("grid"))
        dc.grid = parse_grid(r.raw("grid"), r.dotted("grid"), defaults);
    else
        r.absent("grid");
    dc.eigen_max_iters = r.integer("eigen_max_iters", dc.eigen_max_iters);
    dc.eigen_tol = r.number("eigen_tol", dc.eigen_tol);
    dc.eigen_points = r.integer("eigen_points", dc.eigen_points);
    dc.barrier_points = r.integer("barrier_points", dc.barrier_points);
    dc.gap_points = r.integer("gap_points", dc.gap_points);
    r.finish();
    return dc;
}

std::vector<MergeRequest> parse_merges(const json& j, const std::string& path,
                                       std::vector<std::string>* defaults) {
    if (!j.is_array()) throw ConfigError(path + ": expected an array of merge requests");
    if (j.empty()) throw ConfigError(path + ": needs at least one merge request");
    std::vector<MergeRequest> out;
    int idx = 0;
    for (const json& e : j) {
        Reader r(e, path + "[" + std::to_string(idx) + "]", defaults);
        MergeRequest req;
        req.method = pick<MergeMethod>(r.dotted("method"), r.require_text("method"),
                                       {{"average", MergeMethod::Average},
                                        {"arithmetic", MergeMethod::Arithmetic},
                                        {"ties", MergeMethod::Ties}});
        req.alpha_grid = r.number_list("alpha_grid", req.alpha_grid);
        req.prune_grid = r.number_list("prune_grid", req.prune_grid);
        r.finish();
        out.push_back(std::move(req));
        ++idx;
    }
    return out;
}

ExperimentConfig parse_root(const json& j) {
    ExperimentConfig cfg;
    Reader r(j, "", &cfg.defaults_applied);

    cfg.seed = r.unsigned64("seed", cfg.seed);
    cfg.out_dir = r.text("out_dir", cfg.out_dir);
    cfg.threads = r.integer("threads", cfg.threads);
    if (cfg.threads < 0) throw ConfigError("threads: must be >= 0");

    if (r.has("model")) {
        Reader m(r.raw("model"), "model", &cfg.defaults_applied);
        cfg.hidden = m.integer_list("hidden", cfg.hidden);
        cfg.activation = parse_activation(m, "activation", cfg.activation);
        m.finish();
    } else {
        r.absent("model");
    }
    for (int h : cfg.hidden)
        if (h < 1) throw ConfigError("model.hidden: layer widths must be positive");

    bool has_suite = r.has("suite");
    bool has_data = r.has("data");
    if (has_suite && has_data)
        throw ConfigError("config: give either suite or data, not both");
    if (!has_suite && !has_data)
        throw ConfigError("config: missing data source (suite or data)");
    cfg.use_suite = has_suite;
    if (has_suite) {
        cfg.suite = parse_suite(r.raw("suite"), "suite", &cfg.defaults_applied);
    } else {
        Reader d(r.raw("data"), "data", &cfg.defaults_applied);
        cfg.csv_num_classes = d.require_integer("num_classes");
        if (cfg.csv_num_classes < 2) throw ConfigError("data.num_classes: must be >= 2");
        cfg.csv_val_ratio = d.number("val_ratio", cfg.csv_val_ratio);
        cfg.pretrain_csv = d.text("pretrain", cfg.pretrain_csv);
        if (!d.has("tasks")) throw ConfigError("data.tasks: missing required field");
        const json& tasks = d.raw("tasks");
        if (!tasks.is_array() || tasks.empty())
            throw ConfigError("data.tasks: expected a non-empty array");
        int idx = 0;
        for (const json& e : tasks) {
            Reader t(e, "data.tasks[" + std::to_string(idx) + "]", &cfg.defaults_applied);
            TaskDataConfig td;
            td.train_csv = t.require_text("train");
            td.test_csv = t.require_text("test");
            t.finish();
            cfg.task_csvs.push_back(std::move(td));
            ++idx;
        }
        d.finish();
    }

    if (r.has("pretrain"))
        cfg.pretrain = parse_stage(r.raw("pretrain"), "pretrain", &cfg.defaults_applied, false);
    else
        r.absent("pretrain");
    if (r.has("finetune"))
        cfg.finetune = parse_stage(r.raw("finetune"), "finetune", &cfg.defaults_applied, true);
    else
        r.absent("finetune");

    int num_tasks = cfg.use_suite ? cfg.suite.num_tasks : static_cast<int>(cfg.task_csvs.size());
    if (r.has("per_task")) {
        const json& v = r.raw("per_task");
        if (!v.is_array()) throw ConfigError("per_task: expected an array of stage configs");
        int idx = 0;
        for (const json& e : v) {
            cfg.per_task.push_back(parse_stage(e, "per_task[" + std::to_string(idx) + "]",
                                               &cfg.defaults_applied, true));
            ++idx;
        }
        if (static_cast<int>(cfg.per_task.size()) != num_tasks)
            throw ConfigError("per_task: needs exactly one entry per task");
    } else {
        r.absent("per_task");
    }

    if (r.has("merges")) {
        cfg.merges = parse_merges(r.raw("merges"), "merges", &cfg.defaults_applied);
    } else {
        r.absent("merges");
        cfg.merges = {MergeRequest{MergeMethod::Average, default_alpha_grid(), default_prune_grid()},
                      MergeRequest{MergeMethod::Arithmetic, default_alpha_grid(),
                                   default_prune_grid()},
                      MergeRequest{MergeMethod::Ties, default_alpha_grid(), default_prune_grid()}};
    }

    if (r.has("diagnostics"))
        cfg.diagnostics =
            parse_diagnostics(r.raw("diagnostics"), "diagnostics", &cfg.defaults_applied);
    else
        r.absent("diagnostics");

    for (const auto& [a, b] : cfg.diagnostics.pairs) {
        if (a < 0 || a >= num_tasks || b < 0 || b >= num_tasks || a == b)
            throw ConfigError("diagnostics.pairs: pair (" + std::to_string(a) + ", " +
                              std::to_string(b) + ") does not name two distinct tasks");
    }

    r.finish();
    return cfg;
}

const char* activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }
const char* base_name(BaseOptimizer b) { return b == BaseOptimizer::Sgd ? "sgd" : "adamw"; }
const char* mode_name(SharpnessMode m) {
    switch (m) {
        case SharpnessMode::Sam: return "sam";
        case SharpnessMode::Asam: return "asam";
        default: return "none";
    }
}
const char* norm_name(AsamNorm n) { return n == AsamNorm::Paper ? "paper" : "original"; }
const char* schedule_name(LrScheduleKind k) {
    return k == LrScheduleKind::Cosine ? "cosine" : "constant";
}
const char* method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::Average: return "average";
        case MergeMethod::Ties: return "ties";
        default: return "arithmetic";
    }
}

json optimizer_to_json(const OptimizerConfig& oc) {
    return json{{"base", base_name(oc.base)},   {"lr", oc.lr},
                {"momentum", oc.momentum},      {"beta1", oc.beta1},
                {"beta2", oc.beta2},            {"weight_decay", oc.weight_decay},
                {"eps", oc.eps}};
}

json sharpness_to_json(const SharpnessConfig& sc) {
    return json{{"mode", mode_name(sc.mode)},
                {"rho", sc.rho},
                {"asam_norm", norm_name(sc.asam_norm)}};
}

json train_to_json(const TrainConfig& tc) {
    return json{{"steps", tc.steps},
                {"batch_size", tc.batch_size},
                {"schedule", schedule_name(tc.schedule)},
                {"warmup_steps", tc.warmup_steps},
                {"linearized", tc.linearized},
                {"eval_every", tc.eval_every}};
}

json stage_to_json(const StageConfig& sc, bool with_sharpness) {
    json j{{"optimizer", optimizer_to_json(sc.optimizer)}, {"train", train_to_json(sc.train)}};
    if (with_sharpness) j["sharpness"] = sharpness_to_json(sc.sharpness);
    return j;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& source_name) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(source_name + ": " + e.what());
    }
    return parse_root(j);
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["threads"] = cfg.threads;
    j["model"] = json{{"hidden", cfg.hidden}, {"activation", activation_name(cfg.activation)}};
    if (cfg.use_suite) {
        j["suite"] = json{{"num_tasks", cfg.suite.num_tasks},
                          {"input_dim", cfg.suite.input_dim},
                          {"num_classes", cfg.suite.num_classes},
                          {"train_per_task", cfg.suite.train_per_task},
                          {"test_per_task", cfg.suite.test_per_task},
                          {"pretrain_samples", cfg.suite.pretrain_samples},
                          {"separation", cfg.suite.separation},
                          {"noise_scale", cfg.suite.noise_scale},
                          {"rotation_deg", cfg.suite.rotation_deg},
                          {"val_ratio", cfg.suite.val_ratio}};
    } else {
        json tasks = json::array();
        for (const TaskDataConfig& t : cfg.task_csvs)
            tasks.push_back(json{{"train", t.train_csv}, {"test", t.test_csv}});
        j["data"] = json{{"num_classes", cfg.csv_num_classes},
                         {"val_ratio", cfg.csv_val_ratio},
                         {"pretrain", cfg.pretrain_csv},
                         {"tasks", tasks}};
    }
    j["pretrain"] = stage_to_json(cfg.pretrain, false);
    j["finetune"] = stage_to_json(cfg.finetune, true);
    if (!cfg.per_task.empty()) {
        json arr = json::array();
        for (const StageConfig& sc : cfg.per_task) arr.push_back(stage_to_json(sc, true));
        j["per_task"] = arr;
    }
    json merges = json::array();
    for (const MergeRequest& m : cfg.merges)
        merges.push_back(json{{"method", method_name(m.method)},
                              {"alpha_grid", m.alpha_grid},
                              {"prune_grid", m.prune_grid}});
    j["merges"] = merges;
    json pairs = json::array();
    for (const auto& [a, b] : cfg.diagnostics.pairs) pairs.push_back(json::array({a, b}));
    const DiagnosticsConfig& dc = cfg.diagnostics;
    j["diagnostics"] = json{{"xi_pair", dc.xi_pair},
                            {"xi_all", dc.xi_all},
                            {"jtl_grid", dc.jtl_grid},
                            {"ctl", dc.ctl},
                            {"barrier", dc.barrier},
                            {"jtl_gap_curve", dc.jtl_gap_curve},
                            {"eigen_segment", dc.eigen_segment},
                            {"task_eigenvalues", dc.task_eigenvalues},
                            {"pairs", pairs},
                            {"fixed_alpha", dc.fixed_alpha},
                            {"ctl_lambda", dc.ctl_lambda},
                            {"grid", json{{"lo1", dc.grid.lo1},
                                          {"hi1", dc.grid.hi1},
                                          {"n1", dc.grid.n1},
                                          {"lo2", dc.grid.lo2},
                                          {"hi2", dc.grid.hi2},
                                          {"n2", dc.grid.n2}}},
                            {"eigen_max_iters", dc.eigen_max_iters},
                            {"eigen_tol", dc.eigen_tol},
                            {"eigen_points", dc.eigen_points},
                            {"barrier_points", dc.barrier_points},
                            {"gap_points", dc.gap_points}};
    return j.dump(2) + "\n";
}

}  // namespace samlab
