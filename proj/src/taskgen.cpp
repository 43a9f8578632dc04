#include "samlab/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

#include "samlab/errors.hpp"
#include "samlab/rng.hpp"

namespace samlab {

namespace {

void check_config(const SuiteConfig& c) {
    if (c.num_tasks < 1) throw std::invalid_argument("suite: num_tasks must be at least 1");
    if (c.input_dim < 2)
        throw std::invalid_argument("suite: input_dim must be at least 2 (rotation plane)");
    if (c.num_classes < 2) throw std::invalid_argument("suite: num_classes must be at least 2");
    if (c.train_per_task < 2) throw std::invalid_argument("suite: train_per_task must be at least 2");
    if (c.test_per_task < 1) throw std::invalid_argument("suite: test_per_task must be at least 1");
    if (c.pretrain_samples < 1)
        throw std::invalid_argument("suite: pretrain_samples must be at least 1");
    if (!(c.separation > 0.0)) throw std::invalid_argument("suite: separation must be positive");
    if (c.noise_scale < 0.0) throw std::invalid_argument("suite: noise_scale must be nonnegative");
    if (c.rotation_deg.size() != static_cast<size_t>(c.num_tasks))
        throw std::invalid_argument("suite: one rotation angle per task required");
    if (!(c.val_ratio > 0.0) || !(c.val_ratio < 1.0))
        throw std::invalid_argument("suite: val_ratio must lie in (0, 1)");
}

// Cluster center for mean index m under task rotation `angle_rad`: the
// layout circle lives in coordinates (0, 1), everything else is zero.
void write_row(double* row, int d, int mean_index, int num_classes, double angle_rad,
               double separation, double noise_scale, Rng& rng) {
    double a = 2.0 * std::numbers::pi * static_cast<double>(mean_index) /
                   static_cast<double>(num_classes) +
               angle_rad;
    for (int j = 0; j < d; ++j) row[j] = noise_scale * rng.normal();
    row[0] += separation * std::cos(a);
    row[1] += separation * std::sin(a);
}

// Balanced labels via round-robin; class_shift rotates the class-to-cluster
// assignment (the per-task relabeling), task_mixture cycles sampler settings
// over all tasks (the pretraining mixture).
TaskDataset sample_set(const SuiteConfig& cfg, Rng& rng, int n, SplitTag split, int task_id,
                       bool task_mixture, int fixed_task) {
    TaskDataset data;
    data.split = split;
    data.task_id = task_id;
    data.features = Matrix(n, cfg.input_dim);
    data.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int label = i % cfg.num_classes;
        int task = task_mixture ? (i / cfg.num_classes) % cfg.num_tasks : fixed_task;
        int shift = task_mixture ? 0 : task;  // pretraining keeps identity labels
        int mean_index = (label + shift) % cfg.num_classes;
        double angle = cfg.rotation_deg[static_cast<size_t>(task)] * std::numbers::pi / 180.0;
        write_row(data.features.row(i), cfg.input_dim, mean_index, cfg.num_classes, angle,
                  cfg.separation, cfg.noise_scale, rng);
        data.labels[static_cast<size_t>(i)] = label;
    }
    return data;
}

// Class-stratified validation carve: floor(ratio * count) rows per class,
// chosen by one shuffle per class, emitted in original row order.
std::pair<TaskDataset, TaskDataset> stratified_carve(const TaskDataset& full, double ratio,
                                                     uint64_t seed, int num_classes) {
    std::vector<std::vector<int>> by_class(static_cast<size_t>(num_classes));
    for (int i = 0; i < full.size(); ++i)
        by_class[static_cast<size_t>(full.labels[static_cast<size_t>(i)])].push_back(i);
    std::vector<char> in_val(static_cast<size_t>(full.size()), 0);
    Rng rng(seed);
    for (auto& rows : by_class) {
        rng.shuffle(rows);
        size_t k = static_cast<size_t>(
            std::floor(ratio * static_cast<double>(rows.size())));
        for (size_t i = 0; i < k; ++i) in_val[static_cast<size_t>(rows[i])] = 1;
    }
    int d = full.features.cols;
    auto gather = [&](bool val_rows, SplitTag tag) {
        TaskDataset out;
        out.split = tag;
        out.task_id = full.task_id;
        int count = 0;
        for (char flag : in_val) count += (flag != 0) == val_rows;
        out.features = Matrix(count, d);
        out.labels.reserve(static_cast<size_t>(count));
        int at = 0;
        for (int i = 0; i < full.size(); ++i) {
            if ((in_val[static_cast<size_t>(i)] != 0) != val_rows) continue;
            const double* src = full.features.row(i);
            std::copy(src, src + d, out.features.row(at));
            out.labels.push_back(full.labels[static_cast<size_t>(i)]);
            ++at;
        }
        return out;
    };
    return {gather(false, SplitTag::Train), gather(true, SplitTag::Val)};
}

}  // namespace

TaskSuite generate_suite(const SuiteConfig& config) {
    check_config(config);
    TaskSuite suite;
    suite.config = config;

    Rng pre_rng(sub_seed(config.seed, "pretrain"));
    suite.pretrain = sample_set(config, pre_rng, config.pretrain_samples, SplitTag::Train, -1,
                                /*task_mixture=*/true, 0);

    for (int t = 0; t < config.num_tasks; ++t) {
        Rng train_rng(sub_seed(config.seed, "task_train", static_cast<uint64_t>(t)));
        TaskDataset full = sample_set(config, train_rng, config.train_per_task, SplitTag::Train,
                                      t, false, t);
        Rng test_rng(sub_seed(config.seed, "task_test", static_cast<uint64_t>(t)));
        TaskDataset test = sample_set(config, test_rng, config.test_per_task, SplitTag::Test, t,
                                      false, t);
        auto carved = stratified_carve(full, config.val_ratio,
                                       sub_seed(config.seed, "val_split", static_cast<uint64_t>(t)),
                                       config.num_classes);
        suite.tasks.push_back(TaskSplits{std::move(carved.first), std::move(carved.second),
                                         std::move(test)});
    }
    return suite;
}

std::pair<TaskDataset, TaskDataset> split(const TaskDataset& dataset, double val_ratio,
                                          uint64_t seed) {
    if (!(val_ratio > 0.0) || !(val_ratio < 1.0))
        throw std::invalid_argument("split: val_ratio must lie in (0, 1)");
    int n = dataset.size();
    if (n < 2) throw std::invalid_argument("split: need at least 2 rows");
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    Rng rng(sub_seed(seed, "split"));
    rng.shuffle(perm);
    int val_n = static_cast<int>(std::floor(val_ratio * static_cast<double>(n)));
    int d = dataset.features.cols;
    auto take = [&](int from, int count, SplitTag tag) {
        TaskDataset out;
        out.split = tag;
        out.task_id = dataset.task_id;
        out.features = Matrix(count, d);
        out.labels.resize(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            int src = perm[static_cast<size_t>(from + i)];
            const double* row = dataset.features.row(src);
            std::copy(row, row + d, out.features.row(i));
            out.labels[static_cast<size_t>(i)] = dataset.labels[static_cast<size_t>(src)];
        }
        return out;
    };
    TaskDataset val = take(0, val_n, SplitTag::Val);
    TaskDataset train = take(val_n, n - val_n, SplitTag::Train);
    return {std::move(train), std::move(val)};
}

void save_csv(const TaskDataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_csv: cannot open " + path + " for writing");
    for (int j = 0; j < dataset.features.cols; ++j) out << "f" << j << ",";
    out << "label\n";
    char buf[40];
    for (int i = 0; i < dataset.size(); ++i) {
        for (int j = 0; j < dataset.features.cols; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", dataset.features.at(i, j));
            out << buf << ",";
        }
        out << dataset.labels[static_cast<size_t>(i)] << "\n";
    }
    if (!out) throw IoError("save_csv: write failed for " + path);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

TaskDataset load_csv(const std::string& path, int num_classes) {
    if (num_classes < 1) throw std::invalid_argument("load_csv: num_classes must be positive");
    std::ifstream in(path);
    if (!in) throw IoError("load_csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw IoError("load_csv: " + path + " is empty");
    std::vector<std::string> header = split_fields(line);
    if (header.size() < 2 || header.back() != "label")
        throw IoError("load_csv: line 1: header must be f0,...,label");
    int d = static_cast<int>(header.size()) - 1;
    for (int j = 0; j < d; ++j) {
        if (header[static_cast<size_t>(j)] != "f" + std::to_string(j))
            throw IoError("load_csv: line 1: expected column f" + std::to_string(j) + ", got " +
                          header[static_cast<size_t>(j)]);
    }

    std::vector<double> values;
    std::vector<int> labels;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;  // ignore a trailing blank line
        std::vector<std::string> fields = split_fields(line);
        if (fields.size() != header.size())
            throw IoError("load_csv: line " + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields, got " +
                          std::to_string(fields.size()));
        for (int j = 0; j < d; ++j) {
            const std::string& f = fields[static_cast<size_t>(j)];
            size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(f, &used);
            } catch (const std::exception&) {
                throw IoError("load_csv: line " + std::to_string(line_no) +
                              ": bad number in column f" + std::to_string(j) + ": " + f);
            }
            if (used != f.size())
                throw IoError("load_csv: line " + std::to_string(line_no) +
                              ": trailing junk in column f" + std::to_string(j) + ": " + f);
            values.push_back(v);
        }
        const std::string& lf = fields.back();
        size_t used = 0;
        long label = 0;
        try {
            label = std::stol(lf, &used);
        } catch (const std::exception&) {
            throw IoError("load_csv: line " + std::to_string(line_no) + ": bad label: " + lf);
        }
        if (used != lf.size())
            throw IoError("load_csv: line " + std::to_string(line_no) + ": bad label: " + lf);
        if (label < 0 || label >= num_classes)
            throw IoError("load_csv: line " + std::to_string(line_no) + ": label " +
                          std::to_string(label) + " outside [0, " + std::to_string(num_classes) +
                          ")");
        labels.push_back(static_cast<int>(label));
    }

    TaskDataset data;
    data.features = Matrix(static_cast<int>(labels.size()), d);
    data.features.data = std::move(values);
    data.labels = std::move(labels);
    return data;
}

}  // namespace samlab
