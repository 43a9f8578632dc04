#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "samlab/errors.hpp"
#include "samlab/nn.hpp"
#include "samlab/optim.hpp"
#include "samlab/taskgen.hpp"
#include "support/helpers.hpp"

using namespace samlab;

namespace {

SuiteConfig small_config() {
    SuiteConfig cfg;
    cfg.num_tasks = 2;
    cfg.input_dim = 4;
    cfg.num_classes = 3;
    cfg.train_per_task = 30;
    cfg.test_per_task = 12;
    cfg.pretrain_samples = 24;
    cfg.rotation_deg = {0.0, 40.0};
    cfg.seed = 9;
    return cfg;
}

bool same_dataset(const TaskDataset& a, const TaskDataset& b) {
    return a.features.data == b.features.data && a.labels == b.labels &&
           a.split == b.split && a.task_id == b.task_id;
}

std::vector<int> histogram(const TaskDataset& data, int c) {
    std::vector<int> h(static_cast<size_t>(c), 0);
    for (int label : data.labels) h[static_cast<size_t>(label)]++;
    return h;
}

void check_balanced(const TaskDataset& data, int c) {
    std::vector<int> h = histogram(data, c);
    int lo = *std::min_element(h.begin(), h.end());
    int hi = *std::max_element(h.begin(), h.end());
    CHECK(hi - lo <= 1);
}

std::string write_file(const testutil::TempDir& dir, const std::string& name,
                       const std::string& content) {
    std::string path = dir.file(name);
    std::ofstream out(path);
    out << content;
    return path;
}

std::string thrown_message(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_SUITE("taskgen") {

TEST_CASE("identical configs generate bit-identical suites") {
    SuiteConfig cfg = small_config();
    TaskSuite a = generate_suite(cfg);
    TaskSuite b = generate_suite(cfg);
    CHECK(same_dataset(a.pretrain, b.pretrain));
    REQUIRE(a.tasks.size() == 2);
    for (size_t t = 0; t < a.tasks.size(); ++t) {
        CHECK(same_dataset(a.tasks[t].train, b.tasks[t].train));
        CHECK(same_dataset(a.tasks[t].val, b.tasks[t].val));
        CHECK(same_dataset(a.tasks[t].test, b.tasks[t].test));
    }
    SuiteConfig other = cfg;
    other.seed = 10;
    TaskSuite c = generate_suite(other);
    CHECK_FALSE(a.pretrain.features.data == c.pretrain.features.data);
}

TEST_CASE("suite shapes, tags, ids, and class balance") {
    SuiteConfig cfg = small_config();
    TaskSuite suite = generate_suite(cfg);

    CHECK(suite.pretrain.size() == 24);
    CHECK(suite.pretrain.features.cols == 4);
    CHECK(suite.pretrain.task_id == -1);
    check_balanced(suite.pretrain, 3);

    for (int t = 0; t < 2; ++t) {
        const TaskSplits& ts = suite.tasks[static_cast<size_t>(t)];
        // 30 train rows, 10 per class, floor(0.1 * 10) = 1 carved per class
        CHECK(ts.val.size() == 3);
        CHECK(ts.train.size() == 27);
        CHECK(ts.test.size() == 12);
        CHECK(ts.train.split == SplitTag::Train);
        CHECK(ts.val.split == SplitTag::Val);
        CHECK(ts.test.split == SplitTag::Test);
        CHECK(ts.train.task_id == t);
        CHECK(ts.val.task_id == t);
        CHECK(ts.test.task_id == t);
        check_balanced(ts.train, 3);
        check_balanced(ts.val, 3);
        check_balanced(ts.test, 3);
        for (int label : ts.train.labels) CHECK((label >= 0 && label < 3));
    }
}

TEST_CASE("zero noise pins samples to the class means; pretrain matches task 0") {
    SuiteConfig cfg;
    cfg.num_tasks = 1;
    cfg.input_dim = 3;
    cfg.num_classes = 4;
    cfg.train_per_task = 8;
    cfg.test_per_task = 4;
    cfg.pretrain_samples = 8;
    cfg.noise_scale = 0.0;
    cfg.rotation_deg = {0.0};
    cfg.seed = 3;
    TaskSuite suite = generate_suite(cfg);

    auto expected_mean = [&](int c) {
        double a = 2.0 * std::numbers::pi * c / 4.0;
        return std::vector<double>{cfg.separation * std::cos(a), cfg.separation * std::sin(a),
                                   0.0};
    };
    const TaskDataset& test = suite.tasks[0].test;
    for (int i = 0; i < test.size(); ++i) {
        std::vector<double> mean = expected_mean(test.labels[static_cast<size_t>(i)]);
        for (int j = 0; j < 3; ++j) CHECK(test.features.at(i, j) == mean[static_cast<size_t>(j)]);
    }
    // with one task and no rotation the pretraining sampler is task 0's sampler
    for (int i = 0; i < suite.pretrain.size(); ++i) {
        std::vector<double> mean = expected_mean(suite.pretrain.labels[static_cast<size_t>(i)]);
        for (int j = 0; j < 3; ++j)
            CHECK(suite.pretrain.features.at(i, j) == mean[static_cast<size_t>(j)]);
    }
}

TEST_CASE("task relabeling is a cyclic shift of the cluster assignment") {
    SuiteConfig cfg;
    cfg.num_tasks = 3;
    cfg.input_dim = 2;
    cfg.num_classes = 3;
    cfg.train_per_task = 6;
    cfg.test_per_task = 6;
    cfg.pretrain_samples = 6;
    cfg.noise_scale = 0.0;
    cfg.rotation_deg = {0.0, 0.0, 0.0};
    TaskSuite suite = generate_suite(cfg);
    // same geometry for every task, so task t's class l sits on cluster (l+t)%C
    auto row_of = [&](int t, int label) {
        const TaskDataset& test = suite.tasks[static_cast<size_t>(t)].test;
        for (int i = 0; i < test.size(); ++i)
            if (test.labels[static_cast<size_t>(i)] == label)
                return std::vector<double>{test.features.at(i, 0), test.features.at(i, 1)};
        return std::vector<double>{};
    };
    for (int t = 0; t < 3; ++t)
        for (int label = 0; label < 3; ++label)
            CHECK(row_of(t, label) == row_of(0, (label + t) % 3));
}

TEST_CASE("rotation angles move the cluster circle inside the first 2-plane") {
    SuiteConfig cfg;
    cfg.num_tasks = 2;
    cfg.input_dim = 3;
    cfg.num_classes = 4;
    cfg.train_per_task = 8;
    cfg.test_per_task = 4;
    cfg.pretrain_samples = 4;
    cfg.noise_scale = 0.0;
    cfg.rotation_deg = {0.0, 90.0};
    TaskSuite suite = generate_suite(cfg);
    const TaskDataset& test = suite.tasks[1].test;
    for (int i = 0; i < test.size(); ++i) {
        int label = test.labels[static_cast<size_t>(i)];
        int mean_index = (label + 1) % 4;  // task 1 shifts the assignment by one
        double a = 2.0 * std::numbers::pi * mean_index / 4.0 + std::numbers::pi / 2.0;
        CHECK(test.features.at(i, 0) == doctest::Approx(3.0 * std::cos(a)).epsilon(1e-12));
        CHECK(test.features.at(i, 1) == doctest::Approx(3.0 * std::sin(a)).epsilon(1e-12));
        CHECK(test.features.at(i, 2) == 0.0);
    }
}

TEST_CASE("suite config validation rejects bad shapes") {
    SuiteConfig cfg = small_config();
    SuiteConfig c1 = cfg;
    c1.input_dim = 1;
    CHECK_THROWS_AS(generate_suite(c1), std::invalid_argument);
    SuiteConfig c2 = cfg;
    c2.rotation_deg = {0.0};
    CHECK_THROWS_AS(generate_suite(c2), std::invalid_argument);
    SuiteConfig c3 = cfg;
    c3.num_classes = 1;
    CHECK_THROWS_AS(generate_suite(c3), std::invalid_argument);
    SuiteConfig c4 = cfg;
    c4.val_ratio = 0.0;
    CHECK_THROWS_AS(generate_suite(c4), std::invalid_argument);
    SuiteConfig c5 = cfg;
    c5.val_ratio = 1.0;
    CHECK_THROWS_AS(generate_suite(c5), std::invalid_argument);
    SuiteConfig c6 = cfg;
    c6.separation = 0.0;
    CHECK_THROWS_AS(generate_suite(c6), std::invalid_argument);
    SuiteConfig c7 = cfg;
    c7.train_per_task = 1;
    CHECK_THROWS_AS(generate_suite(c7), std::invalid_argument);
}

TEST_CASE("split: documented sizes, multiset equality, determinism") {
    TaskDataset data = testutil::random_dataset(14, 10, 3, 3);
    auto [train, val] = split(data, 0.1, 77);
    CHECK(val.size() == 1);
    CHECK(train.size() == 9);
    CHECK(train.split == SplitTag::Train);
    CHECK(val.split == SplitTag::Val);

    using Row = std::pair<std::vector<double>, int>;
    auto rows_of = [](const TaskDataset& d) {
        std::vector<Row> rows;
        for (int i = 0; i < d.size(); ++i) {
            const double* r = d.features.row(i);
            rows.emplace_back(std::vector<double>(r, r + d.features.cols),
                              d.labels[static_cast<size_t>(i)]);
        }
        return rows;
    };
    std::vector<Row> combined = rows_of(train);
    std::vector<Row> vr = rows_of(val);
    combined.insert(combined.end(), vr.begin(), vr.end());
    std::vector<Row> original = rows_of(data);
    std::sort(combined.begin(), combined.end());
    std::sort(original.begin(), original.end());
    CHECK(combined == original);

    auto [train2, val2] = split(data, 0.1, 77);
    CHECK(train2.features.data == train.features.data);
    CHECK(val2.labels == val.labels);

    TaskDataset one = testutil::random_dataset(15, 1, 3, 3);
    CHECK_THROWS_AS(split(one, 0.1, 1), std::invalid_argument);
    CHECK_THROWS_AS(split(data, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(split(data, 1.0, 1), std::invalid_argument);
}

TEST_CASE("csv round-trip reproduces the dataset bit for bit") {
    testutil::TempDir dir("csv_roundtrip");
    TaskDataset data = testutil::random_dataset(16, 12, 5, 4);
    data.features.at(0, 0) = 1.0 / 3.0;  // a value that needs all 17 digits
    data.features.at(1, 1) = -1e-300;
    std::string path = dir.file("data.csv");
    save_csv(data, path);
    TaskDataset back = load_csv(path, 4);
    CHECK(back.features.rows == data.features.rows);
    CHECK(back.features.cols == data.features.cols);
    CHECK(back.features.data == data.features.data);
    CHECK(back.labels == data.labels);
}

TEST_CASE("csv loader parses well-formed files and keeps row order") {
    testutil::TempDir dir("csv_ok");
    std::string path = write_file(dir, "ok.csv",
                                  "f0,f1,label\n"
                                  "0.5,-1.25,1\n"
                                  "2,3.5e2,0\n");
    TaskDataset data = load_csv(path, 2);
    REQUIRE(data.size() == 2);
    CHECK(data.features.at(0, 0) == 0.5);
    CHECK(data.features.at(0, 1) == -1.25);
    CHECK(data.labels[0] == 1);
    CHECK(data.features.at(1, 1) == 350.0);
    CHECK(data.labels[1] == 0);
}

TEST_CASE("csv loader names the offending line") {
    testutil::TempDir dir("csv_bad");

    std::string label_high = write_file(dir, "label.csv", "f0,label\n0.5,1\n0.25,2\n");
    CHECK_THROWS_AS(load_csv(label_high, 2), IoError);
    std::string msg = thrown_message([&] { load_csv(label_high, 2); });
    CHECK(msg.find("line 3") != std::string::npos);

    std::string bad_number = write_file(dir, "number.csv", "f0,label\nabc,0\n");
    msg = thrown_message([&] { load_csv(bad_number, 2); });
    CHECK(msg.find("line 2") != std::string::npos);

    std::string bad_width = write_file(dir, "width.csv", "f0,f1,label\n0.5,1\n");
    msg = thrown_message([&] { load_csv(bad_width, 2); });
    CHECK(msg.find("line 2") != std::string::npos);

    std::string bad_header = write_file(dir, "header.csv", "g0,label\n0.5,0\n");
    msg = thrown_message([&] { load_csv(bad_header, 2); });
    CHECK(msg.find("line 1") != std::string::npos);

    CHECK_THROWS_AS(load_csv(dir.file("missing.csv"), 2), IoError);
}

TEST_CASE("the default-style suite is learnable well above chance") {
    SuiteConfig cfg;
    cfg.num_tasks = 2;
    cfg.input_dim = 8;
    cfg.num_classes = 3;
    cfg.train_per_task = 120;
    cfg.test_per_task = 60;
    cfg.pretrain_samples = 60;
    cfg.rotation_deg = {0.0, 40.0};
    cfg.seed = 5;
    TaskSuite suite = generate_suite(cfg);

    ModelSpec spec{{8, 16, 3}, Activation::Tanh};
    ParamVector theta0 = init_params(spec, 11);
    OptimizerConfig oc;
    oc.lr = 0.01;
    TrainConfig tc;
    tc.steps = 150;
    tc.batch_size = 20;
    tc.schedule = LrScheduleKind::Constant;
    tc.eval_every = 50;
    FineTuneResult r = finetune(theta0, spec, suite.tasks[0].train, suite.tasks[0].val, oc,
                                SharpnessConfig{}, tc);
    double acc = accuracy(r.best_params, spec, suite.tasks[0].test);
    CHECK(acc > 0.6);  // chance is 1/3
}

}  // TEST_SUITE
