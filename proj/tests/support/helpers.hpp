#pragma once

// Shared construction helpers for tests: random nets and datasets with
// deterministic seeds, temp directories for artifact tests.

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "samlab/nn.hpp"
#include "samlab/rng.hpp"

namespace testutil {

inline samlab::TaskDataset random_dataset(uint64_t seed, int n, int d, int c,
                                          samlab::SplitTag split = samlab::SplitTag::Train) {
    samlab::Rng rng(samlab::sub_seed(seed, "test_dataset"));
    samlab::TaskDataset data;
    data.features = samlab::Matrix(n, d);
    data.split = split;
    for (double& v : data.features.data) v = rng.normal();
    data.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) data.labels[static_cast<size_t>(i)] = static_cast<int>(rng.below(static_cast<uint64_t>(c)));
    return data;
}

inline samlab::ParamVector random_params(const samlab::ModelSpec& spec, uint64_t seed) {
    return samlab::init_params(spec, seed);
}

// Two well-separated Gaussian blobs in the plane, one per class: linearly
// separable, so any optimizer at sane settings makes quick progress.
inline samlab::TaskDataset blobs(uint64_t seed, int n,
                                 samlab::SplitTag split = samlab::SplitTag::Train,
                                 bool flip_labels = false) {
    samlab::Rng rng(seed);
    samlab::TaskDataset data;
    data.split = split;
    data.features = samlab::Matrix(n, 2);
    data.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int label = i % 2;
        double cx = label == 0 ? 2.0 : -2.0;
        data.features.at(i, 0) = cx + 0.3 * rng.normal();
        data.features.at(i, 1) = cx + 0.3 * rng.normal();
        data.labels[static_cast<size_t>(i)] = flip_labels ? 1 - label : label;
    }
    return data;
}

// Distinct scratch directory per call; removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& label) {
        path = std::filesystem::temp_directory_path() /
               ("samlab_test_" + label + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testutil
