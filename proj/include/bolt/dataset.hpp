#pragma once

#include <vector>

#include <Eigen/Dense>

namespace bolt {

/// A labeled classification batch: one feature row per sample.
struct Dataset {
    Eigen::MatrixXd features; // n x d
    std::vector<int> labels;  // length n, values in [0, classes)

    Eigen::Index size() const { return features.rows(); }
    bool empty() const { return features.rows() == 0; }
};

} // namespace bolt
