#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bolt/errors.hpp"

namespace bolt {

/// What a container holds. Checkpoints and task vectors over the same
/// architecture share one (name, shape) layer set.
enum class Role {
    checkpoint,
    task_vector,
    basis,
    sigma,
    dataset,
    family,
};

std::string role_to_string(Role role);
Role role_from_string(const std::string& text);

/// One named tensor: row-major f64 payload plus its shape.
struct TensorEntry {
    std::string name;
    std::vector<std::int64_t> shape; // (rows, cols) or (len); every dim >= 1
    std::vector<double> data;        // row-major, product(shape) elements

    std::int64_t numel() const;
    bool is_matrix() const { return shape.size() == 2; }

    Eigen::MatrixXd as_matrix() const;
    Eigen::VectorXd as_vector() const;

    static TensorEntry from_matrix(const std::string& name, const Eigen::MatrixXd& m);
    static TensorEntry from_vector(const std::string& name, const Eigen::VectorXd& v);
};

/// The unit of exchange, in memory and on disk (BTC-v1 files).
struct TensorContainer {
    int format_version = 1;
    std::string model_id;
    Role role = Role::checkpoint;
    std::vector<TensorEntry> entries;
    std::map<std::string, std::string> metadata;

    bool has(const std::string& name) const;
    const TensorEntry& at(const std::string& name) const;
    TensorEntry& at(const std::string& name);

    Eigen::MatrixXd matrix(const std::string& name) const { return at(name).as_matrix(); }
    Eigen::VectorXd vector(const std::string& name) const { return at(name).as_vector(); }

    void add(TensorEntry entry);
    void add_matrix(const std::string& name, const Eigen::MatrixXd& m);
    void add_vector(const std::string& name, const Eigen::VectorXd& v);

    /// The (name, shape) set used for architecture compatibility checks.
    std::map<std::string, std::vector<std::int64_t>> layer_shapes() const;

    /// Throws ValidationError on duplicate names, empty or zero-size shapes,
    /// or shape/data length disagreement.
    void validate() const;
};

/// True when manifest fields match and every payload double is bit-identical.
bool containers_equal(const TensorContainer& a, const TensorContainer& b);

/// Nearest binary32-representable value, kept in f64. Checkpoint weights are
/// snapped to this grid when a checkpoint container is created: differences
/// of grid values are exactly representable in f64, so task vectors add back
/// onto the fine-tuned weights bit-for-bit.
inline double round_to_binary32_grid(double x) {
    return static_cast<double>(static_cast<float>(x));
}

/// BTC-v1: "BOLTTC01" magic, u64-LE manifest length, UTF-8 JSON manifest,
/// then the raw little-endian f64 payload with no padding.
void save_container(const TensorContainer& container, const std::filesystem::path& path);
TensorContainer load_container(const std::filesystem::path& path);

/// Per-layer checkpoint delta (fine-tuned minus base), biases included.
struct TaskVector {
    std::string source_id;
    std::vector<TensorEntry> layers; // sorted by name

    bool has(const std::string& name) const;
    const TensorEntry& at(const std::string& name) const;
};

/// Delta = theta_i - theta_0 layer by layer. Throws ArchitectureError naming
/// the offending layers when the (name, shape) sets differ.
TaskVector compute_task_vector(const TensorContainer& theta_i, const TensorContainer& theta_0);

/// theta_0 + sum_i alphas[i] * deltas[i]. Deltas are accumulated in
/// source_id order so the merge is invariant to input permutation.
TensorContainer apply_task_arithmetic(const TensorContainer& theta_0,
                                      const std::vector<TaskVector>& deltas,
                                      const std::vector<double>& alphas);

} // namespace bolt
