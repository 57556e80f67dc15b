#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bolt/dataset.hpp"
#include "bolt/errors.hpp"
#include "bolt/tensor_store.hpp"

namespace bolt {

inline constexpr int kFamilyGenerators = 4;

struct FamilyConfig {
    int input_dim = 32;
    int classes = 8;
    int hidden = 16;
    int n_source_tasks = 8;
    double noise_sigma = 0.3;
    double anchor_norm = 3.0;
    // Per-generator rotation angles are drawn uniformly from this range.
    // Positive angles keep the source tasks correlated with one another and
    // with the held-out target.
    double angle_min = 0.2;
    double angle_max = 0.9;
};

/// Parameters of the related-task generator: class anchors shared across all
/// tasks, four shared skew-symmetric generators, and per-task rotation angles.
/// A task draws samples as x = R(theta) * mu_c + noise_sigma * eps.
struct TaskFamily {
    FamilyConfig config;
    std::uint64_t seed = 0;
    Eigen::MatrixXd anchor_means;                    // classes x input_dim
    std::vector<Eigen::MatrixXd> shared_generators;  // kFamilyGenerators skew matrices
    std::vector<Eigen::Vector4d> task_angles;        // one per source task
    Eigen::Vector4d target_angles;                   // held-out task
};

TaskFamily make_task_family(std::uint64_t seed, const FamilyConfig& config = {});

/// exp(A) by scaling-and-squaring with a truncated Taylor series.
Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a, double tol = 1e-12);

/// R(theta) = exp(sum_j theta_j * G_j); orthogonal because the G_j are skew.
Eigen::MatrixXd rotation_matrix(const TaskFamily& family, const Eigen::Vector4d& angles);

/// n samples of the task with the given angles: uniform labels, rotated
/// anchors, Gaussian noise. Deterministic in (family, angles, seed).
Dataset sample_batch(const TaskFamily& family, const Eigen::Vector4d& angles, int n,
                     std::uint64_t seed);
Dataset sample_batch(const TaskFamily& family, int task_index, int n, std::uint64_t seed);

/// Exactly k samples per class, chosen by a seeded shuffle of each class's
/// index list. Throws ValidationError when a class has fewer than k samples.
Dataset kshot_support(const Dataset& dataset, int k, std::uint64_t seed);

/// Two-layer MLP: logits = W2 * tanh(W1 * x + b1) + b2.
struct ToyModel {
    Eigen::MatrixXd w1; // hidden x input_dim
    Eigen::VectorXd b1; // hidden
    Eigen::MatrixXd w2; // classes x hidden
    Eigen::VectorXd b2; // classes
};

ToyModel init_toy_model(int input_dim, int hidden, int classes, std::uint64_t seed);

TensorContainer toy_model_to_container(const ToyModel& model, const std::string& model_id);
ToyModel toy_model_from_container(const TensorContainer& container);

Eigen::MatrixXd mlp_logits(const ToyModel& model, const Eigen::MatrixXd& x);

/// Softmax per row with the usual max-shift stabilization.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

/// Index of the row maximum; ties break toward the lower index.
int argmax_row(const Eigen::RowVectorXd& row);

struct MlpGradients {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;
};

struct ForwardBackward {
    double loss = 0.0;
    MlpGradients grads;
};

/// Mean softmax cross-entropy over the batch with exact gradients.
ForwardBackward mlp_forward_backward(const ToyModel& model, const Dataset& batch);

/// Weighted soft-target cross-entropy: loss = sum_i w_i * CE(logits_i, q_i).
/// Gradients are exact; rows with w_i = 0 contribute nothing.
ForwardBackward mlp_forward_backward_soft(const ToyModel& model, const Eigen::MatrixXd& x,
                                          const Eigen::MatrixXd& soft_targets,
                                          const Eigen::VectorXd& row_weights);

/// Full fine-tuning of every weight and bias with the same AdamW +
/// warmup-cosine recipe used for sigma training.
ToyModel finetune_full(const ToyModel& init, const Dataset& data, int epochs, double lr,
                       std::uint64_t seed);

/// Family container layout: role="family" with the anchor matrix, the skew
/// generators, per-task angles and the target angles.
TensorContainer family_to_container(const TaskFamily& family);
TaskFamily family_from_container(const TensorContainer& container);

/// Dataset container layout: role="dataset", entries "x" (n x d) and "y" (n).
TensorContainer dataset_to_container(const Dataset& dataset, const std::string& id);
Dataset dataset_from_container(const TensorContainer& container);

} // namespace bolt
