#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bolt/adapt.hpp"
#include "bolt/coefficients.hpp"
#include "bolt/rng.hpp"
#include "bolt/taskgen.hpp"
#include "bolt/tta.hpp"

namespace bolt {

/// Deterministic seed-splitting: every consumer of randomness gets its own
/// PCG64 stream keyed by a fixed tag, so adding consumers never perturbs
/// existing ones.
inline std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag) {
    return Pcg64(seed, tag).next_u64();
}

namespace seed_tags {
inline constexpr std::uint64_t anchor_train = 1;
inline constexpr std::uint64_t anchor_test = 2;
inline constexpr std::uint64_t target_train = 3;
inline constexpr std::uint64_t target_test = 4;
inline constexpr std::uint64_t pretrain_init = 5;
inline constexpr std::uint64_t pretrain_shuffle = 6;
inline constexpr std::uint64_t kshot = 7;
inline constexpr std::uint64_t adapt_train = 8;
inline constexpr std::uint64_t probe = 9;
inline constexpr std::uint64_t tta = 10;
inline constexpr std::uint64_t random_basis = 11;
inline constexpr std::uint64_t full_ft = 12;
inline constexpr std::uint64_t source_train_base = 100; // + task index
inline constexpr std::uint64_t finetune_base = 200;     // + task index
inline constexpr std::uint64_t subset_base = 300;       // + subset size
} // namespace seed_tags

/// Desk-scale experiment settings. The family defaults produce a target task
/// that is measurably shifted from the anchor while keeping all source tasks
/// positively related.
struct ExperimentConfig {
    FamilyConfig family;
    int n_train = 512;
    int n_test = 800;
    int pretrain_epochs = 30;
    double pretrain_lr = 5e-3;
    int finetune_epochs = 12;
    double finetune_lr = 2e-3;
    int shots = 16;
    int per_task_k = 1;
    std::optional<int> rank_cap;
    double eps = 1e-8;
    std::vector<double> alpha_grid = kDefaultAlphaGrid;
    int probe_batches = 4;
    OptimState adapt_opt; // AdamW 1e-3, 20 epochs, batch 32, 2-epoch warmup
};

/// Everything the offline phase produces for one seed: the family, the
/// anchor-pretrained base model, and one fine-tuned checkpoint per source.
struct SourceLibrary {
    TaskFamily family;
    TensorContainer theta0;
    std::vector<TensorContainer> source_checkpoints;
    Dataset anchor_train;
    Dataset target_train;
    Dataset target_test;
};

SourceLibrary build_source_library(std::uint64_t seed, const ExperimentConfig& cfg);

/// Task vectors of selected sources (all when `subset` is empty).
std::vector<TaskVector> library_task_vectors(const SourceLibrary& lib,
                                             const std::vector<int>& subset = {});

/// Shared bases from the library's task vectors.
BasisSet library_basis(const SourceLibrary& lib, int per_task_k, double eps,
                       std::optional<int> rank_cap = std::nullopt,
                       const std::vector<int>& subset = {});

/// Extract per-source diagonals and pool them.
SigmaSet pooled_sigma(const TensorContainer& theta0,
                      const std::vector<TaskVector>& task_vectors, const BasisSet& bases);

/// Seeded mini-batches drawn from a labeled set; reshuffles and wraps when
/// the set is smaller than n_batches * batch_size.
std::vector<Dataset> make_probe_batches(const Dataset& data, int n_batches, int batch_size,
                                        std::uint64_t seed);

struct InitResult {
    SigmaSet sigma0; // alpha_hat * pooled
    AlphaSweepResult sweep;
};

/// Pool + alpha sweep on probe batches from the support set.
InitResult initialize_sigma(const TensorContainer& theta0, const BasisSet& bases,
                            const SigmaSet& pooled, const Dataset& support,
                            const ExperimentConfig& cfg, std::uint64_t seed);

/// Random orthonormal bases with the same per-layer shapes and ranks as the
/// given basis set; the control arm for few-shot comparisons.
BasisSet random_basis_like(const BasisSet& bases, std::uint64_t seed);

struct FewShotMetrics {
    double theta0_acc = 0.0;
    double init_acc = 0.0;
    double adapted_acc = 0.0;
    double full_ft_acc = 0.0;
    double control_init_acc = 0.0;
    double control_adapted_acc = 0.0;
    double alpha_hat = 1.0;
    long sigma_param_count = 0;
};

/// The full few-shot pipeline on the held-out target task: build the library,
/// the basis and the pooled+rescaled initializer, adapt on a k-shot support,
/// and (optionally) run the full fine-tuning and random-basis arms.
FewShotMetrics few_shot_experiment(std::uint64_t seed, const ExperimentConfig& cfg,
                                   bool with_full_ft = true, bool with_control = true);

struct AblationCell {
    int rank = 0;
    int n_tasks = 0;
    std::uint64_t seed = 0;
    double init_acc = 0.0;
    double adapted_acc = 0.0;
    double zero_init_acc = 0.0;
};

/// Grid over (rank, n_tasks, seed). For each cell the basis uses a random
/// subset of sources of the requested size, per_task_k = ceil(rank/n) and
/// rank_cap = rank. Rows come back in canonical grid order.
std::vector<AblationCell> run_ablation(std::uint64_t base_seed, int n_seeds,
                                       const std::vector<int>& ranks,
                                       const std::vector<int>& n_tasks_list,
                                       const ExperimentConfig& cfg);

struct TtaMetrics {
    double init_acc = 0.0;
    double tta_acc = 0.0;
    TtaReport report;
};

/// Label-free adaptation on the target split: initialize from the pooled and
/// rescaled coefficients, then run tta_run on the unlabeled target features.
TtaMetrics tta_experiment(std::uint64_t seed, const ExperimentConfig& cfg,
                          const TtaConfig& tta_cfg);

} // namespace bolt
