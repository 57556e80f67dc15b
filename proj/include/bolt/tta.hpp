#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bolt/adapt.hpp"
#include "bolt/coefficients.hpp"
#include "bolt/spectral.hpp"
#include "bolt/tensor_store.hpp"

namespace bolt {

/// High-confidence samples mined once from the initial model. Their argmax
/// pseudo-labels stay frozen for the whole adaptation run.
struct TrustedSet {
    std::vector<int> indices;            // sorted ascending, unique
    std::map<int, int> one_hot_targets;  // index -> frozen argmax class
    int k_per_class = 0;
};

enum class SharpenMode {
    temperature, // softmax(logits / T)
    literal,     // renormalized 0.5 * q, which leaves q unchanged
};

std::string sharpen_mode_to_string(SharpenMode mode);
SharpenMode sharpen_mode_from_string(const std::string& text);

struct TtaConfig {
    double tau = 0.99;          // confidence threshold, (0, 1]
    double temperature = 0.5;   // sharpening temperature, > 0
    int batch_size = 32;        // split into B/2 unlabeled + B/2 trusted
    int epochs = 5;
    double aug_noise_sigma = 0.1; // strong-view additive Gaussian noise scale
    SharpenMode sharpen_mode = SharpenMode::temperature;
};

/// Per-class top-k by p(y=c|x) with k = clamp(floor((N/C)/10), 1, 100).
/// A sample can only be claimed by its argmax class, so per-class counts
/// never exceed k and targets are coherent one-hot anchors.
TrustedSet mine_trusted(const Eigen::MatrixXd& probs);

/// Temperature softmax of the logits. T = 1 is plain softmax; lower T
/// concentrates mass on the argmax.
Eigen::VectorXd sharpen(const Eigen::VectorXd& logits, double temperature);

/// The literal "scale by 0.5 and renormalize" reading, kept behind a flag:
/// renormalization cancels the scaling, so this returns its input.
Eigen::VectorXd sharpen_literal(const Eigen::VectorXd& probs);

/// Confidence-masked consistency loss. Pseudo-labels come from the weak view
/// (sharpened), trusted rows are overwritten with their one-hot anchors, and
/// rows whose pseudo-label confidence is <= tau are masked out. Returns
/// (0, 0) when nothing passes the mask.
std::pair<double, int> ufm_loss(const Eigen::MatrixXd& strong_logits,
                                const Eigen::MatrixXd& weak_logits,
                                const std::vector<bool>& trusted_mask,
                                const std::vector<int>& trusted_targets, const TtaConfig& cfg);

struct TtaReport {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_masked_frac;
    int k_per_class = 0;
    int trusted_count = 0;
    double wall_time_seconds = 0.0;
};

/// Label-free adaptation of the diagonal coefficients: mine trusted samples
/// with the initial model, then optimize ufm_loss over two-stream batches
/// (B/2 unlabeled + B/2 trusted). The weak view is the raw features; the
/// strong view adds seeded Gaussian noise. Deterministic given the seed.
std::pair<SigmaSet, TtaReport> tta_run(const TensorContainer& theta_0, const BasisSet& bases,
                                       const SigmaSet& sigma_init,
                                       const Eigen::MatrixXd& unlabeled, const TtaConfig& cfg,
                                       std::uint64_t seed);

/// TtaReport as JSON lines: one {"epoch","loss","masked_frac"} object per epoch.
std::string tta_report_to_jsonl(const TtaReport& report);

} // namespace bolt
