#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bolt/coefficients.hpp"
#include "bolt/dataset.hpp"
#include "bolt/spectral.hpp"
#include "bolt/tensor_store.hpp"

namespace bolt {

/// AdamW hyperparameters plus per-layer moment state. Defaults follow the
/// standard sigma-training recipe: AdamW at 1e-3, no weight decay, 20 epochs,
/// batch 32, cosine decay with a 2-epoch warmup.
struct OptimState {
    double lr_max = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    int epochs = 20;
    int warmup_epochs = 2;
    int batch_size = 32;

    long step = 0;
    std::map<std::string, Eigen::VectorXd> m1;
    std::map<std::string, Eigen::VectorXd> m2;
};

/// Gradient of the loss in the diagonal coefficients given the weight
/// gradient G of the layer: grad_j = u_j^T G v_j.
Eigen::VectorXd sigma_gradient(const Eigen::MatrixXd& weight_grad, const SpectralBasis& basis);

/// Linear ramp to lr_max over warmup_steps, then cosine decay to zero at
/// total_steps. Requires 0 <= step <= total_steps and warmup_steps < total_steps.
double lr_schedule(long step, long total_steps, long warmup_steps, double lr_max);

/// One bias-corrected Adam update with decoupled weight decay on a flat
/// parameter block. step is the 1-based step count after this update.
void adamw_update_flat(Eigen::VectorXd& params, Eigen::VectorXd& m1, Eigen::VectorXd& m2,
                       const Eigen::VectorXd& grad, long step, double lr, double beta1,
                       double beta2, double eps_adam, double weight_decay);

/// AdamW step over every sigma layer (map order). Throws NumericError naming
/// the layer when a gradient is non-finite.
void adamw_step(OptimState& state, SigmaSet& params,
                const std::map<std::string, Eigen::VectorXd>& grads, double lr);

struct TrainReport {
    std::vector<double> epoch_loss; // one entry per epoch
    std::vector<double> epoch_lr;   // lr at the first step of each epoch
    double final_accuracy = 0.0;
    double wall_time_seconds = 0.0;
    long sigma_param_count = 0;
};

/// Minibatch cross-entropy training of the diagonal coefficients only.
/// theta_0 and the bases are never modified; the run is a pure function of
/// (inputs, seed). Warmup is clamped to total_steps - 1 for short runs.
std::pair<SigmaSet, TrainReport> train_sigma(const TensorContainer& theta_0,
                                             const BasisSet& bases, const SigmaSet& sigma_init,
                                             const Dataset& dataset, const OptimState& opt,
                                             std::uint64_t seed);

/// Fraction of argmax-correct predictions; logit ties break toward the lower
/// class index.
double evaluate(const TensorContainer& theta, const Dataset& dataset);

/// TrainReport as JSON lines: one {"epoch","loss","lr"} object per epoch and
/// a deterministic final summary object.
std::string train_report_to_jsonl(const TrainReport& report);

} // namespace bolt
