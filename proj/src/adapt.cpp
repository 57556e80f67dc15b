#include "bolt/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "bolt/rng.hpp"
#include "bolt/taskgen.hpp"

namespace bolt {

Eigen::VectorXd sigma_gradient(const Eigen::MatrixXd& weight_grad, const SpectralBasis& basis) {
    if (weight_grad.rows() != basis.u_orth.rows() || weight_grad.cols() != basis.v_orth.rows())
        throw ValidationError("sigma_gradient: gradient does not match basis dimensions");
    return (basis.u_orth.transpose() * weight_grad * basis.v_orth).diagonal();
}

double lr_schedule(long step, long total_steps, long warmup_steps, double lr_max) {
    if (total_steps < 1 || step < 0 || step > total_steps || warmup_steps < 0 ||
        warmup_steps >= total_steps || lr_max < 0.0)
        throw ValidationError("lr_schedule: invalid step ranges");
    if (step < warmup_steps)
        return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_update_flat(Eigen::VectorXd& params, Eigen::VectorXd& m1, Eigen::VectorXd& m2,
                       const Eigen::VectorXd& grad, long step, double lr, double beta1,
                       double beta2, double eps_adam, double weight_decay) {
    m1 = beta1 * m1 + (1.0 - beta1) * grad;
    m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    const Eigen::VectorXd m1_hat = m1 / bias1;
    const Eigen::VectorXd m2_hat = m2 / bias2;
    params -= lr * (m1_hat.array() / (m2_hat.array().sqrt() + eps_adam)).matrix();
    if (weight_decay != 0.0) params -= lr * weight_decay * params;
}

void adamw_step(OptimState& state, SigmaSet& params,
                const std::map<std::string, Eigen::VectorXd>& grads, double lr) {
    ++state.step;
    for (auto& [layer, sigma] : params) {
        const auto git = grads.find(layer);
        if (git == grads.end())
            throw ValidationError("adamw_step: no gradient for layer '" + layer + "'");
        if (!git->second.allFinite())
            throw NumericError("adamw_step: non-finite gradient for layer '" + layer + "'");
        if (git->second.size() != sigma.s.size())
            throw ValidationError("adamw_step: gradient length mismatch for layer '" + layer +
                                  "'");
        auto& m1 = state.m1[layer];
        auto& m2 = state.m2[layer];
        if (m1.size() != sigma.s.size()) m1 = Eigen::VectorXd::Zero(sigma.s.size());
        if (m2.size() != sigma.s.size()) m2 = Eigen::VectorXd::Zero(sigma.s.size());
        adamw_update_flat(sigma.s, m1, m2, git->second, state.step, lr, state.beta1, state.beta2,
                          state.eps_adam, state.weight_decay);
    }
}

namespace {

ToyModel compose_toy(const ToyModel& base, const BasisSet& bases, const SigmaSet& sigmas) {
    ToyModel out = base;
    for (const auto& [layer, basis] : bases) {
        const auto sig = sigmas.find(layer);
        if (sig == sigmas.end())
            throw ValidationError("compose: no sigma for layer '" + layer + "'");
        const Eigen::MatrixXd update = reconstruct_update(basis, sig->second);
        if (layer == "W1")
            out.w1 += update;
        else if (layer == "W2")
            out.w2 += update;
        else
            throw ArchitectureError("compose: toy model has no matrix layer '" + layer + "'");
    }
    return out;
}

Dataset take_rows(const Dataset& data, const std::vector<int>& order, long start, long count) {
    Dataset batch;
    batch.features.resize(count, data.features.cols());
    batch.labels.resize(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        const int src = order[static_cast<std::size_t>(start + i)];
        batch.features.row(i) = data.features.row(src);
        batch.labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
    }
    return batch;
}

} // namespace

std::pair<SigmaSet, TrainReport> train_sigma(const TensorContainer& theta_0,
                                             const BasisSet& bases, const SigmaSet& sigma_init,
                                             const Dataset& dataset, const OptimState& opt,
                                             std::uint64_t seed) {
    if (dataset.empty()) throw ValidationError("train_sigma: empty dataset");
    if (opt.epochs < 0) throw ValidationError("train_sigma: negative epochs");
    if (opt.batch_size < 1) throw ValidationError("train_sigma: batch_size must be >= 1");
    for (const auto& [layer, basis] : bases) {
        const auto it = sigma_init.find(layer);
        if (it == sigma_init.end() || it->second.s.size() != basis.r)
            throw ValidationError("train_sigma: sigma_init does not match basis for layer '" +
                                  layer + "'");
    }

    const auto start_time = std::chrono::steady_clock::now();
    const ToyModel base = toy_model_from_container(theta_0);

    TrainReport report;
    report.sigma_param_count = 0;
    for (const auto& [layer, basis] : bases) report.sigma_param_count += basis.r;

    SigmaSet sigmas = sigma_init;
    if (opt.epochs > 0) {
        OptimState state = opt;
        const long n = dataset.size();
        const long steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
        const long total_steps = steps_per_epoch * opt.epochs;
        const long warmup_steps =
            std::min<long>(static_cast<long>(opt.warmup_epochs) * steps_per_epoch,
                           total_steps - 1);

        Pcg64 rng(seed);
        std::vector<int> order(static_cast<std::size_t>(n));
        for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i);

        for (int epoch = 0; epoch < opt.epochs; ++epoch) {
            rng.shuffle(order);
            double epoch_loss = 0.0;
            report.epoch_lr.push_back(
                lr_schedule(state.step, total_steps, warmup_steps, opt.lr_max));
            for (long start = 0; start < n; start += opt.batch_size) {
                const long count = std::min<long>(opt.batch_size, n - start);
                const Dataset batch = take_rows(dataset, order, start, count);

                const ToyModel current = compose_toy(base, bases, sigmas);
                const auto fb = mlp_forward_backward(current, batch);
                epoch_loss += fb.loss * static_cast<double>(count);

                std::map<std::string, Eigen::VectorXd> grads;
                for (const auto& [layer, basis] : bases) {
                    const Eigen::MatrixXd& g = layer == "W1" ? fb.grads.w1 : fb.grads.w2;
                    grads[layer] = sigma_gradient(g, basis);
                }
                const double lr = lr_schedule(state.step, total_steps, warmup_steps, opt.lr_max);
                adamw_step(state, sigmas, grads, lr);
            }
            report.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
        }
    }

    for (auto& [layer, sv] : sigmas) sv.origin = SigmaOrigin::trained;
    report.final_accuracy =
        evaluate(toy_model_to_container(compose_toy(base, bases, sigmas), theta_0.model_id),
                 dataset);
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return {std::move(sigmas), std::move(report)};
}

double evaluate(const TensorContainer& theta, const Dataset& dataset) {
    if (dataset.empty()) throw ValidationError("evaluate: empty dataset");
    const ToyModel model = toy_model_from_container(theta);
    const Eigen::MatrixXd logits = mlp_logits(model, dataset.features);
    long correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        if (argmax_row(logits.row(i)) == dataset.labels[static_cast<std::size_t>(i)]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

std::string train_report_to_jsonl(const TrainReport& report) {
    std::ostringstream out;
    char buf[512];
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "{\"epoch\":%zu,\"loss\":%.17g,\"lr\":%.17g}\n", e,
                      report.epoch_loss[e], report.epoch_lr[e]);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "{\"summary\":true,\"epochs\":%zu,\"final_accuracy\":%.17g,"
                  "\"sigma_param_count\":%ld}\n",
                  report.epoch_loss.size(), report.final_accuracy, report.sigma_param_count);
    out << buf;
    return out.str();
}

} // namespace bolt
