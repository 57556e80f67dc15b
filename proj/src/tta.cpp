#include "bolt/tta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "bolt/rng.hpp"
#include "bolt/taskgen.hpp"

namespace bolt {

std::string sharpen_mode_to_string(SharpenMode mode) {
    return mode == SharpenMode::temperature ? "temperature" : "literal";
}

SharpenMode sharpen_mode_from_string(const std::string& text) {
    if (text == "temperature") return SharpenMode::temperature;
    if (text == "literal") return SharpenMode::literal;
    throw ValidationError("unknown sharpen mode: " + text);
}

TrustedSet mine_trusted(const Eigen::MatrixXd& probs) {
    const Eigen::Index n = probs.rows();
    const Eigen::Index classes = probs.cols();
    if (n < classes)
        throw ValidationError("mine_trusted: fewer samples than classes");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(probs.row(i).sum() - 1.0) > 1e-6)
            throw ValidationError("mine_trusted: row " + std::to_string(i) +
                                  " is not a probability vector");
    }

    const double raw = std::floor(static_cast<double>(n) /
                                  (10.0 * static_cast<double>(classes)));
    const int k = static_cast<int>(std::clamp(raw, 1.0, 100.0));

    // Each sample is a candidate only for its argmax class; that class owns
    // its one-hot anchor, so no index can be claimed twice.
    std::vector<std::vector<int>> candidates(static_cast<std::size_t>(classes));
    std::vector<int> argmax(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const int c = argmax_row(probs.row(i));
        argmax[static_cast<std::size_t>(i)] = c;
        candidates[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
    }

    TrustedSet trusted;
    trusted.k_per_class = k;
    for (Eigen::Index c = 0; c < classes; ++c) {
        auto& pool = candidates[static_cast<std::size_t>(c)];
        std::stable_sort(pool.begin(), pool.end(), [&](int a, int b) {
            return probs(a, c) > probs(b, c);
        });
        const int keep = std::min<int>(k, static_cast<int>(pool.size()));
        for (int j = 0; j < keep; ++j) {
            trusted.indices.push_back(pool[static_cast<std::size_t>(j)]);
            trusted.one_hot_targets[pool[static_cast<std::size_t>(j)]] =
                argmax[static_cast<std::size_t>(pool[static_cast<std::size_t>(j)])];
        }
    }
    std::sort(trusted.indices.begin(), trusted.indices.end());
    return trusted;
}

Eigen::VectorXd sharpen(const Eigen::VectorXd& logits, double temperature) {
    if (temperature <= 0.0) throw ValidationError("sharpen: temperature must be > 0");
    if (!logits.allFinite()) throw NumericError("sharpen: non-finite logits");
    const Eigen::VectorXd scaled = logits / temperature;
    const Eigen::VectorXd shifted = scaled.array() - scaled.maxCoeff();
    const Eigen::VectorXd expd = shifted.array().exp();
    return expd / expd.sum();
}

Eigen::VectorXd sharpen_literal(const Eigen::VectorXd& probs) {
    const Eigen::VectorXd scaled = 0.5 * probs;
    return scaled / scaled.sum();
}

namespace {

Eigen::MatrixXd pseudo_labels(const Eigen::MatrixXd& weak_logits,
                              const std::vector<bool>& trusted_mask,
                              const std::vector<int>& trusted_targets, const TtaConfig& cfg) {
    const Eigen::Index n = weak_logits.rows();
    const Eigen::Index classes = weak_logits.cols();
    Eigen::MatrixXd targets(n, classes);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (trusted_mask[static_cast<std::size_t>(i)]) {
            targets.row(i).setZero();
            targets(i, trusted_targets[static_cast<std::size_t>(i)]) = 1.0;
        } else if (cfg.sharpen_mode == SharpenMode::temperature) {
            targets.row(i) = sharpen(weak_logits.row(i).transpose(), cfg.temperature).transpose();
        } else {
            targets.row(i) =
                sharpen_literal(softmax_rows(weak_logits.row(i)).row(0).transpose()).transpose();
        }
    }
    return targets;
}

} // namespace

std::pair<double, int> ufm_loss(const Eigen::MatrixXd& strong_logits,
                                const Eigen::MatrixXd& weak_logits,
                                const std::vector<bool>& trusted_mask,
                                const std::vector<int>& trusted_targets, const TtaConfig& cfg) {
    const Eigen::Index n = strong_logits.rows();
    if (weak_logits.rows() != n || weak_logits.cols() != strong_logits.cols() ||
        static_cast<Eigen::Index>(trusted_mask.size()) != n ||
        static_cast<Eigen::Index>(trusted_targets.size()) != n)
        throw ValidationError("ufm_loss: shape mismatch");

    const Eigen::MatrixXd targets = pseudo_labels(weak_logits, trusted_mask, trusted_targets, cfg);

    int masked_count = 0;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double confidence = targets.row(i).maxCoeff();
        if (!(confidence > cfg.tau)) continue;
        ++masked_count;
        const Eigen::VectorXd row = strong_logits.row(i).transpose();
        const Eigen::VectorXd shifted = row.array() - row.maxCoeff();
        const double log_z = std::log(shifted.array().exp().sum());
        loss -= targets.row(i).dot((shifted.array() - log_z).matrix());
    }
    if (masked_count == 0) return {0.0, 0};
    return {loss / static_cast<double>(masked_count), masked_count};
}

std::pair<SigmaSet, TtaReport> tta_run(const TensorContainer& theta_0, const BasisSet& bases,
                                       const SigmaSet& sigma_init,
                                       const Eigen::MatrixXd& unlabeled, const TtaConfig& cfg,
                                       std::uint64_t seed) {
    if (unlabeled.rows() == 0) throw ValidationError("tta_run: empty unlabeled set");
    if (cfg.batch_size < 2 || cfg.batch_size % 2 != 0)
        throw ValidationError("tta_run: batch_size must be even and >= 2");
    if (cfg.epochs < 0) throw ValidationError("tta_run: negative epochs");
    if (!(cfg.tau > 0.0 && cfg.tau <= 1.0))
        throw ValidationError("tta_run: tau must be in (0, 1]");

    const auto start_time = std::chrono::steady_clock::now();
    const ToyModel base = toy_model_from_container(theta_0);

    // Mining pass with the sigma-initialized model; anchors stay frozen.
    SigmaSet sigmas = sigma_init;
    const auto compose = [&](const SigmaSet& s) {
        ToyModel m = base;
        for (const auto& [layer, basis] : bases) {
            const Eigen::MatrixXd update = reconstruct_update(basis, s.at(layer));
            if (layer == "W1")
                m.w1 += update;
            else if (layer == "W2")
                m.w2 += update;
            else
                throw ArchitectureError("tta_run: toy model has no matrix layer '" + layer + "'");
        }
        return m;
    };
    const Eigen::MatrixXd initial_probs = softmax_rows(mlp_logits(compose(sigmas), unlabeled));
    const TrustedSet trusted = mine_trusted(initial_probs);

    TtaReport report;
    report.k_per_class = trusted.k_per_class;
    report.trusted_count = static_cast<int>(trusted.indices.size());

    std::vector<int> unlabeled_pool;
    {
        std::vector<bool> is_trusted(static_cast<std::size_t>(unlabeled.rows()), false);
        for (const int idx : trusted.indices) is_trusted[static_cast<std::size_t>(idx)] = true;
        for (int i = 0; i < static_cast<int>(unlabeled.rows()); ++i)
            if (!is_trusted[static_cast<std::size_t>(i)]) unlabeled_pool.push_back(i);
    }
    if (unlabeled_pool.empty()) // everything got mined; keep the loop meaningful
        for (int i = 0; i < static_cast<int>(unlabeled.rows()); ++i) unlabeled_pool.push_back(i);

    OptimState state; // sigma-training defaults (AdamW, 1e-3, warmup-cosine)
    const int half = cfg.batch_size / 2;
    const long steps_per_epoch =
        (static_cast<long>(unlabeled_pool.size()) + half - 1) / half;
    const long total_steps = steps_per_epoch * cfg.epochs;
    const long warmup_steps = total_steps > 0
        ? std::min<long>(static_cast<long>(state.warmup_epochs) * steps_per_epoch,
                         total_steps - 1)
        : 0;

    Pcg64 rng(seed);
    std::vector<int> trusted_stream(trusted.indices);
    rng.shuffle(trusted_stream);
    std::size_t trusted_pos = 0;
    const auto next_trusted = [&]() {
        if (trusted_pos == trusted_stream.size()) {
            rng.shuffle(trusted_stream);
            trusted_pos = 0;
        }
        return trusted_stream[trusted_pos++];
    };

    const int d = static_cast<int>(unlabeled.cols());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(unlabeled_pool);
        double epoch_loss = 0.0;
        long epoch_masked = 0;
        long epoch_rows = 0;
        long batches = 0;
        for (std::size_t start = 0; start < unlabeled_pool.size(); start += half) {
            const int u_count =
                static_cast<int>(std::min<std::size_t>(half, unlabeled_pool.size() - start));
            const int rows = 2 * u_count;

            Eigen::MatrixXd weak(rows, d);
            std::vector<bool> mask(static_cast<std::size_t>(rows), false);
            std::vector<int> anchors(static_cast<std::size_t>(rows), 0);
            for (int i = 0; i < u_count; ++i)
                weak.row(i) = unlabeled.row(unlabeled_pool[start + static_cast<std::size_t>(i)]);
            for (int i = 0; i < u_count; ++i) {
                const int idx = next_trusted();
                weak.row(u_count + i) = unlabeled.row(idx);
                mask[static_cast<std::size_t>(u_count + i)] = true;
                anchors[static_cast<std::size_t>(u_count + i)] = trusted.one_hot_targets.at(idx);
            }

            Eigen::MatrixXd strong = weak;
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < d; ++j) strong(i, j) += cfg.aug_noise_sigma * rng.normal();

            const ToyModel current = compose(sigmas);
            const Eigen::MatrixXd weak_logits = mlp_logits(current, weak);
            const Eigen::MatrixXd targets = pseudo_labels(weak_logits, mask, anchors, cfg);

            Eigen::VectorXd weights = Eigen::VectorXd::Zero(rows);
            int masked_count = 0;
            for (int i = 0; i < rows; ++i)
                if (targets.row(i).maxCoeff() > cfg.tau) {
                    weights(i) = 1.0;
                    ++masked_count;
                }
            epoch_rows += rows;
            ++batches;
            if (masked_count == 0) continue; // loss is exactly 0; no gradient step

            weights /= static_cast<double>(masked_count);
            const auto fb = mlp_forward_backward_soft(current, strong, targets, weights);
            epoch_loss += fb.loss;
            epoch_masked += masked_count;

            std::map<std::string, Eigen::VectorXd> grads;
            for (const auto& [layer, basis] : bases)
                grads[layer] =
                    sigma_gradient(layer == "W1" ? fb.grads.w1 : fb.grads.w2, basis);
            const double lr = lr_schedule(state.step, total_steps, warmup_steps, state.lr_max);
            adamw_step(state, sigmas, grads, lr);
        }
        report.epoch_loss.push_back(batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0);
        report.epoch_masked_frac.push_back(
            epoch_rows > 0 ? static_cast<double>(epoch_masked) / static_cast<double>(epoch_rows)
                           : 0.0);
    }

    for (auto& [layer, sv] : sigmas) sv.origin = SigmaOrigin::trained;
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return {std::move(sigmas), std::move(report)};
}

std::string tta_report_to_jsonl(const TtaReport& report) {
    std::ostringstream out;
    char buf[256];
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "{\"epoch\":%zu,\"loss\":%.17g,\"masked_frac\":%.17g}\n",
                      e, report.epoch_loss[e], report.epoch_masked_frac[e]);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "{\"summary\":true,\"epochs\":%zu,\"trusted\":%d,\"k\":%d}\n",
                  report.epoch_loss.size(), report.trusted_count, report.k_per_class);
    out << buf;
    return out.str();
}

} // namespace bolt
