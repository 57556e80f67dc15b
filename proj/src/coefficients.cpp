#include "bolt/coefficients.hpp"

#include <algorithm>
#include <cstdio>

namespace bolt {

std::string sigma_origin_to_string(SigmaOrigin origin) {
    switch (origin) {
        case SigmaOrigin::extracted: return "extracted";
        case SigmaOrigin::pooled: return "pooled";
        case SigmaOrigin::rescaled: return "rescaled";
        case SigmaOrigin::trained: return "trained";
    }
    throw ValidationError("unknown sigma origin");
}

SigmaOrigin sigma_origin_from_string(const std::string& text) {
    if (text == "extracted") return SigmaOrigin::extracted;
    if (text == "pooled") return SigmaOrigin::pooled;
    if (text == "rescaled") return SigmaOrigin::rescaled;
    if (text == "trained") return SigmaOrigin::trained;
    throw ParseError("unknown sigma origin: " + text);
}

ProjectionMatrix project(const Eigen::MatrixXd& m, const SpectralBasis& basis) {
    if (m.rows() != basis.u_orth.rows() || m.cols() != basis.v_orth.rows())
        throw ValidationError("project: matrix does not match basis dimensions for layer '" +
                              basis.layer_name + "'");
    ProjectionMatrix p;
    p.s = basis.u_orth.transpose() * m * basis.v_orth;
    p.layer_name = basis.layer_name;
    return p;
}

SigmaVector extract_diagonal(const ProjectionMatrix& s) {
    if (s.s.rows() != s.s.cols())
        throw ValidationError("extract_diagonal: projection must be square");
    SigmaVector out;
    out.s = s.s.diagonal();
    out.layer_name = s.layer_name;
    out.source_id = s.source_id;
    out.origin = SigmaOrigin::extracted;
    return out;
}

SigmaVector pool_diagonals(const std::vector<SigmaVector>& sigmas) {
    if (sigmas.empty()) throw ValidationError("pool_diagonals: empty input");
    const auto len = sigmas.front().s.size();
    const auto& layer = sigmas.front().layer_name;
    for (const auto& sv : sigmas) {
        if (sv.s.size() != len)
            throw ValidationError("pool_diagonals: length mismatch for layer '" + layer + "'");
        if (sv.layer_name != layer)
            throw ValidationError("pool_diagonals: mixed layers '" + layer + "' and '" +
                                  sv.layer_name + "'");
    }

    std::vector<std::size_t> order(sigmas.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return sigmas[a].source_id < sigmas[b].source_id;
    });

    SigmaVector pooled;
    pooled.s = Eigen::VectorXd::Zero(len);
    for (const std::size_t idx : order) pooled.s += sigmas[idx].s;
    pooled.s /= static_cast<double>(sigmas.size());
    pooled.layer_name = layer;
    pooled.origin = SigmaOrigin::pooled;
    return pooled;
}

Eigen::MatrixXd reconstruct_update(const SpectralBasis& basis, const SigmaVector& sigma) {
    if (sigma.s.size() != basis.r)
        throw ValidationError("reconstruct_update: sigma length " +
                              std::to_string(sigma.s.size()) + " != basis rank " +
                              std::to_string(basis.r));
    return basis.u_orth * sigma.s.asDiagonal() * basis.v_orth.transpose();
}

TensorContainer compose_model(const TensorContainer& theta_0, const BasisSet& bases,
                              const SigmaSet& sigmas) {
    TensorContainer composed = theta_0;
    for (const auto& [layer, basis] : bases) {
        if (!composed.has(layer))
            throw ArchitectureError("compose_model: base model has no layer '" + layer + "'");
        const auto sig = sigmas.find(layer);
        if (sig == sigmas.end())
            throw ValidationError("compose_model: no sigma for layer '" + layer + "'");
        const Eigen::MatrixXd updated = composed.matrix(layer) +
                                        reconstruct_update(basis, sig->second);
        composed.at(layer) = TensorEntry::from_matrix(layer, updated);
    }
    return composed;
}

SigmaSet extract_sigma_set(const TaskVector& task_vector, const BasisSet& bases) {
    SigmaSet out;
    for (const auto& [layer, basis] : bases) {
        auto p = project(task_vector.at(layer).as_matrix(), basis);
        p.source_id = task_vector.source_id;
        out.emplace(layer, extract_diagonal(p));
    }
    return out;
}

SigmaSet pool_sigma_sets(const std::vector<SigmaSet>& sets) {
    if (sets.empty()) throw ValidationError("pool_sigma_sets: empty input");
    SigmaSet pooled;
    for (const auto& [layer, first] : sets.front()) {
        std::vector<SigmaVector> per_layer;
        per_layer.reserve(sets.size());
        for (const auto& set : sets) {
            const auto it = set.find(layer);
            if (it == set.end())
                throw ValidationError("pool_sigma_sets: layer '" + layer + "' missing in a set");
            per_layer.push_back(it->second);
        }
        pooled.emplace(layer, pool_diagonals(per_layer));
    }
    return pooled;
}

SigmaSet scale_sigma_set(const SigmaSet& sigmas, double alpha, SigmaOrigin origin) {
    SigmaSet scaled = sigmas;
    for (auto& [layer, sv] : scaled) {
        sv.s *= alpha;
        sv.origin = origin;
    }
    return scaled;
}

AlphaSweepResult alpha_sweep(const TensorContainer& theta_0, const BasisSet& bases,
                             const SigmaSet& s_pool, const std::vector<double>& grid,
                             const std::vector<Dataset>& probe, const AccuracyFn& eval) {
    if (grid.empty()) throw ValidationError("alpha_sweep: empty grid");
    if (probe.empty()) throw ValidationError("alpha_sweep: empty probe");
    for (const auto& batch : probe)
        if (batch.empty()) throw ValidationError("alpha_sweep: empty probe batch");

    AlphaSweepResult result;
    result.grid = grid;
    result.scores.reserve(grid.size());

    double best_score = -1.0;
    double best_alpha = grid.front();
    for (const double alpha : grid) {
        const auto composed =
            compose_model(theta_0, bases, scale_sigma_set(s_pool, alpha, SigmaOrigin::rescaled));
        double correct_weight = 0.0;
        double total_weight = 0.0;
        for (const auto& batch : probe) {
            const auto n = static_cast<double>(batch.size());
            correct_weight += eval(composed, batch) * n;
            total_weight += n;
        }
        const double score = correct_weight / total_weight;
        result.scores.push_back(score);
        if (score > best_score || (score == best_score && alpha < best_alpha)) {
            best_score = score;
            best_alpha = alpha;
        }
    }
    result.alpha_hat = best_alpha;
    return result;
}

TensorContainer sigma_set_to_container(const SigmaSet& sigmas,
                                       const std::map<std::string, std::string>& metadata) {
    if (sigmas.empty()) throw ValidationError("sigma_set_to_container: empty sigma set");
    TensorContainer c;
    c.role = Role::sigma;
    c.model_id = "sigma";
    c.metadata = metadata;
    std::string origin = sigma_origin_to_string(sigmas.begin()->second.origin);
    for (const auto& [layer, sv] : sigmas) {
        c.add_vector("sigma::" + layer, sv.s);
        if (sigma_origin_to_string(sv.origin) != origin) origin = "mixed";
    }
    if (!c.metadata.count("origin")) c.metadata["origin"] = origin;
    return c;
}

SigmaSet sigma_set_from_container(const TensorContainer& container) {
    if (container.role != Role::sigma)
        throw ValidationError("container '" + container.model_id + "' is not a sigma set");
    SigmaSet out;
    const std::string prefix = "sigma::";
    const auto origin_meta = container.metadata.find("origin");
    for (const auto& e : container.entries) {
        if (e.name.rfind(prefix, 0) != 0) continue;
        SigmaVector sv;
        sv.layer_name = e.name.substr(prefix.size());
        sv.s = e.as_vector();
        sv.origin = (origin_meta != container.metadata.end() && origin_meta->second != "mixed")
                        ? sigma_origin_from_string(origin_meta->second)
                        : SigmaOrigin::extracted;
        out.emplace(sv.layer_name, std::move(sv));
    }
    if (out.empty())
        throw ValidationError("sigma container '" + container.model_id + "' has no entries");
    return out;
}

} // namespace bolt
