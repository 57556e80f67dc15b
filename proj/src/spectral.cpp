#include "bolt/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/SVD>

namespace bolt {

namespace {

constexpr double kEffectiveRankTol = 1e-10;

int effective_rank(const Eigen::VectorXd& singular_values) {
    if (singular_values.size() == 0) return 0;
    const double cutoff = kEffectiveRankTol * singular_values(0);
    int count = 0;
    for (Eigen::Index i = 0; i < singular_values.size(); ++i)
        if (singular_values(i) > cutoff) ++count;
    return count;
}

} // namespace

void canonicalize_column_signs(Eigen::MatrixXd& u, Eigen::MatrixXd& v) {
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
        Eigen::Index pivot = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < u.rows(); ++i) {
            const double mag = std::abs(u(i, j));
            if (mag > best) {
                best = mag;
                pivot = i;
            }
        }
        if (u(pivot, j) < 0.0) {
            u.col(j) = -u.col(j);
            v.col(j) = -v.col(j);
        }
    }
}

ThinSvd thin_svd(const Eigen::MatrixXd& m, std::optional<int> k) {
    if (m.size() == 0) throw ValidationError("thin_svd: empty matrix");
    if (!m.allFinite()) throw NumericError("thin_svd: non-finite entries");

    const int full = static_cast<int>(std::min(m.rows(), m.cols()));
    const int keep = k.value_or(full);
    if (keep < 1 || keep > full)
        throw ValidationError("thin_svd: k must be in [1, min(rows, cols)]");

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);

    ThinSvd out;
    out.u = svd.matrixU().leftCols(keep);
    out.sigma = svd.singularValues().head(keep);
    out.v = svd.matrixV().leftCols(keep);
    canonicalize_column_signs(out.u, out.v);
    return out;
}

StackedDirections stack_directions(const std::vector<std::pair<std::string, ThinSvd>>& svds,
                                   int per_task_k) {
    if (svds.empty()) throw ValidationError("stack_directions: no sources");
    if (per_task_k < 1) throw ValidationError("stack_directions: per_task_k must be >= 1");

    const Eigen::Index m = svds.front().second.u.rows();
    const Eigen::Index n = svds.front().second.v.rows();
    for (const auto& [source_id, svd] : svds) {
        if (svd.u.rows() != m || svd.v.rows() != n)
            throw ValidationError("stack_directions: dimension mismatch for source '" +
                                  source_id + "'");
        if (svd.u.cols() < per_task_k)
            throw ValidationError("stack_directions: source '" + source_id +
                                  "' has fewer than per_task_k directions");
    }

    StackedDirections stack;
    stack.r = per_task_k * static_cast<int>(svds.size());
    stack.u_stack.resize(m, stack.r);
    stack.v_stack.resize(n, stack.r);
    int col = 0;
    for (const auto& [source_id, svd] : svds) {
        for (int j = 0; j < per_task_k; ++j, ++col) {
            stack.u_stack.col(col) = svd.u.col(j);
            stack.v_stack.col(col) = svd.v.col(j);
            stack.provenance.emplace_back(source_id, j);
        }
    }
    return stack;
}

SpectralBasis orthogonalize(const StackedDirections& stack, double eps,
                            std::optional<int> rank_cap) {
    if (eps < 0.0) throw ValidationError("orthogonalize: eps must be >= 0");
    if (stack.r < 1 || stack.u_stack.cols() != stack.r || stack.v_stack.cols() != stack.r)
        throw ValidationError("orthogonalize: inconsistent stack");
    if (stack.u_stack.norm() == 0.0 || stack.v_stack.norm() == 0.0)
        throw NumericError("orthogonalize: degenerate all-zero stack");

    Eigen::JacobiSVD<Eigen::MatrixXd> svd_u(stack.u_stack,
                                            Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd_v(stack.v_stack,
                                            Eigen::ComputeThinU | Eigen::ComputeThinV);

    SpectralBasis basis;
    basis.effective_rank_u = effective_rank(svd_u.singularValues());
    basis.effective_rank_v = effective_rank(svd_v.singularValues());

    if (rank_cap && *rank_cap < stack.r) {
        const int cap = *rank_cap;
        if (cap < 1) throw ValidationError("orthogonalize: rank_cap must be >= 1");
        if (cap > svd_u.matrixU().cols() || cap > svd_v.matrixU().cols())
            throw ValidationError("orthogonalize: rank_cap exceeds available directions");
        basis.u_orth = svd_u.matrixU().leftCols(cap);
        basis.v_orth = svd_v.matrixU().leftCols(cap);
        basis.r = cap;
    } else {
        basis.u_orth = svd_u.matrixU() * svd_u.matrixV().transpose();
        basis.v_orth = svd_v.matrixU() * svd_v.matrixV().transpose();
        basis.r = stack.r;
    }

    canonicalize_column_signs(basis.u_orth, basis.v_orth);
    return basis;
}

BasisSet build_basis_set(const std::vector<TaskVector>& task_vectors, int per_task_k,
                         double eps, std::optional<int> rank_cap) {
    if (task_vectors.empty()) throw ValidationError("build_basis_set: no task vectors");

    BasisSet bases;
    for (const auto& layer : task_vectors.front().layers) {
        if (!layer.is_matrix()) continue;
        // per_task_k clamps to the layer's full rank so thin layers still work.
        const int full = static_cast<int>(std::min(layer.shape[0], layer.shape[1]));
        const int layer_k = std::min(per_task_k, full);
        std::vector<std::pair<std::string, ThinSvd>> svds;
        svds.reserve(task_vectors.size());
        for (const auto& tv : task_vectors)
            svds.emplace_back(tv.source_id, thin_svd(tv.at(layer.name).as_matrix(), layer_k));
        auto basis = orthogonalize(stack_directions(svds, layer_k), eps, rank_cap);
        basis.layer_name = layer.name;
        bases.emplace(layer.name, std::move(basis));
    }
    if (bases.empty())
        throw ValidationError("build_basis_set: task vectors contain no matrix layers");
    return bases;
}

TensorContainer basis_set_to_container(const BasisSet& bases,
                                       const std::map<std::string, std::string>& metadata) {
    if (bases.empty()) throw ValidationError("basis_set_to_container: empty basis set");

    TensorContainer c;
    c.role = Role::basis;
    c.model_id = "basis";
    c.metadata = metadata;

    bool uniform = true;
    const int r0 = bases.begin()->second.r;
    std::ostringstream per_layer;
    bool first = true;
    for (const auto& [layer, basis] : bases) {
        if (basis.r != r0) uniform = false;
        if (!first) per_layer << ",";
        per_layer << layer << "=" << basis.r;
        first = false;
        c.metadata["eff_rank_u::" + layer] = std::to_string(basis.effective_rank_u);
        c.metadata["eff_rank_v::" + layer] = std::to_string(basis.effective_rank_v);
        c.add_matrix("U_orth::" + layer, basis.u_orth);
        c.add_matrix("V_orth::" + layer, basis.v_orth);
    }
    c.metadata["r"] = uniform ? std::to_string(r0) : per_layer.str();
    return c;
}

BasisSet basis_set_from_container(const TensorContainer& container) {
    if (container.role != Role::basis)
        throw ValidationError("container '" + container.model_id + "' is not a basis");

    BasisSet bases;
    const std::string u_prefix = "U_orth::";
    for (const auto& e : container.entries) {
        if (e.name.rfind(u_prefix, 0) != 0) continue;
        const std::string layer = e.name.substr(u_prefix.size());
        SpectralBasis basis;
        basis.layer_name = layer;
        basis.u_orth = e.as_matrix();
        basis.v_orth = container.matrix("V_orth::" + layer);
        if (basis.u_orth.cols() != basis.v_orth.cols())
            throw ValidationError("basis '" + layer + "' has mismatched column counts");
        basis.r = static_cast<int>(basis.u_orth.cols());
        const auto eff_u = container.metadata.find("eff_rank_u::" + layer);
        const auto eff_v = container.metadata.find("eff_rank_v::" + layer);
        basis.effective_rank_u = eff_u != container.metadata.end() ? std::stoi(eff_u->second) : basis.r;
        basis.effective_rank_v = eff_v != container.metadata.end() ? std::stoi(eff_v->second) : basis.r;
        bases.emplace(layer, std::move(basis));
    }
    if (bases.empty())
        throw ValidationError("basis container '" + container.model_id + "' has no bases");
    return bases;
}

} // namespace bolt
