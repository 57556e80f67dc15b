#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bolt/errors.hpp"
#include "bolt/tensor_store.hpp"

namespace bolt {

/// Thin SVD m = u * sigma.asDiagonal() * v^T with descending singular values
/// and the sign convention that each u column's largest-magnitude entry is
/// positive (v flipped in tandem).
struct ThinSvd {
    Eigen::MatrixXd u;     // m x k, orthonormal columns
    Eigen::VectorXd sigma; // length k, nonincreasing, nonnegative
    Eigen::MatrixXd v;     // n x k, orthonormal columns
};

/// Cross-task singular directions concatenated column-wise.
struct StackedDirections {
    Eigen::MatrixXd u_stack; // m x r
    Eigen::MatrixXd v_stack; // n x r
    int r = 0;
    std::vector<std::pair<std::string, int>> provenance; // (source_id, column index)
};

/// Shared per-layer orthonormal bases for the update subspace.
struct SpectralBasis {
    Eigen::MatrixXd u_orth; // m x r
    Eigen::MatrixXd v_orth; // n x r
    int r = 0;
    int effective_rank_u = 0; // stack singular values above 1e-10 * sigma_max
    int effective_rank_v = 0;
    std::string layer_name;
};

/// Flip (u_j, v_j) pairs so the largest-magnitude entry of u_j is positive.
/// Ties on magnitude resolve to the smallest row index.
void canonicalize_column_signs(Eigen::MatrixXd& u, Eigen::MatrixXd& v);

/// Thin SVD; k (if given) keeps the top-k triplets. Throws NumericError on
/// non-finite input, ValidationError on empty input or bad k.
ThinSvd thin_svd(const Eigen::MatrixXd& m, std::optional<int> k = std::nullopt);

/// Concatenate the top per_task_k singular directions of each source, in
/// source order. All sources must share their row dimensions.
StackedDirections stack_directions(const std::vector<std::pair<std::string, ThinSvd>>& svds,
                                   int per_task_k);

/// Orthonormalize the stack. The primary path is the SVD polar factor
/// psi * phi^T of each side; with rank_cap < r the top rank_cap left singular
/// vectors of each side are kept instead. eps is recorded by callers for the
/// whitening form of the operator and is not needed on the polar path.
SpectralBasis orthogonalize(const StackedDirections& stack, double eps,
                            std::optional<int> rank_cap = std::nullopt);

using BasisSet = std::map<std::string, SpectralBasis>;

/// Build one basis per matrix-shaped layer of the task vectors. 1-D entries
/// (biases) never participate.
BasisSet build_basis_set(const std::vector<TaskVector>& task_vectors, int per_task_k,
                         double eps, std::optional<int> rank_cap = std::nullopt);

/// Basis container layout: role="basis", entries "U_orth::<layer>" and
/// "V_orth::<layer>", metadata "r", "eps", "per_task_k", "sources".
TensorContainer basis_set_to_container(const BasisSet& bases,
                                       const std::map<std::string, std::string>& metadata);
BasisSet basis_set_from_container(const TensorContainer& container);

} // namespace bolt
