#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bolt/dataset.hpp"
#include "bolt/spectral.hpp"
#include "bolt/tensor_store.hpp"

namespace bolt {

/// Full r x r coordinates of a layer update in the shared basis. Held in
/// memory only; persistence keeps just the diagonal.
struct ProjectionMatrix {
    Eigen::MatrixXd s;
    std::string layer_name;
    std::string source_id;
};

enum class SigmaOrigin { extracted, pooled, rescaled, trained };

std::string sigma_origin_to_string(SigmaOrigin origin);
SigmaOrigin sigma_origin_from_string(const std::string& text);

/// Length-r diagonal coefficients of one layer.
struct SigmaVector {
    Eigen::VectorXd s;
    std::string layer_name;
    SigmaOrigin origin = SigmaOrigin::extracted;
    std::string source_id; // set for extracted vectors; used for canonical pooling order
};

using SigmaSet = std::map<std::string, SigmaVector>;

/// S = U_orth^T * m * V_orth.
ProjectionMatrix project(const Eigen::MatrixXd& m, const SpectralBasis& basis);

/// diag(S): the unique minimizer of ||M - U D V^T||_F over diagonal D.
SigmaVector extract_diagonal(const ProjectionMatrix& s);

/// Component-wise mean, accumulated in source_id order so the result is
/// invariant to input permutation.
SigmaVector pool_diagonals(const std::vector<SigmaVector>& sigmas);

/// U_orth * diag(s) * V_orth^T.
Eigen::MatrixXd reconstruct_update(const SpectralBasis& basis, const SigmaVector& sigma);

/// theta_0 with every basis-covered layer shifted by its reconstructed
/// update; uncovered entries (biases) are copied through unchanged.
TensorContainer compose_model(const TensorContainer& theta_0, const BasisSet& bases,
                              const SigmaSet& sigmas);

/// Extract one SigmaVector per basis layer from a task vector.
SigmaSet extract_sigma_set(const TaskVector& task_vector, const BasisSet& bases);

/// Pool extracted sets layer by layer.
SigmaSet pool_sigma_sets(const std::vector<SigmaSet>& sets);

SigmaSet scale_sigma_set(const SigmaSet& sigmas, double alpha, SigmaOrigin origin);

struct AlphaSweepResult {
    double alpha_hat = 1.0;
    std::vector<double> grid;
    std::vector<double> scores;
};

inline const std::vector<double> kDefaultAlphaGrid{1.0, 3.0, 5.0, 7.0, 10.0};

using AccuracyFn = std::function<double(const TensorContainer&, const Dataset&)>;

/// Score alpha * s_pool on the probe batches with `eval` and return the
/// argmax; ties resolve toward the smallest alpha. Scores are pooled over
/// batches, weighted by batch size.
AlphaSweepResult alpha_sweep(const TensorContainer& theta_0, const BasisSet& bases,
                             const SigmaSet& s_pool, const std::vector<double>& grid,
                             const std::vector<Dataset>& probe, const AccuracyFn& eval);

/// Sigma container layout: role="sigma", entries "sigma::<layer>", metadata
/// "origin" and (when relevant) "alpha_hat".
TensorContainer sigma_set_to_container(const SigmaSet& sigmas,
                                       const std::map<std::string, std::string>& metadata);
SigmaSet sigma_set_from_container(const TensorContainer& container);

} // namespace bolt
