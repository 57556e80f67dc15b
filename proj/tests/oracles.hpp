#pragma once

// Test-only oracles. Each one computes its answer through a route that is
// independent of the implementation path it checks.

#include <functional>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "bolt/rng.hpp"

namespace bolt::oracles {

/// Whitening form of the orthogonalization operator, computed through an
/// eigendecomposition of the Gram matrix: X (X^T X + eps I)^{-1/2}.
inline Eigen::MatrixXd whitening_orthonormalize(const Eigen::MatrixXd& x, double eps) {
    const Eigen::MatrixXd gram =
        x.transpose() * x + eps * Eigen::MatrixXd::Identity(x.cols(), x.cols());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().cwiseInverse();
    return x * (es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose());
}

/// Coordinatewise least squares: the optimal coefficient of u_j v_j^T when
/// every other coefficient is held fixed, via the explicit normal equation
/// <residual, u_j v_j^T> / ||u_j v_j^T||^2.
inline double coordinatewise_normal_equation(const Eigen::MatrixXd& m, const Eigen::MatrixXd& u,
                                             const Eigen::MatrixXd& v,
                                             const Eigen::VectorXd& coeffs, int j) {
    Eigen::MatrixXd rest = Eigen::MatrixXd::Zero(m.rows(), m.cols());
    for (int i = 0; i < coeffs.size(); ++i) {
        if (i == j) continue;
        rest += coeffs(i) * u.col(i) * v.col(i).transpose();
    }
    const Eigen::MatrixXd direction = u.col(j) * v.col(j).transpose();
    return (m - rest).cwiseProduct(direction).sum() / direction.squaredNorm();
}

/// Random matrix with orthonormal columns via Householder QR.
inline Eigen::MatrixXd random_orthonormal(Pcg64& rng, Eigen::Index rows, Eigen::Index cols) {
    const Eigen::MatrixXd g = gaussian_matrix(rng, rows, cols);
    return Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() *
           Eigen::MatrixXd::Identity(rows, cols);
}

/// Central finite difference of a scalar function of one coordinate.
inline double central_difference(const std::function<double(double)>& f, double at, double h) {
    return (f(at + h) - f(at - h)) / (2.0 * h);
}

} // namespace bolt::oracles
