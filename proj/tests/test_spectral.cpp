#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "bolt/rng.hpp"
#include "bolt/spectral.hpp"
#include "oracles.hpp"

using namespace bolt;

namespace {

double orthonormality_residual(const Eigen::MatrixXd& m) {
    return (m.transpose() * m -
            Eigen::MatrixXd::Identity(m.cols(), m.cols()))
        .norm();
}

StackedDirections stack_of(const Eigen::MatrixXd& u, const Eigen::MatrixXd& v) {
    StackedDirections s;
    s.u_stack = u;
    s.v_stack = v;
    s.r = static_cast<int>(u.cols());
    for (int j = 0; j < s.r; ++j) s.provenance.emplace_back("test", j);
    return s;
}

} // namespace

TEST_CASE("thin_svd of the identity is the identity") {
    const ThinSvd svd = thin_svd(Eigen::MatrixXd::Identity(2, 2));
    CHECK((svd.u - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-14);
    CHECK((svd.v - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-14);
    CHECK(svd.sigma(0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(svd.sigma(1) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("thin_svd applies the sign convention pairwise") {
    Eigen::MatrixXd m(2, 2);
    m << 3, 0, 0, -2;
    const ThinSvd svd = thin_svd(m);
    CHECK(svd.sigma(0) == doctest::Approx(3.0));
    CHECK(svd.sigma(1) == doctest::Approx(2.0));
    CHECK(svd.u.col(0)(0) == doctest::Approx(1.0));
    CHECK(svd.v.col(0)(0) == doctest::Approx(1.0));
    CHECK(svd.u.col(1)(1) == doctest::Approx(1.0));  // flipped to positive
    CHECK(svd.v.col(1)(1) == doctest::Approx(-1.0)); // v flipped in tandem
    const Eigen::MatrixXd rec = svd.u * svd.sigma.asDiagonal() * svd.v.transpose();
    CHECK((rec - m).norm() < 1e-12);
}

TEST_CASE("thin_svd reconstruction and orthonormality over 100 seeded samples") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Pcg64 rng(seed);
        const Eigen::MatrixXd m = gaussian_matrix(rng, 5, 3);
        const ThinSvd svd = thin_svd(m);
        CHECK((svd.u * svd.sigma.asDiagonal() * svd.v.transpose() - m).norm() <=
              1e-10 * std::max(1.0, m.norm()));
        CHECK(orthonormality_residual(svd.u) <= 1e-10);
        CHECK(orthonormality_residual(svd.v) <= 1e-10);
        for (int j = 0; j + 1 < svd.sigma.size(); ++j) CHECK(svd.sigma(j) >= svd.sigma(j + 1));
        CHECK(svd.sigma(svd.sigma.size() - 1) >= 0.0);
        // sign convention: largest-magnitude entry of each u column is positive
        for (int j = 0; j < svd.u.cols(); ++j) {
            Eigen::Index pivot;
            svd.u.col(j).cwiseAbs().maxCoeff(&pivot);
            CHECK(svd.u(pivot, j) > 0.0);
        }
    }
}

TEST_CASE("thin_svd truncation keeps the top-k triplets") {
    Pcg64 rng(123);
    const Eigen::MatrixXd m = gaussian_matrix(rng, 6, 4);
    const ThinSvd full = thin_svd(m);
    const ThinSvd top2 = thin_svd(m, 2);
    CHECK(top2.sigma.size() == 2);
    CHECK((top2.sigma - full.sigma.head(2)).norm() == 0.0);
    CHECK((top2.u - full.u.leftCols(2)).norm() == 0.0);
    CHECK((top2.v - full.v.leftCols(2)).norm() == 0.0);
}

TEST_CASE("thin_svd rejects bad input") {
    CHECK_THROWS_AS(thin_svd(Eigen::MatrixXd()), ValidationError);
    Eigen::MatrixXd bad(2, 2);
    bad << 1, 2, 3, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(thin_svd(bad), NumericError);
    CHECK_THROWS_AS(thin_svd(Eigen::MatrixXd::Identity(3, 3), 4), ValidationError);
    CHECK_THROWS_AS(thin_svd(Eigen::MatrixXd::Identity(3, 3), 0), ValidationError);
}

TEST_CASE("stack_directions concatenates in source order") {
    Pcg64 rng(7);
    const ThinSvd a = thin_svd(gaussian_matrix(rng, 4, 4));
    const ThinSvd b = thin_svd(gaussian_matrix(rng, 4, 4));
    const StackedDirections stack = stack_directions({{"a", a}, {"b", b}}, 1);
    CHECK(stack.r == 2);
    CHECK(stack.u_stack.rows() == 4);
    CHECK(stack.u_stack.cols() == 2);
    CHECK(stack.v_stack.rows() == 4);
    CHECK(stack.v_stack.cols() == 2);
    CHECK((stack.u_stack.col(0) - a.u.col(0)).norm() == 0.0);
    CHECK((stack.u_stack.col(1) - b.u.col(0)).norm() == 0.0);
    REQUIRE(stack.provenance.size() == 2);
    CHECK(stack.provenance[0].first == "a");
    CHECK(stack.provenance[1].first == "b");
}

TEST_CASE("single source at full rank passes through") {
    Pcg64 rng(8);
    const ThinSvd a = thin_svd(gaussian_matrix(rng, 5, 3));
    const StackedDirections stack = stack_directions({{"only", a}}, 3);
    CHECK((stack.u_stack - a.u).norm() == 0.0);
    CHECK((stack.v_stack - a.v).norm() == 0.0);
}

TEST_CASE("stack_directions rejects mismatched dimensions") {
    Pcg64 rng(9);
    const ThinSvd a = thin_svd(gaussian_matrix(rng, 4, 4));
    const ThinSvd b = thin_svd(gaussian_matrix(rng, 5, 4));
    CHECK_THROWS_AS(stack_directions({{"a", a}, {"b", b}}, 1), ValidationError);
}

TEST_CASE("eight sources give r=8 with distinct provenance") {
    std::vector<std::pair<std::string, ThinSvd>> svds;
    for (int t = 0; t < 8; ++t) {
        Pcg64 rng(100 + static_cast<std::uint64_t>(t));
        svds.emplace_back("src_" + std::to_string(t), thin_svd(gaussian_matrix(rng, 10, 6)));
    }
    const StackedDirections stack = stack_directions(svds, 1);
    CHECK(stack.r == 8);
    std::set<std::string> ids;
    for (const auto& [id, col] : stack.provenance) ids.insert(id);
    CHECK(ids.size() == 8);
}

TEST_CASE("orthogonalize keeps an already-orthonormal stack") {
    Pcg64 rng(21);
    const ThinSvd svd = thin_svd(gaussian_matrix(rng, 8, 4));
    const SpectralBasis basis = orthogonalize(stack_of(svd.u, svd.v), 0.0);
    CHECK((basis.u_orth - svd.u).norm() < 1e-12);
    CHECK((basis.v_orth - svd.v).norm() < 1e-12);
}

TEST_CASE("polar factor of a positive diagonal is the identity") {
    Eigen::MatrixXd u(2, 2);
    u << 2, 0, 0, 3;
    const SpectralBasis basis = orthogonalize(stack_of(u, Eigen::MatrixXd::Identity(2, 2)), 0.0);
    CHECK((basis.u_orth - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-12);
}

TEST_CASE("polar factor matches the eps=0 whitening formula") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Pcg64 rng(400 + seed);
        const Eigen::MatrixXd u = gaussian_matrix(rng, 10, 4);
        const Eigen::MatrixXd v = gaussian_matrix(rng, 12, 4);
        const SpectralBasis basis = orthogonalize(stack_of(u, v), 0.0);

        Eigen::MatrixXd u_white = oracles::whitening_orthonormalize(u, 0.0);
        Eigen::MatrixXd v_white = oracles::whitening_orthonormalize(v, 0.0);
        canonicalize_column_signs(u_white, v_white);

        CHECK((basis.u_orth - u_white).norm() <= 1e-8);
        CHECK((basis.v_orth - v_white).norm() <= 1e-8);
    }
}

TEST_CASE("orthogonalize output is orthonormal and span-preserving") {
    Pcg64 rng(55);
    const Eigen::MatrixXd u = gaussian_matrix(rng, 16, 6);
    const Eigen::MatrixXd v = gaussian_matrix(rng, 20, 6);
    const SpectralBasis basis = orthogonalize(stack_of(u, v), 0.0);
    CHECK(orthonormality_residual(basis.u_orth) <= 1e-8);
    CHECK(orthonormality_residual(basis.v_orth) <= 1e-8);
    CHECK(basis.effective_rank_u == 6);
    CHECK(basis.effective_rank_v == 6);

    // every stacked column projects onto the basis with negligible residual
    const Eigen::MatrixXd proj = basis.u_orth * basis.u_orth.transpose();
    for (int j = 0; j < u.cols(); ++j) {
        const double residual = (u.col(j) - proj * u.col(j)).norm();
        CHECK(residual <= 1e-8 * u.col(j).norm());
    }
}

TEST_CASE("orthogonalize is idempotent up to re-canonicalized signs") {
    Pcg64 rng(66);
    const Eigen::MatrixXd u = gaussian_matrix(rng, 9, 3);
    const Eigen::MatrixXd v = gaussian_matrix(rng, 7, 3);
    const SpectralBasis once = orthogonalize(stack_of(u, v), 0.0);
    const SpectralBasis twice = orthogonalize(stack_of(once.u_orth, once.v_orth), 0.0);
    CHECK((once.u_orth - twice.u_orth).norm() <= 1e-10);
    CHECK((once.v_orth - twice.v_orth).norm() <= 1e-10);
}

TEST_CASE("orthogonalize is deterministic") {
    Pcg64 rng(77);
    const Eigen::MatrixXd u = gaussian_matrix(rng, 9, 3);
    const Eigen::MatrixXd v = gaussian_matrix(rng, 7, 3);
    const SpectralBasis a = orthogonalize(stack_of(u, v), 0.0);
    const SpectralBasis b = orthogonalize(stack_of(u, v), 0.0);
    CHECK((a.u_orth - b.u_orth).norm() == 0.0);
    CHECK((a.v_orth - b.v_orth).norm() == 0.0);
}

TEST_CASE("rank_cap truncates to the top stack directions") {
    Pcg64 rng(88);
    const Eigen::MatrixXd u = gaussian_matrix(rng, 10, 6);
    const Eigen::MatrixXd v = gaussian_matrix(rng, 10, 6);
    const SpectralBasis capped = orthogonalize(stack_of(u, v), 0.0, 2);
    CHECK(capped.r == 2);
    CHECK(capped.u_orth.cols() == 2);
    CHECK(orthonormality_residual(capped.u_orth) <= 1e-8);

    // the capped basis spans the top-2 left singular subspace of the stack
    const ThinSvd svd = thin_svd(u, 2);
    const Eigen::MatrixXd p_capped = capped.u_orth * capped.u_orth.transpose();
    const Eigen::MatrixXd p_top = svd.u * svd.u.transpose();
    CHECK((p_capped - p_top).norm() <= 1e-8);
}

TEST_CASE("degenerate stacks are rejected") {
    CHECK_THROWS_AS(
        orthogonalize(stack_of(Eigen::MatrixXd::Zero(4, 2), Eigen::MatrixXd::Zero(4, 2)), 0.0),
        NumericError);
    Pcg64 rng(1);
    const Eigen::MatrixXd u = gaussian_matrix(rng, 4, 2);
    CHECK_THROWS_AS(orthogonalize(stack_of(u, u), -1.0), ValidationError);
}

TEST_CASE("basis containers roundtrip through disk") {
    Pcg64 rng(99);
    std::vector<TaskVector> tvs;
    for (int t = 0; t < 3; ++t) {
        TaskVector tv;
        tv.source_id = "src_" + std::to_string(t);
        tv.layers.push_back(TensorEntry::from_matrix("W1", gaussian_matrix(rng, 6, 9)));
        tv.layers.push_back(TensorEntry::from_matrix("W2", gaussian_matrix(rng, 4, 6)));
        tv.layers.push_back(TensorEntry::from_vector("b1", gaussian_vector(rng, 6)));
        tvs.push_back(std::move(tv));
    }
    const BasisSet bases = build_basis_set(tvs, 2, 1e-8);
    CHECK(bases.size() == 2); // biases never get bases
    CHECK(bases.at("W1").r == 6);
    CHECK(bases.at("W2").r == 6);

    const TensorContainer c =
        basis_set_to_container(bases, {{"eps", "1e-8"}, {"per_task_k", "2"}, {"sources", "s"}});
    CHECK(c.metadata.at("r") == "6");
    const auto path = std::filesystem::temp_directory_path() / "bolt_tests" / "basis.btc";
    std::filesystem::create_directories(path.parent_path());
    save_container(c, path);
    const BasisSet loaded = basis_set_from_container(load_container(path));
    CHECK((loaded.at("W1").u_orth - bases.at("W1").u_orth).norm() == 0.0);
    CHECK((loaded.at("W2").v_orth - bases.at("W2").v_orth).norm() == 0.0);
    CHECK(loaded.at("W1").effective_rank_u == bases.at("W1").effective_rank_u);
}
