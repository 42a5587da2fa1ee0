#include <Eigen/Eigenvalues>
#include <cmath>

#include "afp/repr.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace afp;
using repr::Matrix;

namespace {

Matrix mat(std::size_t r, std::size_t c, std::vector<double> v) { return Matrix({r, c}, std::move(v)); }

Matrix random_matrix(Pcg32& rng, std::size_t r, std::size_t c) { return testutil::random_tensor(rng, {r, c}); }

}  // namespace

TEST_SUITE("repr") {

TEST_CASE("alignment and uniformity match the double-loop oracles") {
  Pcg32 rng(31, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(10), d = 1 + rng.below(8);
    const Matrix x = random_matrix(rng, n, d), y = random_matrix(rng, n, d);
    CHECK(std::abs(repr::alignment_metric(x, y) - oracle::alignment(oracle::to_mat(x), oracle::to_mat(y))) <= 1e-10);
    CHECK(std::abs(repr::uniformity_metric(x) - oracle::uniformity(oracle::to_mat(x))) <= 1e-10);
  }
}

TEST_CASE("metric hand values") {
  const Matrix collapsed = mat(3, 2, {1, 1, 2, 2, 0.5, 0.5});
  CHECK(repr::alignment_metric(collapsed, collapsed) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(repr::uniformity_metric(collapsed)) <= 1e-10);
  const Matrix a = mat(1, 2, {1, 0}), b = mat(1, 2, {-1, 0});
  CHECK(std::abs(repr::alignment_metric(a, b) - 4.0) <= 1e-10);
  CHECK(std::abs(repr::uniformity_metric(mat(2, 2, {1, 0, -1, 0})) + 8.0) <= 1e-10);
  CHECK_THROWS_AS(repr::uniformity_metric(mat(1, 2, {1, 0})), UsageError);
  CHECK_THROWS_AS(repr::alignment_metric(a, mat(2, 2, {1, 0, 0, 1})), DimensionError);
}

TEST_CASE("uniformity stays finite for far-apart points") {
  // exp(-2*4) underflows nothing here, but the log-sum-exp path must hold
  // for many antipodal pairs too.
  std::vector<double> v;
  for (int i = 0; i < 50; ++i) {
    v.push_back(i % 2 ? 1 : -1);
    v.push_back(0);
  }
  const Matrix x = mat(50, 2, v);
  CHECK(std::isfinite(repr::uniformity_metric(x)));
  CHECK(std::abs(repr::uniformity_metric(x) - oracle::uniformity(oracle::to_mat(x))) <= 1e-10);
}

TEST_CASE("cosine and retrieval") {
  const std::vector<double> u{1, 0}, v{0, 2};
  CHECK(repr::cosine(u, v) == 0.0);
  CHECK(repr::cosine(u, u) == doctest::Approx(1.0));
  const Matrix src = mat(3, 2, {1, 0, 0, 1, 1, 1});
  const Matrix tgt = mat(3, 2, {2, 0, 0, 3, 1, 1.1});
  CHECK(repr::retrieval_acc_at_1(src, tgt) == 1.0);
  const Matrix swapped = mat(3, 2, {0, 3, 2, 0, 1, 1.1});
  CHECK(repr::retrieval_acc_at_1(src, swapped) == doctest::Approx(1.0 / 3));
  // Duplicate targets tie; the lower index wins, so row 1 misses.
  const Matrix dup = mat(2, 2, {1, 0, 1, 0});
  CHECK(repr::retrieval_acc_at_1(dup, dup) == 0.5);
}

TEST_CASE("pool matches manual reductions") {
  Pcg32 rng(32, 0);
  const num::Tensor<float> hidden = testutil::random_tensor(rng, {6, 3}).cast<float>();
  const std::vector<std::uint8_t> valid{1, 1, 0, 1, 0, 0};
  const auto mean = repr::pool(hidden, 2, 3, valid, num::Pooling::mean, 1);
  CHECK(mean.layer == 1);
  CHECK(mean.size() == 2);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(mean.vectors.at(0, c) == doctest::Approx((double(hidden.at(0, c)) + hidden.at(1, c)) / 2).epsilon(1e-6));
    CHECK(mean.vectors.at(1, c) == static_cast<double>(hidden.at(3, c)));
  }
}

TEST_CASE("pca2 agrees with a dense eigensolver") {
  Pcg32 rng(33, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 20 + rng.below(30), d = 3 + rng.below(6);
    Matrix x = random_matrix(rng, n, d);
    // Stretch the axes so the leading eigenvalues are well separated.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) x.at(i, j) *= 1.0 + 2.0 * static_cast<double>(d - j);
    const repr::Pca2 p = repr::pca2(x);

    Eigen::MatrixXd X(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) X(i, j) = x.at(i, j);
    const Eigen::MatrixXd C0 = X.rowwise() - X.colwise().mean();
    const Eigen::MatrixXd cov = (C0.transpose() * C0) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const auto& evals = es.eigenvalues();
    CHECK(p.eigenvalues[0] == doctest::Approx(evals(d - 1)).epsilon(1e-6));
    CHECK(p.eigenvalues[1] == doctest::Approx(evals(d - 2)).epsilon(1e-6));
    CHECK(p.total_variance == doctest::Approx(cov.trace()).epsilon(1e-12));
    for (int k = 0; k < 2; ++k) {
      const Eigen::VectorXd e = es.eigenvectors().col(d - 1 - k);
      double dotp = 0;
      for (std::size_t j = 0; j < d; ++j) dotp += e(j) * p.components.at(k, j);
      CHECK(std::abs(dotp) == doctest::Approx(1.0).epsilon(1e-6));
    }
    // Coordinates are centred projections.
    for (int k = 0; k < 2; ++k) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += p.coords.at(i, k);
      CHECK(std::abs(s / static_cast<double>(n)) <= 1e-9);
    }
  }
}

TEST_CASE("pca2 orientation and degenerate input") {
  const Matrix x = mat(4, 2, {-3, 0, -1, 0, 1, 0, 3, 0});
  const repr::Pca2 p = repr::pca2(x);
  CHECK(p.components.at(0, 0) > 0);
  CHECK(p.eigenvalues[1] == doctest::Approx(0.0));
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.coords.at(i, 1) == doctest::Approx(0.0));
  CHECK_THROWS_AS(repr::pca2(mat(1, 2, {1, 2})), UsageError);
}

}  // TEST_SUITE
