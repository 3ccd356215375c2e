#include <cmath>

#include "doctest.h"
#include "protoecg/errors.hpp"
#include "protoecg/losses.hpp"
#include "support.hpp"

using namespace protoecg;
using testsupport::Gen;

TEST_CASE("binary cross-entropy examples") {
  Eigen::MatrixXd z(1, 1), y(1, 1);
  z << 0;
  y << 1;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(1);
  CHECK(bce_loss(z, y, w) == doctest::Approx(std::log(2.0)));
  z << 40;
  CHECK(bce_loss(z, y, w) <= 1e-12);
  z << -800;  // stays finite far into saturation
  CHECK(std::isfinite(bce_loss(z, y, w)));
  z << std::nan("");
  CHECK_THROWS_AS(bce_loss(z, y, w), NumericError);
  Eigen::MatrixXd z2(1, 2), y2(1, 2);
  z2 << 2, -1;
  y2 << 1, 0;
  CHECK(bce_loss(z2, y2, Eigen::VectorXd::Ones(2)) == doctest::Approx(0.44019).epsilon(1e-5));
}

TEST_CASE("clustering and separation examples") {
  Eigen::MatrixXd s(1, 2), y(1, 2);
  s << 0.2, 0.8;
  y << 1, 0;
  CHECK(clustering_loss(s, y, {0, 0}) == doctest::Approx(-0.8));
  y << 0, 0;
  CHECK(clustering_loss(s, y, {0, 0}) == doctest::Approx(0.0));

  // positives {A, B}: the max spans both classes' prototypes
  Eigen::MatrixXd s3(1, 3), y3(1, 3);
  s3 << 0.1, 0.7, 0.9;
  y3 << 1, 1, 0;
  CHECK(clustering_loss(s3, y3, {0, 1, 2}) == doctest::Approx(-0.7));

  Eigen::MatrixXd ys(1, 3);
  ys << 1, 0, 0;
  Eigen::MatrixXd ss(1, 3);
  ss << 0.99, 0.1, 0.5;
  CHECK(separation_loss(ss, ys, {0, 1, 2}) == doctest::Approx(0.5));
  ys << 1, 1, 1;
  CHECK(separation_loss(ss, ys, {0, 1, 2}) == doctest::Approx(0.0));
}

TEST_CASE("orthogonality examples") {
  CHECK(orthogonality_loss(Eigen::MatrixXd::Identity(3, 5)) == doctest::Approx(0.0));
  Eigen::MatrixXd twin(2, 3);
  twin << 1, 0, 0, 1, 0, 0;
  CHECK(orthogonality_loss(twin) == doctest::Approx(2.0));
  CHECK(orthogonality_loss(Eigen::MatrixXd::Constant(1, 4, 3.0)) == doctest::Approx(0.0));
}

TEST_CASE("contrastive examples") {
  // unit vectors with cosine s, scale 1
  auto pair = [](double s) {
    Eigen::MatrixXd p(2, 2);
    p << 1, 0, s, std::sqrt(1 - s * s);
    return p;
  };
  Eigen::MatrixXd c1(2, 2), c0(2, 2);
  c1 << 1, 1, 1, 1;
  c0 << 1, 0, 0, 1;
  CHECK(contrastive_loss(pair(0.5), c1, 1.0) == doctest::Approx(-0.35355).epsilon(1e-5));
  CHECK(contrastive_loss(pair(0.9), c0, 1.0) == doctest::Approx(0.63640).epsilon(1e-5));

  // all pairwise similarities equal -> both group means equal -> 0
  Gen g(2);
  Eigen::MatrixXd eq = Eigen::MatrixXd::Constant(4, 3, 1.0);
  Eigen::MatrixXd c = g.matrix(4, 4, 0, 1);
  c = (c + c.transpose()) / 2;
  CHECK(std::abs(contrastive_loss(eq, c, 2.0)) < 1e-12);
}

TEST_CASE("jaccard example and properties") {
  // N_a = 4, N_b = 6, N_ab = 2 over 8 records
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(8, 3);
  for (int i = 0; i < 4; ++i) y(i, 0) = 1;
  for (int i = 2; i < 8; ++i) y(i, 1) = 1;
  auto j = jaccard_matrix(y, {0, 1, 2});
  CHECK(j.values(0, 1) == doctest::Approx(0.25));
  CHECK(j.values(0, 0) == 1.0);
  CHECK(j.values(0, 2) == 0.0);  // class 2 never occurs
  CHECK(j.empty_classes == std::vector<int>{2});
  CHECK(j.warnings.empty());
  // two empty classes: defined as 0 with a warning
  Eigen::MatrixXd y4 = Eigen::MatrixXd::Zero(8, 4);
  y4.leftCols(3) = y;
  auto both = jaccard_matrix(y4, {0, 2, 3});
  CHECK(both.values(1, 2) == 0.0);
  CHECK(both.values(1, 1) == 1.0);
  CHECK_FALSE(both.warnings.empty());

  Gen g(12);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = g.integer(1, 6), n = g.integer(1, 64);
    auto labels = g.multi_hot(n, c, g.uniform(0.05, 0.7));
    auto cls = g.assignment(g.integer(c, 12), c);
    auto m = jaccard_matrix(labels, cls).values;
    CHECK((m - testsupport::oracle_jaccard(labels, cls)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(m.isApprox(m.transpose()));
    CHECK(m.diagonal().isOnes());
    CHECK(m.minCoeff() >= 0.0);
    CHECK(m.maxCoeff() <= 1.0);
  }
}

TEST_CASE("total loss weighting") {
  LossParts unit{1, 1, 1, 1, 1};
  CHECK(total_loss(unit, LossConfig{}) == doctest::Approx(551.0044).epsilon(1e-12));
  LossConfig zero;
  zero.lambda_clst = zero.lambda_sep = zero.lambda_div = zero.lambda_cntrst = 0;
  LossParts parts{0.7, 3, 4, 5, 6};
  CHECK(total_loss(parts, zero) == doctest::Approx(0.7));
}

TEST_CASE("property: every loss term matches its double-loop oracle") {
  Gen g(99);
  for (int trial = 0; trial < 150; ++trial) {
    const int n = g.integer(1, 8), c = g.integer(1, 6), p = g.integer(std::max(2, c), 12), d = g.integer(1, 16);
    auto cls = g.assignment(p, c);
    auto labels = g.multi_hot(n, c);
    Eigen::MatrixXd z = g.matrix(n, c, -6, 6);
    Eigen::VectorXd w = g.matrix(c, 1, 0.2, 3);
    Eigen::MatrixXd s = g.matrix(n, p, -3, 3);
    Eigen::MatrixXd protos = g.gaussian(p, d);
    Eigen::MatrixXd co = jaccard_matrix(labels, cls).values;
    const double a = g.uniform(0.5, 4);
    using testsupport::relative_error;
    CHECK(relative_error(bce_loss(z, labels, w), testsupport::oracle_bce(z, labels, w)) <= 1e-6);
    CHECK(relative_error(clustering_loss(s, labels, cls), testsupport::oracle_clustering(s, labels, cls)) <= 1e-6);
    CHECK(relative_error(separation_loss(s, labels, cls), testsupport::oracle_separation(s, labels, cls)) <= 1e-6);
    CHECK(relative_error(orthogonality_loss(protos), testsupport::oracle_orthogonality(protos)) <= 1e-6);
    CHECK(relative_error(contrastive_loss(protos, co, a), testsupport::oracle_contrastive(protos, co, a)) <= 1e-6);
  }
}

TEST_CASE("property: loss gradients match central differences") {
  Gen g(7);
  using testsupport::numeric_gradient;
  using testsupport::relative_error;
  for (int trial = 0; trial < 25; ++trial) {
    const int n = g.integer(1, 6), c = g.integer(1, 5), p = g.integer(std::max(2, c), 8), d = g.integer(2, 10);
    auto cls = g.assignment(p, c);
    auto labels = g.multi_hot(n, c);
    Eigen::VectorXd w = g.matrix(c, 1, 0.2, 3);
    Eigen::MatrixXd z = g.matrix(n, c, -4, 4), grad;
    bce_loss(z, labels, w, &grad);
    CHECK(relative_error(grad, numeric_gradient([&](const Eigen::MatrixXd& x) { return bce_loss(x, labels, w); }, z)) <= 1e-4);

    Eigen::MatrixXd protos = g.gaussian(p, d);
    orthogonality_loss(protos, &grad);
    CHECK(relative_error(grad, numeric_gradient([](const Eigen::MatrixXd& x) { return orthogonality_loss(x); }, protos)) <= 1e-4);

    Eigen::MatrixXd co = jaccard_matrix(labels, cls).values;
    const double a = g.uniform(0.5, 3);
    contrastive_loss(protos, co, a, &grad);
    CHECK(relative_error(grad, numeric_gradient([&](const Eigen::MatrixXd& x) { return contrastive_loss(x, co, a); }, protos)) <=
          1e-4);

    // max-based terms are piecewise linear; distinct random scores keep the argmax stable
    Eigen::MatrixXd s = g.matrix(n, p, -3, 3);
    clustering_loss(s, labels, cls, &grad);
    CHECK(relative_error(grad, numeric_gradient([&](const Eigen::MatrixXd& x) { return clustering_loss(x, labels, cls); }, s)) <=
          1e-4);
    separation_loss(s, labels, cls, &grad);
    CHECK(relative_error(grad, numeric_gradient([&](const Eigen::MatrixXd& x) { return separation_loss(x, labels, cls); }, s)) <=
          1e-4);
  }
}

TEST_CASE("inverse frequency weights") {
  Eigen::MatrixXd y(4, 3);
  y << 1, 0, 0, 1, 1, 0, 1, 0, 0, 1, 0, 0;
  auto w = inverse_frequency_weights(y);
  CHECK(w[0] == doctest::Approx(4.0 / (3 * 4)));
  CHECK(w[1] == doctest::Approx(4.0 / (3 * 1)));
  CHECK(w[2] == 1.0);
}
