#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "protoecg/errors.hpp"
#include "protoecg/prototype.hpp"
#include "protoecg/training.hpp"
#include "support.hpp"

using namespace protoecg;
using testsupport::Gen;

TEST_CASE("similarity examples") {
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(5);
  e1[0] = 1;
  CHECK(similarity(e1, e1, 1.0) == doctest::Approx(1.0));
  Eigen::Vector2d x(1, 0), y(0, 1), z(1, 1);
  CHECK(similarity(x, y, 7.0) == doctest::Approx(0.0));
  CHECK(similarity(z, x, 2.0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(similarity(Eigen::Vector2d::Zero(), x, 1.0), DegenerateInputError);
}

TEST_CASE("property: similarity is invariant to positive rescaling of either argument") {
  Gen g(17);
  for (int trial = 0; trial < 500; ++trial) {
    const int d = g.integer(1, 64);
    Eigen::VectorXd z = g.gaussian(d, 1), p = g.gaussian(d, 1);
    const double a = g.uniform(0.1, 10), s = std::exp(g.uniform(-6, 6)), t = std::exp(g.uniform(-6, 6));
    const double base = similarity(z, p, a);
    CHECK(std::abs(similarity(s * z, t * p, a) - base) <= 1e-9 * std::max(1.0, a));
    CHECK(std::abs(base) <= a * (1 + 1e-12));
  }
}

TEST_CASE("top-k pooling") {
  std::vector<double> a{3, 1, 2}, b{5, 1, 4, 2, 3}, c{7};
  CHECK(topk_pool(a, 3) == doctest::Approx(2.0));
  CHECK(topk_pool(b, 2) == doctest::Approx(4.5));
  CHECK(topk_pool(c, 5) == doctest::Approx(7.0));
  Gen g(23);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(g.integer(1, 40));
    for (auto& x : v) x = g.coin(0.2) ? std::round(g.uniform(-3, 3)) : g.normal();
    const int k = g.integer(1, 45);
    CHECK(topk_pool(v, k) == doctest::Approx(testsupport::oracle_topk(v, k)).epsilon(1e-12));
  }
}

TEST_CASE("sliding similarity count, symmetry and planted offset") {
  Gen g(5);
  auto map = g.latent(4, 32);
  Eigen::VectorXd p = g.gaussian(12, 1);
  auto s = sliding_similarity(map, p, 3, 2.0);
  CHECK(s.size() == 30u);
  for (int o = 0; o < 30; ++o) CHECK(s[o] == doctest::Approx(testsupport::oracle_patch_similarity(map, o, 3, p, 2.0)));

  LatentMap flat(4, 32);
  for (int c = 0; c < 4; ++c) flat.row(c).setConstant(c + 1.0);
  auto same = sliding_similarity(flat, p, 3, 1.0);
  for (double v : same) CHECK(v == doctest::Approx(same[0]).epsilon(1e-12));

  for (int c = 0; c < 4; ++c)
    for (int t = 0; t < 3; ++t) map(c, 7 + t) = 3.5 * p[c * 3 + t];
  auto planted = sliding_similarity(map, p, 3, 2.0);
  const auto best = std::max_element(planted.begin(), planted.end()) - planted.begin();
  CHECK(best == 7);
  CHECK(planted[7] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("bank forward matches per-record oracle for partial and global kinds") {
  Gen g(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = g.integer(1, 4), window = g.integer(1, 4), length = g.integer(window, 10);
    auto bank = testsupport::small_bank(PrototypeKind::Partial2D, g.integer(1, 5), window, length,
                                        g.assignment(g.integer(c, 8), c), c, g, g.uniform(0.5, 4));
    std::vector<LatentMap> latents;
    for (int n = 0; n < 3; ++n) latents.push_back(g.latent(bank.channels, length));
    const int k = g.integer(1, 6);
    auto act = bank_forward(latents, bank, k);
    for (int n = 0; n < 3; ++n) {
      for (int j = 0; j < bank.size(); ++j) {
        std::vector<double> sc;
        for (int o = 0; o < bank.num_offsets(); ++o)
          sc.push_back(testsupport::oracle_patch_similarity(latents[n], o, window, bank.vectors.row(j).transpose(), bank.scale));
        CHECK(act.scores(n, j) == doctest::Approx(testsupport::oracle_topk(sc, k)).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("similarity profile length") {
  Gen g(2);
  std::vector<std::string> r(16), m(52), gl(3);
  for (int i = 0; i < 16; ++i) r[i] = "R" + std::to_string(i);
  for (int i = 0; i < 52; ++i) m[i] = "M" + std::to_string(i);
  for (int i = 0; i < 3; ++i) gl[i] = "G" + std::to_string(i);
  auto b1 = PrototypeBank::create(PrototypeKind::Global1D, r, 5, 1);
  auto b2 = PrototypeBank::create(PrototypeKind::Partial2D, m, 18, 2);
  auto b3 = PrototypeBank::create(PrototypeKind::Global2D, gl, 7, 3);
  CHECK(b1.size() + b2.size() + b3.size() == 1037);
  CHECK(b3.scale == doctest::Approx(std::sqrt(512.0 * 32)));

  auto lat1 = g.latent(512, 1), lat2 = g.latent(512, 32);
  std::vector<BranchLatent> all{{&lat1, &b1}, {&lat2, &b2}, {&lat2, &b3}};
  CHECK(similarity_profile(all).size() == 1037);

  auto single = PrototypeBank::create(PrototypeKind::Global2D, gl, 1, 4);
  std::vector<BranchLatent> one{{&lat2, &single}};
  CHECK(similarity_profile(one).size() == 3);

  std::vector<BranchLatent> reordered{{&lat2, &b3}, {&lat1, &b1}};
  CHECK_THROWS(similarity_profile(reordered));
}

TEST_CASE("property: projection hits the exhaustive-scan argmax with similarity a") {
  Gen g(41);
  for (int trial = 0; trial < 60; ++trial) {
    // D >= 2: with D = 1 every cosine is +-1 and the argmax is a float-rounding coin toss
    const int c = g.integer(1, 3), window = g.integer(1, 3), length = g.integer(window, 8);
    const int channels = g.integer(window == 1 ? 2 : 1, 4);
    auto bank = testsupport::small_bank(PrototypeKind::Partial2D, channels, window, length, g.assignment(g.integer(c, 6), c),
                                        c, g, g.uniform(0.5, 5));
    const int n = g.integer(2, 8);
    std::vector<LatentMap> latents;
    std::vector<std::string> ids;
    Eigen::MatrixXd labels = g.multi_hot(n, c, 0.5);
    for (int cls = 0; cls < c; ++cls) labels(g.integer(0, n - 1), cls) = 1.0;
    for (int r = 0; r < n; ++r) {
      latents.push_back(g.latent(bank.channels, length));
      if (length > window && g.coin(0.2)) latents.back().col(0).setZero();  // exercises zero-norm patches
      ids.push_back("rec" + std::to_string(r));
    }
    auto projected = project_prototypes(bank, latents, labels, ids);
    REQUIRE(projected.projected());
    for (int j = 0; j < bank.size(); ++j) {
      auto ref = testsupport::oracle_projection(latents, labels, bank.class_of[j], bank.vectors.row(j).transpose(), window,
                                                bank.scale);
      const auto& prov = *projected.provenance[j];
      CHECK(prov.record_index == ref.record);
      CHECK(prov.window_start == ref.offset);
      CHECK(prov.record_id == ids[ref.record]);
      Eigen::VectorXd patch = latent_patch(latents[prov.record_index], prov.window_start, window);
      CHECK(std::abs(similarity(projected.vectors.row(j).transpose(), patch, bank.scale) - bank.scale) <= 1e-5);
    }
  }
}

TEST_CASE("projection: fixed point and hand-built toy set") {
  // Four one-step patches with cosines 0.1, 0.9, -0.5, 0.6 to p.
  PrototypeBank bank;
  bank.kind = PrototypeKind::Partial2D;
  bank.channels = 2;
  bank.window = 1;
  bank.latent_length = 2;
  bank.scale = 1.0;
  bank.vectors = Eigen::MatrixXd(1, 2);
  bank.vectors << 1, 0;
  bank.class_of = {0};
  bank.class_codes = {"A"};
  auto patch = [](double cosv) {
    return Eigen::Vector2d(cosv, std::sqrt(1 - cosv * cosv));
  };
  std::vector<LatentMap> lat(2, LatentMap(2, 2));
  lat[0].col(0) = patch(0.1);
  lat[0].col(1) = patch(0.9);
  lat[1].col(0) = patch(-0.5);
  lat[1].col(1) = patch(0.6);
  Eigen::MatrixXd labels = Eigen::MatrixXd::Ones(2, 1);
  auto out = project_prototypes(bank, lat, labels, {"a", "b"});
  CHECK(out.provenance[0]->record_index == 0);
  CHECK(out.provenance[0]->window_start == 1);
  CHECK(out.vectors.row(0).transpose().isApprox(patch(0.9)));

  // projecting again leaves the bank unchanged
  auto again = project_prototypes(out, lat, labels, {"a", "b"});
  CHECK(again.vectors.isApprox(out.vectors));
  CHECK(*again.provenance[0] == *out.provenance[0]);

  // exact ties go to the lowest (record, offset)
  std::vector<LatentMap> tied(3, LatentMap(2, 2));
  for (auto& m : tied) m.setConstant(1.0);
  Eigen::MatrixXd some = Eigen::MatrixXd::Ones(3, 1);
  some(0, 0) = 0.0;
  auto t = project_prototypes(bank, tied, some, {"a", "b", "c"});
  CHECK(t.provenance[0]->record_index == 1);
  CHECK(t.provenance[0]->window_start == 0);

  // a class with no eligible record cannot be projected
  Eigen::MatrixXd none = Eigen::MatrixXd::Zero(2, 1);
  CHECK_THROWS_AS(project_prototypes(bank, lat, none, {"a", "b"}), ProjectionError);
}

TEST_CASE("bank save / load round trip") {
  auto bank = PrototypeBank::create(PrototypeKind::Partial2D, {"A", "B"}, 2, 9);
  auto path = std::filesystem::temp_directory_path() / "protoecg_test.bank";
  bank.save(path);
  auto back = PrototypeBank::load(path);
  CHECK((back.vectors - bank.vectors.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.class_of == bank.class_of);
  CHECK(back.class_codes == bank.class_codes);
  CHECK(back.window == 3);
  CHECK(back.latent_length == 32);
  CHECK(back.scale == bank.scale);
}

TEST_CASE("classifier init rule") {
  auto h = init_classifier({0, 1}, 2);
  Eigen::Matrix2d expect;
  expect << 1, -0.5, -0.5, 1;
  CHECK(h.weights == expect);
  CHECK(init_classifier({0, 0, 0}, 1).weights == Eigen::RowVector3d(1, 1, 1));
  CHECK(init_classifier({0}, 3).weights.col(0) == Eigen::Vector3d(1, -0.5, -0.5));
  Gen g(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = g.integer(1, 12), p = g.integer(c, 40);
    auto cls = g.assignment(p, c);
    auto head = init_classifier(cls, c);
    REQUIRE(head.weights.rows() == c);
    REQUIRE(head.weights.cols() == p);
    CHECK(head.bias.isZero());
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < p; ++j) CHECK(head.weights(i, j) == (cls[j] == i ? 1.0 : -0.5));
  }
}
