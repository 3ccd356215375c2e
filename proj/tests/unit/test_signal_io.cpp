#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "protoecg/errors.hpp"
#include "protoecg/signal_io.hpp"
#include "protoecg/taxonomy.hpp"
#include "support.hpp"

using namespace protoecg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("protoecg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Eigen::MatrixXd sinusoid(double f, int n = 6000) {
  Eigen::MatrixXd m(1, n);
  for (int t = 0; t < n; ++t) m(0, t) = std::sin(2 * std::numbers::pi * f * t / kSampleRateHz);
  return m;
}

}  // namespace

TEST_CASE("taxonomy partitions 71 codes into 16/52/3") {
  const auto& tax = LabelTaxonomy::standard();
  CHECK(tax.size() == 71);
  CHECK(tax.branch_indices(Branch::Rhythm).size() == 16);
  CHECK(tax.branch_indices(Branch::Morphology).size() == 52);
  CHECK(tax.branch_indices(Branch::Global).size() == 3);
  CHECK(tax.branch_of("AFIB") == Branch::Rhythm);
  CHECK(tax.branch_of("ASMI") == Branch::Morphology);
  CHECK(tax.branch_of("NORM") == Branch::Global);
  CHECK_THROWS_AS(tax.index_of("NOPE"), TaxonomyError);
}

TEST_CASE("multi-hot encoding of {AFIB, ASMI}") {
  const auto& tax = LabelTaxonomy::standard();
  auto y = encode_labels({"AFIB", "ASMI", "AFIB"});
  REQUIRE(y.size() == 71u);
  int ones = 0;
  for (auto v : y) ones += v;
  CHECK(ones == 2);
  CHECK(y[tax.index_of("AFIB")] == 1);
  CHECK(y[tax.index_of("ASMI")] == 1);
  CHECK(decode_labels(y).size() == 2u);
}

TEST_CASE("manifest round trip and fold split") {
  testsupport::Gen g(3);
  DatasetSplit split;
  split.train.push_back(testsupport::random_record(g, "a", 1, {"SR"}));
  split.val.push_back(testsupport::random_record(g, "b", 9, {"AFIB", "ASMI"}));
  split.test.push_back(testsupport::random_record(g, "c", 10, {"NORM"}));
  auto dir = scratch("manifest");
  save_dataset(split, dir / "manifest.csv", dir / "signals");
  auto back = load_dataset(dir / "manifest.csv", dir / "signals");
  CHECK(back.train.size() == 1u);
  CHECK(back.val.size() == 1u);
  CHECK(back.test.size() == 1u);
  CHECK(back.val[0].labels == split.val[0].labels);
  CHECK(back.train[0].signal.isApprox(split.train[0].signal));
  CHECK(split_part_for_fold(8) == SplitPart::Train);
  CHECK(split_part_for_fold(9) == SplitPart::Val);
  CHECK(split_part_for_fold(10) == SplitPart::Test);
  CHECK_THROWS_AS(split_part_for_fold(11), ValidationError);
}

TEST_CASE("ingestion failures") {
  auto dir = scratch("badmanifest");
  {
    std::ofstream(dir / "m.csv") << "id,fold,codes\nx,1,SR\n";
  }
  CHECK_THROWS_AS(load_dataset(dir / "m.csv", dir), IngestionError);  // missing signal
  {
    std::ofstream(dir / "short.f32") << "abc";
  }
  CHECK_THROWS_AS(read_signal(dir / "short.f32"), ShapeError);
  {
    std::ofstream(dir / "m2.csv") << "id,fold,codes\nx,1,BOGUS\n";
  }
  testsupport::Gen g(1);
  write_signal(dir / "x.f32", testsupport::random_record(g, "x", 1, {}).signal);
  CHECK_THROWS_AS(load_dataset(dir / "m2.csv", dir), TaxonomyError);
}

TEST_CASE("high-pass removes DC from the first sample") {
  Eigen::MatrixXd dc = Eigen::MatrixXd::Constant(1, 1000, 1.0);
  auto y = highpass_filter(dc);
  CHECK(y.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("high-pass steady-state gain matches the complex-arithmetic response") {
  for (double f : {0.1, 0.25, 0.5, 1.0, 2.0, 10.0, 25.0}) {
    const double oracle = testsupport::oracle_highpass_gain(f, 0.5, kSampleRateHz);
    CHECK(highpass_magnitude(f) == doctest::Approx(oracle).epsilon(1e-12));
    auto y = highpass_filter(sinusoid(f));
    Eigen::VectorXd row = y.row(0).transpose();
    const int tail = static_cast<int>(std::ceil(2 * kSampleRateHz / f));
    CHECK(testsupport::tail_amplitude(row, f, kSampleRateHz, tail) == doctest::Approx(oracle).epsilon(2e-3));
  }
  // -3 dB at the cutoff, passband at 10 Hz
  auto half = highpass_filter(sinusoid(0.5));
  CHECK(std::abs(testsupport::tail_amplitude(half.row(0).transpose(), 0.5, kSampleRateHz, 400) - 0.707) <= 0.02);
  // A first-order section passes 0.99883 at 10 Hz (20x the cutoff)
  auto ten = highpass_filter(sinusoid(10.0));
  CHECK(testsupport::tail_amplitude(ten.row(0).transpose(), 10.0, kSampleRateHz, 100) == doctest::Approx(0.998833).epsilon(1e-5));
}

TEST_CASE("high-pass is linear and zero-phase squares the response") {
  testsupport::Gen g(11);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd x = g.gaussian(3, 400), z = g.gaussian(3, 400);
    const double a = g.uniform(-2, 2), b = g.uniform(-2, 2);
    Eigen::MatrixXd lhs = highpass_filter(a * x + b * z);
    Eigen::MatrixXd rhs = a * highpass_filter(x) + b * highpass_filter(z);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
  }
  FilterOptions zp;
  zp.zero_phase = true;
  auto y = highpass_filter(sinusoid(0.5, 8000), zp);
  const double g2 = std::pow(testsupport::oracle_highpass_gain(0.5, 0.5, kSampleRateHz), 2);
  CHECK(testsupport::tail_amplitude(y.row(0).segment(3000, 2000).transpose(), 0.5, kSampleRateHz, 400) == doctest::Approx(g2).epsilon(5e-3));
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(1, 10);
  bad(0, 3) = std::nan("");
  CHECK_THROWS_AS(highpass_filter(bad), NumericError);
}

TEST_CASE("branch views restrict labels") {
  testsupport::Gen g(5);
  DatasetSplit split;
  split.train.push_back(testsupport::random_record(g, "r", 1, {"AFIB"}));
  auto rhythm = branch_view(split, Branch::Rhythm);
  REQUIRE(rhythm.train[0].labels.size() == 16u);
  CHECK(rhythm.train[0].positive_count() == 1);
  auto morph = branch_view(split, Branch::Morphology);
  CHECK(morph.train[0].labels.size() == 52u);
  CHECK(morph.train[0].positive_count() == 0);
  CHECK(branch_view(split, Branch::Global).train[0].labels.size() == 3u);
}
