#include "protoecg/synthetic.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace protoecg {

namespace {

// Per-lead gains for the P, QRS and T components (I, II, III, aVR, aVL, aVF, V1..V6).
constexpr std::array<double, kLeads> kGainP = {0.10, 0.15, 0.06, -0.12, 0.04, 0.10, 0.05, 0.08, 0.10, 0.10, 0.10, 0.08};
constexpr std::array<double, kLeads> kGainQrs = {0.8, 1.2, 0.5, -0.9, 0.4, 0.8, -0.6, 0.3, 0.9, 1.4, 1.3, 1.0};
constexpr std::array<double, kLeads> kGainT = {0.20, 0.30, 0.12, -0.22, 0.10, 0.20, 0.10, 0.25, 0.30, 0.32, 0.28, 0.22};

struct Rng {
  std::mt19937_64 gen;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  double normal(double sd) { return std::normal_distribution<double>(0.0, sd)(gen); }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }
};

void add_bump(SignalMatrix& s, int lead, double center_s, double width_s, double amp) {
  const int c = static_cast<int>(std::lround(center_s * kSampleRateHz));
  const int reach = static_cast<int>(std::ceil(4.0 * width_s * kSampleRateHz));
  for (int t = std::max(0, c - reach); t < std::min(kSamples, c + reach + 1); ++t) {
    const double d = (t / kSampleRateHz - center_s) / width_s;
    s(lead, t) += static_cast<float>(amp * std::exp(-0.5 * d * d));
  }
}

struct Labels {
  std::string rhythm;
  bool pvc = false, asmi = false, qwave = false, el = false;
};

EcgRecord make_record(const std::string& id, int fold, Rng& rng, const SyntheticOptions& opts) {
  Labels lab;
  const double r = rng.uniform(0.0, 1.0);
  lab.rhythm = r < 0.5 ? "SR" : (r < 0.75 ? "STACH" : "AFIB");
  const double m = rng.uniform(0.0, 1.0);
  if (m < 0.22) {
    lab.pvc = true;
  } else if (m < 0.47) {
    lab.asmi = true;
    lab.qwave = rng.chance(0.75);
  } else if (m < 0.55) {
    lab.qwave = true;
  }
  lab.el = rng.chance(0.3);

  SignalMatrix s = SignalMatrix::Zero(kLeads, kSamples);
  double hr = lab.rhythm == "SR" ? rng.uniform(58, 90) : (lab.rhythm == "STACH" ? rng.uniform(110, 140) : rng.uniform(80, 130));
  const double mean_rr = 60.0 / hr;
  std::vector<double> beats;
  for (double t = rng.uniform(0.05, mean_rr); t < kRecordSeconds - 0.05;) {
    beats.push_back(t);
    const double jitter = lab.rhythm == "AFIB" ? rng.uniform(0.6, 1.4) : 1.0 + rng.normal(0.02);
    t += mean_rr * jitter;
  }

  int ectopic = -1, ectopic2 = -1;
  if (lab.pvc && beats.size() > 3) {
    ectopic = 1 + static_cast<int>(rng.uniform(0.0, static_cast<double>(beats.size() - 2)));
    if (rng.chance(0.4)) ectopic2 = (ectopic + 3) % static_cast<int>(beats.size());
  }
  const double amp = rng.uniform(0.85, 1.15);
  const double t_sign = lab.el ? -0.7 : 1.0;
  for (std::size_t b = 0; b < beats.size(); ++b) {
    const double t0 = beats[b];
    const bool is_pvc = static_cast<int>(b) == ectopic || static_cast<int>(b) == ectopic2;
    for (int l = 0; l < kLeads; ++l) {
      if (is_pvc) {
        add_bump(s, l, t0, 0.045, -1.6 * amp * kGainQrs[l]);
        add_bump(s, l, t0 + 0.28, 0.07, 0.9 * amp * kGainQrs[l]);
        continue;
      }
      if (lab.rhythm != "AFIB") add_bump(s, l, t0 - 0.16, 0.025, amp * kGainP[l]);
      add_bump(s, l, t0 - 0.02, 0.008, -0.15 * amp * kGainQrs[l]);
      add_bump(s, l, t0, 0.014, amp * kGainQrs[l]);
      add_bump(s, l, t0 + 0.03, 0.010, -0.2 * amp * kGainQrs[l]);
      add_bump(s, l, t0 + 0.26, 0.045, t_sign * amp * kGainT[l]);
    }
  }

  // Morphology events are planted once at a random time so they are genuinely local.
  if (lab.asmi) {
    const double c = rng.uniform(1.0, 9.0);
    for (int l : {6, 7, 8}) {
      add_bump(s, l, c, 0.04, -1.1);
      add_bump(s, l, c + 0.12, 0.05, 0.8);
    }
  }
  if (lab.qwave) {
    const double c = rng.uniform(1.0, 9.0);
    for (int l : {1, 2, 5}) {
      add_bump(s, l, c, 0.03, -1.2);
      add_bump(s, l, c + 0.09, 0.03, 0.5);
    }
  }
  if (lab.rhythm == "AFIB") {
    const double f = rng.uniform(5.0, 7.0);
    for (int l = 0; l < kLeads; ++l) {
      const double ph = rng.uniform(0.0, 2 * std::numbers::pi);
      for (int t = 0; t < kSamples; ++t) {
        s(l, t) += static_cast<float>(0.05 * std::sin(2 * std::numbers::pi * f * t / kSampleRateHz + ph));
      }
    }
  }
  const double wander_f = rng.uniform(0.05, 0.3);
  const double wander_ph = rng.uniform(0.0, 2 * std::numbers::pi);
  for (int l = 0; l < kLeads; ++l) {
    for (int t = 0; t < kSamples; ++t) {
      s(l, t) += static_cast<float>(opts.wander_mv * std::sin(2 * std::numbers::pi * wander_f * t / kSampleRateHz + wander_ph) +
                                    rng.normal(opts.noise_mv));
    }
  }

  std::vector<std::string> codes = {lab.rhythm};
  if (lab.pvc) codes.push_back("PVC");
  if (lab.asmi) codes.push_back("ASMI");
  if (lab.qwave) codes.push_back("QWAVE");
  if (lab.el) codes.push_back("EL");
  if (!lab.pvc && !lab.asmi && !lab.qwave && !lab.el) codes.push_back("NORM");

  EcgRecord rec;
  rec.id = id;
  rec.fold = fold;
  rec.signal = std::move(s);
  rec.labels = encode_labels(codes);
  return rec;
}

}  // namespace

DatasetSplit make_synthetic(const SyntheticOptions& opts) {
  Rng rng{std::mt19937_64(opts.seed)};
  DatasetSplit split;
  int serial = 0;
  auto next_id = [&] {
    char buf[16];
    std::snprintf(buf, sizeof buf, "syn%05d", serial++);
    return std::string(buf);
  };
  for (int i = 0; i < opts.train; ++i) split.train.push_back(make_record(next_id(), 1 + i % 8, rng, opts));
  for (int i = 0; i < opts.val; ++i) split.val.push_back(make_record(next_id(), 9, rng, opts));
  for (int i = 0; i < opts.test; ++i) split.test.push_back(make_record(next_id(), 10, rng, opts));
  return split;
}

}  // namespace protoecg
