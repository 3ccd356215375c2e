#pragma once

#include <cstdint>

#include "protoecg/signal_io.hpp"

namespace protoecg {

// Desk-scale stand-in for a 12-lead corpus with one learnable signal per branch:
//   rhythm  SR / STACH / AFIB        beat timing and atrial activity
//   morph   PVC, ASMI, QWAVE         short planted events; QWAVE mostly rides with ASMI,
//                                    PVC never appears with either
//   global  EL, NORM                 record-wide T-wave inversion / no abnormal morphology
struct SyntheticOptions {
  int train = 600;
  int val = 100;
  int test = 100;
  std::uint64_t seed = 7;
  double noise_mv = 0.02;
  double wander_mv = 0.15;  // slow baseline drift, removed by preprocessing
};

DatasetSplit make_synthetic(const SyntheticOptions& opts = {});

}  // namespace protoecg
