#pragma once

// Synthetic multi-class jet generator. Classes are told apart by prong count
// (1 = QCD-like, 2 = W/Z-like, 3 = top-like): each prong is a narrow cluster
// of particles on a displaced center, plus a soft uniform spray.

#include <jbot/jet.hpp>
#include <jbot/rng.hpp>

#include <vector>

namespace jbot {

struct SyntheticClassSpec {
  int prongs = 1;            // 1, 2 or 3
  double spread = 0.4;       // disc radius for prong placement
  double prong_width = 0.03; // angular sigma of particles within a prong
  double soft_mean = 8.0;    // Poisson mean of soft particles
  double soft_pt = 0.01;     // exponential scale of raw soft pt
  int satellites = 3;        // prong particles besides the core
};

struct SyntheticSpec {
  std::vector<SyntheticClassSpec> classes;
};

/// Presets: class i gets (i % 3) + 1 prongs with the default geometry.
SyntheticSpec default_synthetic_spec(int n_classes);

/// `count` jets with labels i % n_classes; bit-identical for a given seed.
/// Per-jet sum of valid pt_rel lands in (0.8, 1.0]; multi-prong centers are
/// pairwise separated by at least `spread` and displaced from the axis.
JetDataset generate_synthetic(const SyntheticSpec& spec, long count, std::uint64_t seed);

}  // namespace jbot
