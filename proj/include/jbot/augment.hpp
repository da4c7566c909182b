#pragma once

// View generation (rotation, position smearing, collinear splitting) and
// momentum-aware particle masking. All functions are pure in (jet, rng state);
// callers hand each jet/view its own counter-based stream so results do not
// depend on worker count.

#include <jbot/jet.hpp>
#include <jbot/rng.hpp>

#include <vector>

namespace jbot {

struct AugmentConfig {
  bool rotate_enable = true;
  bool smear_enable = true;
  bool split_enable = true;
  double lambda_qcd = 0.1;        // GeV
  double jet_pt_nominal = 1000.0; // GeV; reconstructs absolute particle pt
  double split_fraction_min = 0.25;
  double split_fraction_max = 0.75;
  int max_splits = 6;
  double mask_ratio_min = 0.0;
  double mask_ratio_max = 0.5;

  void validate() const;
};

/// Rigid rotation of valid particles' (eta_rel, phi_rel) about the jet axis.
Jet rotate(const Jet& j, double angle);

/// Shifts eta and phi of each valid particle independently by Gaussian noise
/// with variance lambda_qcd / (pt_rel * jet_pt_nominal).
Jet smear(const Jet& j, Rng& rng, const AugmentConfig& cfg);

/// Performs s ~ U{0..min(max_splits, free slots)} collinear splits. Each split
/// picks a valid particle with probability proportional to pt_rel and replaces
/// it with two collinear daughters carrying fractions f and 1-f of its pt.
/// Full jets (30 valid) pass through unchanged; total pt_rel is conserved
/// exactly.
Jet collinear_split(const Jet& j, Rng& rng, const AugmentConfig& cfg);

/// rotate -> smear -> split with independent draws from `rng`.
Jet make_view(const Jet& j, Rng& rng, const AugmentConfig& cfg);

/// Shuffles the valid particles, accumulates pt_rel until it crosses
/// target_ratio * total, and masks whichever of the two bracketing prefixes is
/// closer to the target (ties prefer the smaller one). At least one particle
/// is masked whenever target_ratio > 0. Returns one {0,1} entry per slot.
std::vector<int> momentum_aware_mask(const Jet& j, double target_ratio, Rng& rng);

struct ViewPair {
  Jet view_u, view_v;
  std::vector<int> mask_u, mask_v;
  double target_ratio_u = 0.0, target_ratio_v = 0.0;
};

/// Two augmented views of one jet with their masks; each view consumes its own
/// stream so u and v are independent.
ViewPair make_view_pair(const Jet& j, Rng& rng_u, Rng& rng_v, const AugmentConfig& cfg);

}  // namespace jbot
