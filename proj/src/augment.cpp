#include <jbot/augment.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jbot {

void AugmentConfig::validate() const {
  if (lambda_qcd <= 0 || jet_pt_nominal <= 0)
    throw DataError("AugmentConfig: energy scales must be positive");
  if (!(split_fraction_min > 0 && split_fraction_max < 1 &&
        split_fraction_min < split_fraction_max))
    throw DataError("AugmentConfig: split fraction range must be inside (0, 1)");
  if (max_splits < 0) throw DataError("AugmentConfig: max_splits must be non-negative");
  if (!(mask_ratio_min >= 0 && mask_ratio_max <= 0.5 && mask_ratio_min <= mask_ratio_max))
    throw DataError("AugmentConfig: mask ratio range must be inside [0, 0.5]");
}

Jet rotate(const Jet& j, double angle) {
  Jet out = j;
  double c = std::cos(angle), s = std::sin(angle);
  for (long i = 0; i < kMaxParticles; ++i) {
    if (out.p(i, kValid) <= 0.5) continue;
    double e = j.p(i, kEta), f = j.p(i, kPhi);
    out.p(i, kEta) = c * e - s * f;
    out.p(i, kPhi) = s * e + c * f;
  }
  return out;
}

Jet smear(const Jet& j, Rng& rng, const AugmentConfig& cfg) {
  Jet out = j;
  for (long i = 0; i < kMaxParticles; ++i) {
    if (out.p(i, kValid) <= 0.5) continue;
    double pt_abs = out.p(i, kPt) * cfg.jet_pt_nominal;
    if (pt_abs <= 0) throw DataError("smear: valid particle " + std::to_string(i) + " has pt_rel 0");
    double sigma = std::sqrt(cfg.lambda_qcd / pt_abs);
    out.p(i, kEta) += sigma * rng.normal();
    out.p(i, kPhi) += sigma * rng.normal();
  }
  return out;
}

Jet collinear_split(const Jet& j, Rng& rng, const AugmentConfig& cfg) {
  Jet out = j;
  long nv = out.valid_count();
  if (nv >= kMaxParticles || nv == 0) return out;
  long free_slots = kMaxParticles - nv;
  long s = rng.uniform_int(std::min<long>(cfg.max_splits, free_slots) + 1);
  for (long split = 0; split < s; ++split) {
    double total = 0;
    for (long i = 0; i < nv; ++i) total += out.p(i, kPt);
    double u = rng.uniform() * total;
    long pick = nv - 1;
    double cum = 0;
    for (long i = 0; i < nv; ++i) {
      cum += out.p(i, kPt);
      if (u < cum) {
        pick = i;
        break;
      }
    }
    double f = rng.uniform(cfg.split_fraction_min, cfg.split_fraction_max);
    double p = out.p(pick, kPt);
    out.p(pick, kPt) = f * p;
    out.p(nv, kEta) = out.p(pick, kEta);
    out.p(nv, kPhi) = out.p(pick, kPhi);
    out.p(nv, kPt) = p - f * p;
    out.p(nv, kValid) = 1.0;
    ++nv;
  }
  return out;
}

Jet make_view(const Jet& j, Rng& rng, const AugmentConfig& cfg) {
  Jet out = j;
  if (cfg.rotate_enable) out = rotate(out, rng.uniform(-M_PI, M_PI));
  if (cfg.smear_enable) out = smear(out, rng, cfg);
  if (cfg.split_enable) out = collinear_split(out, rng, cfg);
  return out;
}

std::vector<int> momentum_aware_mask(const Jet& j, double target_ratio, Rng& rng) {
  std::vector<int> mask(kMaxParticles, 0);
  if (target_ratio <= 0) return mask;

  std::vector<long> valid;
  for (long i = 0; i < kMaxParticles; ++i)
    if (j.p(i, kValid) > 0.5) valid.push_back(i);
  if (valid.empty()) return mask;
  rng.shuffle(valid);

  double total = 0;
  for (long i : valid) total += j.p(i, kPt);
  double target = target_ratio * total;

  std::size_t crossing = valid.size();
  double cum = 0, below = 0;
  for (std::size_t k = 0; k < valid.size(); ++k) {
    below = cum;
    cum += j.p(valid[k], kPt);
    if (cum >= target) {
      crossing = k;
      break;
    }
  }
  std::size_t take;
  if (crossing == valid.size()) {
    take = valid.size();  // never crossed; mask everything accumulated
  } else {
    // prefix just below the target vs. prefix including the crossing particle
    double with = cum;
    take = (std::abs(below - target) <= std::abs(with - target)) ? crossing : crossing + 1;
  }
  if (take == 0) take = 1;
  for (std::size_t k = 0; k < take; ++k) mask[static_cast<std::size_t>(valid[k])] = 1;
  return mask;
}

ViewPair make_view_pair(const Jet& j, Rng& rng_u, Rng& rng_v, const AugmentConfig& cfg) {
  ViewPair vp;
  vp.target_ratio_u = rng_u.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);
  vp.target_ratio_v = rng_v.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);
  vp.view_u = make_view(j, rng_u, cfg);
  vp.view_v = make_view(j, rng_v, cfg);
  vp.mask_u = momentum_aware_mask(vp.view_u, vp.target_ratio_u, rng_u);
  vp.mask_v = momentum_aware_mask(vp.view_v, vp.target_ratio_v, rng_v);
  return vp;
}

}  // namespace jbot
