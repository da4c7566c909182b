#pragma once

// Independent reference implementations the tests compare against: central
// finite differences, scalar-loop loss recomputations, prefix-scan masking,
// pair-counting AUC, threshold-scan efficiencies, and greedy pt clustering.
// Everything here is plain loops over doubles, no tensor graph involved.

#include <jbot/augment.hpp>
#include <jbot/jet.hpp>
#include <jbot/rng.hpp>
#include <jbot/tensor.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

using jbot::Jet;
using jbot::Mat;

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

using ScalarFn = std::function<double(const std::vector<Mat<double>>&)>;

inline Mat<double> fd_grad(const std::vector<Mat<double>>& xs, std::size_t which,
                           const ScalarFn& f, double h = 1e-5) {
  std::vector<Mat<double>> w = xs;
  Mat<double> g(xs[which].rows(), xs[which].cols());
  for (long r = 0; r < g.rows(); ++r)
    for (long c = 0; c < g.cols(); ++c) {
      w[which](r, c) = xs[which](r, c) + h;
      double fp = f(w);
      w[which](r, c) = xs[which](r, c) - h;
      double fm = f(w);
      w[which](r, c) = xs[which](r, c);
      g(r, c) = (fp - fm) / (2 * h);
    }
  return g;
}

inline double max_rel_err(const Mat<double>& a, const Mat<double>& b) {
  double m = 0;
  for (long r = 0; r < a.rows(); ++r)
    for (long c = 0; c < a.cols(); ++c) {
      double denom = std::max({1.0, std::abs(a(r, c)), std::abs(b(r, c))});
      m = std::max(m, std::abs(a(r, c) - b(r, c)) / denom);
    }
  return m;
}

// ---------------------------------------------------------------------------
// scalar-loop losses
// ---------------------------------------------------------------------------

/// softmax((x - c) / tau) over one row, max-stabilized, plain loops.
inline std::vector<double> softmax_loop(const std::vector<double>& logits,
                                        const std::vector<double>& center, double tau) {
  std::size_t n = logits.size();
  std::vector<double> z(n);
  double mx = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = (logits[i] - (center.empty() ? 0.0 : center[i])) / tau;
    mx = std::max(mx, z[i]);
  }
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = std::exp(z[i] - mx);
    sum += z[i];
  }
  for (std::size_t i = 0; i < n; ++i) z[i] /= sum;
  return z;
}

/// -sum_i t_i log max(softmax(s/tau)_i, floor) for one row.
inline double ce_loop(const std::vector<double>& t_probs, const std::vector<double>& s_logits,
                      double tau, double floor) {
  std::vector<double> p = softmax_loop(s_logits, {}, tau);
  double loss = 0;
  for (std::size_t i = 0; i < p.size(); ++i) loss -= t_probs[i] * std::log(std::max(p[i], floor));
  return loss;
}

/// KoLeo by loops: l2-normalize rows (with the graph's eps-softened norm),
/// nearest off-diagonal Euclidean distance per row, -mean log(d + eps).
inline double koleo_loop(const Mat<double>& rows, double eps, double norm_eps = 1e-12) {
  long n = rows.rows(), d = rows.cols();
  std::vector<std::vector<double>> z(static_cast<std::size_t>(n),
                                     std::vector<double>(static_cast<std::size_t>(d)));
  for (long i = 0; i < n; ++i) {
    double sq = 0;
    for (long c = 0; c < d; ++c) sq += rows(i, c) * rows(i, c);
    double nu = std::sqrt(sq + norm_eps * norm_eps);
    for (long c = 0; c < d; ++c) z[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
        rows(i, c) / nu;
  }
  double acc = 0;
  for (long i = 0; i < n; ++i) {
    double best = 1e300;
    for (long j = 0; j < n; ++j) {
      if (j == i) continue;
      double sq = 0;
      for (long c = 0; c < d; ++c) {
        double t = z[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] -
                   z[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        sq += t * t;
      }
      best = std::min(best, std::sqrt(sq));
    }
    acc += std::log(best + eps);
  }
  return -acc / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// momentum-aware masking
// ---------------------------------------------------------------------------

/// Replays the shuffle with a copy of the rng, then picks the best of the two
/// candidate prefixes by a full prefix-sum scan.
inline std::vector<int> mask_oracle(const Jet& j, double target_ratio, jbot::Rng rng) {
  std::vector<int> mask(static_cast<std::size_t>(jbot::kMaxParticles), 0);
  if (target_ratio <= 0) return mask;
  std::vector<long> valid;
  for (long i = 0; i < jbot::kMaxParticles; ++i)
    if (j.p(i, jbot::kValid) > 0.5) valid.push_back(i);
  if (valid.empty()) return mask;
  rng.shuffle(valid);

  std::size_t n = valid.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t m = 0; m < n; ++m) prefix[m + 1] = prefix[m] + j.p(valid[m], jbot::kPt);
  double target = target_ratio * prefix[n];

  std::size_t crossing = n + 1;
  for (std::size_t m = 1; m <= n; ++m)
    if (prefix[m] >= target) {
      crossing = m;
      break;
    }
  std::size_t take;
  if (crossing > n) {
    take = n;
  } else {
    double below = std::abs(prefix[crossing - 1] - target);
    double with = std::abs(prefix[crossing] - target);
    take = (below <= with) ? crossing - 1 : crossing;
  }
  if (take == 0) take = 1;
  for (std::size_t m = 0; m < take; ++m) mask[static_cast<std::size_t>(valid[m])] = 1;
  return mask;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

/// AUC by exhaustive signal-background pair counting (ties count 1/2).
inline double auc_pairs(const std::vector<double>& scores, const std::vector<int>& is_signal) {
  double wins = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!is_signal[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (is_signal[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

/// Largest eps_s with eps_b <= target over all achievable thresholds
/// (classification rule: score >= threshold).
inline double eps_scan(const std::vector<double>& scores, const std::vector<int>& is_signal,
                       double target_eps_b) {
  long ns = 0, nb = 0;
  for (int s : is_signal) (s ? ns : nb)++;
  double best = 0;
  std::vector<double> thresholds = scores;
  thresholds.push_back(std::numeric_limits<double>::infinity());
  for (double t : thresholds) {
    long cs = 0, cb = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) (is_signal[i] ? cs : cb)++;
    double eb = nb ? static_cast<double>(cb) / static_cast<double>(nb) : 0.0;
    double es = ns ? static_cast<double>(cs) / static_cast<double>(ns) : 0.0;
    if (eb <= target_eps_b) best = std::max(best, es);
  }
  return best;
}

// ---------------------------------------------------------------------------
// substructure
// ---------------------------------------------------------------------------

/// Greedy pt-weighted clustering: particles in descending pt seed a cluster or
/// join the nearest centroid within `radius`. Returns (pt_share, eta, phi) of
/// clusters holding at least `min_share` of the jet pt, hardest first.
inline std::vector<std::array<double, 3>> pt_clusters(const Jet& j, double radius,
                                                      double min_share) {
  struct Cl {
    double pt = 0, eta = 0, phi = 0;
  };
  std::vector<std::array<double, 3>> parts;
  double total = 0;
  for (long i = 0; i < jbot::kMaxParticles; ++i)
    if (j.p(i, jbot::kValid) > 0.5) {
      parts.push_back({j.p(i, jbot::kPt), j.p(i, jbot::kEta), j.p(i, jbot::kPhi)});
      total += j.p(i, jbot::kPt);
    }
  std::sort(parts.begin(), parts.end(),
            [](const auto& a, const auto& b) { return a[0] > b[0]; });
  std::vector<Cl> cls;
  for (const auto& p : parts) {
    Cl* best = nullptr;
    double best_d = radius;
    for (auto& c : cls) {
      double d = std::hypot(p[1] - c.eta, p[2] - c.phi);
      if (d <= best_d) {
        best_d = d;
        best = &c;
      }
    }
    if (!best) {
      cls.push_back({p[0], p[1], p[2]});
    } else {
      double w = best->pt + p[0];
      best->eta = (best->eta * best->pt + p[1] * p[0]) / w;
      best->phi = (best->phi * best->pt + p[2] * p[0]) / w;
      best->pt = w;
    }
  }
  std::vector<std::array<double, 3>> out;
  for (const auto& c : cls)
    if (c.pt >= min_share * total) out.push_back({c.pt / total, c.eta, c.phi});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a[0] > b[0]; });
  return out;
}

// ---------------------------------------------------------------------------
// jet builders
// ---------------------------------------------------------------------------

inline Jet make_jet(const std::vector<std::array<double, 3>>& particles, int label = 0) {
  Jet j;
  j.p = Mat<double>::Zero(jbot::kMaxParticles, jbot::kFeatures);
  j.label = label;
  for (std::size_t i = 0; i < particles.size(); ++i) {
    j.p(static_cast<long>(i), jbot::kEta) = particles[i][0];
    j.p(static_cast<long>(i), jbot::kPhi) = particles[i][1];
    j.p(static_cast<long>(i), jbot::kPt) = particles[i][2];
    j.p(static_cast<long>(i), jbot::kValid) = 1.0;
  }
  return j;
}

inline Jet random_jet(jbot::Rng& rng, int n_valid, int label = 0) {
  std::vector<std::array<double, 3>> ps;
  for (int i = 0; i < n_valid; ++i)
    ps.push_back({rng.normal() * 0.2, rng.normal() * 0.2, rng.uniform(0.01, 0.5)});
  return make_jet(ps, label);
}

}  // namespace oracle
