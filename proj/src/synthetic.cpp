#include <jbot/synthetic.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jbot {

namespace {

struct Particle {
  double eta, phi, pt;
};

// Prong centers: uniform directions with |c| in [spread/2 + 2w, spread),
// rejected until pairwise separation >= spread. Falls back to an evenly
// spaced ring at 0.75*spread, which satisfies both bounds for <= 3 prongs.
std::vector<std::pair<double, double>> place_prongs(int k, double spread, double width, Rng& rng) {
  if (k == 1) {
    double r = 0.9 * spread * std::sqrt(rng.uniform());
    double th = rng.uniform(-M_PI, M_PI);
    return {{r * std::cos(th), r * std::sin(th)}};
  }
  double lo = 0.5 * spread + 2.0 * width;
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::pair<double, double>> c;
    for (int i = 0; i < k; ++i) {
      double r = lo + (spread - lo) * rng.uniform();
      double th = rng.uniform(-M_PI, M_PI);
      c.emplace_back(r * std::cos(th), r * std::sin(th));
    }
    bool ok = true;
    for (int i = 0; i < k && ok; ++i)
      for (int j = i + 1; j < k; ++j) {
        double dx = c[i].first - c[j].first, dy = c[i].second - c[j].second;
        if (std::sqrt(dx * dx + dy * dy) < spread) {
          ok = false;
          break;
        }
      }
    if (ok) return c;
  }
  double phase = rng.uniform(-M_PI, M_PI);
  std::vector<std::pair<double, double>> c;
  for (int i = 0; i < k; ++i) {
    double th = phase + 2.0 * M_PI * i / k;
    c.emplace_back(0.75 * spread * std::cos(th), 0.75 * spread * std::sin(th));
  }
  return c;
}

Jet make_jet(const SyntheticClassSpec& cs, int label, Rng& rng) {
  int k = cs.prongs;
  auto centers = place_prongs(k, cs.spread, cs.prong_width, rng);

  // Hard raw budget 1.0 shared across prongs: a uniform floor keeps every
  // prong above ~0.45/k so each one survives as a distinct pt cluster.
  std::vector<double> shares = rng.dirichlet(k, 6.0);
  for (int i = 0; i < k; ++i) shares[static_cast<std::size_t>(i)] =
      0.45 / k + 0.55 * shares[static_cast<std::size_t>(i)];

  std::vector<Particle> parts;
  for (int i = 0; i < k; ++i) {
    double e = shares[static_cast<std::size_t>(i)];
    auto [cx, cy] = centers[static_cast<std::size_t>(i)];
    int nsat = cs.satellites;
    if (nsat <= 0) {
      parts.push_back({cx, cy, e});
      continue;
    }
    parts.push_back({cx, cy, 0.6 * e});
    std::vector<double> sat = rng.dirichlet(nsat, 2.0);
    for (int s = 0; s < nsat; ++s)
      parts.push_back({cx + cs.prong_width * rng.normal(), cy + cs.prong_width * rng.normal(),
                       std::max(0.4 * e * sat[static_cast<std::size_t>(s)], 1e-9)});
  }

  long hard = static_cast<long>(parts.size());
  long n_soft = std::min<long>(rng.poisson(cs.soft_mean), kMaxParticles - hard);
  for (long s = 0; s < n_soft; ++s) {
    double r = std::sqrt(rng.uniform());
    double th = rng.uniform(-M_PI, M_PI);
    double pt = std::max(-cs.soft_pt * std::log(1.0 - rng.uniform()), 1e-9);
    parts.push_back({r * std::cos(th), r * std::sin(th), pt});
  }

  double raw = 0;
  for (const auto& q : parts) raw += q.pt;
  double target = rng.uniform(0.85, 0.98);
  double scale = target / raw;
  for (auto& q : parts) q.pt *= scale;

  std::stable_sort(parts.begin(), parts.end(),
                   [](const Particle& a, const Particle& b) { return a.pt > b.pt; });

  Jet j;
  j.label = label;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    j.p(static_cast<long>(i), kEta) = parts[i].eta;
    j.p(static_cast<long>(i), kPhi) = parts[i].phi;
    j.p(static_cast<long>(i), kPt) = parts[i].pt;
    j.p(static_cast<long>(i), kValid) = 1.0;
  }
  return j;
}

}  // namespace

SyntheticSpec default_synthetic_spec(int n_classes) {
  SyntheticSpec spec;
  for (int i = 0; i < n_classes; ++i) {
    SyntheticClassSpec cs;
    cs.prongs = i % 3 + 1;
    spec.classes.push_back(cs);
  }
  return spec;
}

JetDataset generate_synthetic(const SyntheticSpec& spec, long count, std::uint64_t seed) {
  if (count <= 0) throw DataError("generate_synthetic: count must be positive");
  if (spec.classes.empty()) throw DataError("generate_synthetic: no classes defined");
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    const auto& cs = spec.classes[c];
    if (cs.prongs < 1 || cs.prongs > 3)
      throw DataError("generate_synthetic: class " + std::to_string(c) + ": unknown class id (" +
                      std::to_string(cs.prongs) + " prongs unsupported)");
    if (cs.spread <= 0 || cs.prong_width <= 0 || cs.soft_pt <= 0)
      throw DataError("generate_synthetic: class " + std::to_string(c) +
                      ": geometry parameters must be positive");
    long hard = static_cast<long>(cs.prongs) * (1 + std::max(cs.satellites, 0));
    if (hard > kMaxParticles)
      throw DataError("generate_synthetic: class " + std::to_string(c) +
                      ": prong particles exceed capacity");
  }

  JetDataset d;
  d.n_classes = static_cast<int>(spec.classes.size());
  d.jets.reserve(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    int label = static_cast<int>(i % d.n_classes);
    Rng rng = Rng::stream(seed, "datagen", static_cast<std::uint64_t>(i));
    d.jets.push_back(make_jet(spec.classes[static_cast<std::size_t>(label)], label, rng));
  }
  return d;
}

}  // namespace jbot
