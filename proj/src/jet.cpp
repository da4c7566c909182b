#include <jbot/jet.hpp>
#include <jbot/npy.hpp>
#include <jbot/rng.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace jbot {

void canonicalize(Jet& j) {
  Mat<double> out = Mat<double>::Zero(kMaxParticles, kFeatures);
  long at = 0;
  for (long i = 0; i < kMaxParticles; ++i)
    if (j.p(i, kValid) > 0.5) {
      out.row(at) = j.p.row(i);
      out(at, kValid) = 1.0;
      ++at;
    }
  j.p = out;
}

void validate_jet(const Jet& j, const std::string& where) {
  bool seen_pad = false;
  for (long i = 0; i < kMaxParticles; ++i) {
    for (long c = 0; c < kFeatures; ++c)
      if (!std::isfinite(j.p(i, c)))
        throw DataError(where + ": non-finite feature at particle " + std::to_string(i));
    double v = j.p(i, kValid);
    if (v != 0.0 && v != 1.0)
      throw DataError(where + ": valid flag must be 0 or 1 at particle " + std::to_string(i));
    if (v == 1.0) {
      if (seen_pad)
        throw DataError(where + ": valid particle after padding at particle " + std::to_string(i));
      if (j.p(i, kPt) <= 0.0)
        throw DataError(where + ": non-positive pt_rel on valid particle " + std::to_string(i));
    } else {
      seen_pad = true;
      for (long c = 0; c < kFeatures; ++c)
        if (j.p(i, c) != 0.0)
          throw DataError(where + ": nonzero feature on padded particle " + std::to_string(i));
    }
  }
}

JetDataset load_npy_dataset(const std::string& features_path, const std::string& labels_path) {
  std::vector<long> fshape, lshape;
  std::vector<double> feats = npy::load_f64(features_path, fshape);
  std::vector<std::int64_t> labels = npy::load_i64(labels_path, lshape);

  if (fshape.size() != 3 || fshape[2] != kFeatures)
    throw DataError("load_npy_dataset: features must have shape (num_jets, particles, 4), got rank " +
                    std::to_string(fshape.size()));
  long n = fshape[0], np = fshape[1];
  if (np < 1 || np > kMaxParticles)
    throw DataError("load_npy_dataset: particle dimension " + std::to_string(np) +
                    " exceeds capacity " + std::to_string(kMaxParticles));
  if (lshape.size() != 1)
    throw DataError("load_npy_dataset: labels must be one-dimensional");
  if (lshape[0] != n)
    throw DataError("load_npy_dataset: " + std::to_string(n) + " jets but " +
                    std::to_string(lshape[0]) + " labels");

  JetDataset d;
  d.jets.reserve(static_cast<std::size_t>(n));
  std::int64_t max_label = -1;
  for (long i = 0; i < n; ++i) {
    std::int64_t lab = labels[static_cast<std::size_t>(i)];
    if (lab < 0)
      throw DataError("load_npy_dataset: jet " + std::to_string(i) + ": unknown label id " +
                      std::to_string(lab));
    max_label = std::max(max_label, lab);

    Jet j;
    j.label = static_cast<int>(lab);
    for (long k = 0; k < np; ++k)
      for (long c = 0; c < kFeatures; ++c)
        j.p(k, c) = feats[static_cast<std::size_t>((i * np + k) * kFeatures + c)];

    const std::string where = "load_npy_dataset: jet " + std::to_string(i);
    for (long k = 0; k < np; ++k) {
      for (long c = 0; c < kFeatures; ++c)
        if (!std::isfinite(j.p(k, c)))
          throw DataError(where + ": non-finite feature at particle " + std::to_string(k));
      double v = j.p(k, kValid);
      if (v != 0.0 && v != 1.0)
        throw DataError(where + ": valid flag must be 0 or 1 at particle " + std::to_string(k));
      if (v == 1.0 && j.p(k, kPt) <= 0.0)
        throw DataError(where + ": non-positive pt_rel on valid particle " + std::to_string(k));
    }
    canonicalize(j);
    d.jets.push_back(std::move(j));
  }
  d.n_classes = static_cast<int>(max_label + 1);
  return d;
}

void save_npy_dataset(const JetDataset& d, const std::string& features_path,
                      const std::string& labels_path) {
  long n = static_cast<long>(d.jets.size());
  std::vector<double> feats(static_cast<std::size_t>(n * kMaxParticles * kFeatures));
  std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const Jet& j = d.jets[static_cast<std::size_t>(i)];
    labels[static_cast<std::size_t>(i)] = j.label;
    for (long k = 0; k < kMaxParticles; ++k)
      for (long c = 0; c < kFeatures; ++c)
        feats[static_cast<std::size_t>((i * kMaxParticles + k) * kFeatures + c)] = j.p(k, c);
  }
  npy::save_f64(features_path, {n, kMaxParticles, kFeatures}, feats.data());
  npy::save_i64(labels_path, {n}, labels.data());
}

void write_dataset_manifest(const std::string& path, const JetDataset& d,
                            const std::vector<std::string>& class_names, std::uint64_t seed,
                            const std::string& features_path, const std::string& labels_path) {
  nlohmann::json m;
  m["num_jets"] = d.jets.size();
  m["num_classes"] = d.n_classes;
  m["class_counts"] = d.class_counts();
  m["class_names"] = class_names;
  m["seed"] = seed;
  m["features"] = features_path;
  m["labels"] = labels_path;
  std::ofstream f(path);
  if (!f) throw DataError("write_dataset_manifest: cannot open " + path);
  f << m.dump(2) << "\n";
}

std::array<JetDataset, 3> split_dataset(const JetDataset& d, const std::array<double, 3>& fractions,
                                        std::uint64_t seed) {
  double total = 0;
  for (double f : fractions) {
    if (f <= 0) throw DataError("split_dataset: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw DataError("split_dataset: fractions must sum to 1, got " + std::to_string(total));

  std::array<JetDataset, 3> out;
  for (auto& s : out) s.n_classes = d.n_classes;

  for (int cls = 0; cls < d.n_classes; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.jets.size(); ++i)
      if (d.jets[i].label == cls) idx.push_back(i);
    Rng rng = Rng::stream(seed, "split", static_cast<std::uint64_t>(cls));
    rng.shuffle(idx);

    long n = static_cast<long>(idx.size());
    // largest-remainder rounding of n * fraction per split
    std::array<long, 3> take{};
    std::array<double, 3> rem{};
    long assigned = 0;
    for (int s = 0; s < 3; ++s) {
      double want = n * fractions[static_cast<std::size_t>(s)];
      take[static_cast<std::size_t>(s)] = static_cast<long>(std::floor(want));
      rem[static_cast<std::size_t>(s)] = want - std::floor(want);
      assigned += take[static_cast<std::size_t>(s)];
    }
    while (assigned < n) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (rem[static_cast<std::size_t>(s)] > rem[static_cast<std::size_t>(best)]) best = s;
      ++take[static_cast<std::size_t>(best)];
      rem[static_cast<std::size_t>(best)] = -1;
      ++assigned;
    }

    std::size_t at = 0;
    for (int s = 0; s < 3; ++s)
      for (long k = 0; k < take[static_cast<std::size_t>(s)]; ++k)
        out[static_cast<std::size_t>(s)].jets.push_back(d.jets[idx[at++]]);
  }
  return out;
}

}  // namespace jbot
