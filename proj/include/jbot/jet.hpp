#pragma once

// Jet data model: fixed-capacity constituent table per jet, dataset container,
// .npy ingestion with validation, and the class-balanced splitter.

#include <jbot/tensor.hpp>

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace jbot {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// feature column layout
inline constexpr long kEta = 0;
inline constexpr long kPhi = 1;
inline constexpr long kPt = 2;
inline constexpr long kValid = 3;
inline constexpr long kMaxParticles = 30;
inline constexpr long kFeatures = 4;

struct Jet {
  Mat<double> p;  // kMaxParticles x kFeatures: (eta_rel, phi_rel, pt_rel, valid)
  int label = 0;

  Jet() : p(Mat<double>::Zero(kMaxParticles, kFeatures)) {}

  long valid_count() const {
    long n = 0;
    for (long i = 0; i < kMaxParticles; ++i) n += p(i, kValid) > 0.5 ? 1 : 0;
    return n;
  }
  double pt_total() const {
    double s = 0;
    for (long i = 0; i < kMaxParticles; ++i)
      if (p(i, kValid) > 0.5) s += p(i, kPt);
    return s;
  }
};

/// Moves valid particles to the front (stable) and zeroes padded slots.
void canonicalize(Jet& j);

/// Checks the Jet invariants, throwing DataError with `where` in the message.
void validate_jet(const Jet& j, const std::string& where);

struct JetDataset {
  std::vector<Jet> jets;
  int n_classes = 0;

  std::vector<long> class_counts() const {
    std::vector<long> c(static_cast<std::size_t>(n_classes), 0);
    for (const auto& j : jets) ++c[static_cast<std::size_t>(j.label)];
    return c;
  }
};

/// Reads a (num_jets, P, 4) float array (P <= 30; shorter jets are padded) and
/// a (num_jets,) integer label array. Jets come out canonicalized; any
/// non-finite feature, bad valid flag, or non-positive pt on a valid particle
/// is reported with the offending jet index.
JetDataset load_npy_dataset(const std::string& features_path, const std::string& labels_path);

/// Writes the canonical (N, 30, 4) float64 features and (N,) int64 labels.
void save_npy_dataset(const JetDataset& d, const std::string& features_path,
                      const std::string& labels_path);

/// Writes dataset.json next to the arrays: counts, class names, seed, paths.
void write_dataset_manifest(const std::string& path, const JetDataset& d,
                            const std::vector<std::string>& class_names, std::uint64_t seed,
                            const std::string& features_path, const std::string& labels_path);

/// Stratified split: per class, fractions are met to within one jet
/// (largest-remainder rounding); assignment is a seeded shuffle.
std::array<JetDataset, 3> split_dataset(const JetDataset& d, const std::array<double, 3>& fractions,
                                        std::uint64_t seed);

}  // namespace jbot
