#pragma once

// Key-value run configuration: presets expanding to the small/base
// architectures, strict unknown-key rejection with line diagnostics, and a
// snapshot writer whose output re-parses to an identical run.

#include <jbot/augment.hpp>
#include <jbot/distill.hpp>
#include <jbot/model.hpp>
#include <jbot/synthetic.hpp>

#include <array>
#include <string>
#include <vector>

namespace jbot {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string preset = "small";
  NetworkConfig net = NetworkConfig::preset("small");
  DistillConfig distill;
  AugmentConfig aug;

  std::string features, labels;  // real-data source
  int synthetic_classes = 0;     // synthetic source when > 0
  long synthetic_count = 0;
  std::vector<int> class_filter;  // keep-and-relabel; empty keeps all
  std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  std::string out_dir;
  long checkpoint_every = 0;  // epochs between mid-run checkpoints; 0 = final only
  bool export_splits = true;

  void validate() const;
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);

/// Fully resolved key dump; parsing it reproduces this config bit-exactly.
void write_config_snapshot(const std::string& path, const RunConfig& c);

/// Loads or generates the configured dataset and applies class_filter
/// (kept labels are re-indexed to 0..n-1 in ascending order).
JetDataset load_run_dataset(const RunConfig& c);

}  // namespace jbot
