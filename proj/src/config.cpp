#include <jbot/config.hpp>

#include <jbot/jet.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace jbot {
namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& v) {
  std::size_t pos = 0;
  double x;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("trailing characters in number '" + v + "'");
  return x;
}

long parse_long(const std::string& v) {
  std::size_t pos = 0;
  long x;
  try {
    x = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected an integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("trailing characters in integer '" + v + "'");
  return x;
}

std::uint64_t parse_u64(const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected an unsigned integer, got '" + v + "'");
  }
  if (pos != v.size() || (!v.empty() && v[0] == '-'))
    throw ConfigError("expected an unsigned integer, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(v);
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (!v.empty() && v.back() == ',') out.push_back("");
  return out;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  net.validate();
  distill.validate();
  aug.validate();
  bool real = !features.empty() || !labels.empty();
  bool synth = synthetic_classes > 0 || synthetic_count > 0;
  if (real && synth)
    throw ConfigError("config: features/labels and synthetic_* are mutually exclusive");
  if (!real && !synth)
    throw ConfigError("config: set features+labels or synthetic_classes+synthetic_count");
  if (real && (features.empty() || labels.empty()))
    throw ConfigError("config: features and labels must both be set");
  if (synth && (synthetic_classes < 1 || synthetic_count < 1))
    throw ConfigError("config: synthetic_classes and synthetic_count must both be positive");
  double fsum = 0;
  for (double f : split_fractions) {
    if (f <= 0) throw ConfigError("config: split_fractions must be positive");
    fsum += f;
  }
  if (std::abs(fsum - 1.0) > 1e-9) throw ConfigError("config: split_fractions must sum to 1");
  std::set<int> seen;
  for (int c : class_filter) {
    if (c < 0) throw ConfigError("config: class_filter entries must be non-negative");
    if (!seen.insert(c).second)
      throw ConfigError("config: duplicate class " + std::to_string(c) + " in class_filter");
  }
  if (checkpoint_every < 0) throw ConfigError("config: checkpoint_every must be non-negative");
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  struct Entry {
    int line;
    std::string key, value;
  };
  std::vector<Entry> entries;
  std::map<std::string, int> first_line;
  std::stringstream ss(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::string line = trim(raw);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail(origin, line_no, "expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(origin, line_no, "empty key");
    auto [it, inserted] = first_line.emplace(key, line_no);
    if (!inserted)
      fail(origin, line_no,
           "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    entries.push_back({line_no, key, value});
  }

  RunConfig c;
  // The preset establishes defaults; every other key overrides on top of it,
  // regardless of where the preset line appears in the file.
  for (const auto& e : entries) {
    if (e.key != "preset") continue;
    if (e.value != "small" && e.value != "base")
      fail(origin, e.line, "preset must be 'small' or 'base', got '" + e.value + "'");
    c.preset = e.value;
    c.net = NetworkConfig::preset(e.value);
  }

  for (const auto& e : entries) {
    const std::string& k = e.key;
    const std::string& v = e.value;
    try {
      if (k == "preset") {
      } else if (k == "d_model") {
        c.net.d_model = parse_long(v);
      } else if (k == "n_blocks") {
        c.net.n_blocks = parse_long(v);
      } else if (k == "n_heads") {
        c.net.n_heads = parse_long(v);
      } else if (k == "dropout") {
        c.net.dropout = parse_double(v);
      } else if (k == "final_layer_norm") {
        c.net.final_layer_norm = parse_bool(v);
      } else if (k == "tau_teacher") {
        c.distill.tau_teacher = parse_double(v);
      } else if (k == "tau_student") {
        c.distill.tau_student = parse_double(v);
      } else if (k == "tau_center") {
        c.distill.tau_center = parse_double(v);
      } else if (k == "ema_start") {
        c.distill.ema_start = parse_double(v);
      } else if (k == "ema_end") {
        c.distill.ema_end = parse_double(v);
      } else if (k == "koleo_lambda") {
        c.distill.koleo_lambda = parse_double(v);
      } else if (k == "koleo_space") {
        c.distill.koleo_space = v;
      } else if (k == "base_lr") {
        c.distill.base_lr = parse_double(v);
      } else if (k == "lr_ref_batch") {
        c.distill.lr_ref_batch = parse_long(v);
      } else if (k == "warmup_epochs") {
        c.distill.warmup_epochs = parse_long(v);
      } else if (k == "lr_schedule") {
        c.distill.lr_schedule = v;
      } else if (k == "batch_size") {
        c.distill.batch_size = parse_long(v);
      } else if (k == "weight_decay") {
        c.distill.weight_decay = parse_double(v);
      } else if (k == "epochs") {
        c.distill.epochs = parse_long(v);
      } else if (k == "rotate") {
        c.aug.rotate_enable = parse_bool(v);
      } else if (k == "smear") {
        c.aug.smear_enable = parse_bool(v);
      } else if (k == "split") {
        c.aug.split_enable = parse_bool(v);
      } else if (k == "lambda_qcd") {
        c.aug.lambda_qcd = parse_double(v);
      } else if (k == "jet_pt_nominal") {
        c.aug.jet_pt_nominal = parse_double(v);
      } else if (k == "split_fraction_min") {
        c.aug.split_fraction_min = parse_double(v);
      } else if (k == "split_fraction_max") {
        c.aug.split_fraction_max = parse_double(v);
      } else if (k == "max_splits") {
        c.aug.max_splits = static_cast<int>(parse_long(v));
      } else if (k == "mask_ratio_min") {
        c.aug.mask_ratio_min = parse_double(v);
      } else if (k == "mask_ratio_max") {
        c.aug.mask_ratio_max = parse_double(v);
      } else if (k == "features") {
        c.features = v;
      } else if (k == "labels") {
        c.labels = v;
      } else if (k == "synthetic_classes") {
        c.synthetic_classes = static_cast<int>(parse_long(v));
      } else if (k == "synthetic_count") {
        c.synthetic_count = parse_long(v);
      } else if (k == "class_filter") {
        c.class_filter.clear();
        for (const auto& item : split_csv(v)) c.class_filter.push_back((int)parse_long(item));
      } else if (k == "split_fractions") {
        auto parts = split_csv(v);
        if (parts.size() != 3)
          throw ConfigError("expected three comma-separated fractions, got '" + v + "'");
        for (int i = 0; i < 3; ++i) c.split_fractions[i] = parse_double(parts[i]);
      } else if (k == "seed") {
        c.seed = parse_u64(v);
      } else if (k == "out_dir") {
        c.out_dir = v;
      } else if (k == "checkpoint_every") {
        c.checkpoint_every = parse_long(v);
      } else if (k == "export_splits") {
        c.export_splits = parse_bool(v);
      } else {
        fail(origin, e.line, "unknown key '" + k + "'");
      }
    } catch (const ConfigError& err) {
      std::string what = err.what();
      if (what.rfind(origin + ":", 0) == 0) throw;  // already carries a location
      fail(origin, e.line, "key '" + k + "': " + what);
    }
  }
  return c;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str(), path);
}

void write_config_snapshot(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config snapshot '" + path + "'");
  out << "preset = " << c.preset << "\n";
  out << "d_model = " << c.net.d_model << "\n";
  out << "n_blocks = " << c.net.n_blocks << "\n";
  out << "n_heads = " << c.net.n_heads << "\n";
  out << "dropout = " << fmt(c.net.dropout) << "\n";
  out << "final_layer_norm = " << (c.net.final_layer_norm ? "true" : "false") << "\n";
  out << "tau_teacher = " << fmt(c.distill.tau_teacher) << "\n";
  out << "tau_student = " << fmt(c.distill.tau_student) << "\n";
  out << "tau_center = " << fmt(c.distill.tau_center) << "\n";
  out << "ema_start = " << fmt(c.distill.ema_start) << "\n";
  out << "ema_end = " << fmt(c.distill.ema_end) << "\n";
  out << "koleo_lambda = " << fmt(c.distill.koleo_lambda) << "\n";
  out << "koleo_space = " << c.distill.koleo_space << "\n";
  out << "base_lr = " << fmt(c.distill.base_lr) << "\n";
  out << "lr_ref_batch = " << c.distill.lr_ref_batch << "\n";
  out << "warmup_epochs = " << c.distill.warmup_epochs << "\n";
  out << "lr_schedule = " << c.distill.lr_schedule << "\n";
  out << "batch_size = " << c.distill.batch_size << "\n";
  out << "weight_decay = " << fmt(c.distill.weight_decay) << "\n";
  out << "epochs = " << c.distill.epochs << "\n";
  out << "rotate = " << (c.aug.rotate_enable ? "true" : "false") << "\n";
  out << "smear = " << (c.aug.smear_enable ? "true" : "false") << "\n";
  out << "split = " << (c.aug.split_enable ? "true" : "false") << "\n";
  out << "lambda_qcd = " << fmt(c.aug.lambda_qcd) << "\n";
  out << "jet_pt_nominal = " << fmt(c.aug.jet_pt_nominal) << "\n";
  out << "split_fraction_min = " << fmt(c.aug.split_fraction_min) << "\n";
  out << "split_fraction_max = " << fmt(c.aug.split_fraction_max) << "\n";
  out << "max_splits = " << c.aug.max_splits << "\n";
  out << "mask_ratio_min = " << fmt(c.aug.mask_ratio_min) << "\n";
  out << "mask_ratio_max = " << fmt(c.aug.mask_ratio_max) << "\n";
  if (!c.features.empty()) out << "features = " << c.features << "\n";
  if (!c.labels.empty()) out << "labels = " << c.labels << "\n";
  if (c.synthetic_classes > 0) out << "synthetic_classes = " << c.synthetic_classes << "\n";
  if (c.synthetic_count > 0) out << "synthetic_count = " << c.synthetic_count << "\n";
  if (!c.class_filter.empty()) {
    out << "class_filter = ";
    for (std::size_t i = 0; i < c.class_filter.size(); ++i)
      out << (i ? "," : "") << c.class_filter[i];
    out << "\n";
  }
  out << "split_fractions = " << fmt(c.split_fractions[0]) << "," << fmt(c.split_fractions[1])
      << "," << fmt(c.split_fractions[2]) << "\n";
  out << "seed = " << c.seed << "\n";
  if (!c.out_dir.empty()) out << "out_dir = " << c.out_dir << "\n";
  out << "checkpoint_every = " << c.checkpoint_every << "\n";
  out << "export_splits = " << (c.export_splits ? "true" : "false") << "\n";
  if (!out) throw ConfigError("failed writing config snapshot '" + path + "'");
}

JetDataset load_run_dataset(const RunConfig& c) {
  JetDataset d;
  if (c.synthetic_classes > 0) {
    d = generate_synthetic(default_synthetic_spec(c.synthetic_classes), c.synthetic_count, c.seed);
  } else {
    d = load_npy_dataset(c.features, c.labels);
  }
  if (c.class_filter.empty()) return d;

  std::vector<int> keep = c.class_filter;
  std::sort(keep.begin(), keep.end());
  std::vector<int> remap(d.n_classes, -1);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] >= d.n_classes)
      throw ConfigError("class_filter selects class " + std::to_string(keep[i]) +
                        " but the dataset has " + std::to_string(d.n_classes) + " classes");
    remap[keep[i]] = static_cast<int>(i);
  }
  JetDataset f;
  f.n_classes = static_cast<int>(keep.size());
  for (auto& j : d.jets) {
    if (remap[j.label] < 0) continue;
    j.label = remap[j.label];
    f.jets.push_back(std::move(j));
  }
  if (f.jets.empty()) throw ConfigError("class_filter removed every jet");
  return f;
}

}  // namespace jbot
