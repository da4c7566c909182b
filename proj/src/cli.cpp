#include <jbot/cli.hpp>

#include <jbot/anomaly.hpp>
#include <jbot/config.hpp>
#include <jbot/downstream.hpp>
#include <jbot/npy.hpp>
#include <jbot/trainer.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

namespace jbot {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::ofstream open_text(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  return f;
}

std::vector<std::string> prong_names(const SyntheticSpec& spec) {
  std::vector<std::string> names;
  for (const auto& c : spec.classes) names.push_back(std::to_string(c.prongs) + "-prong");
  return names;
}

void save_embeddings(const std::string& dir, const EmbeddingSet& e) {
  std::vector<double> buf(static_cast<std::size_t>(e.vectors.size()));
  for (long r = 0; r < e.vectors.rows(); ++r)
    for (long c = 0; c < e.vectors.cols(); ++c)
      buf[static_cast<std::size_t>(r * e.vectors.cols() + c)] = e.vectors(r, c);
  npy::save_f64(dir + "/embeddings.npy", {e.vectors.rows(), e.vectors.cols()}, buf.data());
  std::vector<std::int64_t> lab(e.labels.begin(), e.labels.end());
  npy::save_i64(dir + "/labels.npy", {static_cast<long>(lab.size())}, lab.data());
}

json metrics_to_json(const ClassMetrics& m) {
  json per = json::array();
  for (std::size_t c = 0; c < m.auc.size(); ++c) {
    json e;
    e["class"] = c;
    e["auc"] = m.auc[c] ? json(*m.auc[c]) : json();
    e["eps_s_at_eps_b_1e-1"] = m.eps_s_1e1[c] ? json(*m.eps_s_1e1[c]) : json();
    e["eps_s_at_eps_b_1e-2"] = m.eps_s_1e2[c] ? json(*m.eps_s_1e2[c]) : json();
    per.push_back(e);
  }
  json out;
  out["accuracy"] = m.accuracy;
  out["per_class"] = per;
  return out;
}

void write_roc_csv(const std::string& path, const RocCurve& roc) {
  auto f = open_text(path);
  f << "threshold,signal_eff,background_eff\n";
  char buf[128];
  for (std::size_t i = 0; i < roc.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", roc.thresholds[i], roc.signal_eff[i],
                  roc.background_eff[i]);
    f << buf;
  }
}

void write_json(const std::string& path, const json& j) {
  auto f = open_text(path);
  f << j.dump(2) << "\n";
}

/// Per-class seeded subsample keeping ~fraction of each class (at least one).
JetDataset subsample_labels(const JetDataset& d, double fraction, std::uint64_t seed) {
  if (fraction >= 1.0) return d;
  if (fraction <= 0.0) throw std::runtime_error("label fraction must be in (0, 1]");
  std::vector<std::vector<long>> by_class(static_cast<std::size_t>(d.n_classes));
  for (long i = 0; i < static_cast<long>(d.jets.size()); ++i)
    by_class[static_cast<std::size_t>(d.jets[static_cast<std::size_t>(i)].label)].push_back(i);
  JetDataset out;
  out.n_classes = d.n_classes;
  std::vector<long> pick;
  for (int c = 0; c < d.n_classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (idx.empty()) continue;
    Rng rng = Rng::stream(seed, "ft-subset", static_cast<std::uint64_t>(c));
    rng.shuffle(idx);
    long keep = std::max<long>(1, std::lround(fraction * static_cast<double>(idx.size())));
    keep = std::min<long>(keep, static_cast<long>(idx.size()));
    pick.insert(pick.end(), idx.begin(), idx.begin() + keep);
  }
  std::sort(pick.begin(), pick.end());
  for (long i : pick) out.jets.push_back(d.jets[static_cast<std::size_t>(i)]);
  return out;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct GenerateArgs {
  int classes = 3;
  long count = 0;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_generate(const GenerateArgs& a) {
  SyntheticSpec spec = default_synthetic_spec(a.classes);
  JetDataset d = generate_synthetic(spec, a.count, a.seed);
  fs::create_directories(a.out);
  std::string fpath = a.out + "/features.npy", lpath = a.out + "/labels.npy";
  save_npy_dataset(d, fpath, lpath);
  write_dataset_manifest(a.out + "/dataset.json", d, prong_names(spec), a.seed, fpath, lpath);
  std::cout << "wrote " << d.jets.size() << " jets in " << d.n_classes << " classes to " << a.out
            << "\n";
}

struct PretrainArgs {
  std::string config;
  std::string out_override;
};

void cmd_pretrain(const PretrainArgs& a) {
  RunConfig c = parse_run_config(a.config);
  if (!a.out_override.empty()) c.out_dir = a.out_override;
  if (c.out_dir.empty()) throw ConfigError("no output directory: set out_dir or pass --out");
  c.validate();
  // Resolve the dataset before touching the filesystem so a bad path cannot
  // leave a partial run directory behind.
  JetDataset d = load_run_dataset(c);
  auto parts = split_dataset(d, c.split_fractions, c.seed);

  fs::create_directories(c.out_dir);
  write_config_snapshot(c.out_dir + "/config.txt", c);
  if (c.synthetic_classes > 0)
    write_dataset_manifest(c.out_dir + "/dataset.json", d,
                           prong_names(default_synthetic_spec(c.synthetic_classes)), c.seed, "",
                           "");
  if (c.export_splits) {
    fs::create_directories(c.out_dir + "/splits");
    const char* tag[3] = {"train", "val", "test"};
    for (int s = 0; s < 3; ++s)
      save_npy_dataset(parts[static_cast<std::size_t>(s)],
                       c.out_dir + "/splits/" + tag[s] + "_features.npy",
                       c.out_dir + "/splits/" + tag[s] + "_labels.npy");
  }
  PretrainResult r = pretrain<double>(parts[0], c.net, c.distill, c.aug, c.seed, c.out_dir,
                                      c.checkpoint_every, &std::cout);
  std::cout << "pretrain done: " << r.steps << " steps, final loss " << r.final_loss << "\n"
            << "student checkpoint: " << r.student_dir << "\n"
            << "teacher checkpoint: " << r.teacher_dir << "\n"
            << "metrics: " << r.metrics_path << "\n";
}

struct ProbeArgs {
  std::string checkpoint, train_features, train_labels, test_features, test_labels, out;
  std::string method = "knn";
  int k = 30;
  bool no_normalize = false;
};

void cmd_probe(const ProbeArgs& a) {
  if (a.method != "knn" && a.method != "linear")
    throw std::runtime_error("probe method must be 'knn' or 'linear', got '" + a.method + "'");
  ModelParams<double> P = load_checkpoint<double>(a.checkpoint);
  JetDataset train = load_npy_dataset(a.train_features, a.train_labels);
  JetDataset test = load_npy_dataset(a.test_features, a.test_labels);
  int n_classes = std::max(train.n_classes, test.n_classes);

  EmbeddingSet etr = embed_dataset(train, P);
  EmbeddingSet ete = embed_dataset(test, P);
  if (!a.no_normalize) {
    l2_normalize(etr);
    l2_normalize(ete);
  }
  ProbeResult r = a.method == "knn" ? knn_probe(etr, ete, a.k, n_classes)
                                    : linear_probe(etr, ete, n_classes);
  ClassMetrics m = classification_metrics(r.scores, ete.labels);

  fs::create_directories(a.out);
  json mj = metrics_to_json(m);
  mj["method"] = a.method;
  if (a.method == "knn") mj["k"] = a.k;
  mj["normalized"] = !a.no_normalize;
  mj["num_train"] = train.jets.size();
  mj["num_test"] = test.jets.size();
  write_json(a.out + "/metrics.json", mj);

  for (int c = 0; c < n_classes; ++c) {
    std::vector<double> col(static_cast<std::size_t>(r.scores.rows()));
    std::vector<int> sig(col.size());
    long pos = 0;
    for (long i = 0; i < r.scores.rows(); ++i) {
      col[static_cast<std::size_t>(i)] = r.scores(i, c);
      sig[static_cast<std::size_t>(i)] = ete.labels[static_cast<std::size_t>(i)] == c;
      pos += sig[static_cast<std::size_t>(i)];
    }
    if (pos == 0 || pos == r.scores.rows()) continue;  // degenerate one-vs-rest split
    write_roc_csv(a.out + "/roc_class" + std::to_string(c) + ".csv", roc_curve(col, sig));
  }

  auto pred = open_text(a.out + "/predictions.csv");
  pred << "jet,label,prediction\n";
  for (std::size_t i = 0; i < r.predictions.size(); ++i)
    pred << i << "," << ete.labels[i] << "," << r.predictions[i] << "\n";
  save_embeddings(a.out, ete);
  std::cout << "probe accuracy " << m.accuracy << " (" << a.method << ", " << test.jets.size()
            << " test jets)\n";
}

struct FinetuneArgs {
  std::string checkpoint;  // empty = train from scratch
  std::string preset = "small";
  std::string train_features, train_labels, val_features, val_labels;
  std::string test_features, test_labels, out;
  std::vector<double> decays{0.6, 0.7, 0.8};
  std::vector<double> lrs{4e-5, 2e-4, 1e-3, 2e-3};
  long epochs = 20, batch_size = 64;
  double weight_decay = 1e-4, label_fraction = 1.0;
  std::uint64_t seed = 0;
};

void cmd_finetune(const FinetuneArgs& a) {
  JetDataset train = load_npy_dataset(a.train_features, a.train_labels);
  JetDataset val = load_npy_dataset(a.val_features, a.val_labels);
  train = subsample_labels(train, a.label_fraction, a.seed);

  std::optional<ModelParams<double>> pre;
  NetworkConfig net;
  if (!a.checkpoint.empty()) {
    pre.emplace(load_checkpoint<double>(a.checkpoint));
    net = pre->cfg;
  } else {
    net = NetworkConfig::preset(a.preset);
  }
  FinetuneOptions opt;
  opt.decays = a.decays;
  opt.lrs = a.lrs;
  opt.epochs = a.epochs;
  opt.batch_size = a.batch_size;
  opt.weight_decay = a.weight_decay;
  opt.seed = a.seed;
  FinetuneResult r = finetune(net, pre ? &*pre : nullptr, train, val, opt);

  fs::create_directories(a.out);
  json grid = json::array();
  for (const auto& g : r.grid)
    grid.push_back({{"decay", g.decay}, {"lr", g.lr}, {"val_accuracy", g.val_accuracy}});
  json out;
  out["mode"] = a.checkpoint.empty() ? "scratch" : "finetune";
  out["label_fraction"] = a.label_fraction;
  out["num_train"] = train.jets.size();
  out["grid"] = grid;
  out["best"] = {{"decay", r.best_decay}, {"lr", r.best_lr}, {"val_accuracy", r.best_val_accuracy}};
  if (!a.test_features.empty()) {
    JetDataset test = load_npy_dataset(a.test_features, a.test_labels);
    Mat<double> scores = classifier_scores(test, r.best);
    ClassMetrics m = classification_metrics(scores, [&] {
      std::vector<int> lab;
      for (const auto& j : test.jets) lab.push_back(j.label);
      return lab;
    }());
    out["test"] = metrics_to_json(m);
  }
  write_json(a.out + "/metrics.json", out);
  save_checkpoint(a.out + "/model", r.best, 0, a.checkpoint.empty() ? "scratch" : "finetuned");
  std::cout << "best val accuracy " << r.best_val_accuracy << " (decay " << r.best_decay << ", lr "
            << r.best_lr << ")\n";
}

struct ScoreArgs {
  std::string checkpoint, background_features, background_labels, test_features, test_labels, out;
  int k = 30;
  double tau = 0.05;
  int gmm_components = 4;
  double cov_reg = 1e-6;
  long max_reference = 0;  // 0 = use the full background set
  std::uint64_t seed = 0;
};

void cmd_score(const ScoreArgs& a) {
  ModelParams<double> P = load_checkpoint<double>(a.checkpoint);
  JetDataset bg = load_npy_dataset(a.background_features, a.background_labels);
  JetDataset test = load_npy_dataset(a.test_features, a.test_labels);

  EmbeddingSet ebg = embed_dataset(bg, P);
  EmbeddingSet ete = embed_dataset(test, P);
  l2_normalize(ebg);
  l2_normalize(ete);
  if (a.max_reference > 0 && a.max_reference < ebg.vectors.rows()) {
    std::vector<long> idx(static_cast<std::size_t>(ebg.vectors.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = Rng::stream(a.seed, "ref-subsample");
    rng.shuffle(idx);
    idx.resize(static_cast<std::size_t>(a.max_reference));
    std::sort(idx.begin(), idx.end());
    EmbeddingSet sub;
    sub.vectors.resize(a.max_reference, ebg.vectors.cols());
    sub.normalized = ebg.normalized;
    for (long r = 0; r < a.max_reference; ++r) {
      sub.vectors.row(r) = ebg.vectors.row(idx[static_cast<std::size_t>(r)]);
      sub.labels.push_back(ebg.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])]);
    }
    ebg = std::move(sub);
  }

  ReferenceOptions opt;
  opt.gmm_components = a.gmm_components;
  opt.cov_regularization = a.cov_reg;
  opt.seed = a.seed;
  ReferenceSet ref = fit_reference(ebg, opt);

  std::set<int> bg_classes(ebg.labels.begin(), ebg.labels.end());
  bool any_bg = false, any_sig = false;
  for (int l : ete.labels) (bg_classes.count(l) ? any_bg : any_sig) = true;
  if (!any_sig)
    throw std::runtime_error("score: test set has no classes outside the background set");
  if (!any_bg)
    throw std::runtime_error("score: test set has no background-class jets to anchor the ROC");

  struct Metric {
    const char* name;
    std::function<double(const Eigen::RowVectorXd&)> fn;
  };
  const std::vector<Metric> metrics = {
      {"knn", [&](const Eigen::RowVectorXd& z) { return score_knn(z, ref, a.k); }},
      {"cosine", [&](const Eigen::RowVectorXd& z) { return score_cosine(z, ref, a.k, a.tau); }},
      {"mahalanobis", [&](const Eigen::RowVectorXd& z) { return score_mahalanobis(z, ref); }},
      {"gmm", [&](const Eigen::RowVectorXd& z) { return score_gmm(z, ref); }},
  };

  fs::create_directories(a.out);
  json report;
  report["background_classes"] = std::vector<int>(bg_classes.begin(), bg_classes.end());
  std::set<int> sig_classes;
  for (int l : ete.labels)
    if (!bg_classes.count(l)) sig_classes.insert(l);
  report["signal_classes"] = std::vector<int>(sig_classes.begin(), sig_classes.end());

  for (const auto& metric : metrics) {
    std::vector<double> bg_scores;
    std::map<int, std::vector<double>> sig_scores;
    auto csv = open_text(a.out + "/scores_" + metric.name + ".csv");
    csv << "jet,label,score\n";
    char buf[96];
    for (long i = 0; i < ete.vectors.rows(); ++i) {
      double s = metric.fn(ete.vectors.row(i));
      int lab = ete.labels[static_cast<std::size_t>(i)];
      std::snprintf(buf, sizeof(buf), "%ld,%d,%.9g\n", i, lab, s);
      csv << buf;
      if (bg_classes.count(lab))
        bg_scores.push_back(s);
      else
        sig_scores[lab].push_back(s);
    }
    AnomalyReport rep = evaluate_anomaly(bg_scores, sig_scores);
    json per;
    for (const auto& [lab, roc] : rep.per_signal) per[std::to_string(lab)] = roc.auc;
    report["metrics"][metric.name] = {{"per_signal", per}, {"combined", rep.combined.auc}};
  }
  write_json(a.out + "/anomaly_auc.json", report);
  std::cout << "anomaly scores for " << ete.vectors.rows() << " jets written to " << a.out << "\n";
}

struct InspectAugmentArgs {
  int classes = 3;
  long count = 8;
  std::uint64_t seed = 0;
  std::string out;
  bool no_rotate = false, no_smear = false, no_split = false;
};

void cmd_inspect_augment(const InspectAugmentArgs& a) {
  JetDataset d = generate_synthetic(default_synthetic_spec(a.classes), a.count, a.seed);
  AugmentConfig cfg;
  cfg.rotate_enable = !a.no_rotate;
  cfg.smear_enable = !a.no_smear;
  cfg.split_enable = !a.no_split;
  auto f = open_text(a.out);
  f << "jet,label,stage,particle,eta,phi,pt,masked\n";
  char buf[160];
  auto dump = [&](long jet, int label, const char* stage, const Jet& j,
                  const std::vector<int>* mask) {
    for (long i = 0; i < kMaxParticles; ++i) {
      if (j.p(i, kValid) < 0.5) continue;
      int m = mask ? (*mask)[static_cast<std::size_t>(i)] : 0;
      std::snprintf(buf, sizeof(buf), "%ld,%d,%s,%ld,%.9g,%.9g,%.9g,%d\n", jet, label, stage, i,
                    j.p(i, kEta), j.p(i, kPhi), j.p(i, kPt), m);
      f << buf;
    }
  };
  for (long i = 0; i < static_cast<long>(d.jets.size()); ++i) {
    const Jet& j = d.jets[static_cast<std::size_t>(i)];
    Rng ru = Rng::stream(a.seed, "augment", 0, static_cast<std::uint64_t>(i), 0);
    Rng rv = Rng::stream(a.seed, "augment", 0, static_cast<std::uint64_t>(i), 1);
    ViewPair vp = make_view_pair(j, ru, rv, cfg);
    dump(i, j.label, "original", j, nullptr);
    dump(i, j.label, "view_u", vp.view_u, &vp.mask_u);
    dump(i, j.label, "view_v", vp.view_v, &vp.mask_v);
  }
  std::cout << "augmentation views for " << d.jets.size() << " jets written to " << a.out << "\n";
}

struct InspectAttentionArgs {
  std::string checkpoint, features, labels, out;
  long count = 4;
};

void cmd_inspect_attention(const InspectAttentionArgs& a) {
  ModelParams<double> P = load_checkpoint<double>(a.checkpoint);
  JetDataset d = load_npy_dataset(a.features, a.labels);
  long n = std::min<long>(a.count, static_cast<long>(d.jets.size()));
  fs::create_directories(a.out);
  for (long i = 0; i < n; ++i) {
    const Jet& j = d.jets[static_cast<std::size_t>(i)];
    Mat<double> A = extract_cls_attention(j, P);
    auto f = open_text(a.out + "/attention_jet" + std::to_string(i) + ".csv");
    f << "particle,eta,phi,pt";
    for (long h = 0; h < P.cfg.n_heads; ++h) f << ",head" << h;
    f << "\n";
    char buf[64];
    for (long p = 0; p < kMaxParticles; ++p) {
      if (j.p(p, kValid) < 0.5) continue;
      std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g", p, j.p(p, kEta), j.p(p, kPhi),
                    j.p(p, kPt));
      f << buf;
      for (long h = 0; h < P.cfg.n_heads; ++h) {
        std::snprintf(buf, sizeof(buf), ",%.9g", A(h, p));
        f << buf;
      }
      f << "\n";
    }
  }
  std::cout << "attention maps for " << n << " jets written to " << a.out << "\n";
}

struct InspectProjectArgs {
  std::string checkpoint, features, labels, out;
};

void cmd_inspect_project2d(const InspectProjectArgs& a) {
  ModelParams<double> P = load_checkpoint<double>(a.checkpoint);
  JetDataset d = load_npy_dataset(a.features, a.labels);
  EmbeddingSet e = embed_dataset(d, P);
  l2_normalize(e);
  Mat<double> xy = pca_2d(e.vectors);
  auto f = open_text(a.out);
  f << "jet,label,x,y\n";
  char buf[96];
  for (long i = 0; i < xy.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "%ld,%d,%.9g,%.9g\n", i, e.labels[static_cast<std::size_t>(i)],
                  xy(i, 0), xy(i, 1));
    f << buf;
  }
  std::cout << "2-d projection of " << xy.rows() << " jets written to " << a.out << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"self-distillation pre-training for jet constituents"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* cgen = app.add_subcommand("generate", "Generate a synthetic multi-prong jet dataset");
  cgen->add_option("--classes", gen.classes, "Number of classes (prong count cycles 1,2,3)")
      ->check(CLI::PositiveNumber);
  cgen->add_option("--count", gen.count, "Number of jets")->required()->check(CLI::PositiveNumber);
  cgen->add_option("--seed", gen.seed, "RNG seed");
  cgen->add_option("--out", gen.out, "Output directory")->required();
  cgen->callback([&] { cmd_generate(gen); });

  PretrainArgs pre;
  auto* cpre = app.add_subcommand("pretrain", "Run self-distillation pre-training from a config");
  cpre->add_option("--config", pre.config, "Key=value config file")->required();
  cpre->add_option("--out", pre.out_override, "Override the configured output directory");
  cpre->callback([&] { cmd_pretrain(pre); });

  ProbeArgs prb;
  auto* cprb = app.add_subcommand("probe", "Evaluate frozen embeddings with a k-NN/linear probe");
  cprb->add_option("--checkpoint", prb.checkpoint, "Encoder checkpoint directory")->required();
  cprb->add_option("--train-features", prb.train_features)->required();
  cprb->add_option("--train-labels", prb.train_labels)->required();
  cprb->add_option("--test-features", prb.test_features)->required();
  cprb->add_option("--test-labels", prb.test_labels)->required();
  cprb->add_option("--method", prb.method, "knn | linear");
  cprb->add_option("--k", prb.k, "Neighbors for knn")->check(CLI::PositiveNumber);
  cprb->add_flag("--no-normalize", prb.no_normalize, "Skip l2 normalization of embeddings");
  cprb->add_option("--out", prb.out, "Output directory")->required();
  cprb->callback([&] { cmd_probe(prb); });

  FinetuneArgs ft;
  auto* cft = app.add_subcommand("finetune", "Fine-tune with layer-wise lr decay (or scratch)");
  cft->add_option("--checkpoint", ft.checkpoint, "Pretrained encoder; omit to train from scratch");
  cft->add_option("--preset", ft.preset, "Architecture when training from scratch");
  cft->add_option("--train-features", ft.train_features)->required();
  cft->add_option("--train-labels", ft.train_labels)->required();
  cft->add_option("--val-features", ft.val_features)->required();
  cft->add_option("--val-labels", ft.val_labels)->required();
  cft->add_option("--test-features", ft.test_features);
  cft->add_option("--test-labels", ft.test_labels);
  cft->add_option("--decays", ft.decays, "Layer-wise decay grid")->delimiter(',');
  cft->add_option("--lrs", ft.lrs, "Learning rate grid")->delimiter(',');
  cft->add_option("--epochs", ft.epochs)->check(CLI::PositiveNumber);
  cft->add_option("--batch-size", ft.batch_size)->check(CLI::PositiveNumber);
  cft->add_option("--weight-decay", ft.weight_decay);
  cft->add_option("--label-fraction", ft.label_fraction, "Fraction of training labels to keep");
  cft->add_option("--seed", ft.seed, "RNG seed");
  cft->add_option("--out", ft.out, "Output directory")->required();
  cft->callback([&] { cmd_finetune(ft); });

  ScoreArgs sc;
  auto* csc = app.add_subcommand("score", "Anomaly-score test jets against a background reference");
  csc->add_option("--checkpoint", sc.checkpoint, "Encoder checkpoint directory")->required();
  csc->add_option("--background-features", sc.background_features)->required();
  csc->add_option("--background-labels", sc.background_labels)->required();
  csc->add_option("--test-features", sc.test_features)->required();
  csc->add_option("--test-labels", sc.test_labels)->required();
  csc->add_option("--k", sc.k, "Neighbors for knn/cosine scores")->check(CLI::PositiveNumber);
  csc->add_option("--tau", sc.tau, "Cosine score temperature");
  csc->add_option("--gmm-components", sc.gmm_components)->check(CLI::PositiveNumber);
  csc->add_option("--cov-reg", sc.cov_reg, "Covariance regularization");
  csc->add_option("--max-reference", sc.max_reference,
                  "Subsample the reference set to this many jets (0 = all)");
  csc->add_option("--seed", sc.seed, "RNG seed for the GMM fit and subsampling");
  csc->add_option("--out", sc.out, "Output directory")->required();
  csc->callback([&] { cmd_score(sc); });

  auto* cins = app.add_subcommand("inspect", "Dump CSV artifacts for visual checks");
  cins->require_subcommand(1);

  InspectAugmentArgs ia;
  auto* caug = cins->add_subcommand("augment", "Original vs augmented views with masks");
  caug->add_option("--classes", ia.classes)->check(CLI::PositiveNumber);
  caug->add_option("--count", ia.count)->check(CLI::PositiveNumber);
  caug->add_option("--seed", ia.seed);
  caug->add_option("--out", ia.out, "Output CSV path")->required();
  caug->add_flag("--no-rotate", ia.no_rotate);
  caug->add_flag("--no-smear", ia.no_smear);
  caug->add_flag("--no-split", ia.no_split);
  caug->callback([&] { cmd_inspect_augment(ia); });

  InspectAttentionArgs iat;
  auto* catt = cins->add_subcommand("attention", "[CLS] attention over particles, one CSV per jet");
  catt->add_option("--checkpoint", iat.checkpoint)->required();
  catt->add_option("--features", iat.features)->required();
  catt->add_option("--labels", iat.labels)->required();
  catt->add_option("--count", iat.count, "Number of jets to dump")->check(CLI::PositiveNumber);
  catt->add_option("--out", iat.out, "Output directory")->required();
  catt->callback([&] { cmd_inspect_attention(iat); });

  InspectProjectArgs ipr;
  auto* cprj = cins->add_subcommand("project2d", "PCA projection of embeddings to 2-d");
  cprj->add_option("--checkpoint", ipr.checkpoint)->required();
  cprj->add_option("--features", ipr.features)->required();
  cprj->add_option("--labels", ipr.labels)->required();
  cprj->add_option("--out", ipr.out, "Output CSV path")->required();
  cprj->callback([&] { cmd_inspect_project2d(ipr); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace jbot
