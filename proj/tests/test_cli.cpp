#include <doctest.h>

#include <jbot/cli.hpp>
#include <jbot/config.hpp>
#include <jbot/jet.hpp>
#include <jbot/model.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace jbot;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("jbot");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string base_dir() {
  static std::string d = [] {
    std::string p = (fs::temp_directory_path() / "jbot_cli_suite").string();
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

long line_count(const std::string& path) {
  std::string s = read_file(path);
  long n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

std::string first_line(const std::string& path) {
  std::string s = read_file(path);
  return s.substr(0, s.find('\n'));
}

json read_json(const std::string& path) { return json::parse(read_file(path)); }

/// Writes the shared tiny pretraining run once; later cases reuse it.
const std::string& pretrain_run() {
  static std::string dir = [] {
    std::string out = base_dir() + "/run1";
    std::string cfg = base_dir() + "/pretrain.txt";
    write_file(cfg, "preset = small\n"
                    "synthetic_classes = 2\n"
                    "synthetic_count = 48\n"
                    "epochs = 2\n"
                    "batch_size = 16\n"
                    "warmup_epochs = 1\n"
                    "seed = 3\n"
                    "out_dir = " + out + "\n");
    REQUIRE(run({"pretrain", "--config", cfg}) == 0);
    return out;
  }();
  return dir;
}

}  // namespace

TEST_CASE("config parser diagnostics carry file and line") {
  CHECK_THROWS_WITH_AS(parse_run_config_text("frobnicate = 1\n", "f.txt"),
                       doctest::Contains("f.txt:1: unknown key 'frobnicate'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config_text("seed = 1\nseed = 2\n", "f.txt"),
                       doctest::Contains("f.txt:2: duplicate key 'seed' (first set on line 1)"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config_text("preset = huge\n", "f.txt"),
                       doctest::Contains("preset must be 'small' or 'base'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config_text("d_model = many\n", "f.txt"),
                       doctest::Contains("f.txt:1: key 'd_model'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config_text("just some words\n", "f.txt"),
                       doctest::Contains("expected 'key = value'"), ConfigError);

  auto reject_validate = [](const std::string& text, const char* needle) {
    RunConfig c = parse_run_config_text(text, "f.txt");
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains(needle), ConfigError);
  };
  reject_validate("synthetic_classes = 2\nsynthetic_count = 10\n"
                  "features = a.npy\nlabels = b.npy\n",
                  "mutually exclusive");
  reject_validate("", "set features+labels or synthetic_classes+synthetic_count");
  reject_validate("synthetic_classes = 2\nsynthetic_count = 10\n"
                  "split_fractions = 0.5,0.4,0.2\n",
                  "must sum to 1");
  reject_validate("synthetic_classes = 2\nsynthetic_count = 10\nclass_filter = 1,1\n",
                  "duplicate class");

  // comments and blank lines pass
  RunConfig ok = parse_run_config_text("# a comment\n\nsynthetic_classes = 3\n"
                                       "synthetic_count = 9\nkoleo_lambda = 0.02\n",
                                       "f.txt");
  CHECK(ok.synthetic_classes == 3);
  CHECK(ok.distill.koleo_lambda == 0.02);
}

TEST_CASE("config snapshots reparse to themselves") {
  std::string text = "preset = base\n"
                     "dropout = 0.1\n"
                     "n_heads = 8\n"
                     "synthetic_classes = 2\n"
                     "synthetic_count = 40\n"
                     "mask_ratio_max = 0.4\n"
                     "lr_schedule = cosine\n"
                     "class_filter = 0,1\n"
                     "split_fractions = 0.7,0.2,0.1\n"
                     "seed = 17\n"
                     "out_dir = /tmp/somewhere\n";
  RunConfig c = parse_run_config_text(text, "orig");
  CHECK(c.net.d_model == 64);
  CHECK(c.net.n_heads == 8);
  CHECK(c.net.dropout == 0.1);
  CHECK(c.aug.mask_ratio_max == 0.4);

  std::string snap1 = base_dir() + "/snap1.txt";
  std::string snap2 = base_dir() + "/snap2.txt";
  write_config_snapshot(snap1, c);
  RunConfig c2 = parse_run_config_text(read_file(snap1), "snap1");
  write_config_snapshot(snap2, c2);
  CHECK(read_file(snap1) == read_file(snap2));
  CHECK(c2.distill.lr_schedule == "cosine");
  CHECK(c2.split_fractions[0] == 0.7);
  CHECK(c2.class_filter == std::vector<int>{0, 1});
}

TEST_CASE("generate writes a loadable, reproducible dataset") {
  std::string out = base_dir() + "/gen";
  REQUIRE(run({"generate", "--classes", "2", "--count", "30", "--seed", "5", "--out", out}) == 0);
  CHECK(fs::exists(out + "/features.npy"));
  CHECK(fs::exists(out + "/labels.npy"));
  CHECK(fs::exists(out + "/dataset.json"));

  JetDataset d = load_npy_dataset(out + "/features.npy", out + "/labels.npy");
  CHECK(d.jets.size() == 30);
  CHECK(d.n_classes == 2);

  json manifest = read_json(out + "/dataset.json");
  CHECK(manifest["num_jets"] == 30);
  CHECK(manifest["class_names"].size() == 2);

  std::string out2 = base_dir() + "/gen_again";
  REQUIRE(run({"generate", "--classes", "2", "--count", "30", "--seed", "5", "--out", out2}) == 0);
  CHECK(read_file(out + "/features.npy") == read_file(out2 + "/features.npy"));

  CHECK(run({"generate", "--count", "0", "--out", base_dir() + "/bad"}) != 0);
}

TEST_CASE("pretrain produces the full artifact set") {
  const std::string& out = pretrain_run();
  CHECK(fs::exists(out + "/config.txt"));
  CHECK(fs::exists(out + "/dataset.json"));
  for (const char* split : {"train", "val", "test"}) {
    CHECK(fs::exists(out + "/splits/" + std::string(split) + "_features.npy"));
    CHECK(fs::exists(out + "/splits/" + std::string(split) + "_labels.npy"));
  }

  // 48 jets split 0.8/0.1/0.1 -> 38 train jets -> 3 batches/epoch, 2 epochs
  CHECK(first_line(out + "/metrics.csv") ==
        "step,lr,tau_ema,loss_total,loss_part,loss_cls,loss_koleo,teacher_entropy,"
        "center_cls_norm,center_part_norm");
  CHECK(line_count(out + "/metrics.csv") == 7);

  long step = 0;
  std::string tag;
  ModelParams<double> student = load_checkpoint<double>(out + "/student", &step, &tag);
  CHECK(step == 6);
  CHECK(tag == "student");
  CHECK(student.cfg.d_model == 32);
  ModelParams<double> teacher = load_checkpoint<double>(out + "/teacher", &step, &tag);
  CHECK(tag == "teacher");

  // the snapshot in the run directory reproduces the run configuration
  RunConfig snap = parse_run_config_text(read_file(out + "/config.txt"), "config.txt");
  CHECK(snap.distill.epochs == 2);
  CHECK(snap.distill.batch_size == 16);
  CHECK(snap.seed == 3);
  CHECK(snap.synthetic_count == 48);
}

TEST_CASE("pretrain reruns are byte-identical") {
  const std::string& run1 = pretrain_run();
  std::string run2 = base_dir() + "/run2";
  REQUIRE(run({"pretrain", "--config", base_dir() + "/pretrain.txt", "--out", run2}) == 0);
  CHECK(read_file(run1 + "/metrics.csv") == read_file(run2 + "/metrics.csv"));
  for (const char* f : {"/student/cls_token.npy", "/student/token_embed.w.npy",
                        "/student/block1.attn.wo.npy", "/teacher/proj.w3.npy"})
    CHECK(read_file(run1 + f) == read_file(run2 + f));
}

TEST_CASE("probe emits metrics, roc curves, and predictions") {
  const std::string& run1 = pretrain_run();
  std::string out = base_dir() + "/probe1";
  REQUIRE(run({"probe", "--checkpoint", run1 + "/student",
               "--train-features", run1 + "/splits/train_features.npy",
               "--train-labels", run1 + "/splits/train_labels.npy",
               "--test-features", run1 + "/splits/test_features.npy",
               "--test-labels", run1 + "/splits/test_labels.npy",
               "--method", "knn", "--k", "5", "--out", out}) == 0);

  json m = read_json(out + "/metrics.json");
  CHECK(m["method"] == "knn");
  CHECK(m["k"] == 5);
  CHECK(m["normalized"] == true);
  CHECK(m["num_train"] == 38);
  CHECK(m["num_test"] == 4);
  double acc = m["accuracy"].get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  REQUIRE(m["per_class"].size() == 2);
  CHECK(m["per_class"][0].contains("auc"));
  CHECK(m["per_class"][0].contains("eps_s_at_eps_b_1e-1"));

  CHECK(line_count(out + "/predictions.csv") == 5);  // header + 4 test jets
  CHECK(first_line(out + "/predictions.csv") == "jet,label,prediction");
  CHECK(fs::exists(out + "/embeddings.npy"));
  CHECK(fs::exists(out + "/labels.npy"));

  std::string out2 = base_dir() + "/probe2";
  REQUIRE(run({"probe", "--checkpoint", run1 + "/student",
               "--train-features", run1 + "/splits/train_features.npy",
               "--train-labels", run1 + "/splits/train_labels.npy",
               "--test-features", run1 + "/splits/test_features.npy",
               "--test-labels", run1 + "/splits/test_labels.npy",
               "--method", "linear", "--out", out2}) == 0);
  json m2 = read_json(out2 + "/metrics.json");
  CHECK(m2["method"] == "linear");
  CHECK(!m2.contains("k"));
}

TEST_CASE("score ranks a held-out class against a background reference") {
  const std::string& run1 = pretrain_run();

  // background files: the class-0 jets of the training split
  JetDataset train = load_npy_dataset(run1 + "/splits/train_features.npy",
                                      run1 + "/splits/train_labels.npy");
  JetDataset bg;
  bg.n_classes = 1;
  for (const auto& j : train.jets)
    if (j.label == 0) bg.jets.push_back(j);
  REQUIRE(bg.jets.size() == 19);
  std::string bgdir = base_dir() + "/bg";
  fs::create_directories(bgdir);
  save_npy_dataset(bg, bgdir + "/features.npy", bgdir + "/labels.npy");

  std::string out = base_dir() + "/score1";
  REQUIRE(run({"score", "--checkpoint", run1 + "/student",
               "--background-features", bgdir + "/features.npy",
               "--background-labels", bgdir + "/labels.npy",
               "--test-features", run1 + "/splits/val_features.npy",
               "--test-labels", run1 + "/splits/val_labels.npy",
               "--k", "5", "--gmm-components", "2", "--out", out}) == 0);

  for (const char* name : {"knn", "cosine", "mahalanobis", "gmm"}) {
    std::string csv = out + "/scores_" + std::string(name) + ".csv";
    CHECK(first_line(csv) == "jet,label,score");
    CHECK(line_count(csv) == 7);  // header + 6 val jets
  }
  json rep = read_json(out + "/anomaly_auc.json");
  CHECK(rep["background_classes"] == json::array({0}));
  CHECK(rep["signal_classes"] == json::array({1}));
  for (const char* name : {"knn", "cosine", "mahalanobis", "gmm"}) {
    const json& metric = rep["metrics"][name];
    REQUIRE(metric.contains("per_signal"));
    double auc = metric["per_signal"]["1"].get<double>();
    CHECK(auc >= 0.0);
    CHECK(auc <= 1.0);
    CHECK(metric["combined"] == auc);  // one signal class only
  }

  // subsampling the reference keeps the command functional
  std::string out2 = base_dir() + "/score2";
  REQUIRE(run({"score", "--checkpoint", run1 + "/student",
               "--background-features", bgdir + "/features.npy",
               "--background-labels", bgdir + "/labels.npy",
               "--test-features", run1 + "/splits/val_features.npy",
               "--test-labels", run1 + "/splits/val_labels.npy",
               "--k", "3", "--gmm-components", "2", "--max-reference", "10",
               "--out", out2}) == 0);
  CHECK(line_count(out2 + "/scores_knn.csv") == 7);

  // a test set with no signal class is rejected
  CHECK(run({"score", "--checkpoint", run1 + "/student",
             "--background-features", bgdir + "/features.npy",
             "--background-labels", bgdir + "/labels.npy",
             "--test-features", bgdir + "/features.npy",
             "--test-labels", bgdir + "/labels.npy",
             "--k", "3", "--gmm-components", "2", "--out", base_dir() + "/score_bad"}) != 0);
}

TEST_CASE("finetune command trains from a checkpoint and from scratch") {
  const std::string& run1 = pretrain_run();
  std::string out = base_dir() + "/ft1";
  REQUIRE(run({"finetune", "--checkpoint", run1 + "/student",
               "--train-features", run1 + "/splits/train_features.npy",
               "--train-labels", run1 + "/splits/train_labels.npy",
               "--val-features", run1 + "/splits/val_features.npy",
               "--val-labels", run1 + "/splits/val_labels.npy",
               "--test-features", run1 + "/splits/test_features.npy",
               "--test-labels", run1 + "/splits/test_labels.npy",
               "--decays", "0.7", "--lrs", "2e-3", "--epochs", "1",
               "--batch-size", "16", "--out", out}) == 0);
  json m = read_json(out + "/metrics.json");
  CHECK(m["mode"] == "finetune");
  REQUIRE(m["grid"].size() == 1);
  CHECK(m["grid"][0]["decay"] == 0.7);
  CHECK(m["grid"][0]["lr"] == 2e-3);
  CHECK(m["best"]["decay"] == 0.7);
  CHECK(m["test"].contains("accuracy"));

  long step = 0;
  std::string tag;
  ModelParams<double> best = load_checkpoint<double>(out + "/model", &step, &tag);
  CHECK(tag == "finetuned");
  CHECK(best.cfg.n_classes == 2);

  std::string out2 = base_dir() + "/ft2";
  REQUIRE(run({"finetune", "--preset", "small",
               "--train-features", run1 + "/splits/train_features.npy",
               "--train-labels", run1 + "/splits/train_labels.npy",
               "--val-features", run1 + "/splits/val_features.npy",
               "--val-labels", run1 + "/splits/val_labels.npy",
               "--decays", "0.6,0.8", "--lrs", "2e-3", "--epochs", "1",
               "--batch-size", "16", "--label-fraction", "0.5", "--out", out2}) == 0);
  json m2 = read_json(out2 + "/metrics.json");
  CHECK(m2["mode"] == "scratch");
  REQUIRE(m2["grid"].size() == 1);  // scratch collapses the decay grid
  CHECK(m2["grid"][0]["decay"] == 1.0);
  CHECK(m2["label_fraction"] == 0.5);
  CHECK(m2["num_train"] == 20);  // lround(19 / 2) per class
}

TEST_CASE("inspect commands dump readable csv") {
  const std::string& run1 = pretrain_run();

  std::string aug_csv = base_dir() + "/aug.csv";
  REQUIRE(run({"inspect", "augment", "--classes", "2", "--count", "3", "--seed", "7",
               "--out", aug_csv}) == 0);
  CHECK(first_line(aug_csv) == "jet,label,stage,particle,eta,phi,pt,masked");
  CHECK(line_count(aug_csv) > 3);

  std::string att_dir = base_dir() + "/att";
  REQUIRE(run({"inspect", "attention", "--checkpoint", run1 + "/student",
               "--features", run1 + "/splits/test_features.npy",
               "--labels", run1 + "/splits/test_labels.npy",
               "--count", "2", "--out", att_dir}) == 0);
  CHECK(fs::exists(att_dir + "/attention_jet0.csv"));
  CHECK(fs::exists(att_dir + "/attention_jet1.csv"));
  CHECK(first_line(att_dir + "/attention_jet0.csv") ==
        "particle,eta,phi,pt,head0,head1,head2,head3");

  std::string prj_csv = base_dir() + "/proj.csv";
  REQUIRE(run({"inspect", "project2d", "--checkpoint", run1 + "/student",
               "--features", run1 + "/splits/train_features.npy",
               "--labels", run1 + "/splits/train_labels.npy",
               "--out", prj_csv}) == 0);
  CHECK(first_line(prj_csv) == "jet,label,x,y");
  CHECK(line_count(prj_csv) == 39);  // header + 38 train jets
}

TEST_CASE("failures exit nonzero without leaving partial runs") {
  std::string cfg = base_dir() + "/bad_data.txt";
  std::string out = base_dir() + "/bad_run";
  write_file(cfg, "features = /nonexistent/f.npy\nlabels = /nonexistent/l.npy\n"
                  "out_dir = " + out + "\n");
  CHECK(run({"pretrain", "--config", cfg}) != 0);
  CHECK(!fs::exists(out));

  CHECK(run({"pretrain", "--config", base_dir() + "/missing.txt"}) != 0);
  CHECK(run({"probe", "--checkpoint", base_dir() + "/nowhere",
             "--train-features", "x", "--train-labels", "x",
             "--test-features", "x", "--test-labels", "x",
             "--out", base_dir() + "/p"}) != 0);
  CHECK(run({"definitely-not-a-command"}) != 0);
  CHECK(run({"generate", "--count", "10"}) != 0);  // --out is required
  CHECK(run({}) != 0);                             // a subcommand is required
}
