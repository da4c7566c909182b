#pragma once

// Frozen-feature evaluation: [CLS] embedding extraction, k-NN and linear
// probes, layerwise-lr-decay fine-tuning with its from-scratch baseline, and
// classification metrics (accuracy, one-vs-rest AUC, eps_s at fixed eps_b).

#include <jbot/jet.hpp>
#include <jbot/model.hpp>

#include <optional>
#include <vector>

namespace jbot {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EmbeddingSet {
  Mat<double> vectors;  // num_jets x d_model [CLS] rows
  std::vector<int> labels;
  bool normalized = false;
};

/// Eval-mode student encoder over unaugmented, unmasked jets.
EmbeddingSet embed_dataset(const JetDataset& d, ModelParams<double>& params);

/// Scales every row to unit length (rows of zero norm are left alone).
void l2_normalize(EmbeddingSet& e);

struct ProbeResult {
  std::vector<int> predictions;
  Mat<double> scores;  // num_test x n_classes
};

/// Euclidean k-NN vote fractions; ties in the vote go to the lowest class id.
ProbeResult knn_probe(const EmbeddingSet& train, const EmbeddingSet& test, int k, int n_classes);

/// Multinomial logistic regression on the frozen features, trained by
/// gradient descent with backtracking to convergence (tiny ridge term keeps
/// the optimum unique). Returns softmax scores on the test set.
ProbeResult linear_probe(const EmbeddingSet& train, const EmbeddingSet& test, int n_classes);

struct RocCurve {
  std::vector<double> thresholds;   // descending
  std::vector<double> signal_eff;   // eps_s at each threshold
  std::vector<double> background_eff;
  double auc = 0;
};

/// Builds the empirical ROC of `scores` where higher means more signal-like.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& is_signal);

/// Exact Mann-Whitney AUC with tie correction.
double auc_exact(const std::vector<double>& scores, const std::vector<int>& is_signal);

/// Largest eps_s attainable with eps_b <= target (direct threshold read).
double eps_s_at(const RocCurve& roc, double target_eps_b);

struct ClassMetrics {
  double accuracy = 0;
  std::vector<std::optional<double>> auc;       // per class; absent class -> nullopt
  std::vector<std::optional<double>> eps_s_1e1; // eps_s at eps_b = 1e-1
  std::vector<std::optional<double>> eps_s_1e2; // eps_s at eps_b = 1e-2
};

ClassMetrics classification_metrics(const Mat<double>& scores, const std::vector<int>& labels);

/// First two principal components (deterministic sign convention).
Mat<double> pca_2d(const Mat<double>& x);

// ---------------------------------------------------------------------------
// fine-tuning
// ---------------------------------------------------------------------------

struct FinetuneOptions {
  std::vector<double> decays{0.6, 0.7, 0.8};
  std::vector<double> lrs{4e-5, 2e-4, 1e-3, 2e-3};
  long epochs = 20;
  long batch_size = 64;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

struct GridPoint {
  double decay = 1.0, lr = 0;
  double val_accuracy = 0;
};

struct FinetuneResult {
  ModelParams<double> best;
  std::vector<GridPoint> grid;
  double best_val_accuracy = 0;
  double best_decay = 1.0, best_lr = 0;
};

/// Attaches a classifier head and trains with per-depth lr multipliers
/// decay^depth (head depth 0). `pretrained == nullptr` gives the supervised
/// from-scratch baseline: random init and uniform lr (decay grid collapses to
/// {1}). The best grid point by validation accuracy is returned.
FinetuneResult finetune(const NetworkConfig& net, const ModelParams<double>* pretrained,
                        const JetDataset& train, const JetDataset& val,
                        const FinetuneOptions& opt);

/// Eval-mode classifier scores (softmax rows) for a fine-tuned model.
Mat<double> classifier_scores(const JetDataset& d, ModelParams<double>& params);

}  // namespace jbot
