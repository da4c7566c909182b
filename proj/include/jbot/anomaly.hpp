#pragma once

// Embedding-space anomaly detection against a background-only reference set:
// k-NN distance, temperature-scaled cosine score, class-conditional
// Mahalanobis with tied covariance, and a GMM negative log-likelihood.

#include <jbot/downstream.hpp>
#include <jbot/jet.hpp>

#include <map>
#include <vector>

namespace jbot {

class AnomalyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Gmm {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  std::vector<double> ll_trace;  // per-iteration log-likelihood of the kept fit
};

struct ReferenceSet {
  Mat<double> vectors;  // M x d, l2-normalized background embeddings
  std::map<int, Eigen::VectorXd> class_means;
  Eigen::MatrixXd tied_cov;      // regularized
  Eigen::MatrixXd tied_cov_inv;
  Gmm gmm;
};

struct ReferenceOptions {
  int gmm_components = 4;
  double cov_regularization = 1e-6;
  int em_restarts = 10;
  int em_max_iters = 500;
  double em_rel_tol = 1e-6;
  std::uint64_t seed = 0;
};

/// Fits all reference statistics to l2-normalized background embeddings.
ReferenceSet fit_reference(const EmbeddingSet& background, const ReferenceOptions& opt);

/// Mean Euclidean distance to the k nearest reference vectors.
double score_knn(const Eigen::RowVectorXd& z, const ReferenceSet& ref, int k);

/// -tau log((1/k) sum exp(z . z_ref / tau)) over the k most similar
/// references (neighbors chosen by highest cosine similarity).
double score_cosine(const Eigen::RowVectorXd& z, const ReferenceSet& ref, int k, double tau);

/// min over background classes of (z-mu_c)^T Sigma^-1 (z-mu_c).
double score_mahalanobis(const Eigen::RowVectorXd& z, const ReferenceSet& ref);

/// Negative log-likelihood under the fitted mixture.
double score_gmm(const Eigen::RowVectorXd& z, const ReferenceSet& ref);

/// Fits a full-covariance GMM by EM with k-means++ starts; keeps the best of
/// `restarts` by final log-likelihood. Throws (with the trace) if no restart
/// converges within the iteration budget.
Gmm fit_gmm(const Mat<double>& x, int k, const ReferenceOptions& opt);

struct AnomalyReport {
  std::map<int, RocCurve> per_signal;  // keyed by signal label
  RocCurve combined;
};

/// Higher score = more anomalous for every metric as defined above (the
/// cosine form already increases with angular distance).
AnomalyReport evaluate_anomaly(const std::vector<double>& background_scores,
                               const std::map<int, std::vector<double>>& signal_scores);

}  // namespace jbot
