#include <jbot/anomaly.hpp>
#include <jbot/rng.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace jbot {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Cholesky-backed Gaussian log density evaluator
struct GaussEval {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_det = 0;

  explicit GaussEval(const Eigen::MatrixXd& cov) {
    llt.compute(cov);
    if (llt.info() != Eigen::Success)
      throw AnomalyError(
          "covariance is not positive definite; enable regularization (cov_regularization > 0)");
    log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

  double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mu) const {
    Eigen::VectorXd d = x - mu;
    double maha = d.dot(llt.solve(d));
    return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + log_det + maha);
  }

  double mahalanobis(const Eigen::VectorXd& x, const Eigen::VectorXd& mu) const {
    Eigen::VectorXd d = x - mu;
    return d.dot(llt.solve(d));
  }
};

std::vector<Eigen::VectorXd> kmeans_pp(const Mat<double>& x, int k, Rng& rng) {
  long n = x.rows();
  std::vector<Eigen::VectorXd> centers;
  centers.push_back(x.row(rng.uniform_int(n)).transpose());
  std::vector<double> d2(static_cast<std::size_t>(n));
  while (static_cast<int>(centers.size()) < k) {
    double total = 0;
    for (long i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers)
        best = std::min(best, (x.row(i).transpose() - c).squaredNorm());
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total <= 0) {
      centers.push_back(x.row(rng.uniform_int(n)).transpose());
      continue;
    }
    double u = rng.uniform() * total;
    long pick = n - 1;
    double cum = 0;
    for (long i = 0; i < n; ++i) {
      cum += d2[static_cast<std::size_t>(i)];
      if (u < cum) {
        pick = i;
        break;
      }
    }
    centers.push_back(x.row(pick).transpose());
  }
  return centers;
}

struct EmRun {
  Gmm gmm;
  bool converged = false;
  double final_ll = -std::numeric_limits<double>::infinity();
};

EmRun run_em(const Mat<double>& x, int k, const ReferenceOptions& opt, Rng& rng) {
  long n = x.rows(), d = x.cols();
  EmRun run;
  Gmm& g = run.gmm;
  g.weights.assign(static_cast<std::size_t>(k), 1.0 / k);
  g.means = kmeans_pp(x, k, rng);
  Eigen::RowVectorXd mean = x.colwise().mean();
  Mat<double> centered = x.rowwise() - mean;
  Eigen::MatrixXd global_cov =
      centered.transpose() * centered / std::max<double>(static_cast<double>(n - 1), 1.0) +
      opt.cov_regularization * Eigen::MatrixXd::Identity(d, d);
  g.covs.assign(static_cast<std::size_t>(k), global_cov);

  Mat<double> resp(n, k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.em_max_iters; ++it) {
    // E step with per-row log-sum-exp
    std::vector<GaussEval> evals;
    evals.reserve(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) evals.emplace_back(g.covs[static_cast<std::size_t>(c)]);
    double ll = 0;
    for (long i = 0; i < n; ++i) {
      Eigen::VectorXd lp(k);
      for (int c = 0; c < k; ++c)
        lp(c) = std::log(std::max(g.weights[static_cast<std::size_t>(c)], 1e-300)) +
                evals[static_cast<std::size_t>(c)].log_density(x.row(i).transpose(),
                                                               g.means[static_cast<std::size_t>(c)]);
      double mx = lp.maxCoeff();
      double z = (lp.array() - mx).exp().sum();
      ll += mx + std::log(z);
      resp.row(i) = ((lp.array() - mx).exp() / z).matrix().transpose();
    }
    g.ll_trace.push_back(ll);

    double rel = std::abs(ll - prev_ll) / (1.0 + std::abs(ll));
    if (it > 0 && rel < opt.em_rel_tol) {
      run.converged = true;
      run.final_ll = ll;
      return run;
    }
    prev_ll = ll;

    // M step
    for (int c = 0; c < k; ++c) {
      double nc = resp.col(c).sum();
      if (nc < 1e-10) {
        // dead component: reseed on the point worst explained by the mixture
        long worst = 0;
        resp.rowwise().maxCoeff().minCoeff(&worst);
        g.means[static_cast<std::size_t>(c)] = x.row(worst).transpose();
        g.covs[static_cast<std::size_t>(c)] = global_cov;
        g.weights[static_cast<std::size_t>(c)] = 1.0 / n;
        continue;
      }
      Eigen::VectorXd mu = (resp.col(c).transpose() * x).transpose() / nc;
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
      for (long i = 0; i < n; ++i) {
        Eigen::VectorXd dd = x.row(i).transpose() - mu;
        cov += resp(i, c) * dd * dd.transpose();
      }
      cov = cov / nc + opt.cov_regularization * Eigen::MatrixXd::Identity(d, d);
      g.weights[static_cast<std::size_t>(c)] = nc / static_cast<double>(n);
      g.means[static_cast<std::size_t>(c)] = mu;
      g.covs[static_cast<std::size_t>(c)] = cov;
    }
    double wsum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
    for (auto& w : g.weights) w /= wsum;
  }
  run.final_ll = prev_ll;
  return run;
}

}  // namespace

Gmm fit_gmm(const Mat<double>& x, int k, const ReferenceOptions& opt) {
  if (x.rows() < k) throw AnomalyError("fit_gmm: fewer points than components");
  EmRun best;
  bool any = false;
  std::ostringstream traces;
  for (int r = 0; r < opt.em_restarts; ++r) {
    Rng rng = Rng::stream(opt.seed, "gmm", static_cast<std::uint64_t>(r));
    EmRun run = run_em(x, k, opt, rng);
    if (run.converged && (!any || run.final_ll > best.final_ll)) {
      best = run;
      any = true;
    }
    if (!run.converged) {
      traces << "restart " << r << " log-likelihood trace:";
      for (double v : run.gmm.ll_trace) traces << " " << v;
      traces << "\n";
    }
  }
  if (!any)
    throw AnomalyError("fit_gmm: EM failed to converge within " +
                       std::to_string(opt.em_max_iters) + " iterations on all restarts\n" +
                       traces.str());
  return best.gmm;
}

ReferenceSet fit_reference(const EmbeddingSet& background, const ReferenceOptions& opt) {
  if (background.vectors.rows() == 0) throw AnomalyError("fit_reference: empty reference");
  if (!background.normalized)
    throw AnomalyError("fit_reference: embeddings must be l2-normalized first");
  ReferenceSet ref;
  ref.vectors = background.vectors;
  long d = ref.vectors.cols();

  std::map<int, std::vector<long>> by_class;
  for (long i = 0; i < ref.vectors.rows(); ++i)
    by_class[background.labels[static_cast<std::size_t>(i)]].push_back(i);
  Eigen::MatrixXd tied = Eigen::MatrixXd::Zero(d, d);
  for (const auto& [cls, rows] : by_class) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (long i : rows) mu += ref.vectors.row(i).transpose();
    mu /= static_cast<double>(rows.size());
    ref.class_means[cls] = mu;
    for (long i : rows) {
      Eigen::VectorXd dd = ref.vectors.row(i).transpose() - mu;
      tied += dd * dd.transpose();
    }
  }
  tied /= std::max<double>(static_cast<double>(ref.vectors.rows()), 1.0);
  tied += opt.cov_regularization * Eigen::MatrixXd::Identity(d, d);
  ref.tied_cov = tied;
  GaussEval check(tied);  // throws with guidance if not SPD
  ref.tied_cov_inv = check.llt.solve(Eigen::MatrixXd::Identity(d, d));

  ref.gmm = fit_gmm(ref.vectors, opt.gmm_components, opt);
  return ref;
}

double score_knn(const Eigen::RowVectorXd& z, const ReferenceSet& ref, int k) {
  long m = ref.vectors.rows();
  if (m == 0) throw AnomalyError("score_knn: empty reference");
  if (k <= 0 || k > m) throw AnomalyError("score_knn: k must be in [1, reference size]");
  std::vector<double> d(static_cast<std::size_t>(m));
  for (long i = 0; i < m; ++i) d[static_cast<std::size_t>(i)] = (ref.vectors.row(i) - z).norm();
  std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  return std::accumulate(d.begin(), d.begin() + k, 0.0) / k;
}

double score_cosine(const Eigen::RowVectorXd& z, const ReferenceSet& ref, int k, double tau) {
  long m = ref.vectors.rows();
  if (m == 0) throw AnomalyError("score_cosine: empty reference");
  if (k <= 0 || k > m) throw AnomalyError("score_cosine: k must be in [1, reference size]");
  if (tau <= 0) throw AnomalyError("score_cosine: tau must be positive");
  std::vector<double> sim(static_cast<std::size_t>(m));
  for (long i = 0; i < m; ++i) sim[static_cast<std::size_t>(i)] = ref.vectors.row(i).dot(z);
  std::partial_sort(sim.begin(), sim.begin() + k, sim.end(), std::greater<double>());
  double mx = sim[0];
  double acc = 0;
  for (int i = 0; i < k; ++i) acc += std::exp((sim[static_cast<std::size_t>(i)] - mx) / tau);
  return -mx - tau * std::log(acc / k);
}

double score_mahalanobis(const Eigen::RowVectorXd& z, const ReferenceSet& ref) {
  if (ref.class_means.empty()) throw AnomalyError("score_mahalanobis: reference not fitted");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [cls, mu] : ref.class_means) {
    Eigen::VectorXd d = z.transpose() - mu;
    best = std::min(best, d.dot(ref.tied_cov_inv * d));
  }
  return best;
}

double score_gmm(const Eigen::RowVectorXd& z, const ReferenceSet& ref) {
  const Gmm& g = ref.gmm;
  if (g.weights.empty()) throw AnomalyError("score_gmm: reference not fitted");
  Eigen::VectorXd lp(static_cast<long>(g.weights.size()));
  for (std::size_t c = 0; c < g.weights.size(); ++c) {
    GaussEval ev(g.covs[c]);
    lp(static_cast<long>(c)) =
        std::log(std::max(g.weights[c], 1e-300)) + ev.log_density(z.transpose(), g.means[c]);
  }
  double mx = lp.maxCoeff();
  return -(mx + std::log((lp.array() - mx).exp().sum()));
}

AnomalyReport evaluate_anomaly(const std::vector<double>& background_scores,
                               const std::map<int, std::vector<double>>& signal_scores) {
  if (background_scores.empty() || signal_scores.empty())
    throw AnomalyError("evaluate_anomaly: empty score sets");
  AnomalyReport rep;
  std::vector<double> pooled_scores(background_scores);
  std::vector<int> pooled_flags(background_scores.size(), 0);
  for (const auto& [cls, sig] : signal_scores) {
    if (sig.empty()) throw AnomalyError("evaluate_anomaly: empty score set for signal class " +
                                        std::to_string(cls));
    std::vector<double> s(background_scores);
    std::vector<int> f(background_scores.size(), 0);
    s.insert(s.end(), sig.begin(), sig.end());
    f.insert(f.end(), sig.size(), 1);
    rep.per_signal[cls] = roc_curve(s, f);
    pooled_scores.insert(pooled_scores.end(), sig.begin(), sig.end());
    pooled_flags.insert(pooled_flags.end(), sig.size(), 1);
  }
  rep.combined = roc_curve(pooled_scores, pooled_flags);
  return rep;
}

}  // namespace jbot
