#include <jbot/distill.hpp>
#include <jbot/downstream.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jbot {

EmbeddingSet embed_dataset(const JetDataset& d, ModelParams<double>& params) {
  NoGrad ng;
  EmbeddingSet e;
  e.vectors = Mat<double>(static_cast<long>(d.jets.size()), params.cfg.d_model);
  e.labels.reserve(d.jets.size());
  for (std::size_t i = 0; i < d.jets.size(); ++i) {
    Tensor<double> enc = forward_full(d.jets[i], params, false);
    e.vectors.row(static_cast<long>(i)) = enc.value().row(0);
    e.labels.push_back(d.jets[i].label);
  }
  if (!e.vectors.allFinite()) throw EvalError("embed_dataset: non-finite embeddings");
  return e;
}

void l2_normalize(EmbeddingSet& e) {
  for (long r = 0; r < e.vectors.rows(); ++r) {
    double n = e.vectors.row(r).norm();
    if (n > 0) e.vectors.row(r) /= n;
  }
  e.normalized = true;
}

ProbeResult knn_probe(const EmbeddingSet& train, const EmbeddingSet& test, int k, int n_classes) {
  if (k <= 0) throw EvalError("knn_probe: k must be positive");
  long m = train.vectors.rows();
  if (m == 0) throw EvalError("knn_probe: empty training set");
  if (k > m) throw EvalError("knn_probe: k exceeds training set size");

  ProbeResult res;
  long n = test.vectors.rows();
  res.scores = Mat<double>::Zero(n, n_classes);
  res.predictions.resize(static_cast<std::size_t>(n));
  std::vector<std::pair<double, long>> dist(static_cast<std::size_t>(m));
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < m; ++j)
      dist[static_cast<std::size_t>(j)] = {(test.vectors.row(i) - train.vectors.row(j)).norm(), j};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int q = 0; q < k; ++q)
      res.scores(i, train.labels[static_cast<std::size_t>(dist[static_cast<std::size_t>(q)].second)]) +=
          1.0 / k;
    long best = 0;
    res.scores.row(i).maxCoeff(&best);
    res.predictions[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return res;
}

namespace {

// full-batch softmax-regression objective with a tiny ridge term
struct LogisticObjective {
  const Mat<double>& x;  // n x (d+1), bias column appended
  const std::vector<int>& y;
  int n_classes;
  double ridge = 1e-6;

  double loss(const Mat<double>& w, Mat<double>* grad) const {
    long n = x.rows();
    Mat<double> logits = x * w;  // n x C
    double total = 0;
    Mat<double> dl = Mat<double>::Zero(n, n_classes);
    for (long i = 0; i < n; ++i) {
      double mx = logits.row(i).maxCoeff();
      Eigen::ArrayXd e = (logits.row(i).transpose().array() - mx).exp();
      double z = e.sum();
      total -= logits(i, y[static_cast<std::size_t>(i)]) - mx - std::log(z);
      if (grad) {
        dl.row(i) = (e / z).matrix().transpose();
        dl(i, y[static_cast<std::size_t>(i)]) -= 1.0;
      }
    }
    total = total / static_cast<double>(n) + 0.5 * ridge * w.squaredNorm();
    if (grad) *grad = x.transpose() * dl / static_cast<double>(n) + ridge * w;
    return total;
  }
};

}  // namespace

ProbeResult linear_probe(const EmbeddingSet& train, const EmbeddingSet& test, int n_classes) {
  long n = train.vectors.rows(), d = train.vectors.cols();
  if (n == 0) throw EvalError("linear_probe: empty training set");
  std::vector<int> seen(static_cast<std::size_t>(n_classes), 0);
  for (int l : train.labels) seen[static_cast<std::size_t>(l)] = 1;
  if (std::accumulate(seen.begin(), seen.end(), 0) < 2)
    throw EvalError("linear_probe: training set holds a single class");

  Mat<double> xb(n, d + 1);
  xb.leftCols(d) = train.vectors;
  xb.col(d).setOnes();
  LogisticObjective obj{xb, train.labels, n_classes};

  Mat<double> w = Mat<double>::Zero(d + 1, n_classes);
  Mat<double> g;
  double f = obj.loss(w, &g);
  double step = 1.0;
  for (int it = 0; it < 5000; ++it) {
    double gn = g.norm();
    if (gn < 1e-7) break;
    // backtracking line search, re-extending the step after each success
    double fn = 0;
    Mat<double> wn;
    bool accepted = false;
    for (int bt = 0; bt < 50; ++bt) {
      wn = w - step * g;
      fn = obj.loss(wn, nullptr);
      if (fn <= f - 1e-4 * step * gn * gn) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    double drop = f - fn;
    w = wn;
    f = obj.loss(w, &g);
    step *= 2.0;
    if (drop < 1e-10 * (1.0 + std::abs(f))) break;
  }

  ProbeResult res;
  long nt = test.vectors.rows();
  Mat<double> xt(nt, d + 1);
  xt.leftCols(d) = test.vectors;
  xt.col(d).setOnes();
  Mat<double> logits = xt * w;
  res.scores = Mat<double>(nt, n_classes);
  res.predictions.resize(static_cast<std::size_t>(nt));
  for (long i = 0; i < nt; ++i) {
    double mx = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).transpose().array() - mx).exp();
    res.scores.row(i) = (e / e.sum()).matrix().transpose();
    long best = 0;
    res.scores.row(i).maxCoeff(&best);
    res.predictions[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return res;
}

double auc_exact(const std::vector<double>& scores, const std::vector<int>& is_signal) {
  if (scores.size() != is_signal.size()) throw EvalError("auc_exact: length mismatch");
  long ns = 0, nb = 0;
  for (int s : is_signal) (s ? ns : nb)++;
  if (ns == 0 || nb == 0) throw EvalError("auc_exact: need both signal and background");

  // average ranks with tie correction
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_signal = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t q = i; q <= j; ++q)
      if (is_signal[order[q]]) rank_sum_signal += avg_rank;
    i = j + 1;
  }
  return (rank_sum_signal - 0.5 * static_cast<double>(ns) * (static_cast<double>(ns) + 1)) /
         (static_cast<double>(ns) * static_cast<double>(nb));
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& is_signal) {
  if (scores.empty() || scores.size() != is_signal.size())
    throw EvalError("roc_curve: empty or mismatched inputs");
  long ns = 0, nb = 0;
  for (int s : is_signal) (s ? ns : nb)++;
  if (ns == 0 || nb == 0) throw EvalError("roc_curve: need both signal and background");

  std::vector<double> uniq(scores);
  std::sort(uniq.begin(), uniq.end(), std::greater<double>());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  RocCurve roc;
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.signal_eff.push_back(0);
  roc.background_eff.push_back(0);
  for (double t : uniq) {
    long cs = 0, cb = 0;
    for (std::size_t q = 0; q < scores.size(); ++q)
      if (scores[q] >= t) (is_signal[q] ? cs : cb)++;
    roc.thresholds.push_back(t);
    roc.signal_eff.push_back(static_cast<double>(cs) / static_cast<double>(ns));
    roc.background_eff.push_back(static_cast<double>(cb) / static_cast<double>(nb));
  }
  roc.auc = auc_exact(scores, is_signal);
  return roc;
}

double eps_s_at(const RocCurve& roc, double target_eps_b) {
  double best = 0;
  for (std::size_t i = 0; i < roc.thresholds.size(); ++i)
    if (roc.background_eff[i] <= target_eps_b) best = std::max(best, roc.signal_eff[i]);
  return best;
}

ClassMetrics classification_metrics(const Mat<double>& scores, const std::vector<int>& labels) {
  if (scores.rows() != static_cast<long>(labels.size()))
    throw EvalError("classification_metrics: score/label length mismatch");
  int n_classes = static_cast<int>(scores.cols());
  ClassMetrics m;
  m.auc.resize(static_cast<std::size_t>(n_classes));
  m.eps_s_1e1.resize(static_cast<std::size_t>(n_classes));
  m.eps_s_1e2.resize(static_cast<std::size_t>(n_classes));

  long correct = 0;
  for (long i = 0; i < scores.rows(); ++i) {
    long best = 0;
    scores.row(i).maxCoeff(&best);
    if (static_cast<int>(best) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  m.accuracy = scores.rows() > 0 ? static_cast<double>(correct) / scores.rows() : 0;

  for (int c = 0; c < n_classes; ++c) {
    std::vector<double> s(static_cast<std::size_t>(scores.rows()));
    std::vector<int> sig(static_cast<std::size_t>(scores.rows()));
    long ns = 0;
    for (long i = 0; i < scores.rows(); ++i) {
      s[static_cast<std::size_t>(i)] = scores(i, c);
      sig[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == c;
      ns += sig[static_cast<std::size_t>(i)];
    }
    if (ns == 0 || ns == scores.rows()) continue;  // undefined, reported absent
    RocCurve roc = roc_curve(s, sig);
    m.auc[static_cast<std::size_t>(c)] = roc.auc;
    m.eps_s_1e1[static_cast<std::size_t>(c)] = eps_s_at(roc, 1e-1);
    m.eps_s_1e2[static_cast<std::size_t>(c)] = eps_s_at(roc, 1e-2);
  }
  return m;
}

Mat<double> pca_2d(const Mat<double>& x) {
  if (x.rows() < 2 || x.cols() < 2) throw EvalError("pca_2d: need at least a 2x2 input");
  Eigen::RowVectorXd mean = x.colwise().mean();
  Mat<double> centered = x.rowwise() - mean;
  Eigen::MatrixXd cov =
      (centered.transpose() * centered).eval() / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Eigen::MatrixXd basis = es.eigenvectors().rightCols(2).rowwise().reverse();
  // deterministic sign: make the largest-magnitude loading positive
  for (int c = 0; c < 2; ++c) {
    long arg = 0;
    basis.col(c).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, c) < 0) basis.col(c) = -basis.col(c);
  }
  return centered * basis;
}

// ---------------------------------------------------------------------------
// fine-tuning
// ---------------------------------------------------------------------------

namespace {

double eval_accuracy(const JetDataset& d, ModelParams<double>& P) {
  NoGrad ng;
  long correct = 0;
  for (const Jet& j : d.jets) {
    Tensor<double> enc = forward_full(j, P, false);
    Tensor<double> logits = classify(slice_rows(enc, 0, 1), P);
    long best = 0;
    logits.value().row(0).maxCoeff(&best);
    if (static_cast<int>(best) == j.label) ++correct;
  }
  return d.jets.empty() ? 0 : static_cast<double>(correct) / static_cast<double>(d.jets.size());
}

ModelParams<double> init_finetune_params(const NetworkConfig& net,
                                         const ModelParams<double>* pretrained,
                                         std::uint64_t seed) {
  ModelParams<double> P = make_params<double>(net, seed);
  if (pretrained) {
    for (std::size_t i = 0; i < P.names.size(); ++i) {
      const std::string& n = P.names[i];
      if (n.rfind("clf.", 0) == 0) continue;  // head stays freshly initialized
      auto it = pretrained->index.find(n);
      if (it == pretrained->index.end())
        throw EvalError("finetune: pretrained checkpoint lacks parameter '" + n + "'");
      const Mat<double>& src = pretrained->params[it->second].value();
      Mat<double>& dst = P.params[i].mutable_value();
      if (src.rows() != dst.rows() || src.cols() != dst.cols())
        throw EvalError("finetune: shape mismatch for '" + n + "'");
      dst = src;
    }
  }
  return P;
}

ModelParams<double> train_classifier(const NetworkConfig& net,
                                     const ModelParams<double>* pretrained,
                                     const JetDataset& train, double decay, double lr,
                                     const FinetuneOptions& opt, std::uint64_t stream_tag) {
  ModelParams<double> P = init_finetune_params(net, pretrained, opt.seed);
  AdamW<double> adam;
  adam.init(P);
  std::vector<double> mult(P.params.size());
  for (std::size_t i = 0; i < P.params.size(); ++i)
    mult[i] = std::pow(decay, static_cast<double>(P.depth[i]));

  long n = static_cast<long>(train.jets.size());
  long bs = std::min<long>(opt.batch_size, n);
  long step = 0;
  for (long epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler = Rng::stream(opt.seed, "ft-batch", stream_tag, static_cast<std::uint64_t>(epoch));
    shuffler.shuffle(order);
    for (long at = 0; at < n; at += bs) {
      long take = std::min(bs, n - at);
      Tensor<double> acc;
      for (long q = 0; q < take; ++q) {
        const Jet& j = train.jets[order[static_cast<std::size_t>(at + q)]];
        Rng rng_d = Rng::stream(opt.seed, "ft-dropout", stream_tag,
                                static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(q));
        Tensor<double> enc = forward_full(j, P, true, &rng_d);
        Tensor<double> logits = classify(slice_rows(enc, 0, 1), P);
        Mat<double> onehot = Mat<double>::Zero(1, net.n_classes);
        onehot(0, j.label) = 1.0;
        Tensor<double> l = cross_entropy_rows(onehot, logits, 1.0, 1e-12);
        acc = acc.defined() ? add(acc, l) : l;
      }
      Tensor<double> loss = scale(acc, 1.0 / static_cast<double>(take));
      if (!std::isfinite(loss.value()(0, 0)))
        throw EvalError("finetune: non-finite loss at step " + std::to_string(step));
      backward(loss);
      adam.step(P, lr, opt.weight_decay, &mult);
      ++step;
    }
  }
  return P;
}

}  // namespace

FinetuneResult finetune(const NetworkConfig& net_in, const ModelParams<double>* pretrained,
                        const JetDataset& train, const JetDataset& val,
                        const FinetuneOptions& opt) {
  if (train.jets.empty()) throw EvalError("finetune: empty training set");
  if (train.n_classes < 2) throw EvalError("finetune: need at least 2 classes");
  NetworkConfig net = net_in;
  net.n_classes = train.n_classes;
  if (pretrained && pretrained->cfg.d_model != net.d_model)
    throw EvalError("finetune: checkpoint d_model differs from requested architecture");

  std::vector<double> decays = pretrained ? opt.decays : std::vector<double>{1.0};
  FinetuneResult res;
  bool first = true;
  std::uint64_t tag = 0;
  for (double decay : decays)
    for (double lr : opt.lrs) {
      ModelParams<double> P = train_classifier(net, pretrained, train, decay, lr, opt, tag++);
      GridPoint gp{decay, lr, eval_accuracy(val, P)};
      res.grid.push_back(gp);
      if (first || gp.val_accuracy > res.best_val_accuracy) {
        res.best = std::move(P);
        res.best_val_accuracy = gp.val_accuracy;
        res.best_decay = decay;
        res.best_lr = lr;
        first = false;
      }
    }
  return res;
}

Mat<double> classifier_scores(const JetDataset& d, ModelParams<double>& params) {
  NoGrad ng;
  if (params.cfg.n_classes <= 0) throw EvalError("classifier_scores: model has no classifier head");
  Mat<double> out(static_cast<long>(d.jets.size()), params.cfg.n_classes);
  for (std::size_t i = 0; i < d.jets.size(); ++i) {
    Tensor<double> enc = forward_full(d.jets[i], params, false);
    Tensor<double> logits = classify(slice_rows(enc, 0, 1), params);
    Eigen::ArrayXd e =
        (logits.value().row(0).transpose().array() - logits.value().row(0).maxCoeff()).exp();
    out.row(static_cast<long>(i)) = (e / e.sum()).matrix().transpose();
  }
  return out;
}

}  // namespace jbot
