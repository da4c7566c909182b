#pragma once

// Teacher-student self-distillation: EMA teacher, separate [CLS]/particle
// centering, temperature sharpening, the masked-particle / cross-view / KoLeo
// losses, AdamW, schedules, and the training loop with metric logging.

#include <jbot/augment.hpp>
#include <jbot/jet.hpp>
#include <jbot/model.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace jbot {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DistillConfig {
  double tau_teacher = 0.04;
  double tau_student = 0.1;
  double tau_center = 0.9;
  double ema_start = 0.996;
  double ema_end = 1.0;
  double koleo_lambda = 0.01;
  double base_lr = 5e-4;
  long lr_ref_batch = 256;   // lr scales as batch_size / lr_ref_batch
  long warmup_epochs = 10;
  std::string lr_schedule = "constant";  // after warmup: constant | cosine
  long batch_size = 1024;
  double weight_decay = 1e-4;
  long epochs = 100;
  std::string koleo_space = "encoder";  // encoder | projection [CLS] rows
  double log_floor = 1e-12;
  double koleo_eps = 1e-8;

  void validate() const {
    if (tau_teacher <= 0 || tau_student <= 0)
      throw TrainError("DistillConfig: temperatures must be positive");
    if (tau_center < 0 || tau_center >= 1)
      throw TrainError("DistillConfig: tau_center must be in [0, 1)");
    if (koleo_lambda < 0) throw TrainError("DistillConfig: koleo_lambda must be non-negative");
    if (ema_start < 0 || ema_end > 1 || ema_start > ema_end)
      throw TrainError("DistillConfig: ema schedule must satisfy 0 <= start <= end <= 1");
    if (batch_size < 2) throw TrainError("DistillConfig: batch_size must be at least 2");
    if (epochs < 1 || warmup_epochs < 0) throw TrainError("DistillConfig: bad epoch counts");
    if (base_lr <= 0 || lr_ref_batch <= 0 || weight_decay < 0)
      throw TrainError("DistillConfig: bad optimizer settings");
    if (lr_schedule != "constant" && lr_schedule != "cosine")
      throw TrainError("DistillConfig: lr_schedule must be constant or cosine");
    if (koleo_space != "encoder" && koleo_space != "projection")
      throw TrainError("DistillConfig: koleo_space must be encoder or projection");
  }
};

// ---------------------------------------------------------------------------
// schedules
// ---------------------------------------------------------------------------

inline double ema_momentum_at(long step, long total_steps, double start = 0.996,
                              double end = 1.0) {
  if (step < 0 || step > total_steps || total_steps <= 0)
    throw TrainError("ema_momentum_at: step outside [0, total_steps]");
  double c = (std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps)) + 1.0) / 2.0;
  return end - (end - start) * c;
}

inline double lr_at(long step, const DistillConfig& cfg, long steps_per_epoch, long total_steps) {
  double peak = cfg.base_lr * static_cast<double>(cfg.batch_size) /
                static_cast<double>(cfg.lr_ref_batch);
  long warmup = cfg.warmup_epochs * steps_per_epoch;
  if (warmup > 0 && step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (cfg.lr_schedule == "cosine") {
    long rest = std::max<long>(total_steps - warmup, 1);
    double t = static_cast<double>(std::min(step - warmup, rest)) / static_cast<double>(rest);
    return peak * 0.5 * (std::cos(M_PI * t) + 1.0);
  }
  return peak;
}

// ---------------------------------------------------------------------------
// teacher-side probability pipeline (plain matrices, no graph)
// ---------------------------------------------------------------------------

template <typename S>
Mat<S> center_and_sharpen(const Mat<S>& logits, const Mat<S>& center, S tau_teacher) {
  if (center.rows() != 1 || center.cols() != logits.cols())
    throw TrainError("center_and_sharpen: center width mismatch");
  Mat<S> p(logits.rows(), logits.cols());
  for (long r = 0; r < logits.rows(); ++r) {
    Eigen::Array<S, 1, Eigen::Dynamic> x =
        (logits.row(r) - center.row(0)).array() / tau_teacher;
    S m = x.maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (x - m).exp();
    p.row(r) = (e / e.sum()).matrix();
  }
  return p;
}

template <typename S>
void update_center(Mat<S>& center, const Mat<S>& batch_mean, S tau_center) {
  if (tau_center < 0 || tau_center >= 1)
    throw TrainError("update_center: tau_center must be in [0, 1)");
  center = tau_center * center + (S(1) - tau_center) * batch_mean;
}

template <typename S>
S mean_entropy(const Mat<S>& probs) {
  S h = 0;
  for (long r = 0; r < probs.rows(); ++r)
    for (long c = 0; c < probs.cols(); ++c) {
      S p = probs(r, c);
      if (p > 0) h -= p * std::log(p);
    }
  return probs.rows() > 0 ? h / static_cast<S>(probs.rows()) : S(0);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Mean over rows of the cross entropy -sum_j t_j log softmax(s/tau)_j against
/// constant teacher rows. Gradient reaches the student logits only.
template <typename S>
Tensor<S> cross_entropy_rows(const Mat<S>& teacher_probs, const Tensor<S>& student_logits,
                             S tau_student, S floor) {
  if (teacher_probs.rows() != student_logits.rows() ||
      teacher_probs.cols() != student_logits.cols())
    throw TrainError("cross_entropy_rows: teacher/student shape mismatch");
  Tensor<S> logp = log_clamped(softmax_rows(student_logits, tau_student), floor);
  Tensor<S> per_row = rowwise_sum(mul(Tensor<S>(Mat<S>(teacher_probs)), logp));
  return scale(mean(per_row), S(-1));
}

/// KoLeo regularizer on one view's [CLS] rows: rows are l2-normalized and the
/// loss is -mean log(nearest-neighbor distance + eps).
template <typename S>
Tensor<S> loss_koleo(const Tensor<S>& cls_rows, S eps) {
  if (cls_rows.rows() < 2) throw TrainError("loss_koleo: need at least 2 rows");
  long n = cls_rows.rows();
  Tensor<S> z = l2_normalize_rows(cls_rows);
  Tensor<S> d = pairwise_distance(z);
  Mat<S> offdiag = Mat<S>::Constant(n, n, S(1));
  for (long i = 0; i < n; ++i) offdiag(i, i) = S(0);
  Tensor<S> nn = rowwise_min(masked_fill(d, offdiag, S(1e30)));
  return scale(mean(log_clamped(add_const(nn, eps), S(1e-30))), S(-1));
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

template <typename S>
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Mat<S>> m, v;
  long t = 0;

  void init(const ModelParams<S>& P) {
    m.clear();
    v.clear();
    for (const auto& p : P.params) {
      m.push_back(Mat<S>::Zero(p.rows(), p.cols()));
      v.push_back(Mat<S>::Zero(p.rows(), p.cols()));
    }
  }

  /// One decoupled-weight-decay update; lr_mult scales the rate per parameter
  /// (layerwise decay in fine-tuning). Parameters without a gradient in this
  /// step are left untouched. Gradients are consumed (cleared).
  void step(ModelParams<S>& P, double lr, double weight_decay,
            const std::vector<double>* lr_mult = nullptr) {
    if (m.size() != P.params.size()) throw TrainError("AdamW: not initialized for this model");
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < P.params.size(); ++i) {
      auto& p = P.params[i];
      if (!p.has_grad()) continue;
      const Mat<S>& g = p.grad();
      m[i] = S(beta1) * m[i] + S(1.0 - beta1) * g;
      v[i] = (S(beta2) * v[i].array() + S(1.0 - beta2) * g.array().square()).matrix();
      double rate = lr * (lr_mult ? (*lr_mult)[i] : 1.0);
      Mat<S> update =
          ((m[i].array() / S(bc1)) / ((v[i].array() / S(bc2)).sqrt() + S(eps))).matrix();
      Mat<S>& w = p.mutable_value();
      if (weight_decay > 0 && !P.decay_exempt[i]) w -= S(rate * weight_decay) * w;
      w -= S(rate) * update;
      p.clear_grad();
    }
  }
};

/// theta_t <- tau * theta_t + (1 - tau) * theta_s elementwise.
template <typename S>
void ema_update(ModelParams<S>& teacher, const ModelParams<S>& student, double tau) {
  if (tau < 0 || tau > 1) throw TrainError("ema_update: tau must be in [0, 1]");
  if (teacher.params.size() != student.params.size())
    throw TrainError("ema_update: parameter sets differ");
  for (std::size_t i = 0; i < teacher.params.size(); ++i) {
    Mat<S>& t = teacher.params[i].mutable_value();
    const Mat<S>& s = student.params[i].value();
    if (t.rows() != s.rows() || t.cols() != s.cols())
      throw TrainError("ema_update: shape mismatch at '" + teacher.names[i] + "'");
    t = S(tau) * t + S(1.0 - tau) * s;
  }
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct StepMetrics {
  long step = 0;
  double lr = 0, tau_ema = 0;
  double loss_total = 0, loss_part = 0, loss_cls = 0, loss_koleo = 0;
  double teacher_entropy = 0, center_cls_norm = 0, center_part_norm = 0;
};

template <typename S>
struct TrainState {
  ModelParams<S> student;
  ModelParams<S> teacher;
  Mat<S> center_cls, center_part;  // 1 x d_proj
  AdamW<S> opt;
  long step = 0;
  long total_steps = 0;
  long steps_per_epoch = 0;
  std::uint64_t seed = 0;

  static TrainState init(const NetworkConfig& net, std::uint64_t seed, long total_steps,
                         long steps_per_epoch) {
    TrainState st;
    st.student = make_params<S>(net, seed);
    st.teacher = clone_params(st.student, false);
    st.center_cls = Mat<S>::Zero(1, net.d_proj());
    st.center_part = Mat<S>::Zero(1, net.d_proj());
    st.opt.init(st.student);
    st.total_steps = total_steps;
    st.steps_per_epoch = steps_per_epoch;
    st.seed = seed;
    return st;
  }
};

/// One optimization step over a batch of jets: views + masks, student forward
/// on masked views, teacher forward (no grad, no dropout) on full views, the
/// three losses, AdamW on the student, EMA onto the teacher, center updates.
template <typename S>
StepMetrics train_step(TrainState<S>& st, const std::vector<const Jet*>& batch,
                       const DistillConfig& cfg, const AugmentConfig& aug) {
  if (batch.size() < 2) throw TrainError("train_step: batch must hold at least 2 jets");
  long B = static_cast<long>(batch.size());
  const S tau_s = static_cast<S>(cfg.tau_student);
  const S tau_t = static_cast<S>(cfg.tau_teacher);
  const S floor = static_cast<S>(cfg.log_floor);
  long dp = st.student.cfg.d_proj();

  Tensor<S> part_acc, cls_acc;
  long part_views = 0;  // views contribute 0 when nothing is masked
  std::vector<Tensor<S>> koleo_rows;

  // teacher-side accumulators for the post-step center update
  Mat<S> sum_cls_logits = Mat<S>::Zero(1, dp);
  long n_cls_rows = 0;
  Mat<S> sum_part_logits = Mat<S>::Zero(1, dp);
  long n_part_rows = 0;
  S entropy_sum = 0;

  for (long i = 0; i < B; ++i) {
    const Jet& jet = *batch[static_cast<std::size_t>(i)];
    Rng rng_u = Rng::stream(st.seed, "augment", static_cast<std::uint64_t>(st.step),
                            static_cast<std::uint64_t>(i), 0);
    Rng rng_v = Rng::stream(st.seed, "augment", static_cast<std::uint64_t>(st.step),
                            static_cast<std::uint64_t>(i), 1);
    ViewPair vp = make_view_pair(jet, rng_u, rng_v, aug);

    const Jet* views[2] = {&vp.view_u, &vp.view_v};
    const std::vector<int>* masks[2] = {&vp.mask_u, &vp.mask_v};

    // teacher on full views, graph-free
    Mat<S> t_cls_probs[2];
    Mat<S> t_part_logits[2];
    {
      NoGrad ng;
      for (int w = 0; w < 2; ++w) {
        Tensor<S> enc = forward_full(*views[w], st.teacher, false);
        Tensor<S> logits = project(enc, st.teacher);
        Mat<S> cls_logit = logits.value().row(0);
        sum_cls_logits += cls_logit;
        ++n_cls_rows;
        t_cls_probs[w] = center_and_sharpen<S>(cls_logit, st.center_cls, tau_t);
        entropy_sum += mean_entropy(t_cls_probs[w]);

        std::vector<long> midx;
        for (long k = 0; k < kMaxParticles; ++k)
          if ((*masks[w])[static_cast<std::size_t>(k)] != 0) midx.push_back(k + 1);
        if (!midx.empty()) {
          Mat<S> rows(static_cast<long>(midx.size()), dp);
          for (std::size_t r = 0; r < midx.size(); ++r)
            rows.row(static_cast<long>(r)) = logits.value().row(midx[r]);
          for (long r = 0; r < rows.rows(); ++r) sum_part_logits += rows.row(r);
          n_part_rows += rows.rows();
          t_part_logits[w] = std::move(rows);
        }
      }
    }

    // student on masked views, with dropout
    Tensor<S> s_cls_logits[2];
    for (int w = 0; w < 2; ++w) {
      Rng rng_d = Rng::stream(st.seed, "dropout", static_cast<std::uint64_t>(st.step),
                              static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(w));
      std::vector<double> attend;
      Tensor<S> tok = tokenize(*views[w], *masks[w], st.student, attend);
      Tensor<S> enc = encode(std::move(tok), attend, st.student, true, &rng_d);
      Tensor<S> logits = project(enc, st.student);
      s_cls_logits[w] = slice_rows(logits, 0, 1);

      if (w == 0) {
        Tensor<S> cls_embed = cfg.koleo_space == "projection" ? s_cls_logits[0]
                                                              : slice_rows(enc, 0, 1);
        koleo_rows.push_back(cls_embed);
      }

      // same-view masked-particle distillation
      if (t_part_logits[w].size() != 0) {
        std::vector<long> midx;
        for (long k = 0; k < kMaxParticles; ++k)
          if ((*masks[w])[static_cast<std::size_t>(k)] != 0) midx.push_back(k + 1);
        Tensor<S> s_rows = gather_rows(logits, midx);
        Mat<S> t_probs = center_and_sharpen(t_part_logits[w], st.center_part, tau_t);
        Tensor<S> l = cross_entropy_rows(t_probs, s_rows, tau_s, floor);
        part_acc = part_acc.defined() ? add(part_acc, l) : l;
      }
      ++part_views;
    }

    // cross-view [CLS]: teacher(u) -> student(v) and teacher(v) -> student(u)
    Tensor<S> l_uv = cross_entropy_rows(t_cls_probs[0], s_cls_logits[1], tau_s, floor);
    Tensor<S> l_vu = cross_entropy_rows(t_cls_probs[1], s_cls_logits[0], tau_s, floor);
    Tensor<S> l = scale(add(l_uv, l_vu), S(0.5));
    cls_acc = cls_acc.defined() ? add(cls_acc, l) : l;
  }

  // (1/B) sum_jets (l(u)+l(v))/2 == sum over all 2B views / (2B)
  Tensor<S> l_part = part_acc.defined() ? scale(part_acc, S(1) / static_cast<S>(part_views))
                                        : Tensor<S>::scalar(S(0));
  Tensor<S> l_cls = scale(cls_acc, S(1) / static_cast<S>(B));
  Tensor<S> l_kol = loss_koleo(concat_rows(koleo_rows), static_cast<S>(cfg.koleo_eps));
  Tensor<S> total = add(add(l_part, l_cls), scale(l_kol, static_cast<S>(cfg.koleo_lambda)));

  StepMetrics mx;
  mx.step = st.step;
  mx.loss_part = static_cast<double>(l_part.value()(0, 0));
  mx.loss_cls = static_cast<double>(l_cls.value()(0, 0));
  mx.loss_koleo = static_cast<double>(l_kol.value()(0, 0));
  mx.loss_total = static_cast<double>(total.value()(0, 0));
  mx.teacher_entropy = static_cast<double>(entropy_sum / static_cast<S>(2 * B));

  if (!std::isfinite(mx.loss_total))
    throw TrainError("train_step: non-finite loss at step " + std::to_string(st.step));

  backward(total);

  mx.lr = lr_at(st.step, cfg, st.steps_per_epoch, st.total_steps);
  st.opt.step(st.student, mx.lr, cfg.weight_decay);

  mx.tau_ema = ema_momentum_at(std::min(st.step, st.total_steps), std::max<long>(st.total_steps, 1),
                               cfg.ema_start, cfg.ema_end);
  ema_update(st.teacher, st.student, mx.tau_ema);

  if (n_cls_rows > 0)
    update_center(st.center_cls, Mat<S>(sum_cls_logits / static_cast<S>(n_cls_rows)),
                  static_cast<S>(cfg.tau_center));
  if (n_part_rows > 0)
    update_center(st.center_part, Mat<S>(sum_part_logits / static_cast<S>(n_part_rows)),
                  static_cast<S>(cfg.tau_center));
  mx.center_cls_norm = static_cast<double>(st.center_cls.norm());
  mx.center_part_norm = static_cast<double>(st.center_part.norm());

  ++st.step;
  return mx;
}

}  // namespace jbot
