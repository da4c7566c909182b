#pragma once

// Particle tokenizer, ViT-style encoder with validity masking, shared
// projection head, classifier head, attention extraction, and checkpoint I/O.
// Jets are unordered sets, so no positional encodings anywhere.

#include <jbot/jet.hpp>
#include <jbot/npy.hpp>
#include <jbot/rng.hpp>
#include <jbot/tensor.hpp>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace jbot {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetworkConfig {
  long d_model = 32;
  long n_blocks = 2;
  long n_heads = 4;
  double dropout = 0.2;
  bool final_layer_norm = true;
  int n_classes = 0;  // 0: no classifier head

  long d_ff() const { return 4 * d_model; }
  long d_proj() const { return d_model / 2; }
  // d_model need not divide n_heads evenly; heads get floor(d_model/n_heads)
  // dims and the output projection maps back to d_model.
  long head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model < 2 || n_blocks < 1 || n_heads < 1)
      throw ModelError("NetworkConfig: dimensions must be positive");
    if (head_dim() < 1) throw ModelError("NetworkConfig: more heads than channels");
    if (dropout < 0 || dropout >= 1) throw ModelError("NetworkConfig: dropout must be in [0, 1)");
    if (n_classes < 0) throw ModelError("NetworkConfig: n_classes must be non-negative");
  }

  static NetworkConfig preset(const std::string& name) {
    NetworkConfig c;
    if (name == "small") {
      c.d_model = 32;
      c.n_blocks = 2;
      c.n_heads = 4;
    } else if (name == "base") {
      c.d_model = 64;
      c.n_blocks = 4;
      c.n_heads = 6;
    } else {
      throw ModelError("NetworkConfig: unknown preset '" + name + "'");
    }
    return c;
  }
};

template <typename S>
struct ModelParams {
  NetworkConfig cfg;
  std::vector<std::string> names;
  std::vector<Tensor<S>> params;
  std::vector<int> decay_exempt;  // no weight decay: biases, layer norms, tokens
  std::vector<int> depth;         // layerwise-lr-decay depth, 0 = head
  std::unordered_map<std::string, std::size_t> index;

  Tensor<S>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ModelError("ModelParams: unknown parameter '" + name + "'");
    return params[it->second];
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ModelError("ModelParams: unknown parameter '" + name + "'");
    return params[it->second];
  }

  void add(const std::string& name, long r, long c, int exempt, int d) {
    index[name] = params.size();
    names.push_back(name);
    params.emplace_back(Mat<S>::Zero(r, c), true);
    decay_exempt.push_back(exempt);
    depth.push_back(d);
  }

  void check_finite() const {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (!params[i].value().allFinite())
        throw ModelError("ModelParams: non-finite values in '" + names[i] + "'");
  }
};

namespace detail {

template <typename S>
void trunc_normal_init(Mat<S>& m, Rng& rng, double std_dev) {
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) {
      double v;
      do {
        v = rng.normal();
      } while (std::abs(v) > 2.0);
      m(r, c) = static_cast<S>(v * std_dev);
    }
}

}  // namespace detail

/// Builds the full parameter set. Depths for layerwise lr decay: heads 0, then
/// final norm and blocks counting down from the top, embedding layer deepest.
template <typename S>
ModelParams<S> make_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<S> P;
  P.cfg = cfg;
  long dm = cfg.d_model, dh = cfg.head_dim() * cfg.n_heads, dp = cfg.d_proj();
  int embed_depth = static_cast<int>(cfg.n_blocks) + 1;

  P.add("token_embed.w", kFeatures, dm, 0, embed_depth);
  P.add("token_embed.b", 1, dm, 1, embed_depth);
  P.add("cls_token", 1, dm, 1, embed_depth);
  P.add("mask_token", 1, dm, 1, embed_depth);
  for (long b = 0; b < cfg.n_blocks; ++b) {
    std::string pre = "block" + std::to_string(b) + ".";
    int d = static_cast<int>(cfg.n_blocks - b);
    P.add(pre + "ln1.g", 1, dm, 1, d);
    P.add(pre + "ln1.b", 1, dm, 1, d);
    P.add(pre + "attn.wq", dm, dh, 0, d);
    P.add(pre + "attn.bq", 1, dh, 1, d);
    P.add(pre + "attn.wk", dm, dh, 0, d);
    P.add(pre + "attn.bk", 1, dh, 1, d);
    P.add(pre + "attn.wv", dm, dh, 0, d);
    P.add(pre + "attn.bv", 1, dh, 1, d);
    P.add(pre + "attn.wo", dh, dm, 0, d);
    P.add(pre + "attn.bo", 1, dm, 1, d);
    P.add(pre + "ln2.g", 1, dm, 1, d);
    P.add(pre + "ln2.b", 1, dm, 1, d);
    P.add(pre + "ff.w1", dm, cfg.d_ff(), 0, d);
    P.add(pre + "ff.b1", 1, cfg.d_ff(), 1, d);
    P.add(pre + "ff.w2", cfg.d_ff(), dm, 0, d);
    P.add(pre + "ff.b2", 1, dm, 1, d);
  }
  if (cfg.final_layer_norm) {
    P.add("final_ln.g", 1, dm, 1, 1);
    P.add("final_ln.b", 1, dm, 1, 1);
  }
  P.add("proj.w1", dm, 8 * dp, 0, 0);
  P.add("proj.b1", 1, 8 * dp, 1, 0);
  P.add("proj.w2", 8 * dp, dp, 0, 0);
  P.add("proj.b2", 1, dp, 1, 0);
  P.add("proj.w3", dp, dp, 0, 0);
  P.add("proj.b3", 1, dp, 1, 0);
  if (cfg.n_classes > 0) {
    P.add("clf.w1", dm, 2 * dm, 0, 0);
    P.add("clf.b1", 1, 2 * dm, 1, 0);
    P.add("clf.w2", 2 * dm, dm, 0, 0);
    P.add("clf.b2", 1, dm, 1, 0);
    P.add("clf.w3", dm, cfg.n_classes, 0, 0);
    P.add("clf.b3", 1, cfg.n_classes, 1, 0);
  }

  // add() zero-fills, which already covers every bias; norm gains become one
  // and weight matrices + tokens draw truncated normals in declaration order.
  // Weights scale as 1/sqrt(fan_in) so activations keep their magnitude at any
  // width, with the He-style sqrt(2) gain where a gelu follows.
  Rng rng = Rng::stream(seed, "init");
  for (std::size_t i = 0; i < P.params.size(); ++i) {
    const std::string& n = P.names[i];
    Mat<S>& v = P.params[i].mutable_value();
    bool ln_gain = n.find("ln") != std::string::npos && n.back() == 'g';
    bool weight = n.find(".w") != std::string::npos;
    bool token = n == "cls_token" || n == "mask_token";
    bool gelu_fed = n.find("ff.w1") != std::string::npos || n == "proj.w1" || n == "proj.w2" ||
                    n == "clf.w1" || n == "clf.w2";
    if (ln_gain)
      v.setOnes();
    else if (weight)
      detail::trunc_normal_init(
          v, rng, (gelu_fed ? std::sqrt(2.0) : 1.0) / std::sqrt(static_cast<double>(v.rows())));
    else if (token)
      detail::trunc_normal_init(v, rng, 1.0 / std::sqrt(static_cast<double>(v.cols())));
  }
  return P;
}

/// Deep copy with fresh leaves (used to spawn the teacher from the student).
template <typename S>
ModelParams<S> clone_params(const ModelParams<S>& P, bool requires_grad) {
  ModelParams<S> Q;
  Q.cfg = P.cfg;
  Q.names = P.names;
  Q.decay_exempt = P.decay_exempt;
  Q.depth = P.depth;
  Q.index = P.index;
  for (const auto& t : P.params) Q.params.emplace_back(Mat<S>(t.value()), requires_grad);
  return Q;
}

/// Embeds particle features, swaps masked rows for the mask token, prepends
/// [CLS]. Returns the (N_p+1) x d_model token matrix; `attend` flags which
/// rows may serve as attention keys.
template <typename S>
Tensor<S> tokenize(const Jet& j, const std::vector<int>& mask, ModelParams<S>& P,
                   std::vector<double>& attend) {
  if (static_cast<long>(mask.size()) != kMaxParticles)
    throw ModelError("tokenize: mask length " + std::to_string(mask.size()) + " != " +
                     std::to_string(kMaxParticles));
  Mat<S> x(kMaxParticles, kFeatures);
  for (long i = 0; i < kMaxParticles; ++i) {
    if (mask[static_cast<std::size_t>(i)] != 0 && j.p(i, kValid) <= 0.5)
      throw ModelError("tokenize: mask selects invalid particle " + std::to_string(i));
    for (long c = 0; c < kFeatures; ++c) x(i, c) = static_cast<S>(j.p(i, c));
  }
  Tensor<S> X(std::move(x));
  Tensor<S> E = add_rowvec(matmul(X, P.at("token_embed.w")), P.at("token_embed.b"));

  bool any_masked = false;
  for (int m : mask) any_masked |= m != 0;
  if (any_masked) {
    Mat<S> keep(kMaxParticles, P.cfg.d_model);
    Mat<S> mcol(kMaxParticles, 1);
    for (long i = 0; i < kMaxParticles; ++i) {
      S m = mask[static_cast<std::size_t>(i)] != 0 ? S(1) : S(0);
      keep.row(i).setConstant(S(1) - m);
      mcol(i, 0) = m;
    }
    E = add(mul(E, Tensor<S>(std::move(keep))),
            matmul(Tensor<S>(std::move(mcol)), P.at("mask_token")));
  }

  attend.assign(static_cast<std::size_t>(kMaxParticles + 1), 0.0);
  attend[0] = 1.0;
  for (long i = 0; i < kMaxParticles; ++i)
    attend[static_cast<std::size_t>(i + 1)] = j.p(i, kValid) > 0.5 ? 1.0 : 0.0;
  return concat_rows<S>({P.at("cls_token"), E});
}

/// Captured attention maps: per head of the last block, the full softmax
/// weights (rows = queries, cols = keys).
template <typename S>
struct EncodeTrace {
  std::vector<Mat<S>> last_block_attn;
};

/// Pre-norm transformer encoder. Padded rows never contribute as keys; with
/// train_mode the dropout masks are drawn from `rng`, otherwise no randomness.
template <typename S>
Tensor<S> encode(Tensor<S> tokens, const std::vector<double>& attend, ModelParams<S>& P,
                 bool train_mode, Rng* rng = nullptr, EncodeTrace<S>* trace = nullptr) {
  const NetworkConfig& cfg = P.cfg;
  long n = tokens.rows();
  if (static_cast<long>(attend.size()) != n)
    throw ModelError("encode: validity length mismatch");
  long dh = cfg.head_dim();
  S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
  if (train_mode && cfg.dropout > 0 && rng == nullptr)
    throw ModelError("encode: train mode needs an rng for dropout");

  Mat<S> key_keep(n, n);
  for (long i = 0; i < n; ++i)
    for (long k = 0; k < n; ++k) key_keep(i, k) = static_cast<S>(attend[static_cast<std::size_t>(k)]);

  auto dropout = [&](Tensor<S> t) -> Tensor<S> {
    if (!train_mode || cfg.dropout <= 0) return t;
    Mat<S> m(t.rows(), t.cols());
    S scale = S(1) / static_cast<S>(1.0 - cfg.dropout);
    for (long r = 0; r < t.rows(); ++r)
      for (long c = 0; c < t.cols(); ++c)
        m(r, c) = rng->uniform() < cfg.dropout ? S(0) : scale;
    return apply_dropout(t, m);
  };

  Tensor<S> h = std::move(tokens);
  for (long b = 0; b < cfg.n_blocks; ++b) {
    std::string pre = "block" + std::to_string(b) + ".";
    Tensor<S> x = layer_norm_rows(h, P.at(pre + "ln1.g"), P.at(pre + "ln1.b"));
    Tensor<S> Q = add_rowvec(matmul(x, P.at(pre + "attn.wq")), P.at(pre + "attn.bq"));
    Tensor<S> K = add_rowvec(matmul(x, P.at(pre + "attn.wk")), P.at(pre + "attn.bk"));
    Tensor<S> V = add_rowvec(matmul(x, P.at(pre + "attn.wv")), P.at(pre + "attn.bv"));
    std::vector<Tensor<S>> heads;
    for (long hd = 0; hd < cfg.n_heads; ++hd) {
      Tensor<S> q = slice_cols(Q, hd * dh, dh);
      Tensor<S> k = slice_cols(K, hd * dh, dh);
      Tensor<S> v = slice_cols(V, hd * dh, dh);
      Tensor<S> scores = scale(matmul(q, transpose(k)), inv_sqrt_dh);
      scores = masked_fill(scores, key_keep, S(-1e9));
      Tensor<S> A = softmax_rows(scores, S(1));
      if (trace && b == cfg.n_blocks - 1) trace->last_block_attn.push_back(A.value());
      heads.push_back(matmul(A, v));
    }
    Tensor<S> attn_out =
        add_rowvec(matmul(concat_cols(heads), P.at(pre + "attn.wo")), P.at(pre + "attn.bo"));
    h = add(h, dropout(attn_out));

    Tensor<S> x2 = layer_norm_rows(h, P.at(pre + "ln2.g"), P.at(pre + "ln2.b"));
    Tensor<S> ff = add_rowvec(
        matmul(gelu(add_rowvec(matmul(x2, P.at(pre + "ff.w1")), P.at(pre + "ff.b1"))),
               P.at(pre + "ff.w2")),
        P.at(pre + "ff.b2"));
    h = add(h, dropout(ff));
  }
  if (cfg.final_layer_norm) h = layer_norm_rows(h, P.at("final_ln.g"), P.at("final_ln.b"));
  return h;
}

/// Shared projection head, applied rowwise to any number of token rows.
template <typename S>
Tensor<S> project(const Tensor<S>& x, ModelParams<S>& P) {
  Tensor<S> h1 = gelu(add_rowvec(matmul(x, P.at("proj.w1")), P.at("proj.b1")));
  Tensor<S> h2 = gelu(add_rowvec(matmul(h1, P.at("proj.w2")), P.at("proj.b2")));
  return add_rowvec(matmul(h2, P.at("proj.w3")), P.at("proj.b3"));
}

/// Classifier head on [CLS] (or any) rows; logits over n_classes.
template <typename S>
Tensor<S> classify(const Tensor<S>& x, ModelParams<S>& P) {
  if (P.cfg.n_classes <= 0) throw ModelError("classify: model has no classifier head");
  Tensor<S> h1 = gelu(add_rowvec(matmul(x, P.at("clf.w1")), P.at("clf.b1")));
  Tensor<S> h2 = gelu(add_rowvec(matmul(h1, P.at("clf.w2")), P.at("clf.b2")));
  return add_rowvec(matmul(h2, P.at("clf.w3")), P.at("clf.b3"));
}

/// Encoder forward without masking; returns the (N_p+1) x d_model embeddings.
template <typename S>
Tensor<S> forward_full(const Jet& j, ModelParams<S>& P, bool train_mode = false,
                       Rng* rng = nullptr, EncodeTrace<S>* trace = nullptr) {
  std::vector<int> no_mask(static_cast<std::size_t>(kMaxParticles), 0);
  std::vector<double> attend;
  Tensor<S> tok = tokenize(j, no_mask, P, attend);
  return encode(std::move(tok), attend, P, train_mode, rng, trace);
}

/// Last-block [CLS]-query attention over particles: n_heads x N_p, with the
/// [CLS]->[CLS] self-weight dropped and rows renormalized over valid keys.
template <typename S>
Mat<S> extract_cls_attention(const Jet& j, ModelParams<S>& P) {
  NoGrad ng;
  EncodeTrace<S> trace;
  forward_full(j, P, false, nullptr, &trace);
  Mat<S> out = Mat<S>::Zero(P.cfg.n_heads, kMaxParticles);
  for (long h = 0; h < P.cfg.n_heads; ++h) {
    const Mat<S>& A = trace.last_block_attn[static_cast<std::size_t>(h)];
    S total = 0;
    for (long i = 0; i < kMaxParticles; ++i)
      if (j.p(i, kValid) > 0.5) total += A(0, i + 1);
    if (total <= S(0)) continue;
    for (long i = 0; i < kMaxParticles; ++i)
      if (j.p(i, kValid) > 0.5) out(h, i) = A(0, i + 1) / total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_params_manifest(const std::string& dir, const NetworkConfig& cfg,
                          const std::vector<std::string>& names,
                          const std::vector<std::array<long, 2>>& shapes, long step,
                          const std::string& tag);

NetworkConfig load_params_manifest(const std::string& dir, std::vector<std::string>& names,
                                   long& step, std::string& tag);

template <typename S>
void save_checkpoint(const std::string& dir, const ModelParams<S>& P, long step,
                     const std::string& tag) {
  std::filesystem::create_directories(dir);
  std::vector<std::array<long, 2>> shapes;
  for (std::size_t i = 0; i < P.params.size(); ++i) {
    const Mat<S>& v = P.params[i].value();
    shapes.push_back({v.rows(), v.cols()});
    std::vector<double> buf(static_cast<std::size_t>(v.size()));
    for (long r = 0; r < v.rows(); ++r)
      for (long c = 0; c < v.cols(); ++c)
        buf[static_cast<std::size_t>(r * v.cols() + c)] = static_cast<double>(v(r, c));
    npy::save_f64(dir + "/" + P.names[i] + ".npy", {v.rows(), v.cols()}, buf.data());
  }
  save_params_manifest(dir, P.cfg, P.names, shapes, step, tag);
}

template <typename S>
ModelParams<S> load_checkpoint(const std::string& dir, long* step_out = nullptr,
                               std::string* tag_out = nullptr) {
  std::vector<std::string> names;
  long step = 0;
  std::string tag;
  NetworkConfig cfg = load_params_manifest(dir, names, step, tag);
  ModelParams<S> P = make_params<S>(cfg, 0);
  if (names != P.names)
    throw ModelError("load_checkpoint: parameter list in " + dir +
                     " does not match the architecture in its manifest");
  for (std::size_t i = 0; i < P.names.size(); ++i) {
    std::vector<long> shape;
    std::vector<double> buf = npy::load_f64(dir + "/" + P.names[i] + ".npy", shape);
    Mat<S>& v = P.params[i].mutable_value();
    if (shape.size() != 2 || shape[0] != v.rows() || shape[1] != v.cols()) {
      std::string got;
      for (std::size_t s = 0; s < shape.size(); ++s)
        got += (s ? "x" : "") + std::to_string(shape[s]);
      throw ModelError("load_checkpoint: shape mismatch for '" + P.names[i] + "': file has " +
                       got + " but the manifest architecture needs " + std::to_string(v.rows()) +
                       "x" + std::to_string(v.cols()));
    }
    for (long r = 0; r < v.rows(); ++r)
      for (long c = 0; c < v.cols(); ++c)
        v(r, c) = static_cast<S>(buf[static_cast<std::size_t>(r * v.cols() + c)]);
  }
  P.check_finite();
  if (step_out) *step_out = step;
  if (tag_out) *tag_out = tag;
  return P;
}

}  // namespace jbot
