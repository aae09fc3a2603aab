#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "loresmt/rng.hpp"
#include "loresmt/tensor.hpp"

namespace loresmt::model {

struct InvalidConfig : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LengthMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Preset { custom, base, big, bigger };

inline std::string preset_name(Preset p) {
  switch (p) {
    case Preset::base: return "base";
    case Preset::big: return "big";
    case Preset::bigger: return "bigger";
    default: return "custom";
  }
}

inline Preset preset_from_name(const std::string& s) {
  if (s == "base") return Preset::base;
  if (s == "big") return Preset::big;
  if (s == "bigger") return Preset::bigger;
  if (s == "custom") return Preset::custom;
  throw InvalidConfig("unknown preset: " + s);
}

// Encoder-decoder transformer configuration. The named presets keep the layer
// layout of the reference systems (base and big are 6/6, bigger doubles the
// encoder to 12 layers and turns on depth-scaled init) at desk-scale widths.
struct ModelConfig {
  int vocab_size = 0;
  int d_model = 32;
  int n_heads = 4;
  int ffn_dim = 64;
  int enc_layers = 6;
  int dec_layers = 6;
  double dropout = 0.0;
  Preset preset = Preset::custom;
  bool depth_scaled_init = false;
  bool tied_output = true;
  int max_positions = 512;
  std::uint64_t seed = 1;
  int bos_id = 1;  // matches the subword vocab reserved layout
  int eos_id = 2;
  int pad_id = 3;

  void validate() const {
    if (vocab_size <= 0) throw InvalidConfig("vocab_size must be positive");
    if (d_model <= 0 || n_heads <= 0 || ffn_dim <= 0)
      throw InvalidConfig("model dimensions must be positive");
    if (d_model % n_heads != 0)
      throw InvalidConfig("d_model must be divisible by n_heads");
    if (enc_layers < 0 || dec_layers < 0)
      throw InvalidConfig("layer counts must be nonnegative");
    if (dropout < 0 || dropout >= 1) throw InvalidConfig("dropout out of range");
    if (max_positions <= 0) throw InvalidConfig("max_positions must be positive");
  }

  static ModelConfig preset_base(int vocab) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.preset = Preset::base;
    c.d_model = 32;
    c.n_heads = 4;
    c.ffn_dim = 64;
    c.enc_layers = 6;
    c.dec_layers = 6;
    return c;
  }
  static ModelConfig preset_big(int vocab) {
    ModelConfig c = preset_base(vocab);
    c.preset = Preset::big;
    c.d_model = 64;
    c.n_heads = 8;
    c.ffn_dim = 128;
    return c;
  }
  static ModelConfig preset_bigger(int vocab) {
    ModelConfig c = preset_big(vocab);
    c.preset = Preset::bigger;
    c.enc_layers = 12;
    c.dec_layers = 6;
    c.depth_scaled_init = true;
    return c;
  }
  static ModelConfig from_preset(const std::string& name, int vocab) {
    switch (preset_from_name(name)) {
      case Preset::base: return preset_base(vocab);
      case Preset::big: return preset_big(vocab);
      case Preset::bigger: return preset_bigger(vocab);
      default: throw InvalidConfig("custom preset needs explicit dimensions");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"vocab_size", vocab_size},
                          {"d_model", d_model},
                          {"n_heads", n_heads},
                          {"ffn_dim", ffn_dim},
                          {"enc_layers", enc_layers},
                          {"dec_layers", dec_layers},
                          {"dropout", dropout},
                          {"preset", preset_name(preset)},
                          {"depth_scaled_init", depth_scaled_init},
                          {"tied_output", tied_output},
                          {"max_positions", max_positions},
                          {"seed", seed},
                          {"bos_id", bos_id},
                          {"eos_id", eos_id},
                          {"pad_id", pad_id}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.dropout = j.value("dropout", 0.0);
    c.preset = preset_from_name(j.value("preset", "custom"));
    c.depth_scaled_init = j.value("depth_scaled_init", false);
    c.tied_output = j.value("tied_output", true);
    c.max_positions = j.value("max_positions", 512);
    c.seed = j.value("seed", std::uint64_t{1});
    c.bos_id = j.value("bos_id", 1);
    c.eos_id = j.value("eos_id", 2);
    c.pad_id = j.value("pad_id", 3);
    c.validate();
    return c;
  }
};

// --- parameters ---------------------------------------------------------

template <class S>
struct LayerNormP {
  Mat<S> gain;  // 1 x d
  Mat<S> bias;  // 1 x d
};

template <class S>
struct AttnP {
  Mat<S> wq, wk, wv, wo;  // d x d
  Mat<S> bq, bk, bv, bo;  // 1 x d
};

template <class S>
struct FfnP {
  Mat<S> w1;  // d x ffn
  Mat<S> b1;  // 1 x ffn
  Mat<S> w2;  // ffn x d
  Mat<S> b2;  // 1 x d
};

template <class S>
struct EncLayerP {
  LayerNormP<S> ln1;
  AttnP<S> attn;
  LayerNormP<S> ln2;
  FfnP<S> ffn;
};

template <class S>
struct DecLayerP {
  LayerNormP<S> ln1;
  AttnP<S> self_attn;
  LayerNormP<S> ln2;
  AttnP<S> cross_attn;
  LayerNormP<S> ln3;
  FfnP<S> ffn;
};

template <class S>
struct Params {
  Mat<S> embedding;  // V x d, shared source/target table
  Mat<S> out_proj;   // V x d when untied, 0 x 0 when tied to the embedding
  Mat<S> out_bias;   // 1 x V
  std::vector<EncLayerP<S>> enc;
  std::vector<DecLayerP<S>> dec;
  LayerNormP<S> enc_ln;  // final encoder norm
  LayerNormP<S> dec_ln;  // final decoder norm

  // Visits every tensor with a stable name. The traversal order is the
  // serialization and optimizer-update order, so it must not change.
  template <class F>
  void for_each_tensor(F&& f) {
    auto ln = [&](const std::string& prefix, LayerNormP<S>& p) {
      f(prefix + ".gain", p.gain);
      f(prefix + ".bias", p.bias);
    };
    auto attn = [&](const std::string& prefix, AttnP<S>& p) {
      f(prefix + ".wq", p.wq);
      f(prefix + ".bq", p.bq);
      f(prefix + ".wk", p.wk);
      f(prefix + ".bk", p.bk);
      f(prefix + ".wv", p.wv);
      f(prefix + ".bv", p.bv);
      f(prefix + ".wo", p.wo);
      f(prefix + ".bo", p.bo);
    };
    auto ffn = [&](const std::string& prefix, FfnP<S>& p) {
      f(prefix + ".w1", p.w1);
      f(prefix + ".b1", p.b1);
      f(prefix + ".w2", p.w2);
      f(prefix + ".b2", p.b2);
    };
    f("embedding", embedding);
    f("out_proj", out_proj);  // 0 x 0 for tied models, still visited
    f("out_bias", out_bias);
    for (std::size_t l = 0; l < enc.size(); ++l) {
      const std::string p = "enc." + std::to_string(l);
      ln(p + ".ln1", enc[l].ln1);
      attn(p + ".attn", enc[l].attn);
      ln(p + ".ln2", enc[l].ln2);
      ffn(p + ".ffn", enc[l].ffn);
    }
    for (std::size_t l = 0; l < dec.size(); ++l) {
      const std::string p = "dec." + std::to_string(l);
      ln(p + ".ln1", dec[l].ln1);
      attn(p + ".self", dec[l].self_attn);
      ln(p + ".ln2", dec[l].ln2);
      attn(p + ".cross", dec[l].cross_attn);
      ln(p + ".ln3", dec[l].ln3);
      ffn(p + ".ffn", dec[l].ffn);
    }
    ln("enc_ln", enc_ln);
    ln("dec_ln", dec_ln);
  }

  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<Params*>(this)->for_each_tensor(
        [&](const std::string& name, Mat<S>& m) {
          f(name, static_cast<const Mat<S>&>(m));
        });
  }

  void set_zero() {
    for_each_tensor([](const std::string&, Mat<S>& m) { m.setZero(); });
  }

  void add_scaled(const Params& other, S scale) {
    std::vector<Mat<S>*> mine;
    std::vector<const Mat<S>*> theirs;
    for_each_tensor([&](const std::string&, Mat<S>& m) { mine.push_back(&m); });
    other.for_each_tensor(
        [&](const std::string&, const Mat<S>& m) { theirs.push_back(&m); });
    for (std::size_t i = 0; i < mine.size(); ++i)
      *mine[i] += scale * *theirs[i];
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const Mat<S>& m) {
      if (!m.allFinite()) ok = false;
    });
    return ok;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Mat<S>& m) {
      n += static_cast<std::size_t>(m.size());
    });
    return n;
  }

  template <class T>
  Params<T> cast() const {
    Params<T> out;
    out.enc.resize(enc.size());
    out.dec.resize(dec.size());
    std::vector<Mat<T>*> dst;
    out.for_each_tensor(
        [&](const std::string&, Mat<T>& m) { dst.push_back(&m); });
    std::size_t i = 0;
    for_each_tensor([&](const std::string&, const Mat<S>& m) {
      *dst[i++] = m.template cast<T>();
    });
    return out;
  }
};

// --- initialization -----------------------------------------------------

namespace detail {

template <class S>
void fill_uniform(Mat<S>& m, Rng& rng, double limit) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = static_cast<S>(rng.symmetric(limit));
}

template <class S>
void init_linear(Mat<S>& w, Mat<S>& b, int fan_in, int fan_out, Rng& rng,
                 double scale = 1.0) {
  w.resize(fan_in, fan_out);
  fill_uniform(w, rng, scale * std::sqrt(6.0 / (fan_in + fan_out)));
  b = Mat<S>::Zero(1, fan_out);
}

template <class S>
void init_ln(LayerNormP<S>& p, int d) {
  p.gain = Mat<S>::Ones(1, d);
  p.bias = Mat<S>::Zero(1, d);
}

// Residual-branch output matrices of layer l (1-based) get an extra
// 1 / sqrt(l) factor when depth-scaled initialization is on.
template <class S>
void init_attn(AttnP<S>& p, int d, Rng& rng, double out_scale) {
  init_linear(p.wq, p.bq, d, d, rng);
  init_linear(p.wk, p.bk, d, d, rng);
  init_linear(p.wv, p.bv, d, d, rng);
  init_linear(p.wo, p.bo, d, d, rng, out_scale);
}

template <class S>
void init_ffn(FfnP<S>& p, int d, int ffn, Rng& rng, double out_scale) {
  init_linear(p.w1, p.b1, d, ffn, rng);
  init_linear(p.w2, p.b2, ffn, d, rng, out_scale);
}

}  // namespace detail

// Seeded scaled-uniform (Glorot) initialization. The draw order is fixed by
// the parameter layout, so a given (config, seed) always produces the same
// model.
template <class S>
Params<S> init_model(const ModelConfig& cfg) {
  cfg.validate();
  Params<S> p;
  Rng rng(mix_seed(cfg.seed, 0x696e6974ull));
  const int d = cfg.d_model;

  p.embedding.resize(cfg.vocab_size, d);
  detail::fill_uniform(p.embedding, rng, std::sqrt(6.0 / (cfg.vocab_size + d)));
  if (!cfg.tied_output) {
    p.out_proj.resize(cfg.vocab_size, d);
    detail::fill_uniform(p.out_proj, rng,
                         std::sqrt(6.0 / (cfg.vocab_size + d)));
  } else {
    p.out_proj.resize(0, 0);
  }
  p.out_bias = Mat<S>::Zero(1, cfg.vocab_size);

  p.enc.resize(static_cast<std::size_t>(cfg.enc_layers));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const double scale =
        cfg.depth_scaled_init ? 1.0 / std::sqrt(static_cast<double>(l + 1))
                              : 1.0;
    detail::init_ln(p.enc[l].ln1, d);
    detail::init_attn(p.enc[l].attn, d, rng, scale);
    detail::init_ln(p.enc[l].ln2, d);
    detail::init_ffn(p.enc[l].ffn, d, cfg.ffn_dim, rng, scale);
  }
  p.dec.resize(static_cast<std::size_t>(cfg.dec_layers));
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const double scale =
        cfg.depth_scaled_init ? 1.0 / std::sqrt(static_cast<double>(l + 1))
                              : 1.0;
    detail::init_ln(p.dec[l].ln1, d);
    detail::init_attn(p.dec[l].self_attn, d, rng, scale);
    detail::init_ln(p.dec[l].ln2, d);
    detail::init_attn(p.dec[l].cross_attn, d, rng, scale);
    detail::init_ln(p.dec[l].ln3, d);
    detail::init_ffn(p.dec[l].ffn, d, cfg.ffn_dim, rng, scale);
  }
  detail::init_ln(p.enc_ln, d);
  detail::init_ln(p.dec_ln, d);
  return p;
}

template <class S>
Params<S> zeros_like(const Params<S>& p) {
  Params<S> z = p;
  z.set_zero();
  return z;
}

// --- deterministic dropout ------------------------------------------------

// Counter-based mask stream: each dropout site consumes one sub-key, so masks
// depend only on (key, site visit order), not on threading or timing.
struct DropoutCtx {
  double rate = 0.0;
  std::uint64_t key = 0;
  std::uint64_t site = 0;

  bool active() const { return rate > 0.0; }
  void reset(std::uint64_t k) {
    key = k;
    site = 0;
  }
};

template <class S>
Mat<S> dropout_mask(DropoutCtx& ctx, Eigen::Index rows, Eigen::Index cols) {
  Mat<S> mask(rows, cols);
  const double keep = 1.0 - ctx.rate;
  const S scale = static_cast<S>(1.0 / keep);
  const std::uint64_t site_key = mix_seed(ctx.key, ctx.site++);
  std::uint64_t n = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const std::uint64_t bits = split_mix(site_key + ++n);
      const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
      mask(i, j) = u < keep ? scale : S(0);
    }
  return mask;
}

// --- forward building blocks -------------------------------------------------

namespace detail {

template <class S>
Mat<S> linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  Mat<S> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// Attention mask: nonzero = blocked. Row = query position, col = key position.
using MaskMat = Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic,
                              Eigen::RowMajor>;

// Row softmax that skips blocked entries; fully blocked rows come out zero so
// the context vectors for those rows are zero too.
template <class S>
Mat<S> softmax_rows(const Mat<S>& scores, const MaskMat* blocked) {
  Mat<S> p(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    S max_v = std::numeric_limits<S>::lowest();
    bool any = false;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (blocked && (*blocked)(i, j)) continue;
      any = true;
      max_v = std::max(max_v, scores(i, j));
    }
    if (!any) {
      p.row(i).setZero();
      continue;
    }
    S sum = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (blocked && (*blocked)(i, j)) {
        p(i, j) = 0;
      } else {
        p(i, j) = std::exp(scores(i, j) - max_v);
        sum += p(i, j);
      }
    }
    p.row(i) /= sum;
  }
  return p;
}

template <class S>
struct LnCache {
  Mat<S> xhat;     // normalized input
  Vec<S> inv_std;  // per row
};

template <class S>
Mat<S> layer_norm(const Mat<S>& x, const LayerNormP<S>& p, LnCache<S>* cache) {
  constexpr double kEps = 1e-5;
  const Eigen::Index d = x.cols();
  Mat<S> xhat(x.rows(), d);
  Vec<S> inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().sum() / static_cast<S>(d);
    const S istd = S(1) / std::sqrt(var + static_cast<S>(kEps));
    xhat.row(i) = ((x.row(i).array() - mean) * istd).matrix();
    inv_std(i) = istd;
  }
  Mat<S> y = xhat;
  y.array().rowwise() *= p.gain.row(0).array();
  y.rowwise() += p.bias.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const LnCache<S>& c,
                           const LayerNormP<S>& p, LayerNormP<S>& grad) {
  grad.gain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  grad.bias.row(0) += dy.colwise().sum();
  Mat<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    // dxhat = dy .* g; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
    Row<S> dxhat = (dy.row(i).array() * p.gain.row(0).array()).matrix();
    const S m1 = dxhat.mean();
    const S m2 = (dxhat.array() * c.xhat.row(i).array()).mean();
    dx.row(i) =
        ((dxhat.array() - m1 - c.xhat.row(i).array() * m2) * c.inv_std(i))
            .matrix();
  }
  return dx;
}

// Multi-head core over already-projected Q, K, V. Per-head attention weights
// are written to *probs when requested (needed by backward).
template <class S>
Mat<S> heads_attend(const Mat<S>& Q, const Mat<S>& K, const Mat<S>& V,
                    int n_heads, const MaskMat* blocked,
                    std::vector<Mat<S>>* probs = nullptr) {
  const Eigen::Index d = Q.cols();
  const Eigen::Index dk = d / n_heads;
  const S alpha = S(1) / std::sqrt(static_cast<S>(dk));
  Mat<S> C(Q.rows(), d);
  if (probs) probs->resize(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    auto Qh = Q.middleCols(h * dk, dk);
    auto Kh = K.middleCols(h * dk, dk);
    auto Vh = V.middleCols(h * dk, dk);
    Mat<S> scores = alpha * (Qh * Kh.transpose());
    Mat<S> P = softmax_rows(scores, blocked);
    C.middleCols(h * dk, dk) = P * Vh;
    if (probs) (*probs)[static_cast<std::size_t>(h)] = std::move(P);
  }
  return C;
}

template <class S>
struct AttnCache {
  Mat<S> q_in, kv_in;     // activations feeding the projections
  Mat<S> Q, K, V, C;      // projections and concatenated head context
  std::vector<Mat<S>> P;  // per-head attention weights
};

// Multi-head attention. q_in: Lq x d, kv_in: Lk x d (the same object for
// self-attention).
template <class S>
Mat<S> attention(const Mat<S>& q_in, const Mat<S>& kv_in, const AttnP<S>& p,
                 int n_heads, const MaskMat* blocked, AttnCache<S>* cache) {
  Mat<S> Q = linear(q_in, p.wq, p.bq);
  Mat<S> K = linear(kv_in, p.wk, p.bk);
  Mat<S> V = linear(kv_in, p.wv, p.bv);
  Mat<S> C =
      heads_attend(Q, K, V, n_heads, blocked, cache ? &cache->P : nullptr);
  Mat<S> out = linear(C, p.wo, p.bo);
  if (cache) {
    cache->q_in = q_in;
    cache->kv_in = kv_in;
    cache->Q = std::move(Q);
    cache->K = std::move(K);
    cache->V = std::move(V);
    cache->C = std::move(C);
  }
  return out;
}

// Returns the gradient wrt q_in and accumulates the gradient wrt kv_in into
// dkv_in (the caller routes it to the right upstream activation). Blocked
// positions need no special handling: their attention weights are zero, so
// the softmax backward formula sends zero gradient through them.
template <class S>
Mat<S> attention_backward(const Mat<S>& dout, const AttnCache<S>& c,
                          const AttnP<S>& p, int n_heads, AttnP<S>& grad,
                          Mat<S>& dkv_in) {
  const Eigen::Index d = c.q_in.cols();
  const Eigen::Index dk = d / n_heads;
  const S alpha = S(1) / std::sqrt(static_cast<S>(dk));

  grad.wo += c.C.transpose() * dout;
  grad.bo.row(0) += dout.colwise().sum();
  Mat<S> dC = dout * p.wo.transpose();

  Mat<S> dQ(c.Q.rows(), d), dK(c.K.rows(), d), dV(c.V.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    auto Qh = c.Q.middleCols(h * dk, dk);
    auto Kh = c.K.middleCols(h * dk, dk);
    auto Vh = c.V.middleCols(h * dk, dk);
    auto dCh = dC.middleCols(h * dk, dk);
    const Mat<S>& Ph = c.P[static_cast<std::size_t>(h)];

    Mat<S> dP = dCh * Vh.transpose();
    dV.middleCols(h * dk, dk) = Ph.transpose() * dCh;
    // softmax rows: ds = p .* (dp - rowsum(dp .* p))
    Mat<S> dScores(Ph.rows(), Ph.cols());
    for (Eigen::Index i = 0; i < Ph.rows(); ++i) {
      const S dot = (dP.row(i).array() * Ph.row(i).array()).sum();
      dScores.row(i) = (Ph.row(i).array() * (dP.row(i).array() - dot)).matrix();
    }
    dScores *= alpha;
    dQ.middleCols(h * dk, dk) = dScores * Kh;
    dK.middleCols(h * dk, dk) = dScores.transpose() * Qh;
  }

  grad.wq += c.q_in.transpose() * dQ;
  grad.bq.row(0) += dQ.colwise().sum();
  grad.wk += c.kv_in.transpose() * dK;
  grad.bk.row(0) += dK.colwise().sum();
  grad.wv += c.kv_in.transpose() * dV;
  grad.bv.row(0) += dV.colwise().sum();

  dkv_in += dK * p.wk.transpose() + dV * p.wv.transpose();
  return dQ * p.wq.transpose();
}

template <class S>
struct FfnCache {
  Mat<S> h;   // input
  Mat<S> z1;  // pre-activation
  Mat<S> r;   // relu(z1)
};

template <class S>
Mat<S> ffn(const Mat<S>& h, const FfnP<S>& p, FfnCache<S>* cache) {
  Mat<S> z1 = linear(h, p.w1, p.b1);
  Mat<S> r = z1.cwiseMax(S(0));
  Mat<S> out = linear(r, p.w2, p.b2);
  if (cache) {
    cache->h = h;
    cache->z1 = std::move(z1);
    cache->r = std::move(r);
  }
  return out;
}

template <class S>
Mat<S> ffn_backward(const Mat<S>& dout, const FfnCache<S>& c, const FfnP<S>& p,
                    FfnP<S>& grad) {
  grad.w2 += c.r.transpose() * dout;
  grad.b2.row(0) += dout.colwise().sum();
  Mat<S> dr = dout * p.w2.transpose();
  Mat<S> dz1 = ((c.z1.array() > S(0)).template cast<S>() * dr.array()).matrix();
  grad.w1 += c.h.transpose() * dz1;
  grad.b1.row(0) += dz1.colwise().sum();
  return dz1 * p.w1.transpose();
}

// Sinusoidal positional encoding rows [start, start + len).
template <class S>
Mat<S> positional(Eigen::Index start, Eigen::Index len, Eigen::Index d) {
  Mat<S> pe(len, d);
  for (Eigen::Index i = 0; i < len; ++i) {
    const double pos = static_cast<double>(start + i);
    for (Eigen::Index j = 0; j < d; j += 2) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
      pe(i, j) = static_cast<S>(std::sin(pos * freq));
      if (j + 1 < d) pe(i, j + 1) = static_cast<S>(std::cos(pos * freq));
    }
  }
  return pe;
}

template <class S>
Mat<S> embed(const Params<S>& params, const ModelConfig& cfg,
             std::span<const int> ids, Eigen::Index start_pos = 0) {
  const Eigen::Index d = cfg.d_model;
  if (start_pos + static_cast<Eigen::Index>(ids.size()) > cfg.max_positions)
    throw ShapeMismatch("sequence longer than max_positions");
  Mat<S> x(static_cast<Eigen::Index>(ids.size()), d);
  const S scale = std::sqrt(static_cast<S>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= cfg.vocab_size)
      throw ShapeMismatch("token id out of range: " + std::to_string(ids[i]));
    x.row(static_cast<Eigen::Index>(i)) = params.embedding.row(ids[i]) * scale;
  }
  x += positional<S>(start_pos, x.rows(), d);
  return x;
}

template <class S>
void apply_dropout(Mat<S>& x, DropoutCtx* drop, Mat<S>* stored_mask) {
  if (!drop || !drop->active()) return;
  Mat<S> mask = dropout_mask<S>(*drop, x.rows(), x.cols());
  x.array() *= mask.array();
  if (stored_mask) *stored_mask = std::move(mask);
}

}  // namespace detail

// Validity flags over source positions (nonzero = real token). Used to hide
// padding from attention; absent means every position is valid.
using SrcMask = std::vector<unsigned char>;

template <class S>
struct EncLayerCache {
  detail::LnCache<S> ln1, ln2;
  detail::AttnCache<S> attn;
  detail::FfnCache<S> ffn;
  Mat<S> attn_drop, ffn_drop;  // residual dropout masks (empty when inactive)
};

template <class S>
struct DecLayerCache {
  detail::LnCache<S> ln1, ln2, ln3;
  detail::AttnCache<S> self_attn, cross_attn;
  detail::FfnCache<S> ffn;
  Mat<S> self_drop, cross_drop, ffn_drop;
};

template <class S>
struct Cache {
  std::vector<int> src, tgt;
  Mat<S> emb_drop_src, emb_drop_tgt;
  std::vector<EncLayerCache<S>> enc_layers;
  detail::LnCache<S> enc_ln;
  Mat<S> enc_out;
  std::vector<DecLayerCache<S>> dec_layers;
  detail::LnCache<S> dec_ln;
  Mat<S> dec_out;
};

namespace detail {

template <class S>
Mat<S> run_encoder(const Params<S>& params, const ModelConfig& cfg,
                   std::span<const int> src, const MaskMat* blocked,
                   Cache<S>* c, DropoutCtx* drop) {
  Mat<S> x = embed(params, cfg, src);
  apply_dropout(x, drop, c ? &c->emb_drop_src : nullptr);
  if (c) c->enc_layers.resize(params.enc.size());
  for (std::size_t l = 0; l < params.enc.size(); ++l) {
    const auto& lp = params.enc[l];
    auto* lc = c ? &c->enc_layers[l] : nullptr;
    Mat<S> h = layer_norm(x, lp.ln1, lc ? &lc->ln1 : nullptr);
    Mat<S> a =
        attention(h, h, lp.attn, cfg.n_heads, blocked, lc ? &lc->attn : nullptr);
    apply_dropout(a, drop, lc ? &lc->attn_drop : nullptr);
    x += a;
    Mat<S> h2 = layer_norm(x, lp.ln2, lc ? &lc->ln2 : nullptr);
    Mat<S> f = ffn(h2, lp.ffn, lc ? &lc->ffn : nullptr);
    apply_dropout(f, drop, lc ? &lc->ffn_drop : nullptr);
    x += f;
  }
  Mat<S> out = layer_norm(x, params.enc_ln, c ? &c->enc_ln : nullptr);
  if (c) c->enc_out = out;
  return out;
}

template <class S>
Mat<S> run_decoder(const Params<S>& params, const ModelConfig& cfg,
                   std::span<const int> tgt, const Mat<S>& enc_out,
                   const MaskMat* causal, const MaskMat* cross_blocked,
                   Cache<S>* c, DropoutCtx* drop) {
  Mat<S> y = embed(params, cfg, tgt);
  apply_dropout(y, drop, c ? &c->emb_drop_tgt : nullptr);
  if (c) c->dec_layers.resize(params.dec.size());
  for (std::size_t l = 0; l < params.dec.size(); ++l) {
    const auto& lp = params.dec[l];
    auto* lc = c ? &c->dec_layers[l] : nullptr;
    Mat<S> h = layer_norm(y, lp.ln1, lc ? &lc->ln1 : nullptr);
    Mat<S> a = attention(h, h, lp.self_attn, cfg.n_heads, causal,
                         lc ? &lc->self_attn : nullptr);
    apply_dropout(a, drop, lc ? &lc->self_drop : nullptr);
    y += a;
    Mat<S> h2 = layer_norm(y, lp.ln2, lc ? &lc->ln2 : nullptr);
    Mat<S> cr = attention(h2, enc_out, lp.cross_attn, cfg.n_heads,
                          cross_blocked, lc ? &lc->cross_attn : nullptr);
    apply_dropout(cr, drop, lc ? &lc->cross_drop : nullptr);
    y += cr;
    Mat<S> h3 = layer_norm(y, lp.ln3, lc ? &lc->ln3 : nullptr);
    Mat<S> f = ffn(h3, lp.ffn, lc ? &lc->ffn : nullptr);
    apply_dropout(f, drop, lc ? &lc->ffn_drop : nullptr);
    y += f;
  }
  Mat<S> out = layer_norm(y, params.dec_ln, c ? &c->dec_ln : nullptr);
  if (c) c->dec_out = out;
  return out;
}

inline MaskMat causal_mask(Eigen::Index n) {
  MaskMat m = MaskMat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = 1;
  return m;
}

// Column-blocked mask hiding invalid source positions from `rows` queries.
inline MaskMat src_blocked_mask(const SrcMask& valid, Eigen::Index rows) {
  MaskMat m = MaskMat::Zero(rows, static_cast<Eigen::Index>(valid.size()));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    if (!valid[static_cast<std::size_t>(j)]) m.col(j).setConstant(1);
  return m;
}

}  // namespace detail

// Encoder-only pass (no cache, no dropout); used by the incremental decoder.
template <class S>
Mat<S> encode(const Params<S>& params, const ModelConfig& cfg,
              std::span<const int> src, const SrcMask* src_mask = nullptr) {
  if (src.empty()) throw ShapeMismatch("empty source");
  if (src_mask && src_mask->size() != src.size())
    throw ShapeMismatch("source mask length mismatch");
  detail::MaskMat enc_blocked;
  const detail::MaskMat* blk = nullptr;
  if (src_mask) {
    enc_blocked = detail::src_blocked_mask(
        *src_mask, static_cast<Eigen::Index>(src.size()));
    blk = &enc_blocked;
  }
  return detail::run_encoder(params, cfg, src, blk,
                             static_cast<Cache<S>*>(nullptr), nullptr);
}

// Full forward pass; returns next-token logits, one row per target prefix
// position. The decoder is causally masked. When `cache` is given, every
// intermediate needed by backward() is retained.
template <class S>
Mat<S> forward(const Params<S>& params, const ModelConfig& cfg,
               std::span<const int> src, std::span<const int> tgt_prefix,
               const SrcMask* src_mask = nullptr, Cache<S>* cache = nullptr,
               DropoutCtx* drop = nullptr) {
  if (src.empty() || tgt_prefix.empty())
    throw ShapeMismatch("empty source or target prefix");
  if (src_mask && src_mask->size() != src.size())
    throw ShapeMismatch("source mask length mismatch");
  const auto Ls = static_cast<Eigen::Index>(src.size());
  const auto Lt = static_cast<Eigen::Index>(tgt_prefix.size());

  detail::MaskMat enc_blocked, cross_blocked;
  const detail::MaskMat* enc_blk = nullptr;
  const detail::MaskMat* cross_blk = nullptr;
  if (src_mask) {
    enc_blocked = detail::src_blocked_mask(*src_mask, Ls);
    cross_blocked = detail::src_blocked_mask(*src_mask, Lt);
    enc_blk = &enc_blocked;
    cross_blk = &cross_blocked;
  }
  detail::MaskMat causal = detail::causal_mask(Lt);

  if (cache) {
    cache->src.assign(src.begin(), src.end());
    cache->tgt.assign(tgt_prefix.begin(), tgt_prefix.end());
  }
  Mat<S> enc_out = detail::run_encoder(params, cfg, src, enc_blk, cache, drop);
  Mat<S> dec_out = detail::run_decoder(params, cfg, tgt_prefix, enc_out,
                                       &causal, cross_blk, cache, drop);

  const Mat<S>& proj = cfg.tied_output ? params.embedding : params.out_proj;
  Mat<S> logits = dec_out * proj.transpose();
  logits.rowwise() += params.out_bias.row(0);
  return logits;
}

// Backward pass for forward(); accumulates into `grads` (same structure as
// the parameters, e.g. from zeros_like).
template <class S>
void backward(const Params<S>& params, const ModelConfig& cfg,
              const Cache<S>& c, const Mat<S>& dlogits, Params<S>& grads) {
  const Mat<S>& proj = cfg.tied_output ? params.embedding : params.out_proj;
  Mat<S>& dproj = cfg.tied_output ? grads.embedding : grads.out_proj;

  grads.out_bias.row(0) += dlogits.colwise().sum();
  dproj += dlogits.transpose() * c.dec_out;
  Mat<S> dy = dlogits * proj;

  auto drop_bwd = [](Mat<S>& d, const Mat<S>& mask) {
    if (mask.size() > 0) d.array() *= mask.array();
  };

  Mat<S> denc = Mat<S>::Zero(c.enc_out.rows(), c.enc_out.cols());

  dy = detail::layer_norm_backward(dy, c.dec_ln, params.dec_ln, grads.dec_ln);
  for (std::size_t li = params.dec.size(); li-- > 0;) {
    const auto& lp = params.dec[li];
    const auto& lc = c.dec_layers[li];
    auto& lg = grads.dec[li];

    Mat<S> df = dy;
    drop_bwd(df, lc.ffn_drop);
    Mat<S> dh3 = detail::ffn_backward(df, lc.ffn, lp.ffn, lg.ffn);
    dy += detail::layer_norm_backward(dh3, lc.ln3, lp.ln3, lg.ln3);

    Mat<S> dcr = dy;
    drop_bwd(dcr, lc.cross_drop);
    Mat<S> dh2 = detail::attention_backward(dcr, lc.cross_attn, lp.cross_attn,
                                            cfg.n_heads, lg.cross_attn, denc);
    dy += detail::layer_norm_backward(dh2, lc.ln2, lp.ln2, lg.ln2);

    Mat<S> dsa = dy;
    drop_bwd(dsa, lc.self_drop);
    Mat<S> dkv = Mat<S>::Zero(dy.rows(), dy.cols());
    Mat<S> dh1 = detail::attention_backward(dsa, lc.self_attn, lp.self_attn,
                                            cfg.n_heads, lg.self_attn, dkv);
    dh1 += dkv;  // q_in and kv_in are the same activation in self-attention
    dy += detail::layer_norm_backward(dh1, lc.ln1, lp.ln1, lg.ln1);
  }
  {
    Mat<S> dy0 = dy;
    drop_bwd(dy0, c.emb_drop_tgt);
    const S scale = std::sqrt(static_cast<S>(cfg.d_model));
    for (std::size_t i = 0; i < c.tgt.size(); ++i)
      grads.embedding.row(c.tgt[i]) +=
          dy0.row(static_cast<Eigen::Index>(i)) * scale;
  }

  Mat<S> dx =
      detail::layer_norm_backward(denc, c.enc_ln, params.enc_ln, grads.enc_ln);
  for (std::size_t li = params.enc.size(); li-- > 0;) {
    const auto& lp = params.enc[li];
    const auto& lc = c.enc_layers[li];
    auto& lg = grads.enc[li];

    Mat<S> df = dx;
    drop_bwd(df, lc.ffn_drop);
    Mat<S> dh2 = detail::ffn_backward(df, lc.ffn, lp.ffn, lg.ffn);
    dx += detail::layer_norm_backward(dh2, lc.ln2, lp.ln2, lg.ln2);

    Mat<S> da = dx;
    drop_bwd(da, lc.attn_drop);
    Mat<S> dkv = Mat<S>::Zero(dx.rows(), dx.cols());
    Mat<S> dh1 = detail::attention_backward(da, lc.attn, lp.attn, cfg.n_heads,
                                            lg.attn, dkv);
    dh1 += dkv;
    dx += detail::layer_norm_backward(dh1, lc.ln1, lp.ln1, lg.ln1);
  }
  {
    Mat<S> dx0 = dx;
    drop_bwd(dx0, c.emb_drop_src);
    const S scale = std::sqrt(static_cast<S>(cfg.d_model));
    for (std::size_t i = 0; i < c.src.size(); ++i)
      grads.embedding.row(c.src[i]) +=
          dx0.row(static_cast<Eigen::Index>(i)) * scale;
  }
}

// --- loss ----------------------------------------------------------------

// Label-smoothed cross-entropy over next-token logits. The smoothed reference
// distribution puts 1 - eps + eps/V on the reference class and eps/V on every
// other class. With `mean` the result and gradient are averaged over rows;
// otherwise the sum is returned and the gradient rows are plain (p - q),
// letting the caller apply its own token normalization.
template <class S>
S loss(const Mat<S>& logits, std::span<const int> refs, double label_smoothing,
       Mat<S>* dlogits = nullptr, bool mean = true) {
  if (static_cast<std::size_t>(logits.rows()) != refs.size())
    throw LengthMismatch("logits rows != reference length");
  const Eigen::Index V = logits.cols();
  const S eps = static_cast<S>(label_smoothing);
  const S off = eps / static_cast<S>(V);
  const S on = S(1) - eps + off;
  const S w = mean ? S(1) / static_cast<S>(logits.rows()) : S(1);

  if (dlogits) dlogits->resize(logits.rows(), V);
  S total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int ref = refs[static_cast<std::size_t>(i)];
    if (ref < 0 || ref >= V)
      throw LengthMismatch("reference id out of range: " + std::to_string(ref));
    const S max_v = logits.row(i).maxCoeff();
    const S lse = std::log((logits.row(i).array() - max_v).exp().sum()) + max_v;
    // -sum_v q_v log p_v = lse - sum_v q_v logit_v   (sum_v q_v = 1)
    total += lse - off * logits.row(i).sum() - (on - off) * logits(i, ref);
    if (dlogits) {
      dlogits->row(i) =
          (((logits.row(i).array() - lse).exp() - off) * w).matrix();
      (*dlogits)(i, ref) -= (on - off) * w;
    }
  }
  return total * w;
}

// Sum of token log-probabilities of tgt (which should end with eos) given
// src, under teacher forcing. This is the reference scoring path: beam search
// in non-cached mode reproduces it bitwise.
template <class S>
double score_hypothesis(const Params<S>& params, const ModelConfig& cfg,
                        std::span<const int> src, std::span<const int> tgt,
                        const SrcMask* src_mask = nullptr) {
  if (tgt.empty()) throw ShapeMismatch("empty hypothesis");
  std::vector<int> input(tgt.size());
  input[0] = cfg.bos_id;
  for (std::size_t i = 0; i + 1 < tgt.size(); ++i) input[i + 1] = tgt[i];
  Mat<S> logits =
      forward(params, cfg, src, std::span<const int>(input), src_mask);
  double total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const S max_v = logits.row(i).maxCoeff();
    const double lse =
        std::log((logits.row(i).array() - max_v)
                     .template cast<double>()
                     .exp()
                     .sum()) +
        static_cast<double>(max_v);
    total +=
        static_cast<double>(logits(i, tgt[static_cast<std::size_t>(i)])) - lse;
  }
  return total;
}

// --- incremental decoding ---------------------------------------------------

// Holds the encoder output and per-layer K/V caches so each generated token
// costs one decoder column instead of a full re-run. Copyable, so beam search
// can fork a session per surviving hypothesis.
template <class S>
class DecodeSession {
 public:
  DecodeSession() = default;
  DecodeSession(const Params<S>& params, const ModelConfig& cfg,
                std::span<const int> src, const SrcMask* src_mask = nullptr)
      : params_(&params), cfg_(&cfg) {
    enc_out_ = encode(params, cfg, src, src_mask);
    if (src_mask) cross_blocked_ = detail::src_blocked_mask(*src_mask, 1);
    kv_.resize(params.dec.size());
    for (std::size_t l = 0; l < params.dec.size(); ++l) {
      kv_[l].cross_k = detail::linear(enc_out_, params.dec[l].cross_attn.wk,
                                      params.dec[l].cross_attn.bk);
      kv_[l].cross_v = detail::linear(enc_out_, params.dec[l].cross_attn.wv,
                                      params.dec[l].cross_attn.bv);
    }
  }

  int position() const { return pos_; }
  const Mat<S>& encoder_output() const { return enc_out_; }

  // Feeds one target token (bos first) and returns the logits for the next
  // position as a 1 x V matrix.
  Mat<S> step(int token) {
    const auto& params = *params_;
    const auto& cfg = *cfg_;
    const int ids[1] = {token};
    Mat<S> y = detail::embed(params, cfg, std::span<const int>(ids, 1), pos_);
    for (std::size_t l = 0; l < params.dec.size(); ++l) {
      const auto& lp = params.dec[l];
      auto& kv = kv_[l];

      Mat<S> h =
          detail::layer_norm(y, lp.ln1, static_cast<detail::LnCache<S>*>(nullptr));
      Mat<S> q = detail::linear(h, lp.self_attn.wq, lp.self_attn.bq);
      Mat<S> k = detail::linear(h, lp.self_attn.wk, lp.self_attn.bk);
      Mat<S> v = detail::linear(h, lp.self_attn.wv, lp.self_attn.bv);
      kv.self_k.conservativeResize(pos_ + 1, cfg.d_model);
      kv.self_v.conservativeResize(pos_ + 1, cfg.d_model);
      kv.self_k.row(pos_) = k.row(0);
      kv.self_v.row(pos_) = v.row(0);
      // the cache holds only positions <= pos_, so causality is implicit
      Mat<S> ctx =
          detail::heads_attend(q, kv.self_k, kv.self_v, cfg.n_heads, nullptr);
      y += detail::linear(ctx, lp.self_attn.wo, lp.self_attn.bo);

      Mat<S> h2 =
          detail::layer_norm(y, lp.ln2, static_cast<detail::LnCache<S>*>(nullptr));
      Mat<S> q2 = detail::linear(h2, lp.cross_attn.wq, lp.cross_attn.bq);
      Mat<S> ctx2 = detail::heads_attend(
          q2, kv.cross_k, kv.cross_v, cfg.n_heads,
          cross_blocked_.size() > 0 ? &cross_blocked_ : nullptr);
      y += detail::linear(ctx2, lp.cross_attn.wo, lp.cross_attn.bo);

      Mat<S> h3 =
          detail::layer_norm(y, lp.ln3, static_cast<detail::LnCache<S>*>(nullptr));
      y += detail::ffn(h3, lp.ffn, static_cast<detail::FfnCache<S>*>(nullptr));
    }
    Mat<S> out = detail::layer_norm(y, params.dec_ln,
                                    static_cast<detail::LnCache<S>*>(nullptr));
    const Mat<S>& proj = cfg.tied_output ? params.embedding : params.out_proj;
    Mat<S> logits = out * proj.transpose();
    logits.rowwise() += params.out_bias.row(0);
    ++pos_;
    return logits;
  }

 private:
  const Params<S>* params_ = nullptr;
  const ModelConfig* cfg_ = nullptr;
  Mat<S> enc_out_;
  detail::MaskMat cross_blocked_;  // 1 x Ls; empty when no mask
  struct LayerKv {
    Mat<S> self_k, self_v;    // grows one row per step
    Mat<S> cross_k, cross_v;  // fixed, precomputed from enc_out
  };
  std::vector<LayerKv> kv_;
  int pos_ = 0;
};

}  // namespace loresmt::model
