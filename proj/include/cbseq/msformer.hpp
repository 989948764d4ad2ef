#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbseq/common.hpp"
#include "cbseq/rng.hpp"

namespace cbseq {

/// Hyperparameters of the four-subnet encoder classifier. The embedding
/// dimension feeds a learned projection to d_model, which must divide
/// evenly across the attention heads.
struct MsfConfig {
  int emb_dim = 100;
  int d_model = 128;
  int blocks = 6;
  int heads = 8;
  int d_ff = 512;  // 4 x d_model
  int max_len = 16;
  bool posenc = true;
  double lr = 1e-5;
  int batch = 8;
  int epochs = 20;
  std::uint64_t seed = 42;

  void validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
      throw Error("train", "d_model must be divisible by head count");
    if (blocks <= 0 || d_ff <= 0 || max_len <= 0 || emb_dim <= 0)
      throw Error("train", "invalid model configuration");
    if (batch <= 0 || epochs <= 0 || lr <= 0)
      throw Error("train", "invalid training configuration");
  }
};

template <typename S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct EncoderBlockParamsT {
  MatT<S> wq, wk, wv, wo;        // d_model x d_model; head h owns columns
                                 // [h*d_k, (h+1)*d_k) of wq/wk/wv
  MatT<S> w1, b1, w2, b2;        // FFN weights and biases
  MatT<S> ln1_gain, ln1_bias;    // post-attention layer norm
  MatT<S> ln2_gain, ln2_bias;    // post-FFN layer norm
};

template <typename S>
struct SubnetParamsT {
  MatT<S> w_in, b_in;  // emb_dim x d_model projection
  std::vector<EncoderBlockParamsT<S>> blocks;
  MatT<S> w_cls, b_cls;  // d_model x 2 head
};

template <typename S>
struct MsformerT {
  MsfConfig cfg;
  std::array<SubnetParamsT<S>, 4> subnets;
  MatT<S> posenc;  // max_len x d_model, sinusoidal, not trained
};

using Msformer = MsformerT<float>;
using EncoderParams = EncoderBlockParamsT<float>;

constexpr double kLayerNormEps = 1e-5;

// --- construction -----------------------------------------------------------

template <typename S>
MatT<S> sinusoidal_posenc(int max_len, int d_model) {
  MatT<S> pe(max_len, d_model);
  for (int pos = 0; pos < max_len; ++pos)
    for (int i = 0; i < d_model; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d_model);
      pe(pos, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle)
                                             : std::cos(angle));
    }
  return pe;
}

namespace msf_detail {

template <typename S>
MatT<S> xavier(int rows, int cols, Rng& rng) {
  double limit = std::sqrt(6.0 / (rows + cols));
  MatT<S> m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r)
      m(r, c) = static_cast<S>(rng.uniform(-limit, limit));
  return m;
}

}  // namespace msf_detail

template <typename S>
MsformerT<S> msformer_init(const MsfConfig& cfg) {
  cfg.validate();
  MsformerT<S> model;
  model.cfg = cfg;
  Rng root = Rng(cfg.seed).substream(0x115F);
  for (int s = 0; s < 4; ++s) {
    Rng rng = root.substream(static_cast<std::uint64_t>(s));
    auto& sub = model.subnets[static_cast<std::size_t>(s)];
    sub.w_in = msf_detail::xavier<S>(cfg.emb_dim, cfg.d_model, rng);
    sub.b_in = MatT<S>::Zero(1, cfg.d_model);
    sub.blocks.resize(static_cast<std::size_t>(cfg.blocks));
    for (auto& blk : sub.blocks) {
      blk.wq = msf_detail::xavier<S>(cfg.d_model, cfg.d_model, rng);
      blk.wk = msf_detail::xavier<S>(cfg.d_model, cfg.d_model, rng);
      blk.wv = msf_detail::xavier<S>(cfg.d_model, cfg.d_model, rng);
      blk.wo = msf_detail::xavier<S>(cfg.d_model, cfg.d_model, rng);
      blk.w1 = msf_detail::xavier<S>(cfg.d_model, cfg.d_ff, rng);
      blk.b1 = MatT<S>::Zero(1, cfg.d_ff);
      blk.w2 = msf_detail::xavier<S>(cfg.d_ff, cfg.d_model, rng);
      blk.b2 = MatT<S>::Zero(1, cfg.d_model);
      blk.ln1_gain = MatT<S>::Ones(1, cfg.d_model);
      blk.ln1_bias = MatT<S>::Zero(1, cfg.d_model);
      blk.ln2_gain = MatT<S>::Ones(1, cfg.d_model);
      blk.ln2_bias = MatT<S>::Zero(1, cfg.d_model);
    }
    sub.w_cls = msf_detail::xavier<S>(cfg.d_model, 2, rng);
    sub.b_cls = MatT<S>::Zero(1, 2);
  }
  model.posenc = sinusoidal_posenc<S>(cfg.max_len, cfg.d_model);
  return model;
}

/// Same shapes as the model, all zeros. Used for gradients and Adam state.
template <typename S>
MsformerT<S> zero_like(const MsformerT<S>& model) {
  MsformerT<S> z;
  z.cfg = model.cfg;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& src = model.subnets[s];
    auto& dst = z.subnets[s];
    dst.w_in = MatT<S>::Zero(src.w_in.rows(), src.w_in.cols());
    dst.b_in = MatT<S>::Zero(src.b_in.rows(), src.b_in.cols());
    dst.blocks.resize(src.blocks.size());
    for (std::size_t b = 0; b < src.blocks.size(); ++b) {
      const auto& sb = src.blocks[b];
      auto& db = dst.blocks[b];
      auto zero = [](const MatT<S>& m) {
        return MatT<S>::Zero(m.rows(), m.cols()).eval();
      };
      db.wq = zero(sb.wq); db.wk = zero(sb.wk); db.wv = zero(sb.wv);
      db.wo = zero(sb.wo); db.w1 = zero(sb.w1); db.b1 = zero(sb.b1);
      db.w2 = zero(sb.w2); db.b2 = zero(sb.b2);
      db.ln1_gain = zero(sb.ln1_gain); db.ln1_bias = zero(sb.ln1_bias);
      db.ln2_gain = zero(sb.ln2_gain); db.ln2_bias = zero(sb.ln2_bias);
    }
    dst.w_cls = MatT<S>::Zero(src.w_cls.rows(), src.w_cls.cols());
    dst.b_cls = MatT<S>::Zero(src.b_cls.rows(), src.b_cls.cols());
  }
  return z;
}

/// Enumerates every trainable tensor in a fixed, serialization-stable
/// order.
template <typename S, typename Fn>
void visit_params(MsformerT<S>& model, Fn&& fn) {
  for (std::size_t s = 0; s < 4; ++s) {
    auto& sub = model.subnets[s];
    std::string p = "subnet" + std::to_string(s) + ".";
    fn(p + "w_in", sub.w_in);
    fn(p + "b_in", sub.b_in);
    for (std::size_t b = 0; b < sub.blocks.size(); ++b) {
      auto& blk = sub.blocks[b];
      std::string q = p + "block" + std::to_string(b) + ".";
      fn(q + "wq", blk.wq);
      fn(q + "wk", blk.wk);
      fn(q + "wv", blk.wv);
      fn(q + "wo", blk.wo);
      fn(q + "w1", blk.w1);
      fn(q + "b1", blk.b1);
      fn(q + "w2", blk.w2);
      fn(q + "b2", blk.b2);
      fn(q + "ln1_gain", blk.ln1_gain);
      fn(q + "ln1_bias", blk.ln1_bias);
      fn(q + "ln2_gain", blk.ln2_gain);
      fn(q + "ln2_bias", blk.ln2_bias);
    }
    fn(p + "w_cls", sub.w_cls);
    fn(p + "b_cls", sub.b_cls);
  }
}

template <typename S>
std::vector<MatT<S>*> collect_params(MsformerT<S>& model) {
  std::vector<MatT<S>*> out;
  visit_params(model, [&](const std::string&, MatT<S>& m) { out.push_back(&m); });
  return out;
}

// --- forward ----------------------------------------------------------------

namespace msf_detail {

template <typename S>
void zero_padded_rows(MatT<S>& m, int valid) {
  for (Eigen::Index r = valid; r < m.rows(); ++r) m.row(r).setZero();
}

/// Row-wise softmax over the first `valid` columns; padded key columns
/// and padded query rows come out exactly zero.
template <typename S>
MatT<S> masked_softmax(const MatT<S>& scores, int valid) {
  MatT<S> a = MatT<S>::Zero(scores.rows(), scores.cols());
  for (int r = 0; r < valid && r < scores.rows(); ++r) {
    S mx = scores(r, 0);
    for (int c = 1; c < valid; ++c) mx = std::max(mx, scores(r, c));
    S sum = 0;
    for (int c = 0; c < valid; ++c) {
      a(r, c) = std::exp(scores(r, c) - mx);
      sum += a(r, c);
    }
    for (int c = 0; c < valid; ++c) a(r, c) /= sum;
  }
  return a;
}

/// Per-row layer norm over the first `valid` rows; padded rows stay zero.
template <typename S>
MatT<S> layer_norm(const MatT<S>& x, const MatT<S>& gain, const MatT<S>& bias,
                   int valid, MatT<S>* mu_out = nullptr,
                   MatT<S>* istd_out = nullptr) {
  const auto d = static_cast<S>(x.cols());
  MatT<S> y = MatT<S>::Zero(x.rows(), x.cols());
  MatT<S> mu(x.rows(), 1), istd(x.rows(), 1);
  mu.setZero();
  istd.setZero();
  for (int r = 0; r < valid; ++r) {
    S m = x.row(r).mean();
    S var = (x.row(r).array() - m).square().sum() / d;
    S is = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    mu(r, 0) = m;
    istd(r, 0) = is;
    y.row(r) =
        ((x.row(r).array() - m) * is) * gain.row(0).array() + bias.row(0).array();
  }
  if (mu_out) *mu_out = mu;
  if (istd_out) *istd_out = istd;
  return y;
}

template <typename S>
MatT<S> layer_norm_backward(const MatT<S>& dy, const MatT<S>& x,
                            const MatT<S>& mu, const MatT<S>& istd,
                            const MatT<S>& gain, int valid, MatT<S>& dgain,
                            MatT<S>& dbias) {
  const auto d = static_cast<S>(x.cols());
  MatT<S> dx = MatT<S>::Zero(x.rows(), x.cols());
  for (int r = 0; r < valid; ++r) {
    Eigen::Array<S, 1, Eigen::Dynamic> xhat =
        (x.row(r).array() - mu(r, 0)) * istd(r, 0);
    dgain.row(0).array() += dy.row(r).array() * xhat;
    dbias.row(0) += dy.row(r);
    Eigen::Array<S, 1, Eigen::Dynamic> dxhat =
        dy.row(r).array() * gain.row(0).array();
    S mean_dxhat = dxhat.mean();
    S mean_dxhat_xhat = (dxhat * xhat).mean();
    dx.row(r) =
        ((dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * istd(r, 0)).matrix();
  }
  (void)d;
  return dx;
}

}  // namespace msf_detail

/// Scaled dot-product attention with a padding mask over positions at or
/// beyond `valid`. Masked positions receive no weight; padded query rows
/// produce zero rows.
template <typename S>
MatT<S> attention(const MatT<S>& q, const MatT<S>& k, const MatT<S>& v,
                  int valid, MatT<S>* weights_out = nullptr) {
  if (q.hasNaN() || k.hasNaN() || v.hasNaN())
    throw Error("attention input contains NaN");
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.rows() != k.rows())
    throw Error("attention shape mismatch");
  S scale = S(1) / std::sqrt(static_cast<S>(q.cols()));
  MatT<S> scores = q * k.transpose() * scale;
  MatT<S> a = msf_detail::masked_softmax(scores, valid);
  if (weights_out) *weights_out = a;
  return a * v;
}

template <typename S>
struct BlockCache {
  MatT<S> x;                          // block input
  std::vector<MatT<S>> q, k, v, att;  // per head
  MatT<S> ocat, r1, n1, z1, r2;
  MatT<S> mu1, istd1, mu2, istd2;
};

/// Multi-head attention: per-head projections, masked attention, head
/// concatenation, output projection. Shape preserving (L x d_model).
template <typename S>
MatT<S> multi_head(const MatT<S>& x, const EncoderBlockParamsT<S>& p,
                   int heads, int valid, BlockCache<S>* cache = nullptr) {
  if (x.cols() != p.wq.rows()) throw Error("multi_head shape mismatch");
  const int d_model = static_cast<int>(x.cols());
  const int d_k = d_model / heads;
  MatT<S> ocat(x.rows(), d_model);
  for (int h = 0; h < heads; ++h) {
    MatT<S> q = x * p.wq.middleCols(h * d_k, d_k);
    MatT<S> k = x * p.wk.middleCols(h * d_k, d_k);
    MatT<S> v = x * p.wv.middleCols(h * d_k, d_k);
    MatT<S> a;
    ocat.middleCols(h * d_k, d_k) = attention(q, k, v, valid, &a);
    if (cache) {
      cache->q.push_back(std::move(q));
      cache->k.push_back(std::move(k));
      cache->v.push_back(std::move(v));
      cache->att.push_back(std::move(a));
    }
  }
  MatT<S> out = ocat * p.wo;
  msf_detail::zero_padded_rows(out, valid);
  if (cache) cache->ocat = std::move(ocat);
  return out;
}

/// One post-norm encoder block: Add&Norm around multi-head attention,
/// then Add&Norm around the two-layer ReLU feed-forward.
template <typename S>
MatT<S> encoder_block(const MatT<S>& x, const EncoderBlockParamsT<S>& p,
                      int heads, int valid, BlockCache<S>* cache = nullptr) {
  if (cache) cache->x = x;
  MatT<S> mha = multi_head(x, p, heads, valid, cache);
  MatT<S> r1 = x + mha;
  MatT<S> mu1, istd1;
  MatT<S> n1 = msf_detail::layer_norm(r1, p.ln1_gain, p.ln1_bias, valid,
                                      &mu1, &istd1);
  MatT<S> z1 = (n1 * p.w1).rowwise() + p.b1.row(0);
  MatT<S> a1 = z1.cwiseMax(S(0));
  MatT<S> f = (a1 * p.w2).rowwise() + p.b2.row(0);
  msf_detail::zero_padded_rows(f, valid);
  MatT<S> r2 = n1 + f;
  MatT<S> mu2, istd2;
  MatT<S> out = msf_detail::layer_norm(r2, p.ln2_gain, p.ln2_bias, valid,
                                       &mu2, &istd2);
  if (cache) {
    cache->r1 = std::move(r1);
    cache->n1 = std::move(n1);
    cache->z1 = std::move(z1);
    cache->r2 = std::move(r2);
    cache->mu1 = std::move(mu1);
    cache->istd1 = std::move(istd1);
    cache->mu2 = std::move(mu2);
    cache->istd2 = std::move(istd2);
  }
  return out;
}

template <typename S>
struct SubnetCache {
  MatT<S> e;   // input embedding rows (valid rows only used)
  MatT<S> x0;  // after projection (+ positional encoding), masked
  std::vector<BlockCache<S>> blocks;
  MatT<S> x_final;
  MatT<S> pooled;  // 1 x d_model
  int valid = 0;
};

template <typename S>
struct ForwardResult {
  std::array<S, 2> probs{};                  // softmax of summed logits
  std::array<std::array<S, 2>, 4> logits{};  // per-subnet
};

namespace msf_detail {

template <typename S>
MatT<S> subnet_forward(const SubnetParamsT<S>& sub, const MsformerT<S>& model,
                       const MatT<S>& emb, int valid,
                       SubnetCache<S>* cache) {
  const auto& cfg = model.cfg;
  MatT<S> x0 = (emb * sub.w_in).rowwise() + sub.b_in.row(0);
  if (cfg.posenc) {
    for (int r = 0; r < valid; ++r) x0.row(r) += model.posenc.row(r);
  }
  zero_padded_rows(x0, valid);
  if (cache) {
    cache->e = emb;
    cache->x0 = x0;
    cache->valid = valid;
  }
  MatT<S> x = x0;
  for (const auto& blk : sub.blocks) {
    BlockCache<S>* bc = nullptr;
    if (cache) {
      cache->blocks.emplace_back();
      bc = &cache->blocks.back();
    }
    x = encoder_block(x, blk, cfg.heads, valid, bc);
  }
  MatT<S> pooled = MatT<S>::Zero(1, cfg.d_model);
  for (int r = 0; r < valid; ++r) pooled.row(0) += x.row(r);
  pooled /= static_cast<S>(valid);
  if (cache) {
    cache->x_final = x;
    cache->pooled = pooled;
  }
  return (pooled * sub.w_cls).rowwise() + sub.b_cls.row(0);
}

}  // namespace msf_detail

/// Full forward pass over the four sequence embeddings. Sequences longer
/// than max_len must be truncated by the caller (first max_len tokens);
/// rows past `valid` in each matrix are padding.
template <typename S>
ForwardResult<S> msformer_forward(
    const MsformerT<S>& model, const std::array<MatT<S>, 4>& embeddings,
    int valid, std::array<SubnetCache<S>, 4>* caches = nullptr) {
  if (valid <= 0) throw Error("forward on an all-padding input");
  ForwardResult<S> out;
  std::array<S, 2> z{};
  for (std::size_t s = 0; s < 4; ++s) {
    if (embeddings[s].cols() != model.cfg.emb_dim)
      throw Error("embedding dimension mismatch");
    if (embeddings[s].rows() < valid)
      throw Error("embedding has fewer rows than the valid length");
    if (valid > model.cfg.max_len)
      throw Error("valid length exceeds max_len; truncate first");
    MatT<S> logits = msf_detail::subnet_forward(
        model.subnets[s], model, embeddings[s], valid,
        caches ? &(*caches)[s] : nullptr);
    out.logits[s] = {logits(0, 0), logits(0, 1)};
    z[0] += logits(0, 0);
    z[1] += logits(0, 1);
  }
  S mx = std::max(z[0], z[1]);
  S e0 = std::exp(z[0] - mx), e1 = std::exp(z[1] - mx);
  out.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
  return out;
}

// --- backward ---------------------------------------------------------------

namespace msf_detail {

template <typename S>
MatT<S> block_backward(const MatT<S>& dout, const BlockCache<S>& c,
                       const EncoderBlockParamsT<S>& p,
                       EncoderBlockParamsT<S>& g, int heads, int valid) {
  const int d_model = static_cast<int>(c.x.cols());
  const int d_k = d_model / heads;

  // out = LN(r2)
  MatT<S> dr2 = layer_norm_backward(dout, c.r2, c.mu2, c.istd2, p.ln2_gain,
                                    valid, g.ln2_gain, g.ln2_bias);
  // r2 = n1 + f
  MatT<S> dn1 = dr2;
  // f = mask(relu(z1) w2 + b2)
  MatT<S> a1 = c.z1.cwiseMax(S(0));
  g.w2 += a1.transpose() * dr2;
  g.b2.row(0) += dr2.colwise().sum();
  MatT<S> da1 = dr2 * p.w2.transpose();
  MatT<S> dz1 =
      (da1.array() * (c.z1.array() > S(0)).template cast<S>()).matrix();
  g.w1 += c.n1.transpose() * dz1;
  g.b1.row(0) += dz1.colwise().sum();
  dn1 += dz1 * p.w1.transpose();
  // n1 = LN(r1)
  MatT<S> dr1 = layer_norm_backward(dn1, c.r1, c.mu1, c.istd1, p.ln1_gain,
                                    valid, g.ln1_gain, g.ln1_bias);
  // r1 = x + mha
  MatT<S> dx = dr1;
  // mha = mask(ocat wo)
  g.wo += c.ocat.transpose() * dr1;
  MatT<S> docat = dr1 * p.wo.transpose();

  S scale = S(1) / std::sqrt(static_cast<S>(d_k));
  for (int h = 0; h < heads; ++h) {
    const MatT<S>& q = c.q[static_cast<std::size_t>(h)];
    const MatT<S>& k = c.k[static_cast<std::size_t>(h)];
    const MatT<S>& v = c.v[static_cast<std::size_t>(h)];
    const MatT<S>& a = c.att[static_cast<std::size_t>(h)];
    MatT<S> dh = docat.middleCols(h * d_k, d_k);
    MatT<S> da = dh * v.transpose();
    MatT<S> dv = a.transpose() * dh;
    // softmax backward row-wise; zero rows/columns stay zero.
    MatT<S> ds = MatT<S>::Zero(a.rows(), a.cols());
    for (int r = 0; r < valid; ++r) {
      S dot = a.row(r).dot(da.row(r));
      ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
    }
    MatT<S> dq = ds * k * scale;
    MatT<S> dk = ds.transpose() * q * scale;
    g.wq.middleCols(h * d_k, d_k) += c.x.transpose() * dq;
    g.wk.middleCols(h * d_k, d_k) += c.x.transpose() * dk;
    g.wv.middleCols(h * d_k, d_k) += c.x.transpose() * dv;
    dx += dq * p.wq.middleCols(h * d_k, d_k).transpose();
    dx += dk * p.wk.middleCols(h * d_k, d_k).transpose();
    dx += dv * p.wv.middleCols(h * d_k, d_k).transpose();
  }
  return dx;
}

}  // namespace msf_detail

/// Cross-entropy loss of one forward result against a binary label.
template <typename S>
S cross_entropy(const ForwardResult<S>& fwd, int label) {
  S p = fwd.probs[static_cast<std::size_t>(label)];
  return -std::log(std::max(p, static_cast<S>(1e-12)));
}

/// Accumulates gradients of the cross-entropy loss into `grads`.
template <typename S>
void msformer_backward(const MsformerT<S>& model,
                       const std::array<SubnetCache<S>, 4>& caches,
                       const ForwardResult<S>& fwd, int label,
                       MsformerT<S>& grads) {
  std::array<S, 2> dz = {fwd.probs[0], fwd.probs[1]};
  dz[static_cast<std::size_t>(label)] -= S(1);
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& sub = model.subnets[s];
    const auto& cache = caches[s];
    auto& grad = grads.subnets[s];
    const int valid = cache.valid;

    MatT<S> dl(1, 2);
    dl << dz[0], dz[1];
    grad.w_cls += cache.pooled.transpose() * dl;
    grad.b_cls += dl;
    MatT<S> dpooled = dl * sub.w_cls.transpose();

    MatT<S> dx = MatT<S>::Zero(cache.x_final.rows(), cache.x_final.cols());
    for (int r = 0; r < valid; ++r)
      dx.row(r) = dpooled.row(0) / static_cast<S>(valid);

    for (std::size_t b = sub.blocks.size(); b-- > 0;)
      dx = msf_detail::block_backward(dx, cache.blocks[b], sub.blocks[b],
                                      grad.blocks[b], model.cfg.heads, valid);

    grad.w_in += cache.e.transpose() * dx;
    grad.b_in.row(0) += dx.colwise().sum();
  }
}

// --- Adam -------------------------------------------------------------------

/// Adam optimizer state (first and second moment per parameter).
template <typename S>
struct AdamState {
  MsformerT<S> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamState(const MsformerT<S>& model)
      : m(zero_like(model)), v(zero_like(model)) {}
};

/// One Adam update: theta -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename S>
void adam_step(MsformerT<S>& model, MsformerT<S>& grads, AdamState<S>& state,
               double lr) {
  ++state.t;
  auto params = collect_params(model);
  auto gs = collect_params(grads);
  auto ms = collect_params(state.m);
  auto vs = collect_params(state.v);
  const double bc1 = 1.0 - std::pow(state.beta1, state.t);
  const double bc2 = 1.0 - std::pow(state.beta2, state.t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& g = *gs[i];
    auto& m = *ms[i];
    auto& v = *vs[i];
    m = static_cast<S>(state.beta1) * m + static_cast<S>(1 - state.beta1) * g;
    v = (static_cast<S>(state.beta2) * v.array() +
         static_cast<S>(1 - state.beta2) * g.array().square())
            .matrix();
    p.array() -= static_cast<S>(lr) * (m.array() / static_cast<S>(bc1)) /
                 ((v.array() / static_cast<S>(bc2)).sqrt() +
                  static_cast<S>(state.eps));
  }
}

// --- training ---------------------------------------------------------------

template <typename S>
struct TrainExampleT {
  std::array<MatT<S>, 4> emb;  // valid x emb_dim each
  int valid = 0;
  int label = 0;  // 0 benign, 1 malware
};

using TrainExample = TrainExampleT<float>;

/// Minimizes mean cross-entropy with Adam. Deterministic for a fixed
/// seed: initialization, shuffling and batch order all come from the
/// model's seed. Returns the mean training loss per epoch.
template <typename S>
std::vector<double> msformer_train(MsformerT<S>& model,
                                   const std::vector<TrainExampleT<S>>& data) {
  bool has_benign = false, has_malware = false;
  for (const auto& ex : data) (ex.label ? has_malware : has_benign) = true;
  if (!has_benign || !has_malware)
    throw Error("train", "training data must contain both classes");

  const auto& cfg = model.cfg;
  AdamState<S> state(model);
  Rng shuffle_root = Rng(cfg.seed).substream(0x5FF);
  std::vector<double> epoch_losses;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = shuffle_root.substream(static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      std::size_t end = std::min(order.size(),
                                 start + static_cast<std::size_t>(cfg.batch));
      MsformerT<S> grads = zero_like(model);
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = data[order[i]];
        std::array<SubnetCache<S>, 4> caches;
        auto fwd = msformer_forward(model, ex.emb, ex.valid, &caches);
        loss_sum += static_cast<double>(cross_entropy(fwd, ex.label));
        msformer_backward(model, caches, fwd, ex.label, grads);
      }
      const S inv = S(1) / static_cast<S>(end - start);
      for (auto* g : collect_params(grads)) *g *= inv;
      adam_step(model, grads, state, cfg.lr);
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(data.size()));
  }
  return epoch_losses;
}

// --- serialization ----------------------------------------------------------
// Container: magic, version, JSON header (config + tensor manifest),
// then float32 little-endian payloads in manifest order.

inline constexpr char kMsfMagic[8] = {'C', 'B', 'S', 'E', 'Q', 'M', 'S', 'F'};
inline constexpr std::uint32_t kMsfVersion = 1;

inline void save_msformer(const Msformer& model, const std::string& path) {
  nlohmann::ordered_json header;
  header["version"] = kMsfVersion;
  header["config"] = {
      {"emb_dim", model.cfg.emb_dim}, {"d_model", model.cfg.d_model},
      {"blocks", model.cfg.blocks},   {"heads", model.cfg.heads},
      {"d_ff", model.cfg.d_ff},       {"max_len", model.cfg.max_len},
      {"posenc", model.cfg.posenc},   {"lr", model.cfg.lr},
      {"batch", model.cfg.batch},     {"epochs", model.cfg.epochs},
      {"seed", model.cfg.seed}};
  auto tensors = nlohmann::ordered_json::array();
  auto& mut = const_cast<Msformer&>(model);
  visit_params(mut, [&](const std::string& name, MatT<float>& m) {
    tensors.push_back({{"name", name},
                       {"rows", m.rows()},
                       {"cols", m.cols()}});
  });
  header["tensors"] = tensors;
  std::string hdr = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("train", "cannot write model file: " + path);
  out.write(kMsfMagic, 8);
  std::uint32_t version = kMsfVersion;
  auto hlen = static_cast<std::uint32_t>(hdr.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  visit_params(mut, [&](const std::string&, MatT<float>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        float v = m(r, c);
        out.write(reinterpret_cast<const char*>(&v), 4);
      }
  });
}

inline Msformer load_msformer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("detect", "cannot open model file: " + path);
  char magic[8];
  std::uint32_t version = 0, hlen = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMsfMagic, 8) != 0)
    throw Error("detect", "not a model file: " + path);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&hlen), 4);
  if (version != kMsfVersion)
    throw Error("detect", "unsupported model version " +
                              std::to_string(version));
  std::string hdr(hlen, '\0');
  if (!in.read(hdr.data(), hlen))
    throw Error("detect", "truncated model header in " + path);
  auto header = nlohmann::json::parse(hdr);
  MsfConfig cfg;
  const auto& c = header.at("config");
  cfg.emb_dim = c.at("emb_dim").get<int>();
  cfg.d_model = c.at("d_model").get<int>();
  cfg.blocks = c.at("blocks").get<int>();
  cfg.heads = c.at("heads").get<int>();
  cfg.d_ff = c.at("d_ff").get<int>();
  cfg.max_len = c.at("max_len").get<int>();
  cfg.posenc = c.at("posenc").get<bool>();
  cfg.lr = c.at("lr").get<double>();
  cfg.batch = c.at("batch").get<int>();
  cfg.epochs = c.at("epochs").get<int>();
  cfg.seed = c.at("seed").get<std::uint64_t>();

  Msformer model = msformer_init<float>(cfg);
  std::size_t i = 0;
  const auto& tensors = header.at("tensors");
  visit_params(model, [&](const std::string& name, MatT<float>& m) {
    const auto& t = tensors.at(i++);
    if (t.at("name").get<std::string>() != name ||
        t.at("rows").get<Eigen::Index>() != m.rows() ||
        t.at("cols").get<Eigen::Index>() != m.cols())
      throw Error("detect", "model tensor manifest mismatch at " + name);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c2 = 0; c2 < m.cols(); ++c2) {
        float v;
        if (!in.read(reinterpret_cast<char*>(&v), 4))
          throw Error("detect", "truncated model payload in " + path);
        m(r, c2) = v;
      }
  });
  return model;
}

}  // namespace cbseq
