// Parameterized building blocks on top of the autodiff tape: dense layers,
// dilated/transposed convolutions, layer norm, pre-norm transformer blocks and
// the gated convolution stack used by the posterior encoder and flow.
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "vox/autodiff.hpp"

namespace vox::nn {

using ad::Mat;
using ad::Param;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

inline void init_uniform(Mat& m, float limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-limit, limit);
  for (int c = 0; c < m.cols(); ++c)
    for (int r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
}

inline void init_normal(Mat& m, float std, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, std);
  for (int c = 0; c < m.cols(); ++c)
    for (int r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
}

struct Linear {
  Param* w = nullptr;
  Param* b = nullptr;

  static Linear create(ParamStore& ps, const std::string& name, int in, int out,
                       std::mt19937_64& rng, bool zero_init = false) {
    Linear l;
    l.w = &ps.create(name + ".w", in, out);
    l.b = &ps.create(name + ".b", 1, out);
    if (!zero_init) init_uniform(l.w->value, std::sqrt(6.0f / (in + out)), rng);
    return l;
  }

  Var operator()(Tape& t, Var x) const {
    return ad::add_rowvec(ad::matmul(x, t.param(*w)), t.param(*b));
  }
};

struct Embedding {
  Param* table = nullptr;

  static Embedding create(ParamStore& ps, const std::string& name, int count, int dim,
                          std::mt19937_64& rng) {
    Embedding e;
    e.table = &ps.create(name, count, dim);
    init_normal(e.table->value, 0.1f, rng);
    return e;
  }

  Var operator()(Tape& t, const std::vector<int>& ids) const {
    return ad::gather_rows(t.param(*table), ids);
  }
};

struct Conv1d {
  Param* w = nullptr;
  Param* b = nullptr;
  int kernel = 1;
  int dilation = 1;

  static Conv1d create(ParamStore& ps, const std::string& name, int kernel, int in, int out,
                       std::mt19937_64& rng, int dilation = 1, bool zero_init = false) {
    Conv1d c;
    c.kernel = kernel;
    c.dilation = dilation;
    c.w = &ps.create(name + ".w", kernel * in, out);
    c.b = &ps.create(name + ".b", 1, out);
    if (!zero_init) init_uniform(c.w->value, std::sqrt(6.0f / (kernel * in + out)), rng);
    return c;
  }

  Var operator()(Tape& t, Var x) const {
    return ad::add_rowvec(ad::conv1d(x, t.param(*w), kernel, dilation), t.param(*b));
  }
};

struct ConvT1d {
  Param* w = nullptr;
  Param* b = nullptr;
  int stride = 2;

  static ConvT1d create(ParamStore& ps, const std::string& name, int stride, int in, int out,
                        std::mt19937_64& rng) {
    ConvT1d c;
    c.stride = stride;
    c.w = &ps.create(name + ".w", 2 * stride * in, out);
    c.b = &ps.create(name + ".b", 1, out);
    init_uniform(c.w->value, std::sqrt(6.0f / (2 * stride * in + out)), rng);
    return c;
  }

  Var operator()(Tape& t, Var x) const {
    return ad::add_rowvec(ad::conv1d_transposed(x, t.param(*w), stride), t.param(*b));
  }
};

struct LayerNorm {
  Param* gain = nullptr;
  Param* bias = nullptr;

  static LayerNorm create(ParamStore& ps, const std::string& name, int dim) {
    LayerNorm n;
    n.gain = &ps.create(name + ".g", 1, dim);
    n.bias = &ps.create(name + ".b", 1, dim);
    n.gain->value.setOnes();
    return n;
  }

  Var operator()(Tape& t, Var x) const {
    return ad::add_rowvec(ad::mul_rowvec(ad::layernorm_rows(x), t.param(*gain)),
                          t.param(*bias));
  }
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 2;
  int dim = 0;

  static MultiHeadAttention create(ParamStore& ps, const std::string& name, int dim, int heads,
                                   std::mt19937_64& rng) {
    MultiHeadAttention a;
    a.heads = heads;
    a.dim = dim;
    a.wq = Linear::create(ps, name + ".q", dim, dim, rng);
    a.wk = Linear::create(ps, name + ".k", dim, dim, rng);
    a.wv = Linear::create(ps, name + ".v", dim, dim, rng);
    a.wo = Linear::create(ps, name + ".o", dim, dim, rng);
    return a;
  }

  Var operator()(Tape& t, Var x) const {
    const int hd = dim / heads;
    Var q = wq(t, x), k = wk(t, x), v = wv(t, x);
    Var out{};
    for (int h = 0; h < heads; ++h) {
      Var qh = ad::slice_cols(q, h * hd, hd);
      Var kh = ad::slice_cols(k, h * hd, hd);
      Var vh = ad::slice_cols(v, h * hd, hd);
      Var scores = ad::scale(ad::matmul_nt(qh, kh), 1.0f / std::sqrt((float)hd));
      Var ctx = ad::matmul(ad::softmax_rows(scores), vh);
      out = h == 0 ? ctx : ad::concat_cols(out, ctx);
    }
    return wo(t, out);
  }
};

// Pre-norm transformer block: x + attn(ln(x)), then x + ffn(ln(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear ff1, ff2;

  static TransformerBlock create(ParamStore& ps, const std::string& name, int dim, int heads,
                                 std::mt19937_64& rng, int ffn_mult = 4) {
    TransformerBlock b;
    b.ln1 = LayerNorm::create(ps, name + ".ln1", dim);
    b.ln2 = LayerNorm::create(ps, name + ".ln2", dim);
    b.attn = MultiHeadAttention::create(ps, name + ".attn", dim, heads, rng);
    b.ff1 = Linear::create(ps, name + ".ff1", dim, dim * ffn_mult, rng);
    b.ff2 = Linear::create(ps, name + ".ff2", dim * ffn_mult, dim, rng);
    return b;
  }

  Var operator()(Tape& t, Var x) const {
    x = ad::add(x, attn(t, ln1(t, x)));
    x = ad::add(x, ff2(t, ad::leaky_relu(ff1(t, ln2(t, x)))));
    return x;
  }
};

// Stack of dilated convolutions with gated tanh/sigmoid units and additive
// speaker conditioning, WaveNet style.
struct GatedConvStack {
  std::vector<Conv1d> convs;
  std::vector<Linear> spk_projs;
  std::vector<Linear> res_projs;
  int dim = 0;

  static GatedConvStack create(ParamStore& ps, const std::string& name, int dim, int layers,
                               int spk_dim, std::mt19937_64& rng, int kernel = 5) {
    GatedConvStack s;
    s.dim = dim;
    for (int l = 0; l < layers; ++l) {
      const std::string ln = name + ".l" + std::to_string(l);
      s.convs.push_back(Conv1d::create(ps, ln + ".conv", kernel, dim, 2 * dim, rng, 1 << l));
      s.spk_projs.push_back(Linear::create(ps, ln + ".spk", spk_dim, 2 * dim, rng));
      s.res_projs.push_back(Linear::create(ps, ln + ".res", dim, dim, rng));
    }
    return s;
  }

  // x [T, dim], spk [1, spk_dim]
  Var operator()(Tape& t, Var x, Var spk) const {
    for (size_t l = 0; l < convs.size(); ++l) {
      Var h = convs[l](t, x);
      h = ad::add_rowvec(h, spk_projs[l](t, spk));
      Var a = ad::slice_cols(h, 0, dim);
      Var b = ad::slice_cols(h, dim, dim);
      Var z = ad::mul(ad::tanh_(a), ad::sigmoid(b));
      x = ad::add(x, res_projs[l](t, z));
    }
    return x;
  }
};

}  // namespace vox::nn
