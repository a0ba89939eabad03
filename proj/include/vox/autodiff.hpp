// Small reverse-mode autodiff tape over Eigen float matrices. Sequences are
// stored rows = time, cols = channels. The op set is exactly what the model
// needs: dense/conv layers, attention, elementwise math and reductions.
#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vox::ad {

using Mat = Eigen::MatrixXf;

// A trainable array plus its gradient and Adam state.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Owns all parameters of a model; deque keeps Param* stable.
class ParamStore {
 public:
  Param& create(const std::string& name, int rows, int cols) {
    if (by_name_.count(name)) throw std::runtime_error("duplicate parameter: " + name);
    params_.push_back(Param{name, Mat::Zero(rows, cols), Mat::Zero(rows, cols),
                            Mat::Zero(rows, cols), Mat::Zero(rows, cols)});
    by_name_[name] = &params_.back();
    return params_.back();
  }

  Param* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::deque<Param>& all() { return params_; }
  const std::deque<Param>& all() const { return params_; }

  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Param> params_;
  std::map<std::string, Param*> by_name_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, const Mat&)> backward;  // receives this node's grad
    bool requires_grad = false;
    bool grad_init = false;
  };

  const Mat& val(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Var constant(Mat m) { return push(std::move(m), false, nullptr); }

  // An input that accumulates a gradient but is not a Param (e.g. a speaker
  // embedding whose sensitivity is being probed).
  Var input(Mat m, bool track_grad = true) { return push(std::move(m), track_grad, nullptr); }

  Var param(Param& p) {
    Param* pp = &p;
    Var out = push(p.value, true, nullptr);
    nodes_[out.id].backward = [pp](Tape&, const Mat& g) { pp->grad += g; };
    return out;
  }

  void backward(Var loss) {
    Node& top = nodes_[loss.id];
    if (top.value.rows() != 1 || top.value.cols() != 1)
      throw std::runtime_error("backward expects a scalar (1x1) loss");
    ensure_grad(loss.id);
    nodes_[loss.id].grad(0, 0) = 1.0f;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.grad_init && n.backward) n.backward(*this, n.grad);
    }
  }

  void accumulate(int id, const Mat& g) {
    if (!nodes_[id].requires_grad) return;
    ensure_grad(id);
    nodes_[id].grad += g;
  }

  size_t size() const { return nodes_.size(); }

 private:
  friend Var make_node(Tape& t, Mat value, const std::vector<Var>& parents,
                       std::function<void(Tape&, const Mat&)> bw);

  Var push(Mat m, bool req, std::function<void(Tape&, const Mat&)> bw) {
    nodes_.push_back(Node{std::move(m), {}, std::move(bw), req, false});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (!n.grad_init) {
      n.grad.setZero(n.value.rows(), n.value.cols());
      n.grad_init = true;
    }
  }

  std::vector<Node> nodes_;
};

inline Var make_node(Tape& t, Mat value, const std::vector<Var>& parents,
                     std::function<void(Tape&, const Mat&)> bw) {
  bool req = false;
  for (const Var& p : parents) req = req || t.requires_grad(p);
  return t.push(std::move(value), req, req ? std::move(bw) : nullptr);
}

// ---------------------------------------------------------------------------
// elementwise and arithmetic

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  return make_node(t, t.val(a) + t.val(b), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  return make_node(t, t.val(a) - t.val(b), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, -g);
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  return make_node(t, t.val(a).cwiseProduct(t.val(b)), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g.cwiseProduct(t.val(b)));
    t.accumulate(b.id, g.cwiseProduct(t.val(a)));
  });
}

inline Var scale(Var a, float s) {
  Tape& t = *a.tape;
  return make_node(t, t.val(a) * s, {a},
                   [a, s](Tape& t, const Mat& g) { t.accumulate(a.id, g * s); });
}

inline Var add_const(Var a, float c) {
  Tape& t = *a.tape;
  return make_node(t, t.val(a).array() + c, {a},
                   [a](Tape& t, const Mat& g) { t.accumulate(a.id, g); });
}

inline Var neg(Var a) { return scale(a, -1.0f); }

inline Var tanh_(Var a) {
  Tape& t = *a.tape;
  Mat y = t.val(a).array().tanh();
  return make_node(t, y, {a}, [a](Tape& t, const Mat& g) {
    Mat y = t.val(a).array().tanh();
    t.accumulate(a.id, (g.array() * (1.0f - y.array().square())).matrix());
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Mat y = (1.0f / (1.0f + (-t.val(a)).array().exp())).matrix();
  return make_node(t, y, {a}, [a](Tape& t, const Mat& g) {
    Mat y = (1.0f / (1.0f + (-t.val(a)).array().exp())).matrix();
    t.accumulate(a.id, (g.array() * y.array() * (1.0f - y.array())).matrix());
  });
}

inline Var exp_(Var a) {
  Tape& t = *a.tape;
  Mat y = t.val(a).array().exp();
  return make_node(t, y, {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a.id, (g.array() * t.val(a).array().exp()).matrix());
  });
}

inline Var log_(Var a) {
  Tape& t = *a.tape;
  Mat y = t.val(a).array().log();
  return make_node(t, y, {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a.id, (g.array() / t.val(a).array()).matrix());
  });
}

inline Var sqrt_(Var a) {
  Tape& t = *a.tape;
  Mat y = t.val(a).array().sqrt();
  return make_node(t, y, {a}, [a](Tape& t, const Mat& g) {
    Mat y = t.val(a).array().sqrt();
    t.accumulate(a.id, (0.5f * g.array() / y.array().max(1e-12f)).matrix());
  });
}

inline Var square(Var a) {
  Tape& t = *a.tape;
  return make_node(t, t.val(a).array().square(), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a.id, (2.0f * g.array() * t.val(a).array()).matrix());
  });
}

inline Var abs_(Var a) {
  Tape& t = *a.tape;
  return make_node(t, t.val(a).array().abs(), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a.id, (g.array() * t.val(a).array().sign()).matrix());
  });
}

inline Var softplus(Var a) {
  Tape& t = *a.tape;
  // numerically stable log(1 + e^x)
  Mat y = (t.val(a).array().max(0.0f) + (-t.val(a).array().abs()).exp().log1p()).matrix();
  return make_node(t, y, {a}, [a](Tape& t, const Mat& g) {
    Mat s = (1.0f / (1.0f + (-t.val(a)).array().exp())).matrix();
    t.accumulate(a.id, g.cwiseProduct(s));
  });
}

inline Var leaky_relu(Var a, float slope = 0.1f) {
  Tape& t = *a.tape;
  Mat y = t.val(a).array().max(t.val(a).array() * slope);
  return make_node(t, y, {a}, [a, slope](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    Mat d = (x.array() > 0.0f).select(Mat::Ones(x.rows(), x.cols()),
                                      Mat::Constant(x.rows(), x.cols(), slope));
    t.accumulate(a.id, g.cwiseProduct(d));
  });
}

inline Var clamp_min(Var a, float lo) {
  Tape& t = *a.tape;
  Mat y = t.val(a).array().max(lo);
  return make_node(t, y, {a}, [a, lo](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    Mat pass = (x.array() > lo).select(g, Mat::Zero(g.rows(), g.cols()));
    t.accumulate(a.id, pass);
  });
}

inline Var stopgrad(Var a) { return a.tape->constant(a.tape->val(a)); }

// ---------------------------------------------------------------------------
// linear algebra

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  return make_node(t, t.val(a) * t.val(b), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g * t.val(b).transpose());
    t.accumulate(b.id, t.val(a).transpose() * g);
  });
}

// a [n,k] * b^T where b is [m,k] -> [n,m]
inline Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  return make_node(t, t.val(a) * t.val(b).transpose(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g * t.val(b));
    t.accumulate(b.id, g.transpose() * t.val(a));
  });
}

// broadcast-add a row vector [1,C] to every row of a [T,C]
inline Var add_rowvec(Var a, Var b) {
  Tape& t = *a.tape;
  Mat y = t.val(a).rowwise() + t.val(b).row(0);
  return make_node(t, y, {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g.colwise().sum());
  });
}

inline Var mul_rowvec(Var a, Var b) {
  Tape& t = *a.tape;
  Mat y = t.val(a).array().rowwise() * t.val(b).row(0).array();
  return make_node(t, y, {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, (g.array().rowwise() * t.val(b).row(0).array()).matrix());
    t.accumulate(b.id, g.cwiseProduct(t.val(a)).colwise().sum());
  });
}

// repeat a [1,C] row T times -> [T,C]
inline Var broadcast_row(Var a, int rows) {
  Tape& t = *a.tape;
  Mat y = t.val(a).row(0).replicate(rows, 1);
  return make_node(t, y, {a},
                   [a](Tape& t, const Mat& g) { t.accumulate(a.id, g.colwise().sum()); });
}

// ---------------------------------------------------------------------------
// reductions

inline Var sum(Var a) {
  Tape& t = *a.tape;
  Mat y(1, 1);
  y(0, 0) = t.val(a).sum();
  return make_node(t, y, {a}, [a](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    t.accumulate(a.id, Mat::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

inline Var mean(Var a) {
  Tape& t = *a.tape;
  const float n = static_cast<float>(t.val(a).size());
  Mat y(1, 1);
  y(0, 0) = t.val(a).sum() / n;
  return make_node(t, y, {a}, [a, n](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    t.accumulate(a.id, Mat::Constant(x.rows(), x.cols(), g(0, 0) / n));
  });
}

// per-row sum -> [T,1]
inline Var sum_cols(Var a) {
  Tape& t = *a.tape;
  Mat y = t.val(a).rowwise().sum();
  return make_node(t, y, {a}, [a](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    t.accumulate(a.id, g.col(0).replicate(1, x.cols()));
  });
}

// ---------------------------------------------------------------------------
// shaping

inline Var concat_cols(Var a, Var b) {
  Tape& t = *a.tape;
  const Mat& va = t.val(a);
  const Mat& vb = t.val(b);
  Mat y(va.rows(), va.cols() + vb.cols());
  y << va, vb;
  const int ca = static_cast<int>(va.cols());
  return make_node(t, y, {a, b}, [a, b, ca](Tape& t, const Mat& g) {
    t.accumulate(a.id, g.leftCols(ca));
    t.accumulate(b.id, g.rightCols(g.cols() - ca));
  });
}

inline Var slice_cols(Var a, int start, int n) {
  Tape& t = *a.tape;
  Mat y = t.val(a).middleCols(start, n);
  return make_node(t, y, {a}, [a, start, n](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    Mat full = Mat::Zero(x.rows(), x.cols());
    full.middleCols(start, n) = g;
    t.accumulate(a.id, full);
  });
}

inline Var slice_rows(Var a, int start, int n) {
  Tape& t = *a.tape;
  Mat y = t.val(a).middleRows(start, n);
  return make_node(t, y, {a}, [a, start, n](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    Mat full = Mat::Zero(x.rows(), x.cols());
    full.middleRows(start, n) = g;
    t.accumulate(a.id, full);
  });
}

// out row i = a row idx[i] (embedding lookup)
inline Var gather_rows(Var a, std::vector<int> idx) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  Mat y(static_cast<int>(idx.size()), x.cols());
  for (size_t i = 0; i < idx.size(); ++i) y.row(static_cast<int>(i)) = x.row(idx[i]);
  return make_node(t, y, {a}, [a, idx = std::move(idx)](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    Mat full = Mat::Zero(x.rows(), x.cols());
    for (size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<int>(i));
    t.accumulate(a.id, full);
  });
}

// row i repeated reps[i] times (duration expansion of prior statistics)
inline Var repeat_rows(Var a, std::vector<int> reps) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  int total = 0;
  for (int r : reps) total += r;
  Mat y(total, x.cols());
  int at = 0;
  for (size_t i = 0; i < reps.size(); ++i)
    for (int r = 0; r < reps[i]; ++r) y.row(at++) = x.row(static_cast<int>(i));
  return make_node(t, y, {a}, [a, reps = std::move(reps)](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    Mat full = Mat::Zero(x.rows(), x.cols());
    int at = 0;
    for (size_t i = 0; i < reps.size(); ++i)
      for (int r = 0; r < reps[i]; ++r) full.row(static_cast<int>(i)) += g.row(at++);
    t.accumulate(a.id, full);
  });
}

// [N,1] -> [N/p, p] row-major regrouping (period view for discriminators)
inline Var fold_rows(Var a, int period) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  const int rows = static_cast<int>(x.rows()) / period;
  Mat y(rows, period);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < period; ++c) y(r, c) = x(r * period + c, 0);
  return make_node(t, y, {a}, [a, period](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    Mat full = Mat::Zero(x.rows(), 1);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < period; ++c) full(r * period + c, 0) = g(r, c);
    t.accumulate(a.id, full);
  });
}

// halve time resolution by averaging adjacent rows
inline Var avg_pool_rows(Var a, int factor) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  const int rows = static_cast<int>(x.rows()) / factor;
  Mat y = Mat::Zero(rows, x.cols());
  for (int r = 0; r < rows; ++r)
    for (int f = 0; f < factor; ++f) y.row(r) += x.row(r * factor + f);
  y /= static_cast<float>(factor);
  return make_node(t, y, {a}, [a, factor](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    Mat full = Mat::Zero(x.rows(), x.cols());
    for (int r = 0; r < g.rows(); ++r)
      for (int f = 0; f < factor; ++f) full.row(r * factor + f) = g.row(r) / factor;
    t.accumulate(a.id, full);
  });
}

// frame a [N,1] signal into overlapping [T, win] rows, no centering
inline Var frame_rows(Var a, int win, int hop) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  const int n = static_cast<int>(x.rows());
  if (n < win) throw std::runtime_error("frame_rows: signal shorter than window");
  const int frames = (n - win) / hop + 1;
  Mat y(frames, win);
  for (int f = 0; f < frames; ++f)
    for (int i = 0; i < win; ++i) y(f, i) = x(f * hop + i, 0);
  return make_node(t, y, {a}, [a, win, hop](Tape& t, const Mat& g) {
    const Mat& x = t.val(a);
    Mat full = Mat::Zero(x.rows(), 1);
    for (int f = 0; f < g.rows(); ++f)
      for (int i = 0; i < win; ++i) full(f * hop + i, 0) += g(f, i);
    t.accumulate(a.id, full);
  });
}

// ---------------------------------------------------------------------------
// row-wise normalizations

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  Mat y(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    Eigen::ArrayXf e = (x.row(r).array() - x.row(r).maxCoeff()).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return make_node(t, y, {a}, [a, y](Tape& t, const Mat& g) {
    Mat dx(y.rows(), y.cols());
    for (int r = 0; r < y.rows(); ++r) {
      const float dot = g.row(r).dot(y.row(r));
      dx.row(r) = (y.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    t.accumulate(a.id, dx);
  });
}

// per-row zero-mean unit-variance; affine gain/bias are applied by callers
inline Var layernorm_rows(Var a, float eps = 1e-5f) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  const int C = static_cast<int>(x.cols());
  Mat y(x.rows(), C);
  Eigen::VectorXf inv_std(x.rows());
  for (int r = 0; r < x.rows(); ++r) {
    const float mu = x.row(r).mean();
    const float var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0f / std::sqrt(var + eps);
    y.row(r) = ((x.row(r).array() - mu) * inv_std(r)).matrix();
  }
  return make_node(t, y, {a}, [a, y, inv_std](Tape& t, const Mat& g) {
    Mat dx(y.rows(), y.cols());
    const float C = static_cast<float>(y.cols());
    for (int r = 0; r < y.rows(); ++r) {
      const float gmean = g.row(r).mean();
      const float gydot = g.row(r).cwiseProduct(y.row(r)).sum() / C;
      dx.row(r) =
          ((g.row(r).array() - gmean - y.row(r).array() * gydot) * inv_std(r)).matrix();
    }
    t.accumulate(a.id, dx);
  });
}

// ---------------------------------------------------------------------------
// convolutions over time (rows)

// x [T, Cin], w [K*Cin, Cout] (tap-major blocks), zero 'same' padding.
inline Var conv1d(Var x, Var w, int kernel, int dilation = 1) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  const Mat& wv = t.val(w);
  const int T = static_cast<int>(xv.rows());
  const int cin = static_cast<int>(xv.cols());
  const int cout = static_cast<int>(wv.cols());
  if (wv.rows() != kernel * cin) throw std::runtime_error("conv1d: weight shape mismatch");
  const int half = (kernel - 1) / 2 * dilation;

  Mat y = Mat::Zero(T, cout);
  for (int k = 0; k < kernel; ++k) {
    const int shift = k * dilation - half;  // source row offset
    const int dst0 = std::max(0, -shift);
    const int dst1 = std::min(T, T - shift);
    if (dst1 <= dst0) continue;
    y.middleRows(dst0, dst1 - dst0) +=
        xv.middleRows(dst0 + shift, dst1 - dst0) * wv.middleRows(k * cin, cin);
  }
  return make_node(t, y, {x, w}, [x, w, kernel, dilation](Tape& t, const Mat& g) {
    const Mat& xv = t.val(x);
    const Mat& wv = t.val(w);
    const int T = static_cast<int>(xv.rows());
    const int cin = static_cast<int>(xv.cols());
    const int half = (kernel - 1) / 2 * dilation;
    Mat dx = Mat::Zero(xv.rows(), xv.cols());
    Mat dw = Mat::Zero(wv.rows(), wv.cols());
    for (int k = 0; k < kernel; ++k) {
      const int shift = k * dilation - half;
      const int dst0 = std::max(0, -shift);
      const int dst1 = std::min(T, T - shift);
      if (dst1 <= dst0) continue;
      dx.middleRows(dst0 + shift, dst1 - dst0) +=
          g.middleRows(dst0, dst1 - dst0) * wv.middleRows(k * cin, cin).transpose();
      dw.middleRows(k * cin, cin) +=
          xv.middleRows(dst0 + shift, dst1 - dst0).transpose() * g.middleRows(dst0, dst1 - dst0);
    }
    t.accumulate(x.id, dx);
    t.accumulate(w.id, dw);
  });
}

// Transposed conv for upsampling: x [T, Cin] -> [T*stride, Cout],
// kernel = 2*stride, padding = stride/2 (stride must be even).
inline Var conv1d_transposed(Var x, Var w, int stride) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  const Mat& wv = t.val(w);
  const int T = static_cast<int>(xv.rows());
  const int cin = static_cast<int>(xv.cols());
  const int kernel = 2 * stride;
  const int pad = stride / 2;
  if (stride % 2 != 0) throw std::runtime_error("conv1d_transposed: stride must be even");
  if (wv.rows() != kernel * cin)
    throw std::runtime_error("conv1d_transposed: weight shape mismatch");
  const int cout = static_cast<int>(wv.cols());
  const int out_rows = T * stride;

  Mat y = Mat::Zero(out_rows, cout);
  for (int k = 0; k < kernel; ++k) {
    const Mat wk = wv.middleRows(k * cin, cin);
    for (int r = 0; r < T; ++r) {
      const int o = r * stride + k - pad;
      if (o >= 0 && o < out_rows) y.row(o) += xv.row(r) * wk;
    }
  }
  return make_node(t, y, {x, w}, [x, w, stride](Tape& t, const Mat& g) {
    const Mat& xv = t.val(x);
    const Mat& wv = t.val(w);
    const int T = static_cast<int>(xv.rows());
    const int cin = static_cast<int>(xv.cols());
    const int kernel = 2 * stride;
    const int pad = stride / 2;
    const int out_rows = T * stride;
    Mat dx = Mat::Zero(xv.rows(), xv.cols());
    Mat dw = Mat::Zero(wv.rows(), wv.cols());
    for (int k = 0; k < kernel; ++k) {
      const Mat wk = wv.middleRows(k * cin, cin);
      for (int r = 0; r < T; ++r) {
        const int o = r * stride + k - pad;
        if (o < 0 || o >= out_rows) continue;
        dx.row(r) += g.row(o) * wk.transpose();
        dw.middleRows(k * cin, cin) += xv.row(r).transpose() * g.row(o);
      }
    }
    t.accumulate(x.id, dx);
    t.accumulate(w.id, dw);
  });
}

// ---------------------------------------------------------------------------
// Adam (decoupled per-parameter state; betas from TrainConfig)

struct AdamConfig {
  float beta1 = 0.8f;
  float beta2 = 0.99f;
  float eps = 1e-9f;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params, float lr) {
    ++t_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (auto& p : params.all()) {
      p.adam_m = cfg_.beta1 * p.adam_m + (1.0f - cfg_.beta1) * p.grad;
      p.adam_v =
          (cfg_.beta2 * p.adam_v.array() + (1.0f - cfg_.beta2) * p.grad.array().square())
              .matrix();
      p.value.array() -=
          lr * (p.adam_m.array() / bc1) / ((p.adam_v.array() / bc2).sqrt() + cfg_.eps);
    }
  }

  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace vox::ad
