#include "graphstad/autodiff.hpp"

#include <cmath>
#include <memory>

#include <Eigen/Dense>

#include "graphstad/errors.hpp"

namespace graphstad::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError("autodiff: " + what);
}

void require_same_shape(Var a, Var b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + " shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Adds `src` into the gradient buffer of `v` when it requires a gradient.
void accumulate(Var v, const std::vector<double>& src) {
  Graph* g = v.graph();
  if (!g->requires_grad(v.id())) return;
  auto& dst = g->grad_buffer(v.id()).data;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename F>
Var unary(Var a, F&& f, std::function<double(double x, double y)> dydx) {
  const auto& av = a.value();
  Tensor out(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = f(av.data[i]);
  Graph* g = a.graph();
  const auto out_id = g->size();
  return g->make(std::move(out), {a}, [g, a, out_id, dydx](const Tensor& gout) {
    if (!g->requires_grad(a.id())) return;
    const auto& x = g->value(a.id()).data;
    const auto& y = g->value(out_id).data;
    auto& ga = g->grad_buffer(a.id()).data;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout.data[i] * dydx(x[i], y[i]);
  });
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }

double Var::item() const {
  const auto& v = value();
  require(v.size() == 1, "item() on non-scalar " + shape_str(v.shape));
  return v.data[0];
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad && grad_enabled_, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::make(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return make(std::move(value), std::vector<Var>(parents), std::move(fn));
}

Var Graph::make(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  bool rg = false;
  if (grad_enabled_)
    for (const auto& p : parents) rg = rg || (p.valid() && nodes_[p.id()].requires_grad);
  nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.shape != n.value.shape || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape, 0.0);
  return n.grad;
}

void Graph::backward(Var root) {
  require(root.graph() == this, "backward root from another graph");
  require(root.value().size() == 1, "backward root must be a scalar");
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id()).data[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(n.grad);
  }
}

Tensor Graph::grad(Var v) const {
  const auto& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.shape, 0.0);
  return n.grad;
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  return a.graph()->make(std::move(out), {a, b}, [a, b](const Tensor& gout) {
    accumulate(a, gout.data);
    accumulate(b, gout.data);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  return a.graph()->make(std::move(out), {a, b}, [a, b](const Tensor& gout) {
    accumulate(a, gout.data);
    if (b.graph()->requires_grad(b.id())) {
      auto& gb = b.graph()->grad_buffer(b.id()).data;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gout.data[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  Graph* g = a.graph();
  return g->make(std::move(out), {a, b}, [g, a, b](const Tensor& gout) {
    if (g->requires_grad(a.id())) {
      auto& ga = g->grad_buffer(a.id()).data;
      const auto& bv = g->value(b.id()).data;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout.data[i] * bv[i];
    }
    if (g->requires_grad(b.id())) {
      auto& gb = g->grad_buffer(b.id()).data;
      const auto& av = g->value(a.id()).data;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout.data[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v *= s;
  Graph* g = a.graph();
  return g->make(std::move(out), {a}, [g, a, s](const Tensor& gout) {
    if (!g->requires_grad(a.id())) return;
    auto& ga = g->grad_buffer(a.id()).data;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * gout.data[i];
  });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var elu(Var a) {
  return unary(
      a, [](double x) { return x > 0 ? x : std::expm1(x); }, [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

Var reshape(Var a, Shape shape) {
  require(numel(shape) == a.value().size(), "reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  Tensor out(std::move(shape), a.value().data);
  return a.graph()->make(std::move(out), {a}, [a](const Tensor& gout) { accumulate(a, gout.data); });
}

Var weighted_sum(const std::vector<std::pair<Var, double>>& terms) {
  require(!terms.empty(), "weighted_sum of nothing");
  double total = 0.0;
  std::vector<Var> parents;
  for (const auto& [v, c] : terms) {
    total += c * v.item();
    parents.push_back(v);
  }
  Graph* g = terms.front().first.graph();
  return g->make(Tensor({1}, total), parents, [g, terms](const Tensor& gout) {
    for (const auto& [v, c] : terms)
      if (g->requires_grad(v.id())) g->grad_buffer(v.id()).data[0] += c * gout.data[0];
  });
}

Var linear(Var x, Var w, Var b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1],
          "linear shapes x" + shape_str(xs) + " w" + shape_str(ws));
  const auto n = xs[0], in = xs[1], out_dim = ws[0];
  if (b.valid()) require(b.value().size() == out_dim, "linear bias size");
  Tensor out({n, out_dim});
  MatMap y(out.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_dim));
  ConstMatMap xm(x.value().data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
  ConstMatMap wm(w.value().data.data(), static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in));
  y.noalias() = xm * wm.transpose();
  if (b.valid()) {
    Eigen::Map<const Eigen::RowVectorXd> bv(b.value().data.data(), static_cast<Eigen::Index>(out_dim));
    y.rowwise() += bv;
  }
  Graph* g = x.graph();
  std::vector<Var> parents{x, w};
  if (b.valid()) parents.push_back(b);
  return g->make(std::move(out), parents, [g, x, w, b, n, in, out_dim](const Tensor& gout) {
    ConstMatMap gy(gout.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_dim));
    if (g->requires_grad(x.id())) {
      ConstMatMap wm(g->value(w.id()).data.data(), static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in));
      MatMap gx(g->grad_buffer(x.id()).data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
      gx.noalias() += gy * wm;
    }
    if (g->requires_grad(w.id())) {
      ConstMatMap xm(g->value(x.id()).data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
      MatMap gw(g->grad_buffer(w.id()).data.data(), static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in));
      gw.noalias() += gy.transpose() * xm;
    }
    if (b.valid() && g->requires_grad(b.id())) {
      Eigen::Map<Eigen::RowVectorXd> gb(g->grad_buffer(b.id()).data.data(), static_cast<Eigen::Index>(out_dim));
      gb += gy.colwise().sum();
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat of nothing");
  const auto n = parts.front().shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.shape().size() == 2 && p.shape()[0] == n, "concat_cols row mismatch");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().data;
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.data.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    offset += widths[k];
  }
  Graph* g = parts.front().graph();
  return g->make(std::move(out), parts, [g, parts, widths, n, total](const Tensor& gout) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (g->requires_grad(parts[k].id())) {
        auto& gp = g->grad_buffer(parts[k].id()).data;
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += gout.data[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
  const auto& s = a.shape();
  require(s.size() == 2 && start + len <= s[1], "slice_cols out of range");
  const auto n = s[0], w = s[1];
  Tensor out({n, len});
  const auto& av = a.value().data;
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * w + start), len,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * len));
  Graph* g = a.graph();
  return g->make(std::move(out), {a}, [g, a, n, w, start, len](const Tensor& gout) {
    if (!g->requires_grad(a.id())) return;
    auto& ga = g->grad_buffer(a.id()).data;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < len; ++c) ga[r * w + start + c] += gout.data[r * len + c];
  });
}

Var time_slice(Var a, std::size_t T, std::size_t t) {
  const auto& s = a.shape();
  require(s.size() == 2 && T > 0 && s[0] % T == 0 && t < T, "time_slice shape");
  const auto n = s[0] / T, e = s[1];
  Tensor out({n, e});
  const auto& av = a.value().data;
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((r * T + t) * e), e,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * e));
  Graph* g = a.graph();
  return g->make(std::move(out), {a}, [g, a, n, e, T, t](const Tensor& gout) {
    if (!g->requires_grad(a.id())) return;
    auto& ga = g->grad_buffer(a.id()).data;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < e; ++c) ga[(r * T + t) * e + c] += gout.data[r * e + c];
  });
}

Var interleave_time(const std::vector<Var>& parts) {
  require(!parts.empty(), "interleave of nothing");
  const auto T = parts.size();
  const auto n = parts.front().shape().at(0), e = parts.front().shape().at(1);
  for (const auto& p : parts) require(p.shape() == parts.front().shape(), "interleave_time shape mismatch");
  Tensor out({n * T, e});
  for (std::size_t t = 0; t < T; ++t) {
    const auto& pv = parts[t].value().data;
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * e), e,
                  out.data.begin() + static_cast<std::ptrdiff_t>((r * T + t) * e));
  }
  Graph* g = parts.front().graph();
  return g->make(std::move(out), parts, [g, parts, n, e, T](const Tensor& gout) {
    for (std::size_t t = 0; t < T; ++t) {
      if (!g->requires_grad(parts[t].id())) continue;
      auto& gp = g->grad_buffer(parts[t].id()).data;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < e; ++c) gp[r * e + c] += gout.data[(r * T + t) * e + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

std::array<std::size_t, 3> conv_output_size(const std::array<std::size_t, 3>& in, const ConvGeometry& g,
                                            const std::array<std::size_t, 3>& pad_hi) {
  std::array<std::size_t, 3> out{};
  for (int d = 0; d < 3; ++d) {
    const auto padded = in[d] + g.pad_lo[d] + pad_hi[d];
    require(padded >= g.kernel[d] && g.stride[d] > 0, "convolution kernel larger than padded input");
    out[d] = (padded - g.kernel[d]) / g.stride[d] + 1;
  }
  return out;
}

namespace {

struct ConvDims {
  std::size_t n, c_in;
  std::array<std::size_t, 3> in, out;
  std::size_t k_total() const { return 0; }
};

std::size_t prod3(const std::array<std::size_t, 3>& a) { return a[0] * a[1] * a[2]; }

// Lowers x [N, C, in...] into a (C·K) × (N·O) column matrix for the
// convolution mapping `in` to `out`.
RowMat im2col(const std::vector<double>& x, std::size_t n, std::size_t c, const std::array<std::size_t, 3>& in,
              const std::array<std::size_t, 3>& out, const ConvGeometry& g) {
  const auto K = prod3(g.kernel);
  const auto O = prod3(out);
  const auto I = prod3(in);
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(c * K), static_cast<Eigen::Index>(n * O));
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t k0 = 0; k0 < g.kernel[0]; ++k0)
      for (std::size_t k1 = 0; k1 < g.kernel[1]; ++k1)
        for (std::size_t k2 = 0; k2 < g.kernel[2]; ++k2) {
          const auto row = static_cast<Eigen::Index>(ci * K + (k0 * g.kernel[1] + k1) * g.kernel[2] + k2);
          double* dst = cols.row(row).data();
          for (std::size_t s = 0; s < n; ++s) {
            const double* src = x.data() + (s * c + ci) * I;
            for (std::size_t o0 = 0; o0 < out[0]; ++o0) {
              const auto i0 = static_cast<std::ptrdiff_t>(o0 * g.stride[0] + k0) - static_cast<std::ptrdiff_t>(g.pad_lo[0]);
              if (i0 < 0 || i0 >= static_cast<std::ptrdiff_t>(in[0])) continue;
              for (std::size_t o1 = 0; o1 < out[1]; ++o1) {
                const auto i1 = static_cast<std::ptrdiff_t>(o1 * g.stride[1] + k1) - static_cast<std::ptrdiff_t>(g.pad_lo[1]);
                if (i1 < 0 || i1 >= static_cast<std::ptrdiff_t>(in[1])) continue;
                for (std::size_t o2 = 0; o2 < out[2]; ++o2) {
                  const auto i2 = static_cast<std::ptrdiff_t>(o2 * g.stride[2] + k2) - static_cast<std::ptrdiff_t>(g.pad_lo[2]);
                  if (i2 < 0 || i2 >= static_cast<std::ptrdiff_t>(in[2])) continue;
                  dst[s * O + (o0 * out[1] + o1) * out[2] + o2] =
                      src[(static_cast<std::size_t>(i0) * in[1] + static_cast<std::size_t>(i1)) * in[2] +
                          static_cast<std::size_t>(i2)];
                }
              }
            }
          }
        }
  return cols;
}

// Adjoint of im2col: scatters-adds columns back into x [N, C, in...].
void col2im(const RowMat& cols, std::vector<double>& x, std::size_t n, std::size_t c,
            const std::array<std::size_t, 3>& in, const std::array<std::size_t, 3>& out, const ConvGeometry& g) {
  const auto K = prod3(g.kernel);
  const auto O = prod3(out);
  const auto I = prod3(in);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t k0 = 0; k0 < g.kernel[0]; ++k0)
      for (std::size_t k1 = 0; k1 < g.kernel[1]; ++k1)
        for (std::size_t k2 = 0; k2 < g.kernel[2]; ++k2) {
          const auto row = static_cast<Eigen::Index>(ci * K + (k0 * g.kernel[1] + k1) * g.kernel[2] + k2);
          const double* src = cols.row(row).data();
          for (std::size_t s = 0; s < n; ++s) {
            double* dst = x.data() + (s * c + ci) * I;
            for (std::size_t o0 = 0; o0 < out[0]; ++o0) {
              const auto i0 = static_cast<std::ptrdiff_t>(o0 * g.stride[0] + k0) - static_cast<std::ptrdiff_t>(g.pad_lo[0]);
              if (i0 < 0 || i0 >= static_cast<std::ptrdiff_t>(in[0])) continue;
              for (std::size_t o1 = 0; o1 < out[1]; ++o1) {
                const auto i1 = static_cast<std::ptrdiff_t>(o1 * g.stride[1] + k1) - static_cast<std::ptrdiff_t>(g.pad_lo[1]);
                if (i1 < 0 || i1 >= static_cast<std::ptrdiff_t>(in[1])) continue;
                for (std::size_t o2 = 0; o2 < out[2]; ++o2) {
                  const auto i2 = static_cast<std::ptrdiff_t>(o2 * g.stride[2] + k2) - static_cast<std::ptrdiff_t>(g.pad_lo[2]);
                  if (i2 < 0 || i2 >= static_cast<std::ptrdiff_t>(in[2])) continue;
                  dst[(static_cast<std::size_t>(i0) * in[1] + static_cast<std::size_t>(i1)) * in[2] +
                      static_cast<std::size_t>(i2)] += src[s * O + (o0 * out[1] + o1) * out[2] + o2];
                }
              }
            }
          }
        }
}

// [N, C, O] tensor data <-> C × (N·O) matrix.
RowMat to_channel_major(const std::vector<double>& t, std::size_t n, std::size_t c, std::size_t o) {
  RowMat m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n * o));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(t.data() + (s * c + ch) * o, o, m.row(static_cast<Eigen::Index>(ch)).data() + s * o);
  return m;
}

void add_from_channel_major(const RowMat& m, std::vector<double>& t, std::size_t n, std::size_t c, std::size_t o) {
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = m.row(static_cast<Eigen::Index>(ch)).data() + s * o;
      double* dst = t.data() + (s * c + ch) * o;
      for (std::size_t i = 0; i < o; ++i) dst[i] += src[i];
    }
}

std::array<std::size_t, 3> spatial(const Shape& s) { return {s[2], s[3], s[4]}; }

}  // namespace

Var conv3d(Var x, Var w, const ConvGeometry& geom, const std::array<std::size_t, 3>& out) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require(xs.size() == 5 && ws.size() == 5 && ws[1] == xs[1], "conv3d shapes x" + shape_str(xs) + " w" + shape_str(ws));
  for (int d = 0; d < 3; ++d) require(ws[2 + d] == geom.kernel[d], "conv3d kernel mismatch");
  const auto n = xs[0], c_in = xs[1], c_out = ws[0];
  const auto in = spatial(xs);
  const auto K = prod3(geom.kernel), O = prod3(out);
  auto cols = std::make_shared<RowMat>(im2col(x.value().data, n, c_in, in, out, geom));
  ConstMatMap wm(w.value().data.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(c_in * K));
  RowMat y = wm * *cols;
  Tensor result({n, c_out, out[0], out[1], out[2]});
  add_from_channel_major(y, result.data, n, c_out, O);
  Graph* g = x.graph();
  return g->make(std::move(result), {x, w}, [g, x, w, geom, cols, n, c_in, c_out, in, out, K, O](const Tensor& gout) {
    const RowMat gy = to_channel_major(gout.data, n, c_out, O);
    if (g->requires_grad(w.id())) {
      MatMap gw(g->grad_buffer(w.id()).data.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(c_in * K));
      gw.noalias() += gy * cols->transpose();
    }
    if (g->requires_grad(x.id())) {
      ConstMatMap wm(g->value(w.id()).data.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(c_in * K));
      const RowMat gcols = wm.transpose() * gy;
      col2im(gcols, g->grad_buffer(x.id()).data, n, c_in, in, out, geom);
    }
  });
}

Var conv3d_transpose(Var x, Var w, const ConvGeometry& geom, const std::array<std::size_t, 3>& out) {
  // Adjoint of a convolution mapping `out` (C_out channels) onto x's spatial
  // size (C_in channels); w is that convolution's [C_in, C_out, k...] weight.
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require(xs.size() == 5 && ws.size() == 5 && ws[0] == xs[1],
          "conv3d_transpose shapes x" + shape_str(xs) + " w" + shape_str(ws));
  for (int d = 0; d < 3; ++d) require(ws[2 + d] == geom.kernel[d], "conv3d_transpose kernel mismatch");
  const auto n = xs[0], c_in = xs[1], c_out = ws[1];
  const auto small = spatial(xs);
  const auto expect = conv_output_size(out, geom,
                                       {0, 0, 0});  // validated loosely below
  (void)expect;
  const auto K = prod3(geom.kernel), Osmall = prod3(small);
  const RowMat xm = to_channel_major(x.value().data, n, c_in, Osmall);
  ConstMatMap wm(w.value().data.data(), static_cast<Eigen::Index>(c_in), static_cast<Eigen::Index>(c_out * K));
  const RowMat cols = wm.transpose() * xm;
  Tensor result({n, c_out, out[0], out[1], out[2]});
  col2im(cols, result.data, n, c_out, out, small, geom);
  Graph* g = x.graph();
  return g->make(std::move(result), {x, w}, [g, x, w, geom, n, c_in, c_out, small, out, K, Osmall](const Tensor& gout) {
    const RowMat gcols = im2col(gout.data, n, c_out, out, small, geom);
    if (g->requires_grad(w.id())) {
      const RowMat xm = to_channel_major(g->value(x.id()).data, n, c_in, Osmall);
      MatMap gw(g->grad_buffer(w.id()).data.data(), static_cast<Eigen::Index>(c_in), static_cast<Eigen::Index>(c_out * K));
      gw.noalias() += xm * gcols.transpose();
    }
    if (g->requires_grad(x.id())) {
      ConstMatMap wm(g->value(w.id()).data.data(), static_cast<Eigen::Index>(c_in), static_cast<Eigen::Index>(c_out * K));
      const RowMat gx = wm * gcols;
      add_from_channel_major(gx, g->grad_buffer(x.id()).data, n, c_in, Osmall);
    }
  });
}

Var channel_bias(Var x, Var b) {
  const auto& xs = x.shape();
  require(xs.size() >= 2 && b.value().size() == xs[1], "channel_bias shapes");
  const auto n = xs[0], c = xs[1];
  const auto inner = x.value().size() / (n * c);
  Tensor out = x.value();
  const auto& bv = b.value().data;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) out.data[(s * c + ch) * inner + i] += bv[ch];
  Graph* g = x.graph();
  return g->make(std::move(out), {x, b}, [g, x, b, n, c, inner](const Tensor& gout) {
    accumulate(x, gout.data);
    if (!g->requires_grad(b.id())) return;
    auto& gb = g->grad_buffer(b.id()).data;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i) gb[ch] += gout.data[(s * c + ch) * inner + i];
  });
}

// ---------------------------------------------------------------------------
// Batch normalisation

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
  const auto& xs = x.shape();
  require(xs.size() >= 2, "batch_norm input rank");
  const auto n = xs[0], c = xs[1];
  const auto inner = x.value().size() / (n * c);
  const auto count = n * inner;
  require(gamma.value().size() == c && beta.value().size() == c, "batch_norm parameter size");
  require(count > 1, "batch_norm needs more than one value per channel");
  const auto& xv = x.value().data;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) mean[ch] += xv[(s * c + ch) * inner + i];
  for (auto& m : mean) m /= static_cast<double>(count);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) {
        const double d = xv[(s * c + ch) * inner + i] - mean[ch];
        var[ch] += d * d;
      }
  for (auto& v : var) v /= static_cast<double>(count);
  if (stats) *stats = BatchStats{mean, var, count};

  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
  Tensor out(xs);
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) {
        const auto idx = (s * c + ch) * inner + i;
        (*xhat)[idx] = (xv[idx] - mean[ch]) * inv_std[ch];
        out.data[idx] = gv[ch] * (*xhat)[idx] + bv[ch];
      }
  Graph* g = x.graph();
  return g->make(std::move(out), {x, gamma, beta},
                 [g, x, gamma, beta, xhat, inv_std, n, c, inner, count](const Tensor& gout) {
                   std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                   for (std::size_t s = 0; s < n; ++s)
                     for (std::size_t ch = 0; ch < c; ++ch)
                       for (std::size_t i = 0; i < inner; ++i) {
                         const auto idx = (s * c + ch) * inner + i;
                         sum_g[ch] += gout.data[idx];
                         sum_gx[ch] += gout.data[idx] * (*xhat)[idx];
                       }
                   if (g->requires_grad(beta.id())) {
                     auto& gb = g->grad_buffer(beta.id()).data;
                     for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
                   }
                   if (g->requires_grad(gamma.id())) {
                     auto& gg = g->grad_buffer(gamma.id()).data;
                     for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
                   }
                   if (g->requires_grad(x.id())) {
                     const auto& gv = g->value(gamma.id()).data;
                     auto& gx = g->grad_buffer(x.id()).data;
                     const double m = static_cast<double>(count);
                     for (std::size_t s = 0; s < n; ++s)
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const double k = gv[ch] * inv_std[ch] / m;
                         for (std::size_t i = 0; i < inner; ++i) {
                           const auto idx = (s * c + ch) * inner + i;
                           gx[idx] += k * (m * gout.data[idx] - sum_g[ch] - (*xhat)[idx] * sum_gx[ch]);
                         }
                       }
                   }
                 });
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var, double eps) {
  const auto& xs = x.shape();
  require(xs.size() >= 2, "batch_norm input rank");
  const auto n = xs[0], c = xs[1];
  const auto inner = x.value().size() / (n * c);
  require(gamma.value().size() == c && running_mean.size() == c && running_var.size() == c,
          "batch_norm parameter size");
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(running_var.data[ch] + eps);
  const auto& xv = x.value().data;
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  Tensor out(xs);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) {
        const auto idx = (s * c + ch) * inner + i;
        out.data[idx] = gv[ch] * (xv[idx] - running_mean.data[ch]) * inv_std[ch] + bv[ch];
      }
  Graph* g = x.graph();
  const Tensor rm = running_mean;
  return g->make(std::move(out), {x, gamma, beta}, [g, x, gamma, beta, rm, inv_std, n, c, inner](const Tensor& gout) {
    const auto& xv = g->value(x.id()).data;
    const auto& gv = g->value(gamma.id()).data;
    const bool gx_on = g->requires_grad(x.id());
    const bool gg_on = g->requires_grad(gamma.id());
    const bool gb_on = g->requires_grad(beta.id());
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i) {
          const auto idx = (s * c + ch) * inner + i;
          const double go = gout.data[idx];
          if (gx_on) g->grad_buffer(x.id()).data[idx] += go * gv[ch] * inv_std[ch];
          if (gg_on) g->grad_buffer(gamma.id()).data[ch] += go * (xv[idx] - rm.data[ch]) * inv_std[ch];
          if (gb_on) g->grad_buffer(beta.id()).data[ch] += go;
        }
  });
}

// ---------------------------------------------------------------------------
// Graph layers

Var gather_nodes(Var x, const std::vector<std::size_t>& cells) {
  const auto& xs = x.shape();
  require(xs.size() == 2, "gather_nodes expects [B, cells]");
  const auto b = xs[0], width = xs[1], m = cells.size();
  Tensor out({b * m, 1});
  const auto& xv = x.value().data;
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < m; ++i) out.data[s * m + i] = xv[s * width + cells[i]];
  Graph* g = x.graph();
  return g->make(std::move(out), {x}, [g, x, cells, b, width, m](const Tensor& gout) {
    if (!g->requires_grad(x.id())) return;
    auto& gx = g->grad_buffer(x.id()).data;
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t i = 0; i < m; ++i) gx[s * width + cells[i]] += gout.data[s * m + i];
  });
}

namespace {

// y = P x for the block-mean operator P (symmetric), x laid out [B·M, F].
void apply_block_mean(const std::vector<double>& x, std::vector<double>& y, std::size_t batch, std::size_t m,
                      std::size_t f, const std::vector<std::vector<std::size_t>>& blocks) {
  std::vector<double> acc(f);
  for (std::size_t s = 0; s < batch; ++s)
    for (const auto& block : blocks) {
      if (block.empty()) continue;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (auto node : block)
        for (std::size_t k = 0; k < f; ++k) acc[k] += x[(s * m + node) * f + k];
      const double inv = 1.0 / static_cast<double>(block.size());
      for (auto node : block)
        for (std::size_t k = 0; k < f; ++k) y[(s * m + node) * f + k] += acc[k] * inv;
    }
}

}  // namespace

Var block_mean(Var x, std::size_t M, const std::vector<std::vector<std::size_t>>& blocks) {
  const auto& xs = x.shape();
  require(xs.size() == 2 && M > 0 && xs[0] % M == 0, "block_mean expects [B·M, F]");
  const auto batch = xs[0] / M, f = xs[1];
  Tensor out(xs, 0.0);
  apply_block_mean(x.value().data, out.data, batch, M, f, blocks);
  Graph* g = x.graph();
  return g->make(std::move(out), {x}, [g, x, M, blocks, batch, f](const Tensor& gout) {
    if (!g->requires_grad(x.id())) return;
    apply_block_mean(gout.data, g->grad_buffer(x.id()).data, batch, M, f, blocks);
  });
}

Var mean_nodes(Var x, std::size_t M) {
  const auto& xs = x.shape();
  require(xs.size() == 2 && M > 0 && xs[0] % M == 0, "mean_nodes expects [B·M, F]");
  const auto batch = xs[0] / M, f = xs[1];
  Tensor out({batch, f}, 0.0);
  const auto& xv = x.value().data;
  const double inv = 1.0 / static_cast<double>(M);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < f; ++k) out.data[s * f + k] += xv[(s * M + i) * f + k] * inv;
  Graph* g = x.graph();
  return g->make(std::move(out), {x}, [g, x, M, batch, f, inv](const Tensor& gout) {
    if (!g->requires_grad(x.id())) return;
    auto& gx = g->grad_buffer(x.id()).data;
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < f; ++k) gx[(s * M + i) * f + k] += gout.data[s * f + k] * inv;
  });
}

// ---------------------------------------------------------------------------
// Loss terms

Var masked_mse(Var pred, const Tensor& target, const std::vector<double>& mask) {
  const auto& pv = pred.value().data;
  require(pv.size() == target.size(), "masked_mse size mismatch");
  require(!mask.empty() && pv.size() % mask.size() == 0, "masked_mse mask size");
  const auto cells = mask.size();
  const auto rows = pv.size() / cells;
  double mask_total = 0.0;
  for (double m : mask) mask_total += m;
  require(mask_total > 0.0, "masked_mse with empty mask");
  const double denom = static_cast<double>(rows) * mask_total;
  double sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cells; ++c) {
      const double d = pv[r * cells + c] - target.data[r * cells + c];
      sum += mask[c] * d * d;
    }
  Graph* g = pred.graph();
  return g->make(Tensor({1}, sum / denom), {pred}, [g, pred, target, mask, rows, cells, denom](const Tensor& gout) {
    if (!g->requires_grad(pred.id())) return;
    const auto& pv = g->value(pred.id()).data;
    auto& gp = g->grad_buffer(pred.id()).data;
    const double k = 2.0 * gout.data[0] / denom;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cells; ++c) {
        const auto idx = r * cells + c;
        gp[idx] += k * mask[c] * (pv[idx] - target.data[idx]);
      }
  });
}

Var gaussian_kl(Var mu, Var logvar) {
  require_same_shape(mu, logvar, "gaussian_kl");
  const auto& ms = mu.shape();
  require(ms.size() == 2, "gaussian_kl expects [rows, latent]");
  const auto rows = ms[0];
  const auto& m = mu.value().data;
  const auto& lv = logvar.value().data;
  double sum = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) sum += -0.5 * (1.0 + lv[i] - m[i] * m[i] - std::exp(lv[i]));
  const double inv_rows = 1.0 / static_cast<double>(rows);
  Graph* g = mu.graph();
  return g->make(Tensor({1}, sum * inv_rows), {mu, logvar}, [g, mu, logvar, inv_rows](const Tensor& gout) {
    const double k = gout.data[0] * inv_rows;
    if (g->requires_grad(mu.id())) {
      const auto& m = g->value(mu.id()).data;
      auto& gm = g->grad_buffer(mu.id()).data;
      for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += k * m[i];
    }
    if (g->requires_grad(logvar.id())) {
      const auto& lv = g->value(logvar.id()).data;
      auto& gl = g->grad_buffer(logvar.id()).data;
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += k * 0.5 * (std::exp(lv[i]) - 1.0);
    }
  });
}

Var sum_squares(const std::vector<Var>& vars) {
  require(!vars.empty(), "sum_squares of nothing");
  double sum = 0.0;
  for (const auto& v : vars)
    for (double x : v.value().data) sum += x * x;
  Graph* g = vars.front().graph();
  return g->make(Tensor({1}, sum), vars, [g, vars](const Tensor& gout) {
    for (const auto& v : vars) {
      if (!g->requires_grad(v.id())) continue;
      const auto& x = g->value(v.id()).data;
      auto& gv = g->grad_buffer(v.id()).data;
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += 2.0 * x[i] * gout.data[0];
    }
  });
}

void check_finite(Var v, const std::string& layer) {
  for (double x : v.value().data)
    if (!std::isfinite(x)) throw NumericFault("non-finite activation in layer " + layer);
}

}  // namespace graphstad::ad
