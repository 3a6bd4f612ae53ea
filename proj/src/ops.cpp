#include "cea/ops.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>

#include "cea/flops.hpp"

namespace cea {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

TensorImpl* parent(TensorImpl& self, std::size_t i) { return self.parents[i].get(); }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(a.shape()));
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                         shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class Unary, class Deriv>
Tensor elementwise(const Tensor& a, Unary f, Deriv df, const char* op) {
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(
      a.shape(), std::move(out), {a},
      [df](TensorImpl& self) {
        auto* pa = parent(self, 0);
        if (!pa->requires_grad) return;
        auto& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i)
          ga[i] += self.grad[i] * df(pa->data[i], self.data[i]);
      },
      op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(
      a.shape(), std::move(out), {a, b},
      [](TensorImpl& self) {
        for (std::size_t p = 0; p < 2; ++p) {
          auto* pp = parent(self, p);
          if (!pp->requires_grad) continue;
          auto& g = pp->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(
      a.shape(), std::move(out), {a, b},
      [](TensorImpl& self) {
        if (auto* pa = parent(self, 0); pa->requires_grad) {
          auto& g = pa->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (auto* pb = parent(self, 1); pb->requires_grad) {
          auto& g = pb->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(
      a.shape(), std::move(out), {a, b},
      [](TensorImpl& self) {
        auto* pa = parent(self, 0);
        auto* pb = parent(self, 1);
        if (pa->requires_grad) {
          auto& g = pa->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& a, double s) {
  return elementwise(
      a, [s](double v) { return v * s; }, [s](double, double) { return s; }, "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  return elementwise(
      a, [s](double v) { return v + s; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor abs(const Tensor& a) {
  return elementwise(
      a, [](double v) { return std::abs(v); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, "abs");
}

Tensor reciprocal(const Tensor& a) {
  for (double v : a.data())
    if (v == 0.0) throw NumericError("reciprocal of zero");
  return elementwise(
      a, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; },
      "reciprocal");
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return elementwise(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      },
      "gelu");
}

Tensor mul_rows(const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "mul_rows");
  const auto m = x.dim(0), n = x.dim(1);
  if (v.numel() != n)
    throw DimensionError("mul_rows: vector length " + std::to_string(v.numel()) +
                         " does not match columns " + std::to_string(n));
  auto xd = x.data(), vd = v.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] * vd[j];
  return make_result(
      x.shape(), std::move(out), {x, v},
      [m, n](TensorImpl& self) {
        auto* px = parent(self, 0);
        auto* pv = parent(self, 1);
        if (px->requires_grad) {
          auto& g = px->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * pv->data[j];
        }
        if (pv->requires_grad) {
          auto& g = pv->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * px->data[i * n + j];
        }
      },
      "mul_rows");
}

Tensor mul_cols(const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "mul_cols");
  const auto m = x.dim(0), n = x.dim(1);
  if (v.numel() != m)
    throw DimensionError("mul_cols: vector length " + std::to_string(v.numel()) +
                         " does not match rows " + std::to_string(m));
  auto xd = x.data(), vd = v.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] * vd[i];
  return make_result(
      x.shape(), std::move(out), {x, v},
      [m, n](TensorImpl& self) {
        auto* px = parent(self, 0);
        auto* pv = parent(self, 1);
        if (px->requires_grad) {
          auto& g = px->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * pv->data[i];
        }
        if (pv->requires_grad) {
          auto& g = pv->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i] += self.grad[i * n + j] * px->data[i * n + j];
        }
      },
      "mul_cols");
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const auto m = trans_a ? ac : ar;
  const auto k = trans_a ? ar : ac;
  const auto kb = trans_b ? bc : br;
  const auto n = trans_b ? br : bc;
  if (k != kb)
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) +
                         (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                         (trans_b ? "^T" : ""));
  std::vector<double> out(m * n, 0.0);
  {
    CMap A(a.data().data(), ar, ac);
    CMap B(b.data().data(), br, bc);
    MMap C(out.data(), m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  MacCounter::add(static_cast<std::uint64_t>(m) * k * n);
  return make_result(
      {m, n}, std::move(out), {a, b},
      [=](TensorImpl& self) {
        auto* pa = parent(self, 0);
        auto* pb = parent(self, 1);
        CMap G(self.grad.data(), m, n);
        CMap A(pa->data.data(), ar, ac);
        CMap B(pb->data.data(), br, bc);
        if (pa->requires_grad) {
          MMap GA(pa->ensure_grad().data(), ar, ac);
          // d op(A) = G op(B)^T
          if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
          else if (!trans_a && trans_b) GA.noalias() += G * B;
          else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
          else GA.noalias() += B.transpose() * G.transpose();
        }
        if (pb->requires_grad) {
          MMap GB(pb->ensure_grad().data(), br, bc);
          // d op(B) = op(A)^T G
          if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
          else if (trans_a && !trans_b) GB.noalias() += A * G;
          else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
          else GB.noalias() += G.transpose() * A.transpose();
        }
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  auto in = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  return make_result(
      {n, m}, std::move(out), {a},
      [m, n](TensorImpl& self) {
        auto* pa = parent(self, 0);
        if (!pa->requires_grad) return;
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
      },
      "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto in = a.data();
  return make_result(
      std::move(shape), std::vector<double>(in.begin(), in.end()), {a},
      [](TensorImpl& self) {
        auto* pa = parent(self, 0);
        if (!pa->requires_grad) return;
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "reshape");
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto sp = split_axis(a.shape(), axis, "slice");
  if (begin > end || end > sp.len)
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for axis of length " + std::to_string(sp.len));
  const auto width = end - begin;
  Shape shape = a.shape();
  shape[axis] = width;
  auto in = a.data();
  std::vector<double> out(sp.outer * width * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(in.begin() + (o * sp.len + begin) * sp.inner, width * sp.inner,
                out.begin() + o * width * sp.inner);
  return make_result(
      std::move(shape), std::move(out), {a},
      [sp, begin, width](TensorImpl& self) {
        auto* pa = parent(self, 0);
        if (!pa->requires_grad) return;
        auto& g = pa->ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < width * sp.inner; ++i)
            g[(o * sp.len + begin) * sp.inner + i] += self.grad[o * width * sp.inner + i];
      },
      "slice");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const auto& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok)
      throw DimensionError("concat: incompatible shapes " + shape_str(ref) + " and " +
                           shape_str(s));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape shape = ref;
  shape[axis] = total;
  const auto sp = split_axis(shape, axis, "concat");
  std::vector<double> out(numel_of(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto in = parts[p].data();
    const auto w = lens[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(in.begin() + o * w, w, out.begin() + (o * total + offset) * sp.inner);
    offset += lens[p];
  }
  return make_result(
      std::move(shape), std::move(out), parts,
      [sp, lens, total](TensorImpl& self) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < lens.size(); ++p) {
          auto* pp = parent(self, p);
          const auto w = lens[p] * sp.inner;
          if (pp->requires_grad) {
            auto& g = pp->ensure_grad();
            for (std::size_t o = 0; o < sp.outer; ++o)
              for (std::size_t i = 0; i < w; ++i)
                g[o * w + i] += self.grad[(o * total + off) * sp.inner + i];
          }
          off += lens[p];
        }
      },
      "concat");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result(
      {1}, {s}, {a},
      [](TensorImpl& self) {
        auto* pa = parent(self, 0);
        if (!pa->requires_grad) return;
        for (auto& g : pa->ensure_grad()) g += self.grad[0];
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis, "sum_axis");
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  auto in = a.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += in[(o * sp.len + l) * sp.inner + i];
  return make_result(
      std::move(shape), std::move(out), {a},
      [sp](TensorImpl& self) {
        auto* pa = parent(self, 0);
        if (!pa->requires_grad) return;
        auto& g = pa->ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t i = 0; i < sp.inner; ++i)
              g[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
      },
      "sum_axis");
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  const auto len = split_axis(a.shape(), axis, "mean_axis").len;
  if (len == 0) throw DimensionError("mean_axis over empty axis");
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(len));
}

Tensor pool_mean(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw DimensionError("pool_mean expects non-empty [N x C]");
  const auto n = x.dim(0), c = x.dim(1);
  auto in = x.data();
  std::vector<double> out(c), col(n);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = in[i * c + j];
    std::sort(col.begin(), col.end());
    double acc = 0.0;
    for (double v : col) acc += v;
    out[j] = acc / static_cast<double>(n);
  }
  return make_result(
      {1, c}, std::move(out), {x},
      [n, c](TensorImpl& self) {
        auto* px = parent(self, 0);
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
      },
      "pool_mean");
}

Tensor l2_norm(const Tensor& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis, "l2_norm");
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  auto in = a.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const double v = in[(o * sp.len + l) * sp.inner + i];
        out[o * sp.inner + i] += v * v;
      }
  for (auto& v : out) v = std::sqrt(v);
  return make_result(
      std::move(shape), std::move(out), {a},
      [sp](TensorImpl& self) {
        auto* pa = parent(self, 0);
        if (!pa->requires_grad) return;
        auto& g = pa->ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const double n = self.data[o * sp.inner + i];
            if (n == 0.0) continue;
            const double f = self.grad[o * sp.inner + i] / n;
            for (std::size_t l = 0; l < sp.len; ++l) {
              const auto idx = (o * sp.len + l) * sp.inner + i;
              g[idx] += f * pa->data[idx];
            }
          }
      },
      "l2_norm");
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis, "softmax");
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, in[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(in[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  return make_result(
      a.shape(), std::move(out), {a},
      [sp](TensorImpl& self) {
        auto* pa = parent(self, 0);
        if (!pa->requires_grad) return;
        auto& g = pa->ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const auto base = o * sp.len * sp.inner + i;
            double dot = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) {
              const auto idx = base + l * sp.inner;
              dot += self.grad[idx] * self.data[idx];
            }
            for (std::size_t l = 0; l < sp.len; ++l) {
              const auto idx = base + l * sp.inner;
              g[idx] += self.data[idx] * (self.grad[idx] - dot);
            }
          }
      },
      "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, double eps) {
  require_rank(x, 2, "layer_norm");
  const auto n = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c) throw DimensionError("layer_norm: gain length mismatch");
  auto xd = x.data(), gd = gamma.data();
  std::vector<double> out(n * c), xhat(n * c), inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xd.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (row[j] - mu) * inv_std[r];
      out[r * c + j] = xhat[r * c + j] * gd[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gamma},
      [n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
        auto* px = parent(self, 0);
        auto* pg = parent(self, 1);
        if (pg->requires_grad) {
          auto& gg = pg->ensure_grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gg[j] += self.grad[r * c + j] * xhat[r * c + j];
        }
        if (px->requires_grad) {
          auto& gx = px->ensure_grad();
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < n; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = self.grad[r * c + j] * pg->data[j];
              m1 += gh;
              m2 += gh * xhat[r * c + j];
            }
            m1 *= inv_c;
            m2 *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = self.grad[r * c + j] * pg->data[j];
              gx[r * c + j] += inv_std[r] * (gh - m1 - xhat[r * c + j] * m2);
            }
          }
        }
      },
      "layer_norm");
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, std::size_t stride,
                        std::size_t padding) {
  require_rank(x, 3, "depthwise_conv2d");
  require_rank(w, 3, "depthwise_conv2d");
  if (stride == 0) throw DimensionError("depthwise_conv2d: stride must be >= 1");
  const auto h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  const auto k = w.dim(0);
  if (w.dim(1) != k || w.dim(2) != c)
    throw DimensionError("depthwise_conv2d: kernel " + shape_str(w.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
  if (h + 2 * padding < k || wd + 2 * padding < k)
    throw DimensionError("depthwise_conv2d: input smaller than kernel");
  const auto ho = (h + 2 * padding - k) / stride + 1;
  const auto wo = (wd + 2 * padding - k) / stride + 1;
  auto xd = x.data(), kd = w.data();
  std::vector<double> out(ho * wo * c, 0.0);
  const auto ip = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* o = out.data() + (oy * wo + ox) * c;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ip;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ip;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
          const double* in = xd.data() + (static_cast<std::size_t>(iy) * wd + ix) * c;
          const double* kk = kd.data() + (ky * k + kx) * c;
          for (std::size_t ch = 0; ch < c; ++ch) o[ch] += in[ch] * kk[ch];
        }
      }
    }
  MacCounter::add(static_cast<std::uint64_t>(ho) * wo * c * k * k);
  return make_result(
      {ho, wo, c}, std::move(out), {x, w},
      [=](TensorImpl& self) {
        auto* px = parent(self, 0);
        auto* pw = parent(self, 1);
        double* gx = px->requires_grad ? px->ensure_grad().data() : nullptr;
        double* gw = pw->requires_grad ? pw->ensure_grad().data() : nullptr;
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const double* g = self.grad.data() + (oy * wo + ox) * c;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ip;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ip;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                const auto in_off = (static_cast<std::size_t>(iy) * wd + ix) * c;
                const auto k_off = (ky * k + kx) * c;
                for (std::size_t ch = 0; ch < c; ++ch) {
                  if (gx) gx[in_off + ch] += g[ch] * pw->data[k_off + ch];
                  if (gw) gw[k_off + ch] += g[ch] * px->data[in_off + ch];
                }
              }
            }
          }
      },
      "depthwise_conv2d");
}

Tensor pointwise_conv2d(const Tensor& x, const Tensor& w, std::size_t stride) {
  require_rank(x, 3, "pointwise_conv2d");
  require_rank(w, 2, "pointwise_conv2d");
  if (stride == 0) throw DimensionError("pointwise_conv2d: stride must be >= 1");
  const auto h = x.dim(0), wd = x.dim(1), cin = x.dim(2), cout = w.dim(1);
  if (w.dim(0) != cin)
    throw DimensionError("pointwise_conv2d: weight " + shape_str(w.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
  const auto ho = (h - 1) / stride + 1;
  const auto wo = (wd - 1) / stride + 1;
  auto xd = x.data();
  RowMat sampled(ho * wo, cin);
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      std::copy_n(xd.data() + ((oy * stride) * wd + ox * stride) * cin, cin,
                  sampled.data() + (oy * wo + ox) * cin);
  std::vector<double> out(ho * wo * cout);
  MMap(out.data(), ho * wo, cout).noalias() = sampled * CMap(w.data().data(), cin, cout);
  MacCounter::add(static_cast<std::uint64_t>(ho) * wo * cin * cout);
  return make_result(
      {ho, wo, cout}, std::move(out), {x, w},
      [=, sampled = std::move(sampled)](TensorImpl& self) {
        auto* px = parent(self, 0);
        auto* pw = parent(self, 1);
        CMap G(self.grad.data(), ho * wo, cout);
        if (pw->requires_grad)
          MMap(pw->ensure_grad().data(), cin, cout).noalias() += sampled.transpose() * G;
        if (px->requires_grad) {
          RowMat gs = G * CMap(pw->data.data(), cin, cout).transpose();
          auto& gx = px->ensure_grad();
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              double* dst = gx.data() + ((oy * stride) * wd + ox * stride) * cin;
              const double* src = gs.data() + (oy * wo + ox) * cin;
              for (std::size_t ch = 0; ch < cin; ++ch) dst[ch] += src[ch];
            }
        }
      },
      "pointwise_conv2d");
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank(x, 3, "upsample_nearest");
  if (factor == 0) throw DimensionError("upsample_nearest: factor must be >= 1");
  const auto h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  const auto ho = h * factor, wo = wd * factor;
  auto xd = x.data();
  std::vector<double> out(ho * wo * c);
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t xx = 0; xx < wo; ++xx)
      std::copy_n(xd.data() + ((y / factor) * wd + xx / factor) * c, c,
                  out.data() + (y * wo + xx) * c);
  return make_result(
      {ho, wo, c}, std::move(out), {x},
      [=](TensorImpl& self) {
        auto* px = parent(self, 0);
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        for (std::size_t y = 0; y < ho; ++y)
          for (std::size_t xx = 0; xx < wo; ++xx) {
            double* dst = g.data() + ((y / factor) * wd + xx / factor) * c;
            const double* src = self.grad.data() + (y * wo + xx) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
      },
      "upsample_nearest");
}

Tensor flip(const Tensor& x, bool horizontal, bool vertical) {
  require_rank(x, 3, "flip");
  const auto h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  auto src_index = [=](std::size_t y, std::size_t xx) {
    const auto sy = vertical ? h - 1 - y : y;
    const auto sx = horizontal ? wd - 1 - xx : xx;
    return (sy * wd + sx) * c;
  };
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < wd; ++xx)
      std::copy_n(xd.data() + src_index(y, xx), c, out.data() + (y * wd + xx) * c);
  return make_result(
      x.shape(), std::move(out), {x},
      [=](TensorImpl& self) {
        auto* px = parent(self, 0);
        if (!px->requires_grad) return;
        auto& g = px->ensure_grad();
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < wd; ++xx)
            for (std::size_t ch = 0; ch < c; ++ch)
              g[src_index(y, xx) + ch] += self.grad[(y * wd + xx) * c + ch];
      },
      "flip");
}

namespace {

// FFTW planning is not thread-safe; plans are created once per size under a
// lock and executed with the new-array interface.
class FftPlans {
 public:
  static fftw_plan get(std::size_t h, std::size_t w) {
    static FftPlans instance;
    std::lock_guard lock(instance.mu_);
    auto it = instance.plans_.find({h, w});
    if (it != instance.plans_.end()) return it->second;
    auto* in = fftw_alloc_complex(h * w);
    auto* out = fftw_alloc_complex(h * w);
    fftw_plan p = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), in, out,
                                   FFTW_FORWARD, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    instance.plans_.emplace(std::make_pair(h, w), p);
    return p;
  }

 private:
  ~FftPlans() {
    for (auto& [k, p] : plans_) fftw_destroy_plan(p);
  }
  std::mutex mu_;
  std::map<std::pair<std::size_t, std::size_t>, fftw_plan> plans_;
};

struct FftBuffer {
  explicit FftBuffer(std::size_t n) : ptr(fftw_alloc_complex(n)) {}
  ~FftBuffer() { fftw_free(ptr); }
  FftBuffer(const FftBuffer&) = delete;
  FftBuffer& operator=(const FftBuffer&) = delete;
  fftw_complex* ptr;
};

}  // namespace

Tensor fft2_magnitude(const Tensor& x) {
  require_rank(x, 3, "fft2_magnitude");
  const auto h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  const auto hw = h * wd;
  fftw_plan plan = FftPlans::get(h, wd);
  FftBuffer in(hw), out(hw);
  auto xd = x.data();
  std::vector<std::complex<double>> spectrum(hw * c);
  std::vector<double> mag(hw * c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) {
      in.ptr[i][0] = xd[i * c + ch];
      in.ptr[i][1] = 0.0;
    }
    fftw_execute_dft(plan, in.ptr, out.ptr);
    for (std::size_t i = 0; i < hw; ++i) {
      const std::complex<double> f(out.ptr[i][0], out.ptr[i][1]);
      spectrum[i * c + ch] = f;
      mag[i * c + ch] = std::abs(f);
    }
  }
  return make_result(
      x.shape(), std::move(mag), {x},
      [h, wd, c, spectrum = std::move(spectrum)](TensorImpl& self) {
        auto* px = parent(self, 0);
        if (!px->requires_grad) return;
        // d|F(u)|/dx(m) = Re(conj(F(u)) e^{-i theta(u,m)}) / |F(u)|, so the
        // input gradient is the real part of a forward DFT of g * conj(F)/|F|.
        const auto n = h * wd;
        fftw_plan p = FftPlans::get(h, wd);
        FftBuffer bin(n), bout(n);
        auto& g = px->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t i = 0; i < n; ++i) {
            const auto f = spectrum[i * c + ch];
            const double m = self.data[i * c + ch];
            const auto wgt =
                m == 0.0 ? std::complex<double>(0.0) : self.grad[i * c + ch] * std::conj(f) / m;
            bin.ptr[i][0] = wgt.real();
            bin.ptr[i][1] = wgt.imag();
          }
          fftw_execute_dft(p, bin.ptr, bout.ptr);
          for (std::size_t i = 0; i < n; ++i) g[i * c + ch] += bout.ptr[i][0];
        }
      },
      "fft2_magnitude");
}

}  // namespace cea
