#include "ssmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ssmt/errors.hpp"

namespace ssmt {

namespace {

using detail::any_requires_grad;
using detail::grad_buffer;
using detail::record;

std::shared_ptr<TensorNode> grad_target(const Tensor& t) {
  return t.requires_grad() ? t.shared_node() : nullptr;
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

enum class Bcast { same, b_scalar, a_scalar };

Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::same;
  if (b.numel() == 1) return Bcast::b_scalar;
  if (a.numel() == 1) return Bcast::a_scalar;
  shape_mismatch(op, a, b);
}

// Reduces an elementwise gradient onto an operand that may have been broadcast.
void accumulate_operand(TensorNode& node, std::span<const float> g, std::span<const float> scale, bool scalar) {
  auto dst = grad_buffer(node);
  if (scalar) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * (scale.empty() ? 1.0f : scale[i]);
    dst[0] += static_cast<float>(acc);
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (scale.empty() ? 1.0f : scale[i]);
  }
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  Tensor y = make_tensor(x.shape(), std::move(out));
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node(), df](const TensorNode& o) {
      auto gx = grad_buffer(*xn);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * df(xn->data[i], o.data[i]);
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Bcast kind = broadcast_kind("add", a, b);
  const Tensor& big = kind == Bcast::a_scalar ? b : a;
  std::vector<float> out(big.data().begin(), big.data().end());
  if (kind == Bcast::same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  } else {
    const float s = kind == Bcast::b_scalar ? b.data()[0] : a.data()[0];
    for (float& v : out) v += s;
  }
  Tensor y = make_tensor(big.shape(), std::move(out));
  if (any_requires_grad({&a, &b})) {
    record(y, [an = grad_target(a), bn = grad_target(b), kind](const TensorNode& o) {
      if (an) accumulate_operand(*an, o.grad, {}, kind == Bcast::a_scalar);
      if (bn) accumulate_operand(*bn, o.grad, {}, kind == Bcast::b_scalar);
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, mul_scalar(b, -1.0f)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const Bcast kind = broadcast_kind("mul", a, b);
  const Tensor& big = kind == Bcast::a_scalar ? b : a;
  std::vector<float> out(big.data().begin(), big.data().end());
  if (kind == Bcast::same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  } else {
    const float s = kind == Bcast::b_scalar ? b.data()[0] : a.data()[0];
    for (float& v : out) v *= s;
  }
  Tensor y = make_tensor(big.shape(), std::move(out));
  if (any_requires_grad({&a, &b})) {
    record(y, [an = grad_target(a), bn = grad_target(b), a_data = a.shared_node(), b_data = b.shared_node(),
               kind](const TensorNode& o) {
      const std::span<const float> av = a_data->data;
      const std::span<const float> bv = b_data->data;
      if (kind == Bcast::same) {
        if (an) accumulate_operand(*an, o.grad, bv, false);
        if (bn) accumulate_operand(*bn, o.grad, av, false);
      } else if (kind == Bcast::b_scalar) {
        if (an) {
          auto ga = grad_buffer(*an);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * bv[0];
        }
        if (bn) accumulate_operand(*bn, o.grad, av, true);
      } else {
        if (an) accumulate_operand(*an, o.grad, bv, true);
        if (bn) {
          auto gb = grad_buffer(*bn);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * av[0];
        }
      }
    });
  }
  return y;
}

Tensor add_scalar(const Tensor& x, float s) {
  return unary(x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& x, float s) {
  return unary(x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor reciprocal(const Tensor& x) {
  return unary(x, [](float v) { return 1.0f / v; }, [](float, float y) { return -y * y; });
}

Tensor div(const Tensor& a, const Tensor& b) { return mul(a, reciprocal(b)); }

Tensor add_row_vector(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1)) shape_mismatch("add_row_vector", x, b);
  const int m = x.dim(0), n = x.dim(1);
  std::vector<float> out(x.data().begin(), x.data().end());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += b.data()[j];
  Tensor y = make_tensor(x.shape(), std::move(out));
  if (any_requires_grad({&x, &b})) {
    record(y, [xn = grad_target(x), bn = grad_target(b), m, n](const TensorNode& o) {
      if (xn) accumulate_operand(*xn, o.grad, {}, false);
      if (bn) {
        auto gb = grad_buffer(*bn);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += o.grad[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return y;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 3 || b.rank() != 1 || b.dim(0) != x.dim(0)) shape_mismatch("add_channel_bias", x, b);
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<float> out(x.data().begin(), x.data().end());
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] += b.data()[ch];
  Tensor y = make_tensor(x.shape(), std::move(out));
  if (any_requires_grad({&x, &b})) {
    record(y, [xn = grad_target(x), bn = grad_target(b), c, plane](const TensorNode& o) {
      if (xn) accumulate_operand(*xn, o.grad, {}, false);
      if (bn) {
        auto gb = grad_buffer(*bn);
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += o.grad[ch * plane + i];
          gb[ch] += static_cast<float>(acc);
        }
      }
    });
  }
  return y;
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); }, [](float, float y) { return y * (1.0f - y); });
}

Tensor gelu(const Tensor& x) {
  constexpr float inv_sqrt2 = 0.70710678118654752f;
  constexpr float inv_sqrt_2pi = 0.39894228040143268f;
  return unary(
      x, [](float v) { return 0.5f * v * (1.0f + std::erf(v * inv_sqrt2)); },
      [](float v, float) {
        return 0.5f * (1.0f + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5f * v * v);
      });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, [](float v) { return std::sqrt(v); }, [](float, float y) { return 0.5f / y; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo must not exceed hi");
  return unary(
      x, [lo, hi](float v) { return std::clamp(v, lo, hi); },
      [lo, hi](float v, float) { return (v > lo && v < hi) ? 1.0f : 0.0f; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor y = make_tensor({1}, {static_cast<float>(acc)});
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node()](const TensorNode& o) {
      auto gx = grad_buffer(*xn);
      for (float& g : gx) g += o.grad[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  Tensor y = make_tensor({1}, {static_cast<float>(acc / n)});
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node(), n](const TensorNode& o) {
      auto gx = grad_buffer(*xn);
      const float g = static_cast<float>(o.grad[0] / n);
      for (float& v : gx) v += g;
    });
  }
  return y;
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("mean_rows expects a matrix, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) acc[j] += x.data()[static_cast<std::size_t>(i) * n + j];
  std::vector<float> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) out[j] = static_cast<float>(acc[j] / m);
  Tensor y = make_tensor({n}, std::move(out));
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node(), m, n](const TensorNode& o) {
      auto gx = grad_buffer(*xn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(i) * n + j] += o.grad[j] / static_cast<float>(m);
    });
  }
  return y;
}

namespace {

// Dot product with eight interleaved partial sums: vectorizable without
// reassociation and independent of the platform.
float dot(const float* a, const float* b, int n) {
  float lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
  float acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_mismatch("matmul", a, b);
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const float* A = a.data().data();
  const float* B = b.data().data();
  std::vector<float> out(static_cast<std::size_t>(m) * n, 0.0f);
  for (int i = 0; i < m; ++i) {
    float* row = out.data() + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = A[static_cast<std::size_t>(i) * k + p];
      const float* brow = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  Tensor y = make_tensor({m, n}, std::move(out));
  if (any_requires_grad({&a, &b})) {
    record(y, [an = grad_target(a), bn = grad_target(b), a_data = a.shared_node(), b_data = b.shared_node(), m, k,
               n](const TensorNode& o) {
      const float* G = o.grad.data();
      if (an) {
        float* ga = grad_buffer(*an).data();
        const float* Bv = b_data->data.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const float* grow = G + static_cast<std::size_t>(i) * n;
            const float* brow = Bv + static_cast<std::size_t>(p) * n;
            ga[static_cast<std::size_t>(i) * k + p] += dot(grow, brow, n);
          }
      }
      if (bn) {
        float* gb = grad_buffer(*bn).data();
        const float* Av = a_data->data.data();
        for (int i = 0; i < m; ++i) {
          const float* grow = G + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const float av = Av[static_cast<std::size_t>(i) * k + p];
            float* gbrow = gb + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<float> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = x.data()[static_cast<std::size_t>(i) * n + j];
  Tensor y = make_tensor({n, m}, std::move(out));
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node(), m, n](const TensorNode& o) {
      auto gx = grad_buffer(*xn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(j) * m + i];
    });
  }
  return y;
}

namespace {

struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
  const int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= static_cast<std::size_t>(shape[i]);
  v.len = static_cast<std::size_t>(shape[axis]);
  for (int i = axis + 1; i < r; ++i) v.inner *= static_cast<std::size_t>(shape[i]);
  return v;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  const auto in = x.data();
  std::vector<float> out(in.size());
  constexpr float neg_inf = -std::numeric_limits<float>::infinity();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      float mx = neg_inf;
      for (std::size_t j = 0; j < v.len; ++j) mx = std::max(mx, in[base + j * v.inner]);
      if (mx == neg_inf) throw DegenerateSoftmax("softmax: every entry along the axis is -inf");
      double total = 0.0;
      for (std::size_t j = 0; j < v.len; ++j) {
        const float e = std::exp(in[base + j * v.inner] - mx);
        out[base + j * v.inner] = e;
        total += e;
      }
      const float inv = static_cast<float>(1.0 / total);
      for (std::size_t j = 0; j < v.len; ++j) out[base + j * v.inner] *= inv;
    }
  Tensor y = make_tensor(x.shape(), std::move(out));
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node(), v](const TensorNode& o) {
      auto gx = grad_buffer(*xn);
      for (std::size_t a = 0; a < v.outer; ++a)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t base = a * v.len * v.inner + i;
          double dot = 0.0;
          for (std::size_t j = 0; j < v.len; ++j) {
            const std::size_t idx = base + j * v.inner;
            dot += static_cast<double>(o.data[idx]) * o.grad[idx];
          }
          for (std::size_t j = 0; j < v.len; ++j) {
            const std::size_t idx = base + j * v.inner;
            gx[idx] += o.data[idx] * (o.grad[idx] - static_cast<float>(dot));
          }
        }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm on a scalar shape");
  const int n = x.dim(-1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) shape_mismatch("layer_norm", x, gamma);
  const std::size_t rows = static_cast<std::size_t>(x.numel()) / n;
  std::vector<float> out(static_cast<std::size_t>(x.numel()));
  std::vector<float> xhat(out.size());
  std::vector<float> inv_std(rows);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in.data() + r * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<float>(is);
    for (int j = 0; j < n; ++j) {
      const float h = static_cast<float>((row[j] - mu) * is);
      xhat[r * n + j] = h;
      out[r * n + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  Tensor y = make_tensor(x.shape(), std::move(out));
  if (any_requires_grad({&x, &gamma, &beta})) {
    record(y, [xn = grad_target(x), gn = grad_target(gamma), bn = grad_target(beta), g_data = gamma.shared_node(),
               xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n](const TensorNode& o) {
      if (gn) {
        auto gg = grad_buffer(*gn);
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < n; ++j) gg[j] += o.grad[r * n + j] * xhat[r * n + j];
      }
      if (bn) {
        auto gb = grad_buffer(*bn);
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < n; ++j) gb[j] += o.grad[r * n + j];
      }
      if (xn) {
        auto gx = grad_buffer(*xn);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (int j = 0; j < n; ++j) {
            const double d = static_cast<double>(o.grad[r * n + j]) * g_data->data[j];
            mean_d += d;
            mean_dx += d * xhat[r * n + j];
          }
          mean_d /= n;
          mean_dx /= n;
          for (int j = 0; j < n; ++j) {
            const double d = static_cast<double>(o.grad[r * n + j]) * g_data->data[j];
            gx[r * n + j] += static_cast<float>(inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dx));
          }
        }
      }
    });
  }
  return y;
}

namespace {

struct ConvGeom {
  int cin, h, w, cout, k, stride, pad, oh, ow;
  std::size_t positions() const { return static_cast<std::size_t>(oh) * ow; }
  std::size_t taps() const { return static_cast<std::size_t>(cin) * k * k; }
};

// Column matrix [cin*k*k x oh*ow]: row (ci, ky, kx) holds the input value each
// output position reads through that tap, zero where it falls in the padding.
std::vector<float> im2col(const float* x, const ConvGeom& g) {
  const std::size_t P = g.positions();
  std::vector<float> col(g.taps() * P, 0.0f);
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = col.data() + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * P;
        const float* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const float* irow = plane + static_cast<std::size_t>(iy) * g.w;
          float* orow = row + static_cast<std::size_t>(oy) * g.ow;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) orow[ox] = irow[ix];
          }
        }
      }
  return col;
}

// Adjoint of im2col: scatter-adds column gradients back onto the input.
void col2im(const std::vector<float>& col, const ConvGeom& g, float* gx) {
  const std::size_t P = g.positions();
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = col.data() + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * P;
        float* plane = gx + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          float* irow = plane + static_cast<std::size_t>(iy) * g.w;
          const float* grow = row + static_cast<std::size_t>(oy) * g.ow;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) irow[ix] += grow[ox];
          }
        }
      }
}

}  // namespace

Tensor instance_norm(const Tensor& x, float eps) {
  if (x.rank() != 3) throw DimensionError("instance_norm expects C x H x W, got " + shape_str(x.shape()));
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  const Tensor y = layer_norm(reshape(x, {c, hw}), Tensor::full({hw}, 1.0f), Tensor::zeros({hw}), eps);
  return reshape(y, x.shape());
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) shape_mismatch("conv2d", x, w);
  if (stride < 1 || pad < 0) throw DimensionError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), stride, pad, 0, 0};
  if (g.k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd, got " + std::to_string(g.k));
  if (g.k > g.h + 2 * pad || g.k > g.w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;
  const std::size_t P = g.positions(), R = g.taps();
  const bool direct = g.k == 1 && stride == 1 && pad == 0;
  std::vector<float> col = direct ? std::vector<float>(x.data().begin(), x.data().end()) : im2col(x.data().data(), g);
  const float* W = w.data().data();
  std::vector<float> out(static_cast<std::size_t>(g.cout) * P, 0.0f);
  int co = 0;
  for (; co + 4 <= g.cout; co += 4) {
    float* o0 = out.data() + co * P;
    float *o1 = o0 + P, *o2 = o1 + P, *o3 = o2 + P;
    for (std::size_t r = 0; r < R; ++r) {
      const float w0 = W[co * R + r], w1 = W[(co + 1) * R + r], w2 = W[(co + 2) * R + r], w3 = W[(co + 3) * R + r];
      const float* crow = col.data() + r * P;
      for (std::size_t p = 0; p < P; ++p) {
        const float c = crow[p];
        o0[p] += w0 * c;
        o1[p] += w1 * c;
        o2[p] += w2 * c;
        o3[p] += w3 * c;
      }
    }
  }
  for (; co < g.cout; ++co) {
    float* orow = out.data() + co * P;
    for (std::size_t r = 0; r < R; ++r) {
      const float wv = W[co * R + r];
      const float* crow = col.data() + r * P;
      for (std::size_t p = 0; p < P; ++p) orow[p] += wv * crow[p];
    }
  }
  Tensor y = make_tensor({g.cout, g.oh, g.ow}, std::move(out));
  if (any_requires_grad({&x, &w})) {
    record(y, [xn = grad_target(x), wn = grad_target(w), w_data = w.shared_node(), col = std::move(col), g, direct](
                  const TensorNode& o) {
      const std::size_t P = g.positions(), R = g.taps();
      const float* G = o.grad.data();
      if (wn) {
        float* gw = grad_buffer(*wn).data();
        for (int co = 0; co < g.cout; ++co)
          for (std::size_t r = 0; r < R; ++r) gw[co * R + r] += dot(G + co * P, col.data() + r * P, static_cast<int>(P));
      }
      if (xn) {
        const float* W = w_data->data.data();
        std::vector<float> gcol(R * P, 0.0f);
        // Output channels are folded into each column row in ascending order.
        for (std::size_t r = 0; r < R; ++r) {
          float* gc = gcol.data() + r * P;
          for (int co = 0; co < g.cout; ++co) {
            const float wv = W[co * R + r];
            const float* grow = G + co * P;
            for (std::size_t p = 0; p < P; ++p) gc[p] += wv * grow[p];
          }
        }
        float* gx = grad_buffer(*xn).data();
        if (direct) {
          for (std::size_t i = 0; i < gcol.size(); ++i) gx[i] += gcol[i];
        } else {
          col2im(gcol, g, gx);
        }
      }
    });
  }
  return y;
}

namespace {

struct Taps {
  std::vector<int> i0, i1;
  std::vector<float> frac;
};

Taps axis_taps(int in, int out, ResampleMode mode) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.frac.resize(out);
  for (int o = 0; o < out; ++o) {
    const double src = out == 1 ? 0.0 : static_cast<double>(o) * (in - 1) / (out - 1);
    if (mode == ResampleMode::nearest) {
      const int idx = std::min(in - 1, static_cast<int>(std::floor(src + 0.5)));
      t.i0[o] = t.i1[o] = idx;
      t.frac[o] = 0.0f;
    } else {
      const int lo = std::min(in - 1, static_cast<int>(std::floor(src)));
      t.i0[o] = lo;
      t.i1[o] = std::min(in - 1, lo + 1);
      t.frac[o] = static_cast<float>(src - lo);
    }
  }
  return t;
}

}  // namespace

Tensor resample2d(const Tensor& x, int out_h, int out_w, ResampleMode mode) {
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("resample2d expects rank 2 or 3, got " + shape_str(x.shape()));
  if (out_h <= 0 || out_w <= 0) throw DimensionError("resample2d: output dimensions must be positive");
  const int c = x.rank() == 3 ? x.dim(0) : 1;
  const int h = x.dim(-2), w = x.dim(-1);
  const Taps ty = axis_taps(h, out_h, mode);
  const Taps tx = axis_taps(w, out_w, mode);
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  std::vector<float> out(c * out_plane);
  const float* X = x.data().data();
  for (int ch = 0; ch < c; ++ch) {
    const float* ip = X + ch * in_plane;
    float* op = out.data() + ch * out_plane;
    for (int oy = 0; oy < out_h; ++oy) {
      const float fy = ty.frac[oy];
      const float* r0 = ip + static_cast<std::size_t>(ty.i0[oy]) * w;
      const float* r1 = ip + static_cast<std::size_t>(ty.i1[oy]) * w;
      for (int ox = 0; ox < out_w; ++ox) {
        const float fx = tx.frac[ox];
        const float top = r0[tx.i0[ox]] * (1.0f - fx) + r0[tx.i1[ox]] * fx;
        const float bot = r1[tx.i0[ox]] * (1.0f - fx) + r1[tx.i1[ox]] * fx;
        op[static_cast<std::size_t>(oy) * out_w + ox] = top * (1.0f - fy) + bot * fy;
      }
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  Tensor y = make_tensor(shape, std::move(out));
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node(), ty, tx, c, w, out_h, out_w, in_plane, out_plane](const TensorNode& o) {
      float* gx = grad_buffer(*xn).data();
      for (int ch = 0; ch < c; ++ch) {
        float* gp = gx + ch * in_plane;
        const float* op = o.grad.data() + ch * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const float fy = ty.frac[oy];
          float* r0 = gp + static_cast<std::size_t>(ty.i0[oy]) * w;
          float* r1 = gp + static_cast<std::size_t>(ty.i1[oy]) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const float fx = tx.frac[ox];
            const float gv = op[static_cast<std::size_t>(oy) * out_w + ox];
            r0[tx.i0[ox]] += gv * (1.0f - fy) * (1.0f - fx);
            r0[tx.i1[ox]] += gv * (1.0f - fy) * fx;
            r1[tx.i0[ox]] += gv * fy * (1.0f - fx);
            r1[tx.i1[ox]] += gv * fy * fx;
          }
        }
      }
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor y = make_tensor(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()));
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node()](const TensorNode& o) {
      auto gx = grad_buffer(*xn);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  const int r = static_cast<int>(ref.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("concat: invalid axis for " + shape_str(ref));
  Shape shape = ref;
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != r) shape_mismatch("concat", parts.front(), p);
    for (int i = 0; i < r; ++i)
      if (i != axis && p.shape()[i] != ref[i]) shape_mismatch("concat", parts.front(), p);
    shape[axis] += p.shape()[axis];
  }
  const AxisView v = axis_view(shape, axis);
  std::vector<float> out(static_cast<std::size_t>(shape_numel(shape)));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = static_cast<std::size_t>(p.shape()[axis]) * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(p.data().data() + o * block, block, out.data() + o * v.len * v.inner + offset);
    offset += block;
    needs_grad = needs_grad || any_requires_grad({&p});
  }
  Tensor y = make_tensor(shape, std::move(out));
  if (needs_grad) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const Tensor& p : parts) nodes.push_back(grad_target(p));
    record(y, [nodes = std::move(nodes), offsets = std::move(offsets), v](const TensorNode& o) {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (!nodes[k]) continue;
        auto g = grad_buffer(*nodes[k]);
        const std::size_t block = g.size() / v.outer;
        for (std::size_t a = 0; a < v.outer; ++a)
          for (std::size_t i = 0; i < block; ++i) g[a * block + i] += o.grad[a * v.len * v.inner + offsets[k] + i];
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  const AxisView v = axis_view(x.shape(), axis);
  if (axis < 0) axis += x.rank();
  if (start < 0 || length <= 0 || static_cast<std::size_t>(start + length) > v.len) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                         shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = length;
  const std::size_t block = static_cast<std::size_t>(length) * v.inner;
  const std::size_t skip = static_cast<std::size_t>(start) * v.inner;
  std::vector<float> out(v.outer * block);
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(x.data().data() + o * v.len * v.inner + skip, block, out.data() + o * block);
  Tensor y = make_tensor(shape, std::move(out));
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node(), v, block, skip](const TensorNode& o) {
      auto g = grad_buffer(*xn);
      for (std::size_t a = 0; a < v.outer; ++a)
        for (std::size_t i = 0; i < block; ++i) g[a * v.len * v.inner + skip + i] += o.grad[a * block + i];
    });
  }
  return y;
}

Tensor gather(const Tensor& x, const std::vector<int>& index, Shape shape) {
  if (shape_numel(shape) != static_cast<std::int64_t>(index.size())) {
    throw DimensionError("gather: " + std::to_string(index.size()) + " indices for shape " + shape_str(shape));
  }
  std::vector<float> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.numel()) throw DimensionError("gather: index out of range for " + shape_str(x.shape()));
    out[i] = x.data()[static_cast<std::size_t>(index[i])];
  }
  Tensor y = make_tensor(std::move(shape), std::move(out));
  if (any_requires_grad({&x})) {
    record(y, [xn = x.shared_node(), index](const TensorNode& o) {
      auto g = grad_buffer(*xn);
      for (std::size_t i = 0; i < index.size(); ++i) g[static_cast<std::size_t>(index[i])] += o.grad[i];
    });
  }
  return y;
}

}  // namespace ssmt
