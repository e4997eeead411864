#include "ssmt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssmt/ops.hpp"
#include "ssmt/rng.hpp"

namespace ssmt {

double GradientComparison::rel_err() const {
  if (analytic2 == 0.0 && numeric2 == 0.0) return 0.0;
  return std::sqrt(diff2) / std::max({std::sqrt(analytic2), std::sqrt(numeric2), 1e-300});
}

double pooled_rel_error(const std::vector<GradientComparison>& parts) {
  GradientComparison total;
  for (const auto& p : parts) {
    total.diff2 += p.diff2;
    total.analytic2 += p.analytic2;
    total.numeric2 += p.numeric2;
  }
  return total.rel_err();
}

std::vector<GradientComparison> compare_gradients(const std::function<Tensor()>& loss_fn,
                                                  const std::vector<Tensor>& inputs, const GradCheckOptions& options) {
  Tape& tape = Tape::active();
  tape.clear();
  for (Tensor t : inputs) t.zero_grad();
  Tensor loss = loss_fn();
  tape.backward(loss);
  std::vector<std::vector<float>> analytic;
  for (const Tensor& t : inputs) {
    std::vector<float> g(static_cast<std::size_t>(t.numel()), 0.0f);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  tape.clear();

  Rng rng(options.seed);
  std::vector<GradientComparison> out;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    std::vector<std::size_t> probes(static_cast<std::size_t>(t.numel()));
    std::iota(probes.begin(), probes.end(), std::size_t{0});
    if (options.max_probes_per_tensor > 0 && probes.size() > static_cast<std::size_t>(options.max_probes_per_tensor)) {
      std::shuffle(probes.begin(), probes.end(), rng);
      probes.resize(static_cast<std::size_t>(options.max_probes_per_tensor));
    }
    GradientComparison c;
    auto values = t.mutable_data();
    for (std::size_t idx : probes) {
      const float saved = values[idx];
      const float up = saved + options.h;
      const float down = saved - options.h;
      values[idx] = up;
      const double lp = loss_fn().item();
      values[idx] = down;
      const double lm = loss_fn().item();
      values[idx] = saved;
      const double numeric = (lp - lm) / (static_cast<double>(up) - static_cast<double>(down));
      const double a = analytic[k][idx];
      c.diff2 += (a - numeric) * (a - numeric);
      c.analytic2 += a * a;
      c.numeric2 += numeric * numeric;
    }
    out.push_back(c);
  }
  return out;
}

double gradient_rel_error(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& inputs,
                          const GradCheckOptions& options, std::vector<double>* per_tensor) {
  double worst = 0.0;
  for (const GradientComparison& c : compare_gradients(loss_fn, inputs, options)) {
    if (per_tensor) per_tensor->push_back(c.rel_err());
    worst = std::max(worst, c.rel_err());
  }
  return worst;
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, float lo, float hi, bool requires_grad = true) {
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (float& x : v) x = uniform(rng, lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero so kinked primitives are probed on smooth pieces.
Tensor away_from_zero(Rng& rng, Shape shape) {
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (float& x : v) {
    const float mag = uniform(rng, 0.1f, 1.5f);
    x = bernoulli(rng, 0.5) ? mag : -mag;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Weighted sum so every output element contributes a distinct sensitivity.
std::function<Tensor()> projected(std::function<Tensor()> f, Rng& rng) {
  Tensor probe = f();
  Tape::active().clear();
  Tensor weights = random_tensor(rng, probe.shape(), -1.0f, 1.0f, false);
  return [f = std::move(f), weights] { return sum(mul(f(), weights)); };
}

}  // namespace

std::vector<GradCheckResult> primitive_gradient_checks(double tolerance) {
  Rng rng(20240917);
  std::vector<GradCheckResult> results;
  auto run = [&](const std::string& name, std::function<Tensor()> f, const std::vector<Tensor>& inputs) {
    GradCheckResult r;
    r.name = name;
    r.tolerance = tolerance;
    r.rel_err = gradient_rel_error(projected(std::move(f), rng), inputs);
    for (const Tensor& t : inputs) r.probes += static_cast<int>(t.numel());
    results.push_back(r);
  };

  {
    Tensor a = random_tensor(rng, {3, 4}, -1, 1), b = random_tensor(rng, {4, 2}, -1, 1);
    run("matmul", [=] { return matmul(a, b); }, {a, b});
  }
  {
    Tensor a = random_tensor(rng, {4, 5}, -1, 1), b = random_tensor(rng, {4, 5}, -1, 1);
    run("add", [=] { return add(a, b); }, {a, b});
    run("sub", [=] { return sub(a, b); }, {a, b});
    run("mul", [=] { return mul(a, b); }, {a, b});
    Tensor s = random_tensor(rng, {1}, 0.5f, 1.5f);
    run("mul_scalar_broadcast", [=] { return mul(a, s); }, {a, s});
    run("add_scalar_broadcast", [=] { return add(s, b); }, {s, b});
    run("add_scalar", [=] { return add_scalar(a, 0.7f); }, {a});
    run("mul_scalar", [=] { return mul_scalar(a, -1.3f); }, {a});
  }
  {
    Tensor x = random_tensor(rng, {3, 6}, -1, 1), b = random_tensor(rng, {6}, -1, 1);
    run("add_row_vector", [=] { return add_row_vector(x, b); }, {x, b});
    Tensor c = random_tensor(rng, {3, 4, 5}, -1, 1), cb = random_tensor(rng, {3}, -1, 1);
    run("add_channel_bias", [=] { return add_channel_bias(c, cb); }, {c, cb});
  }
  {
    Tensor x = random_tensor(rng, {4, 6}, -3, 3);
    run("sigmoid", [=] { return sigmoid(x); }, {x});
    run("gelu", [=] { return gelu(x); }, {x});
    Tensor k = away_from_zero(rng, {4, 6});
    run("relu", [=] { return relu(k); }, {k});
    Tensor p = random_tensor(rng, {4, 6}, 0.2f, 2.0f);
    run("sqrt", [=] { return sqrt(p); }, {p});
    run("reciprocal", [=] { return reciprocal(p); }, {p});
    run("div", [=] { return div(x, p); }, {x, p});
    run("square", [=] { return square(x); }, {x});
    Tensor cl = random_tensor(rng, {4, 6}, -0.45f, 1.45f);
    for (float& v : cl.mutable_data())
      if (std::abs(v) < 0.05f || std::abs(v - 1.0f) < 0.05f) v += 0.15f;
    run("clamp", [=] { return clamp(cl, 0.0f, 1.0f); }, {cl});
  }
  {
    Tensor x = random_tensor(rng, {5, 4}, -1, 1);
    run("sum", [=] { return sum(x); }, {x});
    run("mean", [=] { return mean(x); }, {x});
    run("mean_rows", [=] { return mean_rows(x); }, {x});
    run("transpose", [=] { return transpose(x); }, {x});
    run("reshape", [=] { return reshape(x, {2, 10}); }, {x});
  }
  {
    Tensor x = random_tensor(rng, {3, 5}, -2, 2);
    run("softmax_axis1", [=] { return softmax(x, 1); }, {x});
    run("softmax_axis0", [=] { return softmax(x, 0); }, {x});
  }
  {
    Tensor x = random_tensor(rng, {2, 8}, -2, 2);
    Tensor g = random_tensor(rng, {8}, 0.5f, 1.5f), b = random_tensor(rng, {8}, -0.5f, 0.5f);
    run("layer_norm", [=] { return layer_norm(x, g, b); }, {x, g, b});
    Tensor m = random_tensor(rng, {2, 3, 4}, -2, 2);
    run("instance_norm", [=] { return instance_norm(m); }, {m});
  }
  {
    Tensor x = random_tensor(rng, {2, 6, 6}, -1, 1), w = random_tensor(rng, {3, 2, 3, 3}, -0.5f, 0.5f);
    run("conv2d_stride1", [=] { return conv2d(x, w, 1, 1); }, {x, w});
    run("conv2d_stride2", [=] { return conv2d(x, w, 2, 1); }, {x, w});
    Tensor w1 = random_tensor(rng, {2, 2, 1, 1}, -1, 1);
    run("conv2d_1x1", [=] { return conv2d(x, w1, 1, 0); }, {x, w1});
  }
  {
    Tensor x = random_tensor(rng, {2, 4, 4}, -1, 1);
    run("resample2d_bilinear_up", [=] { return resample2d(x, 7, 8, ResampleMode::bilinear); }, {x});
    run("resample2d_bilinear_down", [=] { return resample2d(x, 3, 2, ResampleMode::bilinear); }, {x});
    run("resample2d_nearest", [=] { return resample2d(x, 8, 8, ResampleMode::nearest); }, {x});
  }
  {
    Tensor a = random_tensor(rng, {2, 3, 4}, -1, 1), b = random_tensor(rng, {2, 2, 4}, -1, 1);
    run("concat", [=] { return concat({a, b}, 1); }, {a, b});
    run("slice", [=] { return slice(a, 2, 1, 2); }, {a});
    run("gather", [=] { return gather(a, {5, 0, 5, 11, 3, 3}, {2, 3}); }, {a});
  }
  Tape::active().clear();
  return results;
}

}  // namespace ssmt
