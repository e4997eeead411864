#include "ssmt/params.hpp"

#include <cmath>
#include <cstring>

#include <openssl/evp.h>

#include "ssmt/errors.hpp"
#include "ssmt/ops.hpp"
#include "ssmt/rng.hpp"

namespace ssmt {

Init Init::fan_in(int fan_in, float gain) { return normal(gain / std::sqrt(static_cast<float>(fan_in))); }

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

Tensor ParameterSet::add(const std::string& name, Shape shape, Init init) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  std::vector<float> values(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
  if (init.kind == Init::Kind::constant) {
    std::fill(values.begin(), values.end(), init.value);
  } else if (init.kind == Init::Kind::normal) {
    Rng rng(derive_seed(seed_, fnv1a64(name)));
    std::normal_distribution<float> dist(0.0f, init.value);
    for (float& v : values) v = dist(rng);
  }
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw ContractError("unknown parameter " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

std::vector<NamedTensor> ParameterSet::select(const std::vector<std::string>& prefixes) const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_) {
    for (const auto& prefix : prefixes) {
      if (p.name.starts_with(prefix)) {
        out.push_back(p);
        break;
      }
    }
  }
  return out;
}

std::int64_t ParameterSet::count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::string parameter_digest(const std::vector<NamedTensor>& params) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) throw ContractError("SHA-256 unavailable");
  for (const auto& p : params) {
    EVP_DigestUpdate(ctx, p.name.data(), p.name.size() + 1);
    for (int d : p.tensor.shape()) EVP_DigestUpdate(ctx, &d, sizeof(d));
    const auto data = p.tensor.data();
    EVP_DigestUpdate(ctx, data.data(), data.size() * sizeof(float));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

Linear::Linear(ParameterSet& ps, const std::string& name, int in, int out, float gain, bool bias) {
  w = ps.add(name + ".w", {in, out}, Init::fan_in(in, gain));
  if (bias) b = ps.add(name + ".b", {out}, Init::zeros());
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, w);
  return b.defined() ? add_row_vector(y, b) : y;
}

Conv::Conv(ParameterSet& ps, const std::string& name, int cin, int cout, int k, int s, float gain, bool bias)
    : stride(s) {
  w = ps.add(name + ".w", {cout, cin, k, k}, Init::fan_in(cin * k * k, gain));
  if (bias) b = ps.add(name + ".b", {cout}, Init::zeros());
}

Tensor Conv::operator()(const Tensor& x) const {
  Tensor y = conv2d(x, w, stride, w.dim(2) / 2);
  return b.defined() ? add_channel_bias(y, b) : y;
}

LayerNormParams::LayerNormParams(ParameterSet& ps, const std::string& name, int dim) {
  gamma = ps.add(name + ".gamma", {dim}, Init::constant(1.0f));
  beta = ps.add(name + ".beta", {dim}, Init::zeros());
}

Tensor LayerNormParams::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

}  // namespace ssmt
