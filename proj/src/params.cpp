#include "cea/params.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cea {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t global_seed, const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(mix_seed(global_seed) ^ h);
}

Tensor ParamStore::create(const std::string& name, Shape shape, Init init,
                          std::uint64_t global_seed, std::size_t fan_in, double gain) {
  Tensor t = Tensor::zeros(std::move(shape));
  auto d = t.mutable_data();
  switch (init) {
    case Init::Zeros: break;
    case Init::Ones: std::fill(d.begin(), d.end(), 1.0); break;
    case Init::Uniform: {
      std::mt19937_64 rng(derive_seed(global_seed, name));
      const double s = gain / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
      std::uniform_real_distribution<double> dist(-s, s);
      for (auto& v : d) v = dist(rng);
      break;
    }
    case Init::DeltaKernel: {
      const auto& sh = t.shape();
      if (sh.size() != 3 || sh[0] != sh[1] || sh[0] % 2 == 0)
        throw DimensionError("delta kernel needs [k x k x C] with odd k");
      const auto k = sh[0], c = sh[2];
      for (std::size_t ch = 0; ch < c; ++ch) d[((k / 2) * k + k / 2) * c + ch] = 1.0;
      break;
    }
  }
  t.set_requires_grad(true);
  params_[name] = t;
  return t;
}

Tensor ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [k, v] : params_) n += v.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [k, v] : params_) {
    Tensor t = v;
    t.zero_grad();
  }
}

void ParamStore::load(const NamedTensors& src) {
  for (const auto& [name, t] : params_) {
    auto it = src.find(name);
    if (it == src.end()) throw ConfigError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != t.shape())
      throw DimensionError("checkpoint parameter '" + name + "' has shape " +
                           shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
  }
  for (const auto& [name, t] : src)
    if (!params_.count(name)) throw ConfigError("checkpoint has unexpected parameter '" + name + "'");
  for (auto& [name, t] : params_) {
    Tensor dst = t;
    auto s = src.at(name).data();
    std::copy(s.begin(), s.end(), dst.mutable_data().begin());
  }
}

}  // namespace cea
