#include "wmf/optim.hpp"

#include <cmath>

namespace wmf {

void AdamWConfig::validate() const {
  require(lr >= 0 && std::isfinite(lr), ErrorKind::Config, "lr must be finite and >= 0");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorKind::Config, "betas must lie in [0, 1)");
  require(eps > 0, ErrorKind::Config, "adam eps must be positive");
  require(weight_decay >= 0 && std::isfinite(weight_decay), ErrorKind::Config, "weight decay must be >= 0");
}

bool decays(const std::string& name) {
  auto ends_with = [&](const std::string& s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return !(ends_with(".gamma") || ends_with(".beta") || ends_with(".sigma"));
}

void AdamW::step(const NamedTensors& params) {
  for (const auto& [name, param] : params) {
    if (!param.has_grad()) continue;
    Tensor p = param;
    dispatch(p.dtype(), [&]<class T>() {
      for (T g : p.grad_data<T>())
        require(std::isfinite(static_cast<double>(g)), ErrorKind::Numeric, "non-finite gradient in " + name);
    });
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, param] : params) {
    Tensor p = param;
    auto it = moments_.find(name);
    if (it == moments_.end())
      it = moments_.emplace(name, Moments{Tensor::zeros(p.shape(), p.dtype()), Tensor::zeros(p.shape(), p.dtype())}).first;
    Moments& mo = it->second;
    require(mo.m.shape() == p.shape(), ErrorKind::Shape, "optimizer state shape mismatch for " + name);
    const double wd = decays(name) ? config_.weight_decay : 0.0;
    dispatch(p.dtype(), [&]<class T>() {
      auto theta = p.data<T>();
      auto m = mo.m.data<T>();
      auto v = mo.v.data<T>();
      const T* g = p.has_grad() ? p.grad_data<T>().data() : nullptr;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = g ? static_cast<double>(g[i]) : 0.0;
        const double mi = config_.beta1 * m[i] + (1 - config_.beta1) * gi;
        const double vi = config_.beta2 * v[i] + (1 - config_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = (mi / c1) / (std::sqrt(vi / c2) + config_.eps) + wd * theta[i];
        theta[i] = static_cast<T>(theta[i] - config_.lr * update);
      }
    });
  }
}

}  // namespace wmf
