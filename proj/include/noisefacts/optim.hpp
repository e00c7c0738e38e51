#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "noisefacts/params.hpp"
#include "noisefacts/tensor.hpp"

namespace noisefacts {

// Non-finite training loss; the CLI maps this to its numeric-failure exit.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OptimConfig {
  double lr = 1e-3;
  int64_t warmup = 2000;
  int64_t total = 150000;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Linear ramp over warmup steps, then linear decay to 0 at total steps.
inline double effective_lr(const OptimConfig& oc, int64_t step) {
  if (step < oc.warmup) return oc.lr * double(step + 1) / double(oc.warmup);
  if (step >= oc.total) return 0.0;
  return oc.lr * double(oc.total - step) / double(oc.total - oc.warmup);
}

// Decoupled-weight-decay adaptive-moment update over every parameter with a
// gradient. Non-finite gradients skip the whole update and raise the store's
// warning counter. Returns whether the update was applied.
template <class T>
bool adamw_step(ParameterStore<T>& ps, const OptimConfig& oc) {
  if (ps.frozen) throw std::logic_error("adamw_step: store is frozen");
  for (auto& [name, p] : ps.params) {
    if (p->grad_set && !all_finite<T>(p->grad)) {
      ++ps.nonfinite_skips;
      ps.zero_grads();
      ++ps.step;
      return false;
    }
  }
  double lr_t = effective_lr(oc, ps.step);
  int64_t t = ps.step + 1;
  double bc1 = 1.0 - std::pow(oc.beta1, double(t));
  double bc2 = 1.0 - std::pow(oc.beta2, double(t));
  for (auto& [name, p] : ps.params) {
    if (!p->grad_set) continue;  // unreachable parameters: zero grad, no-op
    auto m_it = ps.moment1.find(name);
    if (m_it == ps.moment1.end()) {
      m_it = ps.moment1.emplace(name, Mat<T>::Zero(p->rows(), p->cols())).first;
      ps.moment2.emplace(name, Mat<T>::Zero(p->rows(), p->cols()));
    }
    Mat<T>& m = m_it->second;
    Mat<T>& v = ps.moment2.at(name);
    m = static_cast<T>(oc.beta1) * m + static_cast<T>(1.0 - oc.beta1) * p->grad;
    v = (static_cast<T>(oc.beta2) * v.array() +
         static_cast<T>(1.0 - oc.beta2) * p->grad.array().square())
            .matrix();
    Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mhat =
        m.array() / static_cast<T>(bc1);
    Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> vhat =
        v.array() / static_cast<T>(bc2);
    p->val.array() -= static_cast<T>(lr_t) *
                      (mhat / (vhat.sqrt() + static_cast<T>(oc.eps)) +
                       static_cast<T>(oc.weight_decay) * p->val.array());
  }
  ps.zero_grads();
  ++ps.step;
  return true;
}

// Compares analytic gradients against central finite differences over up to
// max_coords sampled coordinates per parameter. make_loss must rebuild the
// forward pass from the store's current values; 64-bit mode only.
inline double grad_check(ParameterStore<double>& ps,
                         const std::function<Var<double>()>& make_loss,
                         int max_coords = 4, double h = 1e-5,
                         uint64_t seed = 12345) {
  ps.zero_grads();
  auto loss = make_loss();
  backward(loss);
  std::map<std::string, Mat<double>> analytic;
  for (auto& [name, p] : ps.params)
    analytic[name] = p->grad_set ? p->grad : Mat<double>::Zero(p->rows(), p->cols());

  Rng rng(seed);
  double max_rel = 0.0;
  for (auto& [name, p] : ps.params) {
    int total = p->rows() * p->cols();
    int n_check = std::min(max_coords, total);
    for (int k = 0; k < n_check; ++k) {
      int idx = total <= max_coords
                    ? k
                    : static_cast<int>(rng.uniform_int(0, total - 1));
      int i = idx / p->cols(), j = idx % p->cols();
      double old = p->val(i, j);
      p->val(i, j) = old + h;
      double fp = make_loss()->val(0, 0);
      p->val(i, j) = old - h;
      double fm = make_loss()->val(0, 0);
      p->val(i, j) = old;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[name](i, j);
      double rel = std::abs(a - numeric) /
                   std::max({1.0, std::abs(a), std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  ps.zero_grads();
  return max_rel;
}

}  // namespace noisefacts
