#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "noisefacts/rng.hpp"
#include "noisefacts/tensor.hpp"

namespace noisefacts {

inline constexpr double kBetaFloor = 1e-5;
inline constexpr double kBetaCeil = 0.999;
inline constexpr int kAdaptCadence = 2000;

// One latent block: one row per knowledge slot, d columns, plus a step tag.
template <class T>
struct LatentBlock {
  Mat<T> m;
  int t = 0;

  int slots() const { return static_cast<int>(m.rows()); }
  int dim() const { return static_cast<int>(m.cols()); }
};

// Per-step signal-retention table. A single shared row serves every slot
// position until the first adaptive update materializes per-position rows.
class NoiseSchedule {
 public:
  int T = 0;
  double s = 1e-4;
  double A_amp = 1.0;

  std::vector<double> shared;                     // alpha_bar, t = 0..T
  std::vector<std::vector<double>> per_position;  // [n][t], empty until adapted

  bool per_position_active() const { return !per_position.empty(); }

  double alpha_bar(int t, int n = 0) const {
    check_t(t);
    if (per_position_active())
      return per_position[std::min<size_t>(n, per_position.size() - 1)][t];
    return shared[t];
  }

  // beta_0 = 1 - alpha_bar_0 (the z_0 sampling noise); beta_t for t >= 1 is
  // the per-step chain noise 1 - alpha_bar_t / alpha_bar_{t-1}.
  double beta(int t, int n = 0) const {
    check_t(t);
    if (t == 0) return 1.0 - alpha_bar(0, n);
    return 1.0 - alpha_bar(t, n) / alpha_bar(t - 1, n);
  }

  double alpha(int t, int n = 0) const { return 1.0 - beta(t, n); }

  void check_valid() const {
    auto check_row = [this](const std::vector<double>& row) {
      if (static_cast<int>(row.size()) != T + 1)
        throw std::logic_error("schedule row size mismatch");
      for (int t = 0; t <= T; ++t) {
        if (!(row[t] > 0.0 && row[t] < 1.0))
          throw std::logic_error("alpha_bar out of (0,1)");
        if (t >= 1 && !(row[t] < row[t - 1]))
          throw std::logic_error("alpha_bar not strictly decreasing");
      }
    };
    check_row(shared);
    for (const auto& row : per_position) check_row(row);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["T"] = T;
    j["s"] = s;
    j["A_amp"] = A_amp;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    if (per_position_active())
      for (const auto& row : per_position) rows.push_back(row);
    else
      rows.push_back(shared);
    j["alpha_bar"] = rows;
    return j;
  }

  static NoiseSchedule from_json(const nlohmann::json& j) {
    NoiseSchedule sc;
    sc.T = j.at("T");
    sc.s = j.at("s");
    sc.A_amp = j.at("A_amp");
    auto rows = j.at("alpha_bar");
    if (rows.empty()) throw std::runtime_error("schedule dump has no rows");
    sc.shared = rows[0].get<std::vector<double>>();
    if (rows.size() > 1) {
      for (const auto& r : rows) sc.per_position.push_back(r.get<std::vector<double>>());
    }
    sc.check_valid();
    return sc;
  }

 private:
  void check_t(int t) const {
    if (t < 0 || t > T) throw std::out_of_range("schedule step out of range");
  }
};

// sqrt initialization: alpha_bar_t = 1 - sqrt(t/T + s), then per-step betas
// clamped to [1e-5, 0.999] and alpha_bar recomputed cumulatively.
inline NoiseSchedule sqrt_schedule(int T, double s, double A_amp) {
  if (T < 1) throw std::invalid_argument("sqrt_schedule: T >= 1");
  if (s <= 0.0) throw std::invalid_argument("sqrt_schedule: s > 0");
  if (A_amp < 1.0) throw std::invalid_argument("sqrt_schedule: A_amp >= 1");
  NoiseSchedule sc;
  sc.T = T;
  sc.s = s;
  sc.A_amp = A_amp;
  std::vector<double> raw(T + 1);
  for (int t = 0; t <= T; ++t) raw[t] = 1.0 - std::sqrt(double(t) / T + s);

  std::vector<double> beta(T + 1);
  beta[0] = std::clamp(1.0 - raw[0], kBetaFloor, kBetaCeil);
  for (int t = 1; t <= T; ++t) {
    double b = raw[t - 1] > 0.0 ? 1.0 - raw[t] / raw[t - 1] : kBetaCeil;
    beta[t] = std::clamp(b, kBetaFloor, kBetaCeil);
  }
  sc.shared.resize(T + 1);
  sc.shared[0] = 1.0 - beta[0];
  for (int t = 1; t <= T; ++t) sc.shared[t] = sc.shared[t - 1] * (1.0 - beta[t]);
  sc.check_valid();
  return sc;
}

// ---- forward corruption ----

// One chain step: z_t ~ N(sqrt(1-beta_t) z_prev, beta_t A^2 I).
template <class T>
LatentBlock<T> forward_step(const LatentBlock<T>& z_prev, int t,
                            const NoiseSchedule& sched, Rng& rng) {
  if (t < 1 || t > sched.T) throw std::out_of_range("forward_step: 1 <= t <= T");
  LatentBlock<T> out;
  out.t = t;
  out.m.resize(z_prev.m.rows(), z_prev.m.cols());
  for (int n = 0; n < z_prev.slots(); ++n) {
    double b = sched.beta(t, n);
    double keep = std::sqrt(1.0 - b);
    double sd = std::sqrt(b) * sched.A_amp;
    for (int j = 0; j < z_prev.dim(); ++j)
      out.m(n, j) = static_cast<T>(keep * double(z_prev.m(n, j)) + sd * rng.normal());
  }
  return out;
}

// Marginal jump: z_t ~ N(sqrt(abar_t) z0, (1-abar_t) A^2 I). The t = 0 case
// is the beta_0 corruption itself.
template <class T>
LatentBlock<T> forward_jump(const LatentBlock<T>& z0, int t,
                            const NoiseSchedule& sched, Rng& rng) {
  if (t < 0 || t > sched.T) throw std::out_of_range("forward_jump: 0 <= t <= T");
  LatentBlock<T> out;
  out.t = t;
  out.m.resize(z0.m.rows(), z0.m.cols());
  for (int n = 0; n < z0.slots(); ++n) {
    double ab = sched.alpha_bar(t, n);
    double keep = std::sqrt(ab);
    double sd = std::sqrt(1.0 - ab) * sched.A_amp;
    for (int j = 0; j < z0.dim(); ++j)
      out.m(n, j) = static_cast<T>(keep * double(z0.m(n, j)) + sd * rng.normal());
  }
  return out;
}

// Posterior q(z_{t-1} | z_t, z_0): mean block and per-slot variance.
template <class T>
std::pair<Mat<T>, std::vector<double>> posterior_params(const LatentBlock<T>& z_t,
                                                        const LatentBlock<T>& z0,
                                                        int t,
                                                        const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T)
    throw std::out_of_range("posterior_params: 1 <= t <= T");
  if (z_t.m.rows() != z0.m.rows() || z_t.m.cols() != z0.m.cols())
    throw std::invalid_argument("posterior_params: shape mismatch");
  Mat<T> mean(z_t.m.rows(), z_t.m.cols());
  std::vector<double> var(z_t.slots());
  for (int n = 0; n < z_t.slots(); ++n) {
    double ab_t = sched.alpha_bar(t, n);
    double ab_p = sched.alpha_bar(t - 1, n);
    double b_t = sched.beta(t, n);
    double a_t = 1.0 - b_t;
    double c0 = std::sqrt(ab_p) * b_t / (1.0 - ab_t);
    double ct = std::sqrt(a_t) * (1.0 - ab_p) / (1.0 - ab_t);
    for (int j = 0; j < z_t.dim(); ++j)
      mean(n, j) = static_cast<T>(c0 * double(z0.m(n, j)) + ct * double(z_t.m(n, j)));
    var[n] = (1.0 - ab_p) / (1.0 - ab_t) * b_t;
  }
  return {std::move(mean), std::move(var)};
}

// ---- adaptive schedule ----

// Windowed per-(t, slot) MSE records feeding the adaptive update.
class AdaptiveState {
 public:
  AdaptiveState(int T, int n_positions)
      : T_(T),
        sum_(n_positions, std::vector<double>(T + 1, 0.0)),
        cnt_(n_positions, std::vector<int64_t>(T + 1, 0)) {}

  void record(int t, int n, double loss) {
    if (loss < 0.0) throw std::invalid_argument("AdaptiveState: negative loss");
    if (t < 1 || t > T_) throw std::out_of_range("AdaptiveState: t out of range");
    if (n < 0 || n >= static_cast<int>(sum_.size()))
      throw std::out_of_range("AdaptiveState: position out of range");
    sum_[n][t] += loss;
    cnt_[n][t] += 1;
  }

  void reset() {
    for (auto& row : sum_) std::fill(row.begin(), row.end(), 0.0);
    for (auto& row : cnt_) std::fill(row.begin(), row.end(), 0);
  }

  int n_positions() const { return static_cast<int>(sum_.size()); }
  int T() const { return T_; }
  bool has(int n, int t) const { return cnt_[n][t] > 0; }
  double mean(int n, int t) const { return sum_[n][t] / double(cnt_[n][t]); }

 private:
  int T_;
  std::vector<std::vector<double>> sum_;
  std::vector<std::vector<int64_t>> cnt_;
};

namespace detail {

// Piecewise-linear map through (loss, alpha_bar) points, sorted by loss;
// evaluation outside the recorded range clamps to the endpoint values.
inline double interp_alpha(const std::vector<std::pair<double, double>>& pts,
                           double x) {
  if (x <= pts.front().first) return pts.front().second;
  if (x >= pts.back().first) return pts.back().second;
  for (size_t i = 1; i < pts.size(); ++i) {
    if (x <= pts[i].first) {
      double x0 = pts[i - 1].first, y0 = pts[i - 1].second;
      double x1 = pts[i].first, y1 = pts[i].second;
      if (x1 - x0 <= 0.0) return y1;
      return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
    }
  }
  return pts.back().second;
}

}  // namespace detail

// Re-spaces each position's recorded losses to equal intervals between their
// min and max, maps them back through the recorded (loss, alpha_bar) curve,
// then re-clamps the betas and re-monotonizes alpha_bar.
inline NoiseSchedule adapt_schedule(const AdaptiveState& state,
                                    const NoiseSchedule& sched) {
  NoiseSchedule out = sched;
  if (!out.per_position_active())
    out.per_position.assign(state.n_positions(), sched.shared);
  if (static_cast<int>(out.per_position.size()) < state.n_positions())
    out.per_position.resize(state.n_positions(), sched.shared);

  for (int n = 0; n < state.n_positions(); ++n) {
    std::vector<int> ts;
    for (int t = 1; t <= sched.T; ++t)
      if (state.has(n, t)) ts.push_back(t);
    if (ts.size() < 2) continue;

    std::vector<double> losses(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) losses[i] = state.mean(n, ts[i]);
    double lo = *std::min_element(losses.begin(), losses.end());
    double hi = *std::max_element(losses.begin(), losses.end());
    if (!(hi > lo)) continue;  // fewer than 2 distinct loss values

    std::vector<double>& row = out.per_position[n];
    std::vector<std::pair<double, double>> pts(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) pts[i] = {losses[i], row[ts[i]]};
    std::sort(pts.begin(), pts.end());

    for (size_t i = 0; i < ts.size(); ++i) {
      double l_new = lo + (hi - lo) * double(i) / double(ts.size() - 1);
      row[ts[i]] = detail::interp_alpha(pts, l_new);
    }
    // clamp betas back into [floor, ceil]; this also restores monotonicity
    for (int t = 1; t <= sched.T; ++t) {
      double lo_ab = row[t - 1] * (1.0 - kBetaCeil);
      double hi_ab = row[t - 1] * (1.0 - kBetaFloor);
      row[t] = std::clamp(row[t], lo_ab, hi_ab);
    }
  }
  out.check_valid();
  return out;
}

}  // namespace noisefacts
