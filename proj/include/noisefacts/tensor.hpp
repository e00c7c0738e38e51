#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "noisefacts/rng.hpp"

namespace noisefacts {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

// One node of the recorded computation. Ops append nodes with a backprop
// closure; backward() replays them in reverse creation order.
template <class T>
struct Node {
  Mat<T> val;
  Mat<T> grad;
  bool grad_set = false;
  bool requires_grad = false;
  int64_t id = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  int rows() const { return static_cast<int>(val.rows()); }
  int cols() const { return static_cast<int>(val.cols()); }
  std::vector<int> shape() const { return {rows(), cols()}; }

  void accum_grad(const Mat<T>& g) {
    if (!grad_set) {
      grad = g;
      grad_set = true;
    } else {
      grad += g;
    }
  }
  const Mat<T>& grad_or_zero() {
    if (!grad_set) {
      grad = Mat<T>::Zero(val.rows(), val.cols());
      grad_set = true;
    }
    return grad;
  }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline int64_t next_node_id() {
  static int64_t counter = 0;
  return ++counter;
}
}  // namespace detail

template <class T>
Var<T> make_node(Mat<T> val, bool requires_grad,
                 std::vector<Var<T>> parents = {},
                 std::function<void(Node<T>&)> backprop = nullptr) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(val);
  n->requires_grad = requires_grad;
  n->id = detail::next_node_id();
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
  return n;
}

template <class T>
Var<T> constant(Mat<T> val) {
  return make_node<T>(std::move(val), false);
}

template <class T>
Var<T> leaf(Mat<T> val, bool requires_grad = true) {
  return make_node<T>(std::move(val), requires_grad);
}

template <class T>
bool any_requires(const std::vector<Var<T>>& vs) {
  for (auto& v : vs)
    if (v->requires_grad) return true;
  return false;
}

// ---- elementwise and linear ops ----

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::invalid_argument("add: shape mismatch");
  return make_node<T>(Mat<T>(a->val + b->val), any_requires<T>({a, b}), {a, b},
                      [a, b](Node<T>& n) {
                        if (a->requires_grad) a->accum_grad(n.grad);
                        if (b->requires_grad) b->accum_grad(n.grad);
                      });
}

// adds a 1 x c row vector to every row
template <class T>
Var<T> add_rowwise(const Var<T>& a, const Var<T>& row) {
  if (row->rows() != 1 || row->cols() != a->cols())
    throw std::invalid_argument("add_rowwise: shape mismatch");
  Mat<T> out = a->val;
  out.rowwise() += row->val.row(0);
  return make_node<T>(std::move(out), any_requires<T>({a, row}), {a, row},
                      [a, row](Node<T>& n) {
                        if (a->requires_grad) a->accum_grad(n.grad);
                        if (row->requires_grad)
                          row->accum_grad(n.grad.colwise().sum());
                      });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::invalid_argument("sub: shape mismatch");
  return make_node<T>(Mat<T>(a->val - b->val), any_requires<T>({a, b}), {a, b},
                      [a, b](Node<T>& n) {
                        if (a->requires_grad) a->accum_grad(n.grad);
                        if (b->requires_grad) b->accum_grad(Mat<T>(-n.grad));
                      });
}

template <class T>
Var<T> scale(const Var<T>& a, double s) {
  return make_node<T>(Mat<T>(a->val * static_cast<T>(s)), a->requires_grad, {a},
                      [a, s](Node<T>& n) {
                        if (a->requires_grad)
                          a->accum_grad(Mat<T>(n.grad * static_cast<T>(s)));
                      });
}

template <class T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::invalid_argument("hadamard: shape mismatch");
  return make_node<T>(Mat<T>(a->val.cwiseProduct(b->val)),
                      any_requires<T>({a, b}), {a, b}, [a, b](Node<T>& n) {
                        if (a->requires_grad)
                          a->accum_grad(Mat<T>(n.grad.cwiseProduct(b->val)));
                        if (b->requires_grad)
                          b->accum_grad(Mat<T>(n.grad.cwiseProduct(a->val)));
                      });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a->cols() != b->rows()) throw std::invalid_argument("matmul: shape mismatch");
  return make_node<T>(Mat<T>(a->val * b->val), any_requires<T>({a, b}), {a, b},
                      [a, b](Node<T>& n) {
                        if (a->requires_grad)
                          a->accum_grad(Mat<T>(n.grad * b->val.transpose()));
                        if (b->requires_grad)
                          b->accum_grad(Mat<T>(a->val.transpose() * n.grad));
                      });
}

// a * b^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  if (a->cols() != b->cols())
    throw std::invalid_argument("matmul_nt: shape mismatch");
  return make_node<T>(Mat<T>(a->val * b->val.transpose()),
                      any_requires<T>({a, b}), {a, b}, [a, b](Node<T>& n) {
                        if (a->requires_grad)
                          a->accum_grad(Mat<T>(n.grad * b->val));
                        if (b->requires_grad)
                          b->accum_grad(Mat<T>(n.grad.transpose() * a->val));
                      });
}

template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  if (a->rows() != b->rows())
    throw std::invalid_argument("concat_cols: row mismatch");
  Mat<T> out(a->rows(), a->cols() + b->cols());
  out.leftCols(a->cols()) = a->val;
  out.rightCols(b->cols()) = b->val;
  int ac = a->cols();
  return make_node<T>(std::move(out), any_requires<T>({a, b}), {a, b},
                      [a, b, ac](Node<T>& n) {
                        if (a->requires_grad)
                          a->accum_grad(Mat<T>(n.grad.leftCols(ac)));
                        if (b->requires_grad)
                          b->accum_grad(Mat<T>(n.grad.rightCols(n.grad.cols() - ac)));
                      });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, int r0, int count) {
  if (r0 < 0 || count < 0 || r0 + count > a->rows())
    throw std::out_of_range("slice_rows: range out of bounds");
  return make_node<T>(Mat<T>(a->val.middleRows(r0, count)), a->requires_grad,
                      {a}, [a, r0, count](Node<T>& n) {
                        if (!a->requires_grad) return;
                        Mat<T> g = Mat<T>::Zero(a->rows(), a->cols());
                        g.middleRows(r0, count) = n.grad;
                        a->accum_grad(g);
                      });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, int c0, int count) {
  if (c0 < 0 || count < 0 || c0 + count > a->cols())
    throw std::out_of_range("slice_cols: range out of bounds");
  return make_node<T>(Mat<T>(a->val.middleCols(c0, count)), a->requires_grad,
                      {a}, [a, c0, count](Node<T>& n) {
                        if (!a->requires_grad) return;
                        Mat<T> g = Mat<T>::Zero(a->rows(), a->cols());
                        g.middleCols(c0, count) = n.grad;
                        a->accum_grad(g);
                      });
}

// ---- nonlinearities and normalization ----

template <class T>
Var<T> gelu(const Var<T>& a) {
  Mat<T> out = a->val.unaryExpr([](T x) {
    return static_cast<T>(0.5 * double(x) * (1.0 + std::erf(double(x) * M_SQRT1_2)));
  });
  return make_node<T>(std::move(out), a->requires_grad, {a}, [a](Node<T>& n) {
    if (!a->requires_grad) return;
    Mat<T> d = a->val.unaryExpr([](T xv) {
      double x = double(xv);
      double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
      return static_cast<T>(cdf + x * pdf);
    });
    a->accum_grad(Mat<T>(n.grad.cwiseProduct(d)));
  });
}

// softmax over each row; mask (if given) is added to the logits first
template <class T>
Var<T> softmax_rows(const Var<T>& a, const Mat<T>* addmask = nullptr) {
  Mat<T> logits = a->val;
  if (addmask) {
    if (addmask->rows() != logits.rows() || addmask->cols() != logits.cols())
      throw std::invalid_argument("softmax_rows: mask shape mismatch");
    logits += *addmask;
  }
  Mat<T> out(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    T mx = logits.row(i).maxCoeff();
    Eigen::Array<T, 1, Eigen::Dynamic> e = (logits.row(i).array() - mx).exp();
    out.row(i) = e / e.sum();
  }
  return make_node<T>(std::move(out), a->requires_grad, {a}, [a](Node<T>& n) {
    if (!a->requires_grad) return;
    Mat<T> g(n.val.rows(), n.val.cols());
    for (int i = 0; i < n.val.rows(); ++i) {
      T dot = n.grad.row(i).dot(n.val.row(i));
      g.row(i) = n.val.row(i).cwiseProduct(
          (n.grad.row(i).array() - dot).matrix());
    }
    a->accum_grad(g);
  });
}

// per-row layer norm with affine gain/bias (1 x d each)
template <class T>
Var<T> layer_norm_rows(const Var<T>& a, const Var<T>& gain, const Var<T>& bias,
                       double eps = 1e-5) {
  int d = a->cols();
  if (gain->cols() != d || bias->cols() != d || gain->rows() != 1 || bias->rows() != 1)
    throw std::invalid_argument("layer_norm_rows: affine shape mismatch");
  Mat<T> xhat(a->rows(), d);
  std::vector<T> inv_std(a->rows());
  for (int i = 0; i < a->rows(); ++i) {
    T mu = a->val.row(i).mean();
    T var = (a->val.row(i).array() - mu).square().mean();
    T is = static_cast<T>(1.0 / std::sqrt(double(var) + eps));
    inv_std[i] = is;
    xhat.row(i) = (a->val.row(i).array() - mu) * is;
  }
  Mat<T> out = xhat;
  for (int i = 0; i < out.rows(); ++i)
    out.row(i) = out.row(i).cwiseProduct(gain->val.row(0)) + bias->val.row(0);
  return make_node<T>(
      std::move(out), any_requires<T>({a, gain, bias}), {a, gain, bias},
      [a, gain, bias, xhat, inv_std](Node<T>& n) {
        if (gain->requires_grad) {
          Mat<T> gg = Mat<T>::Zero(1, xhat.cols());
          for (int i = 0; i < xhat.rows(); ++i)
            gg.row(0) += n.grad.row(i).cwiseProduct(xhat.row(i));
          gain->accum_grad(gg);
        }
        if (bias->requires_grad) bias->accum_grad(n.grad.colwise().sum());
        if (a->requires_grad) {
          int d = xhat.cols();
          Mat<T> g(xhat.rows(), d);
          for (int i = 0; i < xhat.rows(); ++i) {
            Eigen::Array<T, 1, Eigen::Dynamic> dxhat =
                n.grad.row(i).cwiseProduct(gain->val.row(0)).array();
            T m1 = dxhat.mean();
            T m2 = (dxhat * xhat.row(i).array()).mean();
            g.row(i) =
                ((dxhat - m1 - xhat.row(i).array() * m2) * inv_std[i]).matrix();
          }
          a->accum_grad(g);
        }
      });
}

// embedding lookup: out.row(i) = table.row(ids[i])
template <class T>
Var<T> gather_rows(const Var<T>& table, const std::vector<int>& ids) {
  Mat<T> out(static_cast<int>(ids.size()), table->cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->rows())
      throw std::out_of_range("gather_rows: id out of range");
    out.row(static_cast<int>(i)) = table->val.row(ids[i]);
  }
  return make_node<T>(std::move(out), table->requires_grad, {table},
                      [table, ids](Node<T>& n) {
                        if (!table->requires_grad) return;
                        Mat<T> g = Mat<T>::Zero(table->rows(), table->cols());
                        for (size_t i = 0; i < ids.size(); ++i)
                          g.row(ids[i]) += n.grad.row(static_cast<int>(i));
                        table->accum_grad(g);
                      });
}

template <class T>
Var<T> dropout(const Var<T>& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  Mat<T> mask(a->rows(), a->cols());
  T keep = static_cast<T>(1.0 / (1.0 - p));
  for (int i = 0; i < mask.rows(); ++i)
    for (int j = 0; j < mask.cols(); ++j)
      mask(i, j) = rng.uniform() < p ? T(0) : keep;
  return hadamard(a, constant<T>(std::move(mask)));
}

// ---- reductions and losses ----

template <class T>
Var<T> sum_all(const Var<T>& a) {
  Mat<T> out(1, 1);
  out(0, 0) = a->val.sum();
  return make_node<T>(std::move(out), a->requires_grad, {a}, [a](Node<T>& n) {
    if (a->requires_grad)
      a->accum_grad(Mat<T>(Mat<T>::Constant(a->rows(), a->cols(), n.grad(0, 0))));
  });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), 1.0 / (double(a->rows()) * a->cols()));
}

// sum of squared differences, ||a - b||^2
template <class T>
Var<T> mse_sum(const Var<T>& a, const Var<T>& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::invalid_argument("mse_sum: shape mismatch");
  Mat<T> out(1, 1);
  out(0, 0) = (a->val - b->val).squaredNorm();
  return make_node<T>(std::move(out), any_requires<T>({a, b}), {a, b},
                      [a, b](Node<T>& n) {
                        Mat<T> d = 2 * n.grad(0, 0) * (a->val - b->val);
                        if (a->requires_grad) a->accum_grad(d);
                        if (b->requires_grad) b->accum_grad(Mat<T>(-d));
                      });
}

// sum over rows of -log softmax(logits)[target]
template <class T>
Var<T> cross_entropy_sum(const Var<T>& logits, const std::vector<int>& targets) {
  if (static_cast<int>(targets.size()) != logits->rows())
    throw std::invalid_argument("cross_entropy_sum: target count mismatch");
  Mat<T> probs(logits->rows(), logits->cols());
  double loss = 0.0;
  for (int i = 0; i < logits->rows(); ++i) {
    int t = targets[i];
    if (t < 0 || t >= logits->cols())
      throw std::out_of_range("cross_entropy_sum: target out of range");
    T mx = logits->val.row(i).maxCoeff();
    Eigen::Array<T, 1, Eigen::Dynamic> e = (logits->val.row(i).array() - mx).exp();
    T z = e.sum();
    probs.row(i) = e / z;
    loss -= double(logits->val(i, t)) - double(mx) - std::log(double(z));
  }
  Mat<T> out(1, 1);
  out(0, 0) = static_cast<T>(loss);
  return make_node<T>(std::move(out), logits->requires_grad, {logits},
                      [logits, targets, probs](Node<T>& n) {
                        if (!logits->requires_grad) return;
                        Mat<T> g = probs;
                        for (int i = 0; i < g.rows(); ++i)
                          g(i, targets[i]) -= T(1);
                        logits->accum_grad(Mat<T>(g * n.grad(0, 0)));
                      });
}

// ---- backward pass ----

template <class T>
void backward(const Var<T>& loss) {
  if (!loss) throw std::invalid_argument("backward: null loss");
  if (loss->rows() != 1 || loss->cols() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (!loss->backprop && loss->parents.empty())
    throw std::logic_error("backward: loss is not the result of a recorded forward pass");

  std::vector<Node<T>*> order;
  std::vector<Node<T>*> stack{loss.get()};
  std::vector<int64_t> seen;
  auto mark = [&seen](int64_t id) {
    auto it = std::lower_bound(seen.begin(), seen.end(), id);
    if (it != seen.end() && *it == id) return false;
    seen.insert(it, id);
    return true;
  };
  mark(loss->id);
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && mark(p->id)) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](Node<T>* x, Node<T>* y) { return x->id > y->id; });

  loss->grad = Mat<T>::Ones(1, 1);
  loss->grad_set = true;
  for (Node<T>* n : order) {
    if (n->backprop && n->grad_set) n->backprop(*n);
  }
}

}  // namespace noisefacts
