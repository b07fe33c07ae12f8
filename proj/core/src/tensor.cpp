#include "egosag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "egosag/errors.hpp"

namespace egosag::ad {

Tensor Tensor::constant(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  return Tensor(std::move(n));
}

Tensor Tensor::param(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return Tensor(std::move(n));
}

Tensor make_op(Mat value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) {
    if (p.requires_grad()) needs = true;
    n->parents.push_back(p.node());
  }
  n->requires_grad = needs;
  if (needs) n->backward_fn = std::move(backward_fn);
  return Tensor(std::move(n));
}

void Tensor::backward() const {
  if (!n_) throw InternalError("backward on empty tensor");
  if (n_->value.size() != 1) throw InternalError("backward requires a 1x1 tensor");
  // Iterative post-order DFS to get a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(n_.get(), 0);
  visited.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* child = node->parents[next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  n_->ensure_grad();
  n_->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

namespace {

void accum(const std::shared_ptr<Node>& p, const Mat& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  p->grad += g;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InternalError(std::string(op) + ": shape mismatch " +
                        std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                        " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  return make_op(a.val() + b.val(), {a, b}, [](Node& n) {
    accum(n.parents[0], n.grad);
    accum(n.parents[1], n.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  return make_op(a.val() - b.val(), {a, b}, [](Node& n) {
    accum(n.parents[0], n.grad);
    accum(n.parents[1], -n.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  return make_op(a.val().cwiseProduct(b.val()), {a, b}, [](Node& n) {
    accum(n.parents[0], n.grad.cwiseProduct(n.parents[1]->value));
    accum(n.parents[1], n.grad.cwiseProduct(n.parents[0]->value));
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  return make_op(a.val().cwiseQuotient(b.val()), {a, b}, [](Node& n) {
    const Mat& av = n.parents[0]->value;
    const Mat& bv = n.parents[1]->value;
    accum(n.parents[0], n.grad.cwiseQuotient(bv));
    accum(n.parents[1], -n.grad.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv)));
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_op(a.val() * s, {a}, [s](Node& n) { accum(n.parents[0], n.grad * s); });
}

Tensor add_const(const Tensor& a, double c) {
  return make_op(a.val().array() + c, {a}, [](Node& n) { accum(n.parents[0], n.grad); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return make_op(a.val().cwiseMax(0.0), {a}, [](Node& n) {
    const Mat mask = (n.parents[0]->value.array() > 0.0).cast<double>();
    accum(n.parents[0], n.grad.cwiseProduct(mask));
  });
}

Tensor sigmoid(const Tensor& a) {
  Mat y = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
  return make_op(std::move(y), {a}, [](Node& n) {
    const Mat& y = n.value;
    accum(n.parents[0], n.grad.cwiseProduct(y.cwiseProduct(Mat::Ones(y.rows(), y.cols()) - y)));
  });
}

Tensor exp_t(const Tensor& a) {
  return make_op(a.val().array().exp(), {a}, [](Node& n) {
    accum(n.parents[0], n.grad.cwiseProduct(n.value));
  });
}

Tensor log_t(const Tensor& a) {
  return make_op(a.val().array().log(), {a}, [](Node& n) {
    accum(n.parents[0], n.grad.cwiseQuotient(n.parents[0]->value));
  });
}

Tensor square(const Tensor& a) {
  return make_op(a.val().cwiseProduct(a.val()), {a}, [](Node& n) {
    accum(n.parents[0], 2.0 * n.grad.cwiseProduct(n.parents[0]->value));
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw InternalError("matmul: inner dimensions " + std::to_string(a.cols()) +
                        " vs " + std::to_string(b.rows()));
  return make_op(a.val() * b.val(), {a, b}, [](Node& n) {
    accum(n.parents[0], n.grad * n.parents[1]->value.transpose());
    accum(n.parents[1], n.parents[0]->value.transpose() * n.grad);
  });
}

Tensor transpose(const Tensor& a) {
  return make_op(a.val().transpose(), {a}, [](Node& n) {
    accum(n.parents[0], n.grad.transpose());
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw InternalError("concat_rows: column mismatch");
  Mat v(a.rows() + b.rows(), a.cols());
  v.topRows(a.rows()) = a.val();
  v.bottomRows(b.rows()) = b.val();
  const auto ra = a.rows();
  return make_op(std::move(v), {a, b}, [ra](Node& n) {
    accum(n.parents[0], n.grad.topRows(ra));
    accum(n.parents[1], n.grad.bottomRows(n.grad.rows() - ra));
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw InternalError("concat_cols: row mismatch");
  Mat v(a.rows(), a.cols() + b.cols());
  v.leftCols(a.cols()) = a.val();
  v.rightCols(b.cols()) = b.val();
  const auto ca = a.cols();
  return make_op(std::move(v), {a, b}, [ca](Node& n) {
    accum(n.parents[0], n.grad.leftCols(ca));
    accum(n.parents[1], n.grad.rightCols(n.grad.cols() - ca));
  });
}

Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n_rows) {
  if (r0 < 0 || r0 + n_rows > a.rows()) throw InternalError("slice_rows: out of range");
  return make_op(a.val().middleRows(r0, n_rows), {a}, [r0, n_rows](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.middleRows(r0, n_rows) += n.grad;
  });
}

Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n_cols) {
  if (c0 < 0 || c0 + n_cols > a.cols()) throw InternalError("slice_cols: out of range");
  return make_op(a.val().middleCols(c0, n_cols), {a}, [c0, n_cols](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.middleCols(c0, n_cols) += n.grad;
  });
}

Tensor gather_cols(const Tensor& a, const std::vector<int>& idx) {
  Mat v(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= a.cols()) throw InternalError("gather_cols: index out of range");
    v.col(static_cast<Eigen::Index>(j)) = a.val().col(idx[j]);
  }
  return make_op(std::move(v), {a}, [idx](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (size_t j = 0; j < idx.size(); ++j)
      n.parents[0]->grad.col(idx[j]) += n.grad.col(static_cast<Eigen::Index>(j));
  });
}

Tensor add_colvec(const Tensor& a, const Tensor& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) throw InternalError("add_colvec: shape");
  return make_op(a.val().colwise() + Eigen::VectorXd(c.val().col(0)), {a, c}, [](Node& n) {
    accum(n.parents[0], n.grad);
    accum(n.parents[1], n.grad.rowwise().sum());
  });
}

Tensor mul_colvec(const Tensor& a, const Tensor& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) throw InternalError("mul_colvec: shape");
  Mat v = a.val().array().colwise() * c.val().col(0).array();
  return make_op(std::move(v), {a, c}, [](Node& n) {
    const Mat& av = n.parents[0]->value;
    const Mat& cv = n.parents[1]->value;
    accum(n.parents[0], (n.grad.array().colwise() * cv.col(0).array()).matrix());
    accum(n.parents[1], n.grad.cwiseProduct(av).rowwise().sum());
  });
}

Tensor sum_all(const Tensor& a) {
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  return make_op(std::move(v), {a}, [](Node& n) {
    const Mat& pv = n.parents[0]->value;
    accum(n.parents[0], Mat::Constant(pv.rows(), pv.cols(), n.grad(0, 0)));
  });
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.val().size()));
}

Tensor sum_cols(const Tensor& a) {
  return make_op(a.val().rowwise().sum(), {a}, [](Node& n) {
    const auto cols = n.parents[0]->value.cols();
    accum(n.parents[0], n.grad * Eigen::RowVectorXd::Ones(cols));
  });
}

Tensor mean_cols(const Tensor& a) {
  return scale(sum_cols(a), 1.0 / static_cast<double>(a.cols()));
}

Tensor softmax_cols(const Tensor& a) {
  Mat v = a.val();
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    Eigen::VectorXd col = v.col(j);
    const double m = col.maxCoeff();
    col = (col.array() - m).exp();
    v.col(j) = col / col.sum();
  }
  return make_op(std::move(v), {a}, [](Node& n) {
    const Mat& p = n.value;
    Mat g(p.rows(), p.cols());
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double dot = p.col(j).dot(n.grad.col(j));
      g.col(j) = p.col(j).cwiseProduct(n.grad.col(j)) - dot * p.col(j);
    }
    accum(n.parents[0], g);
  });
}

Tensor log_softmax_cols(const Tensor& a) {
  Mat v = a.val();
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    const double m = v.col(j).maxCoeff();
    const double lse = m + std::log((v.col(j).array() - m).exp().sum());
    v.col(j).array() -= lse;
  }
  return make_op(std::move(v), {a}, [](Node& n) {
    Mat g(n.value.rows(), n.value.cols());
    for (Eigen::Index j = 0; j < n.value.cols(); ++j) {
      const Eigen::VectorXd p = n.value.col(j).array().exp();
      const double s = n.grad.col(j).sum();
      g.col(j) = n.grad.col(j) - s * p;
    }
    accum(n.parents[0], g);
  });
}

Tensor layer_norm_cols(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps) {
  if (gamma.cols() != 1 || beta.cols() != 1 || gamma.rows() != x.rows() ||
      beta.rows() != x.rows())
    throw InternalError("layer_norm_cols: parameter shape");
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double mu = x.val().col(j).mean();
    const Eigen::VectorXd centered = x.val().col(j).array() - mu;
    const double var = centered.squaredNorm() / static_cast<double>(rows);
    inv_std(j) = 1.0 / std::sqrt(var + eps);
    xhat.col(j) = centered * inv_std(j);
  }
  Mat v = (xhat.array().colwise() * gamma.val().col(0).array()).colwise() +
          beta.val().col(0).array();
  return make_op(std::move(v), {x, gamma, beta},
                 [xhat, inv_std](Node& n) {
                   const Eigen::Index rows = n.value.rows(), cols = n.value.cols();
                   const Mat& gam = n.parents[1]->value;
                   accum(n.parents[1], n.grad.cwiseProduct(xhat).rowwise().sum());
                   accum(n.parents[2], n.grad.rowwise().sum());
                   if (!n.parents[0]->requires_grad) return;
                   Mat gx(rows, cols);
                   for (Eigen::Index j = 0; j < cols; ++j) {
                     const Eigen::VectorXd dxhat =
                         n.grad.col(j).cwiseProduct(gam.col(0));
                     const double m1 = dxhat.mean();
                     const double m2 = dxhat.dot(xhat.col(j)) / static_cast<double>(rows);
                     gx.col(j) = inv_std(j) * (dxhat.array() - m1 - xhat.col(j).array() * m2);
                   }
                   accum(n.parents[0], gx);
                 });
}

Tensor group_mean_cols(const Tensor& x, const std::vector<int>& assignment,
                       int n_groups) {
  if (static_cast<Eigen::Index>(assignment.size()) != x.cols())
    throw ParameterError("group_mean_cols: assignment length " +
                         std::to_string(assignment.size()) + " != column count " +
                         std::to_string(x.cols()));
  Mat v = Mat::Zero(x.rows(), n_groups);
  std::vector<double> counts(static_cast<size_t>(n_groups), 0.0);
  for (size_t p = 0; p < assignment.size(); ++p) {
    const int g = assignment[p];
    if (g < 0 || g >= n_groups) throw InternalError("group_mean_cols: group out of range");
    v.col(g) += x.val().col(static_cast<Eigen::Index>(p));
    counts[static_cast<size_t>(g)] += 1.0;
  }
  for (int g = 0; g < n_groups; ++g) {
    if (counts[static_cast<size_t>(g)] == 0.0)
      throw InternalError("group_mean_cols: empty group " + std::to_string(g));
    v.col(g) /= counts[static_cast<size_t>(g)];
  }
  return make_op(std::move(v), {x}, [assignment, counts](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (size_t p = 0; p < assignment.size(); ++p) {
      const int g = assignment[p];
      n.parents[0]->grad.col(static_cast<Eigen::Index>(p)) +=
          n.grad.col(g) / counts[static_cast<size_t>(g)];
    }
  });
}

Tensor neighborhood_reduce(
    const Tensor& x, const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& idx,
    Reduce mode) {
  const Eigen::Index k = idx.rows(), s = idx.cols(), rows = x.rows();
  if (k < 1) throw ParameterError("neighborhood_reduce: empty neighborhoods");
  Mat v(rows, s);
  if (mode == Reduce::Max) {
    // argmax per (row, col) for the backward scatter
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> arg(rows, s);
    for (Eigen::Index j = 0; j < s; ++j) {
      v.col(j) = x.val().col(idx(0, j));
      arg.col(j).setConstant(idx(0, j));
      for (Eigen::Index t = 1; t < k; ++t) {
        const auto& cand = x.val().col(idx(t, j));
        for (Eigen::Index r = 0; r < rows; ++r) {
          if (cand(r) > v(r, j)) {
            v(r, j) = cand(r);
            arg(r, j) = idx(t, j);
          }
        }
      }
    }
    return make_op(std::move(v), {x}, [arg](Node& n) {
      if (!n.parents[0]->requires_grad) return;
      n.parents[0]->ensure_grad();
      for (Eigen::Index j = 0; j < n.grad.cols(); ++j)
        for (Eigen::Index r = 0; r < n.grad.rows(); ++r)
          n.parents[0]->grad(r, arg(r, j)) += n.grad(r, j);
    });
  }
  for (Eigen::Index j = 0; j < s; ++j) {
    v.col(j).setZero();
    for (Eigen::Index t = 0; t < k; ++t) v.col(j) += x.val().col(idx(t, j));
    v.col(j) /= static_cast<double>(k);
  }
  return make_op(std::move(v), {x}, [idx, k](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (Eigen::Index j = 0; j < n.grad.cols(); ++j)
      for (Eigen::Index t = 0; t < k; ++t)
        n.parents[0]->grad.col(idx(t, j)) += n.grad.col(j) / static_cast<double>(k);
  });
}

Tensor gather_patches(
    const Tensor& x, const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& idx) {
  const Eigen::Index k = idx.rows(), s = idx.cols(), rows = x.rows();
  Mat v = Mat::Zero(k * rows, s);
  for (Eigen::Index j = 0; j < s; ++j)
    for (Eigen::Index t = 0; t < k; ++t)
      if (idx(t, j) >= 0) v.block(t * rows, j, rows, 1) = x.val().col(idx(t, j));
  return make_op(std::move(v), {x}, [idx, rows](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (Eigen::Index j = 0; j < n.grad.cols(); ++j)
      for (Eigen::Index t = 0; t < idx.rows(); ++t)
        if (idx(t, j) >= 0)
          n.parents[0]->grad.col(idx(t, j)) += n.grad.block(t * rows, j, rows, 1);
  });
}

Tensor interpolate_cols(const Tensor& x, const InterpWeights& w) {
  Mat v = Mat::Zero(x.rows(), static_cast<Eigen::Index>(w.size()));
  for (size_t j = 0; j < w.size(); ++j)
    for (const auto& [src, weight] : w[j])
      v.col(static_cast<Eigen::Index>(j)) += weight * x.val().col(src);
  return make_op(std::move(v), {x}, [w](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (size_t j = 0; j < w.size(); ++j)
      for (const auto& [src, weight] : w[j])
        n.parents[0]->grad.col(src) += weight * n.grad.col(static_cast<Eigen::Index>(j));
  });
}

Tensor cosine_cols(const Tensor& a, const Tensor& b, double tiny) {
  if (b.cols() != 1 || b.rows() != a.rows()) throw InternalError("cosine_cols: shape");
  const Eigen::Index q = a.cols();
  Mat v(1, q);
  const double bn = b.val().col(0).norm();
  for (Eigen::Index j = 0; j < q; ++j) {
    const double an = a.val().col(j).norm();
    v(0, j) = (an < tiny || bn < tiny)
                  ? 0.0
                  : a.val().col(j).dot(b.val().col(0)) / (an * bn);
  }
  return make_op(std::move(v), {a, b}, [tiny](Node& n) {
    const Mat& av = n.parents[0]->value;
    const Mat& bv = n.parents[1]->value;
    const double bn = bv.col(0).norm();
    Mat ga = Mat::Zero(av.rows(), av.cols());
    Mat gb = Mat::Zero(bv.rows(), 1);
    for (Eigen::Index j = 0; j < av.cols(); ++j) {
      const double an = av.col(j).norm();
      if (an < tiny || bn < tiny) continue;
      const double c = n.value(0, j);
      const double g = n.grad(0, j);
      ga.col(j) = g * (bv.col(0) / (an * bn) - c * av.col(j) / (an * an));
      gb.col(0) += g * (av.col(j) / (an * bn) - c * bv.col(0) / (bn * bn));
    }
    accum(n.parents[0], ga);
    accum(n.parents[1], gb);
  });
}

Tensor bce_mean(const Tensor& p, const Mat& y, double eps) {
  if (p.rows() != y.rows() || p.cols() != y.cols())
    throw ParameterError("bce_mean: prediction/target shape mismatch");
  const double count = static_cast<double>(p.val().size());
  Mat clamped = p.val().cwiseMax(eps).cwiseMin(1.0 - eps);
  double total = 0.0;
  for (Eigen::Index j = 0; j < p.cols(); ++j)
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const double ph = clamped(r, j);
      total += -y(r, j) * std::log(ph) - (1.0 - y(r, j)) * std::log(1.0 - ph);
    }
  Mat v(1, 1);
  v(0, 0) = total / count;
  return make_op(std::move(v), {p}, [y, eps, count](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    const Mat& pv = n.parents[0]->value;
    Mat g(pv.rows(), pv.cols());
    for (Eigen::Index j = 0; j < pv.cols(); ++j)
      for (Eigen::Index r = 0; r < pv.rows(); ++r) {
        const double raw = pv(r, j);
        if (raw <= eps || raw >= 1.0 - eps) {
          g(r, j) = 0.0;  // clamped region
        } else {
          g(r, j) = (-y(r, j) / raw + (1.0 - y(r, j)) / (1.0 - raw)) / count;
        }
      }
    accum(n.parents[0], n.grad(0, 0) * g);
  });
}

}  // namespace egosag::ad
