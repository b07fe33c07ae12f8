#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace egosag::ad {

using Mat = Eigen::MatrixXd;

// One vertex of the reverse-mode tape. Graphs are rebuilt per forward pass;
// parameter nodes outlive the graph and accumulate gradients across backward
// calls until zero_grad().
struct Node {
  Mat value;
  Mat grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // pulls this->grad into parents

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Mat::Zero(value.rows(), value.cols());
  }
};

class Tensor {
 public:
  Tensor() = default;
  static Tensor constant(Mat v);
  static Tensor param(Mat v);

  bool defined() const { return static_cast<bool>(n_); }
  const Mat& val() const { return n_->value; }
  Mat& mutable_val() { return n_->value; }
  Mat& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  Eigen::Index rows() const { return n_->value.rows(); }
  Eigen::Index cols() const { return n_->value.cols(); }

  // Cuts the tape: returns a constant holding a copy of the current value.
  Tensor detach() const { return constant(n_->value); }

  void zero_grad() {
    n_->grad = Mat::Zero(n_->value.rows(), n_->value.cols());
  }

  // Reverse pass from this scalar (1x1) tensor.
  void backward() const;

  std::shared_ptr<Node> node() const { return n_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}
  std::shared_ptr<Node> n_;
  friend Tensor make_op(Mat value, std::vector<Tensor> parents,
                        std::function<void(Node&)> backward_fn);
};

Tensor make_op(Mat value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn);

// ---- elementwise / arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor div(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor square(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- shape ----
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n);
Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n);
// out[:, j] = a[:, idx[j]]; indices may repeat (also serves mask expansion).
Tensor gather_cols(const Tensor& a, const std::vector<int>& idx);

// ---- broadcasts ----
Tensor add_colvec(const Tensor& a, const Tensor& c);  // a: R x N, c: R x 1
Tensor mul_colvec(const Tensor& a, const Tensor& c);

// ---- reductions ----
Tensor sum_all(const Tensor& a);   // 1x1
Tensor mean_all(const Tensor& a);  // 1x1
Tensor sum_cols(const Tensor& a);  // R x N -> R x 1
Tensor mean_cols(const Tensor& a);

// ---- normalization / softmax ----
Tensor softmax_cols(const Tensor& a);
Tensor log_softmax_cols(const Tensor& a);
// Per-column normalization over the row (channel) dimension.
Tensor layer_norm_cols(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);

// ---- structured gathers ----
// Per-column mean over groups: x is R x N, assignment maps column -> group in
// [0, n_groups); every group must be non-empty.
Tensor group_mean_cols(const Tensor& x, const std::vector<int>& assignment,
                       int n_groups);
// idx is K x S over source columns (no negatives). mode: reduce across K.
enum class Reduce { Max, Mean };
Tensor neighborhood_reduce(const Tensor& x,
                           const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& idx,
                           Reduce mode);
// im2col: out is (K*R) x S, entry -1 in idx contributes zeros (padding).
Tensor gather_patches(const Tensor& x,
                      const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& idx);
// out[:, j] = sum_t w[j][t].second * x[:, w[j][t].first]
using InterpWeights = std::vector<std::vector<std::pair<int, double>>>;
Tensor interpolate_cols(const Tensor& x, const InterpWeights& w);

// ---- similarity / losses ----
// Column-wise cosine against a single reference vector b (R x 1); columns (or
// b) with near-zero norm produce 0 with no gradient.
Tensor cosine_cols(const Tensor& a, const Tensor& b, double tiny = 1e-12);
// Mean binary cross-entropy of probabilities p against constant targets y,
// with p clamped to [eps, 1-eps]. Returns 1x1.
Tensor bce_mean(const Tensor& p, const Mat& y, double eps = 1e-6);

}  // namespace egosag::ad
