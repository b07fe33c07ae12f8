#include "egosag/nn.hpp"

#include <cmath>
#include <sstream>

#include "egosag/errors.hpp"
#include "egosag/rng.hpp"

namespace egosag {

InitSpec InitSpec::zero() { return {Kind::Zero, 0.0}; }
InitSpec InitSpec::constant(double v) { return {Kind::Constant, v}; }
InitSpec InitSpec::normal(double stddev) { return {Kind::Normal, stddev}; }
InitSpec InitSpec::xavier() { return {Kind::XavierUniform, 1.0}; }
InitSpec InitSpec::xavier_scaled(double s) { return {Kind::XavierUniform, s}; }

namespace {

Eigen::MatrixXd make_init(const InitSpec& init, Eigen::Index rows, Eigen::Index cols,
                          std::uint64_t seed, const std::string& name) {
  Eigen::MatrixXd m(rows, cols);
  switch (init.kind) {
    case InitSpec::Kind::Zero:
      m.setZero();
      return m;
    case InitSpec::Kind::Constant:
      m.setConstant(init.value);
      return m;
    case InitSpec::Kind::Normal: {
      Rng rng = Rng::derive(seed, name);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = init.value * rng.normal();
      return m;
    }
    case InitSpec::Kind::XavierUniform: {
      // W is out×in, so fan_in = cols, fan_out = rows.
      const double a = init.value * std::sqrt(6.0 / static_cast<double>(rows + cols));
      Rng rng = Rng::derive(seed, name);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-a, a);
      return m;
    }
  }
  throw InternalError("unhandled init kind");
}

}  // namespace

ad::Tensor& ParamRegistry::param(const std::string& name, Eigen::Index rows,
                                 Eigen::Index cols, const InitSpec& init) {
  auto it = params_.find(name);
  if (it != params_.end()) {
    if (it->second.rows() != rows || it->second.cols() != cols) {
      std::ostringstream msg;
      msg << "parameter '" << name << "' requested as " << rows << "x" << cols
          << " but already exists as " << it->second.rows() << "x" << it->second.cols();
      throw ParameterError(msg.str());
    }
    return it->second;
  }
  ad::Tensor t = ad::Tensor::param(make_init(init, rows, cols, seed_, name));
  return params_.emplace(name, std::move(t)).first->second;
}

ad::Tensor& ParamRegistry::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ParameterError("unknown parameter '" + name + "'");
  return it->second;
}

const ad::Tensor& ParamRegistry::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ParameterError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& kv : params_) out.push_back(kv.first);
  return out;
}

void ParamRegistry::zero_grad_all() {
  for (auto& kv : params_) kv.second.zero_grad();
}

std::size_t ParamRegistry::scalar_count() const {
  std::size_t n = 0;
  for (const auto& kv : params_)
    n += static_cast<std::size_t>(kv.second.rows() * kv.second.cols());
  return n;
}

Linear::Linear(ParamRegistry& reg, const std::string& name, int in_width, int out_width,
               bool with_bias)
    : in_(in_width), out_(out_width) {
  if (in_width < 1 || out_width < 1)
    throw ParameterError("linear layer '" + name + "' needs positive widths");
  w_ = reg.param(name + ".w", out_width, in_width, InitSpec::xavier());
  if (with_bias) b_ = reg.param(name + ".b", out_width, 1, InitSpec::zero());
}

ad::Tensor Linear::operator()(const ad::Tensor& x) const {
  if (x.rows() != in_)
    throw ParameterError("linear layer expects " + std::to_string(in_) +
                         " input channels, got " + std::to_string(x.rows()));
  ad::Tensor y = ad::matmul(w_, x);
  if (b_.defined()) y = ad::add_colvec(y, b_);
  return y;
}

MLP2::MLP2(ParamRegistry& reg, const std::string& name, int in_width, int hidden_width,
           int out_width, bool with_bias)
    : first_(reg, name + ".fc1", in_width, hidden_width, with_bias),
      second_(reg, name + ".fc2", hidden_width, out_width, with_bias) {}

ad::Tensor MLP2::operator()(const ad::Tensor& x) const {
  return second_(ad::relu(first_(x)));
}

LayerNormModule::LayerNormModule(ParamRegistry& reg, const std::string& name, int width,
                                 double eps)
    : eps_(eps) {
  gamma_ = reg.param(name + ".gamma", width, 1, InitSpec::constant(1.0));
  beta_ = reg.param(name + ".beta", width, 1, InitSpec::zero());
}

ad::Tensor LayerNormModule::operator()(const ad::Tensor& x) const {
  return ad::layer_norm_cols(x, gamma_, beta_, eps_);
}

MultiheadAttention::MultiheadAttention(ParamRegistry& reg, const std::string& name,
                                       int q_width, int kv_width, int d_model, int heads,
                                       int out_width)
    : d_model_(d_model), heads_(heads) {
  if (heads < 1) throw ParameterError("attention needs at least one head");
  if (d_model < 1 || d_model % heads != 0)
    throw ParameterError("attention head count " + std::to_string(heads) +
                         " must divide projection width " + std::to_string(d_model));
  wq_ = reg.param(name + ".wq", d_model, q_width, InitSpec::xavier());
  wk_ = reg.param(name + ".wk", d_model, kv_width, InitSpec::xavier());
  wv_ = reg.param(name + ".wv", d_model, kv_width, InitSpec::xavier());
  out_proj_ = Linear(reg, name + ".out", d_model, out_width, /*with_bias=*/true);
}

ad::Tensor MultiheadAttention::operator()(const ad::Tensor& queries,
                                          const ad::Tensor& kv) const {
  if (kv.cols() == 0) throw ParameterError("attention needs at least one key/value item");
  const int dh = d_model_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ad::Tensor qp = ad::matmul(wq_, queries);  // d×Qn
  ad::Tensor kp = ad::matmul(wk_, kv);       // d×Kn
  ad::Tensor vp = ad::matmul(wv_, kv);
  ad::Tensor concat;
  for (int h = 0; h < heads_; ++h) {
    ad::Tensor qh = ad::slice_rows(qp, h * dh, dh);
    ad::Tensor kh = ad::slice_rows(kp, h * dh, dh);
    ad::Tensor vh = ad::slice_rows(vp, h * dh, dh);
    // Kn×Qn scores; softmax over keys (rows) for each query column.
    ad::Tensor scores = ad::scale(ad::matmul(ad::transpose(kh), qh), scale);
    ad::Tensor head = ad::matmul(vh, ad::softmax_cols(scores));
    concat = (h == 0) ? head : ad::concat_rows(concat, head);
  }
  return out_proj_(concat);
}

ad::Tensor& init_queries(ParamRegistry& reg, const std::string& name, int channels,
                         int query_count) {
  if (channels < 1 || query_count < 1)
    throw ParameterError("query bank needs positive channel and query counts");
  return reg.param(name, channels, query_count, InitSpec::normal(0.02));
}

}  // namespace egosag
