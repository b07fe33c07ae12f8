#pragma once

// Small neural building blocks on top of the tape: a named parameter
// registry, linear layers, two-layer perceptrons, layer norm with learned
// affine, and multi-head attention. Feature matrices are C×N with columns
// as items throughout.
//
// Every parameter is initialised from a random stream derived from the
// registry seed and the parameter's full name, so the values a layer gets
// depend only on (seed, name) — never on construction order. That keeps
// checkpoints and re-runs reproducible even when the module graph grows.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "egosag/tensor.hpp"

namespace egosag {

// How to fill a freshly created parameter.
struct InitSpec {
  enum class Kind { Zero, Constant, Normal, XavierUniform };
  Kind kind = Kind::Zero;
  // Constant: fill value. Normal: standard deviation.
  double value = 0.0;

  static InitSpec zero();
  static InitSpec constant(double v);
  static InitSpec normal(double stddev);
  static InitSpec xavier();  // uniform ±sqrt(6/(fan_in+fan_out)), fans from shape
  static InitSpec xavier_scaled(double s);  // xavier bound multiplied by s
};

// Ordered map of named trainable tensors. Layers request parameters by
// name; repeated requests return the same tensor (shape-checked), which is
// what lets a checkpoint restore write directly into live parameters.
class ParamRegistry {
 public:
  explicit ParamRegistry(std::uint64_t seed) : seed_(seed) {}

  // Creates the parameter on first use, returns the existing one afterwards.
  // Throws ParameterError if a later request disagrees on shape.
  ad::Tensor& param(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                    const InitSpec& init);

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  ad::Tensor& at(const std::string& name);
  const ad::Tensor& at(const std::string& name) const;

  // Names in lexicographic order (std::map order) — the canonical order for
  // checkpoints and optimiser state.
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::uint64_t seed() const { return seed_; }

  void zero_grad_all();

  // Total number of scalar entries across all parameters.
  std::size_t scalar_count() const;

  std::map<std::string, ad::Tensor>& entries() { return params_; }
  const std::map<std::string, ad::Tensor>& entries() const { return params_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, ad::Tensor> params_;
};

// y = W·x + b with W: out×in, x: in×N. Bias optional.
class Linear {
 public:
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, int in_width, int out_width,
         bool with_bias = true);

  ad::Tensor operator()(const ad::Tensor& x) const;

  int in_width() const { return in_; }
  int out_width() const { return out_; }

 private:
  ad::Tensor w_;
  ad::Tensor b_;  // undefined when bias disabled
  int in_ = 0;
  int out_ = 0;
};

// Two-layer perceptron: Linear → ReLU → Linear.
class MLP2 {
 public:
  MLP2() = default;
  MLP2(ParamRegistry& reg, const std::string& name, int in_width, int hidden_width,
       int out_width, bool with_bias = true);

  ad::Tensor operator()(const ad::Tensor& x) const;

  int in_width() const { return first_.in_width(); }
  int out_width() const { return second_.out_width(); }

 private:
  Linear first_;
  Linear second_;
};

// Per-column layer norm with learned per-channel scale and shift.
class LayerNormModule {
 public:
  LayerNormModule() = default;
  LayerNormModule(ParamRegistry& reg, const std::string& name, int width,
                  double eps = 1e-5);

  ad::Tensor operator()(const ad::Tensor& x) const;

 private:
  ad::Tensor gamma_;
  ad::Tensor beta_;
  double eps_ = 1e-5;
};

// Multi-head attention over column-item matrices.
//
//   queries: q_width×Qn, kv: kv_width×Kn  →  out_width×Qn
//
// Projections W_q/W_k/W_v map into a shared d_model (bias-free, matching the
// plain Q·W form of the attention equations); each of `heads` slices of size
// d_model/heads runs softmax(K_hᵀQ_h/√d_h) over keys per query column, the
// head outputs are concatenated along channels, and a biased output
// projection maps back to out_width.
class MultiheadAttention {
 public:
  MultiheadAttention() = default;
  // Throws ParameterError unless heads ≥ 1 and heads divides d_model.
  MultiheadAttention(ParamRegistry& reg, const std::string& name, int q_width,
                     int kv_width, int d_model, int heads, int out_width);

  // Throws ParameterError when kv has zero columns (nothing to attend over).
  ad::Tensor operator()(const ad::Tensor& queries, const ad::Tensor& kv) const;

  int heads() const { return heads_; }
  int d_model() const { return d_model_; }

 private:
  ad::Tensor wq_, wk_, wv_;
  Linear out_proj_;
  int d_model_ = 0;
  int heads_ = 0;
};

// Learnable query bank: C×Q parameter initialised N(0, 0.02), the usual
// DETR-style query init. Name-stable like every other parameter.
ad::Tensor& init_queries(ParamRegistry& reg, const std::string& name, int channels,
                         int query_count);

}  // namespace egosag
