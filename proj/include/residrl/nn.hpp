// Copyright 2026 The residrl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "residrl/rng.hpp"

namespace residrl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { kTanh, kRelu };

/// Network shape description. layer_sizes runs [input, hidden..., output];
/// the activation (and optional layer normalization, applied between the
/// linear map and the activation) acts on every layer except the last, which
/// stays linear. Everything is 64-bit floats; batches are stored one column
/// per sample.
struct MlpSpec {
  std::vector<int> layer_sizes;
  Activation activation = Activation::kTanh;
  bool layer_norm = false;
};

/// Multilayer perceptron over one flat parameter vector, with hand-derived
/// reverse-mode gradients. forward() caches the per-layer activations that
/// backward() consumes; backward() without a matching forward throws.
class Mlp {
 public:
  explicit Mlp(const MlpSpec& spec);

  const MlpSpec& spec() const { return spec_; }
  int in_dim() const { return spec_.layer_sizes.front(); }
  int out_dim() const { return spec_.layer_sizes.back(); }
  int num_params() const { return static_cast<int>(params_.size()); }

  VectorXd& params() { return params_; }
  const VectorXd& params() const { return params_; }
  VectorXd& grad() { return grad_; }
  const VectorXd& grad() const { return grad_; }
  void zero_grad() { grad_.setZero(); }

  /// Glorot-uniform (tanh) or He-normal (relu) weights, zero biases, unit
  /// layer-norm gains. Deterministic in the generator state.
  void init(Rng& rng);

  /// X is [in_dim x B]. Caches intermediates for backward.
  MatrixXd forward(const MatrixXd& x);
  /// Cache-free forward for evaluation and target networks.
  MatrixXd forward_nograd(const MatrixXd& x) const;

  /// dy is [out_dim x B], the loss gradient at the output of the preceding
  /// forward(). Returns the loss gradient at the input. Parameter gradients
  /// are accumulated into grad() unless accumulate_param_grads is false
  /// (used when a consumer only needs input gradients, e.g. an actor
  /// differentiating through a frozen critic).
  MatrixXd backward(const MatrixXd& dy, bool accumulate_param_grads = true);

 private:
  struct Offsets {
    int w, b, gamma, beta;
  };

  MlpSpec spec_;
  std::vector<Offsets> off_;
  VectorXd params_;
  VectorXd grad_;

  // Forward cache: layer inputs, pre-normalization values, normalized values,
  // and per-sample inverse std for layer norm.
  std::vector<MatrixXd> cache_in_;
  std::vector<MatrixXd> cache_lin_;
  std::vector<MatrixXd> cache_norm_;
  std::vector<Eigen::RowVectorXd> cache_inv_std_;
  int cached_batch_ = -1;
};

/// Adam with bias correction. Skips (and counts) updates whose gradient has
/// any non-finite entry instead of corrupting the parameters.
class Adam {
 public:
  Adam(int n, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step(VectorXd& params, const VectorXd& grad);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long steps() const { return t_; }
  long skipped() const { return skipped_; }

  VectorXd& m() { return m_; }
  VectorXd& v() { return v_; }
  void set_state(const VectorXd& m, const VectorXd& v, long t);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  long skipped_ = 0;
  VectorXd m_, v_;
};

/// Diagonal-Gaussian policy head over an MLP trunk. With state_dependent_std
/// the trunk emits [mean; log_std] stacked (2*act_dim rows); otherwise the
/// trunk emits the mean and log_std lives in a separate free parameter
/// vector. log_std is hard-clamped to [-5, 2] in both cases.
class GaussianPolicy {
 public:
  GaussianPolicy(const MlpSpec& trunk_spec, int act_dim,
                 bool state_dependent_std);

  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  Mlp& trunk() { return trunk_; }
  const Mlp& trunk() const { return trunk_; }
  int act_dim() const { return act_dim_; }
  bool state_dependent_std() const { return state_dep_; }

  VectorXd& free_log_std() { return free_log_std_; }
  const VectorXd& free_log_std() const { return free_log_std_; }
  VectorXd& free_log_std_grad() { return free_log_std_grad_; }
  void zero_grad();

  /// Total trainable parameter count (trunk plus the free log_std vector
  /// when the std is state-independent).
  int num_params() const;
  /// Trunk parameters followed by free_log_std (if any), as one vector.
  VectorXd params_flat() const;
  void set_params_flat(const VectorXd& p);
  VectorXd grad_flat() const;

  void init(Rng& rng);
  /// Zero the final trunk layer so the mean is identically zero for every
  /// observation, and bias the log_std outputs to `log_std_bias`. This is
  /// the residual warm start: the combined policy initially IS the base.
  void init_head_zero(double log_std_bias);

  struct Dist {
    MatrixXd mean;     // [act x B]
    MatrixXd log_std;  // [act x B], clamped
  };

  /// Caching forward (trainable path).
  Dist forward(const MatrixXd& obs);
  /// Cache-free forward for acting and evaluation.
  Dist forward_nograd(const MatrixXd& obs) const;

  /// Sum over dimensions of the diagonal-Gaussian log density.
  static VectorXd log_prob(const Dist& d, const MatrixXd& actions);
  /// Per-sample entropy of the diagonal Gaussian.
  static VectorXd entropy(const Dist& d);
  /// mean + std * eps with eps drawn per entry from rng.
  static MatrixXd sample(const Dist& d, Rng& rng);

  /// Backward through the head given gradients w.r.t. mean and log_std (the
  /// latter already ignoring clamped coordinates is handled here). Returns
  /// the gradient at the trunk input.
  MatrixXd backward(const MatrixXd& d_mean, const MatrixXd& d_log_std,
                    bool accumulate_param_grads = true);

 private:
  Mlp trunk_;
  int act_dim_;
  bool state_dep_;
  VectorXd free_log_std_;
  VectorXd free_log_std_grad_;
  // Mask of non-clamped log_std entries from the last caching forward.
  MatrixXd clamp_mask_;
};

/// Clipped double critic: E members sharing one spec, value = min over all
/// members. Members own disjoint parameter vectors.
class CriticEnsemble {
 public:
  CriticEnsemble(const MlpSpec& spec, int n_members);

  int size() const { return static_cast<int>(members_.size()); }
  Mlp& member(int i) { return members_[i]; }
  const Mlp& member(int i) const { return members_[i]; }

  void init(Rng& rng);
  void zero_grad();

  /// Row vector [1 x B] of element-wise minimum over members (cache-free).
  Eigen::RowVectorXd min_value(const MatrixXd& input) const;

  /// Copy parameters from src (same spec) with polyak factor tau:
  /// this = (1 - tau) * this + tau * src.
  void polyak_from(const CriticEnsemble& src, double tau);

 private:
  std::vector<Mlp> members_;
};

/// Two per-view MLPs mapping flattened 32x32 images to 64-dim features; the
/// concatenated 128-dim output is what policies and critics consume.
class ImageEncoder {
 public:
  ImageEncoder(int pixels, int hidden, int feature_dim);

  int feature_dim() const { return 2 * feat_; }
  Mlp& front() { return front_; }
  const Mlp& front() const { return front_; }
  Mlp& wrist() { return wrist_; }
  const Mlp& wrist() const { return wrist_; }

  void init(Rng& rng);
  void zero_grad();

  /// imgs are [pixels x B] each; result is [2*feature x B], front on top.
  MatrixXd forward(const MatrixXd& front_px, const MatrixXd& wrist_px);
  MatrixXd forward_nograd(const MatrixXd& front_px,
                          const MatrixXd& wrist_px) const;
  /// Backward through both views; image-space gradients are discarded.
  void backward(const MatrixXd& d_features);

 private:
  int feat_;
  Mlp front_;
  Mlp wrist_;
};

/// Max over probed coordinates of |analytic - central difference| /
/// (|analytic| + 1e-8), the standing gradient-check statistic. loss must be
/// a pure function of params.
double finite_diff_max_rel_err(const std::function<double(const VectorXd&)>& loss,
                               VectorXd& params, const VectorXd& analytic_grad,
                               double eps = 1e-6);

/// FNV-1a over the raw little-endian bytes of a parameter vector.
uint64_t fnv1a_hash(const VectorXd& v);
uint64_t fnv1a_combine(uint64_t h, const VectorXd& v);

}  // namespace residrl
