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

#include "residrl/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace residrl {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kLog2Pi = 1.8378770664093453;  // ln(2*pi)

using Eigen::Map;

}  // namespace

Mlp::Mlp(const MlpSpec& spec) : spec_(spec) {
  if (spec_.layer_sizes.size() < 2)
    throw std::invalid_argument("Mlp needs at least input and output sizes");
  for (int s : spec_.layer_sizes)
    if (s <= 0) throw std::invalid_argument("Mlp layer sizes must be positive");

  const int n_layers = static_cast<int>(spec_.layer_sizes.size()) - 1;
  int at = 0;
  off_.resize(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    const int fin = spec_.layer_sizes[l];
    const int fout = spec_.layer_sizes[l + 1];
    off_[l].w = at;
    at += fin * fout;
    off_[l].b = at;
    at += fout;
    const bool normed = spec_.layer_norm && l + 1 < n_layers;
    off_[l].gamma = normed ? at : -1;
    if (normed) at += fout;
    off_[l].beta = normed ? at : -1;
    if (normed) at += fout;
  }
  params_ = VectorXd::Zero(at);
  grad_ = VectorXd::Zero(at);
  cache_in_.resize(n_layers + 1);
  cache_lin_.resize(n_layers);
  cache_norm_.resize(n_layers);
  cache_inv_std_.resize(n_layers);
}

void Mlp::init(Rng& rng) {
  const int n_layers = static_cast<int>(off_.size());
  for (int l = 0; l < n_layers; ++l) {
    const int fin = spec_.layer_sizes[l];
    const int fout = spec_.layer_sizes[l + 1];
    double* w = params_.data() + off_[l].w;
    if (spec_.activation == Activation::kTanh) {
      const double a = std::sqrt(6.0 / (fin + fout));
      for (int k = 0; k < fin * fout; ++k) w[k] = rng.uniform(-a, a);
    } else {
      const double s = std::sqrt(2.0 / fin);
      for (int k = 0; k < fin * fout; ++k) w[k] = rng.normal(0.0, s);
    }
    params_.segment(off_[l].b, fout).setZero();
    if (off_[l].gamma >= 0) {
      params_.segment(off_[l].gamma, fout).setOnes();
      params_.segment(off_[l].beta, fout).setZero();
    }
  }
}

MatrixXd Mlp::forward(const MatrixXd& x) {
  if (x.rows() != in_dim()) throw std::invalid_argument("Mlp input dim mismatch");
  const int n_layers = static_cast<int>(off_.size());
  const auto B = x.cols();
  cached_batch_ = static_cast<int>(B);

  cache_in_[0] = x;
  for (int l = 0; l < n_layers; ++l) {
    const int fin = spec_.layer_sizes[l];
    const int fout = spec_.layer_sizes[l + 1];
    Map<const MatrixXd> w(params_.data() + off_[l].w, fout, fin);
    Map<const VectorXd> b(params_.data() + off_[l].b, fout);
    MatrixXd z = (w * cache_in_[l]).colwise() + b;
    cache_lin_[l] = z;

    const bool last = l + 1 == n_layers;
    if (last) {
      cache_in_[l + 1] = std::move(z);
      break;
    }
    MatrixXd pre = std::move(z);
    if (off_[l].gamma >= 0) {
      Map<const VectorXd> gamma(params_.data() + off_[l].gamma, fout);
      Map<const VectorXd> beta(params_.data() + off_[l].beta, fout);
      Eigen::RowVectorXd mu = pre.colwise().mean();
      MatrixXd centered = pre.rowwise() - mu;
      Eigen::RowVectorXd var = centered.array().square().colwise().mean();
      Eigen::RowVectorXd inv_std = (var.array() + kLnEps).rsqrt();
      MatrixXd norm = centered.array().rowwise() * inv_std.array();
      cache_norm_[l] = norm;
      cache_inv_std_[l] = inv_std;
      pre = ((norm.array().colwise() * gamma.array()).colwise() + beta.array()).matrix();
    }
    if (spec_.activation == Activation::kTanh)
      cache_in_[l + 1] = pre.array().tanh();
    else
      cache_in_[l + 1] = pre.array().max(0.0);
  }
  return cache_in_[n_layers];
}

MatrixXd Mlp::forward_nograd(const MatrixXd& x) const {
  if (x.rows() != in_dim()) throw std::invalid_argument("Mlp input dim mismatch");
  const int n_layers = static_cast<int>(off_.size());
  MatrixXd h = x;
  for (int l = 0; l < n_layers; ++l) {
    const int fin = spec_.layer_sizes[l];
    const int fout = spec_.layer_sizes[l + 1];
    Map<const MatrixXd> w(params_.data() + off_[l].w, fout, fin);
    Map<const VectorXd> b(params_.data() + off_[l].b, fout);
    MatrixXd z = (w * h).colwise() + b;
    if (l + 1 == n_layers) return z;
    if (off_[l].gamma >= 0) {
      Map<const VectorXd> gamma(params_.data() + off_[l].gamma, fout);
      Map<const VectorXd> beta(params_.data() + off_[l].beta, fout);
      Eigen::RowVectorXd mu = z.colwise().mean();
      MatrixXd centered = z.rowwise() - mu;
      Eigen::RowVectorXd var = centered.array().square().colwise().mean();
      Eigen::RowVectorXd inv_std = (var.array() + kLnEps).rsqrt();
      MatrixXd norm = centered.array().rowwise() * inv_std.array();
      z = ((norm.array().colwise() * gamma.array()).colwise() + beta.array()).matrix();
    }
    if (spec_.activation == Activation::kTanh)
      h = z.array().tanh();
    else
      h = z.array().max(0.0);
  }
  return h;
}

MatrixXd Mlp::backward(const MatrixXd& dy, bool accumulate_param_grads) {
  const int n_layers = static_cast<int>(off_.size());
  if (cached_batch_ < 0 || dy.cols() != cached_batch_ || dy.rows() != out_dim())
    throw std::logic_error("Mlp::backward without a matching forward");

  MatrixXd d = dy;
  for (int l = n_layers - 1; l >= 0; --l) {
    const int fin = spec_.layer_sizes[l];
    const int fout = spec_.layer_sizes[l + 1];
    const bool last = l + 1 == n_layers;

    if (!last) {
      // Through the activation, using the cached layer output.
      const MatrixXd& out = cache_in_[l + 1];
      if (spec_.activation == Activation::kTanh)
        d = d.array() * (1.0 - out.array().square());
      else
        d = d.array() * (out.array() > 0.0).cast<double>();

      if (off_[l].gamma >= 0) {
        Map<const VectorXd> gamma(params_.data() + off_[l].gamma, fout);
        const MatrixXd& norm = cache_norm_[l];
        if (accumulate_param_grads) {
          grad_.segment(off_[l].gamma, fout) +=
              (d.array() * norm.array()).rowwise().sum().matrix();
          grad_.segment(off_[l].beta, fout) += d.rowwise().sum();
        }
        MatrixXd dn = d.array().colwise() * gamma.array();
        Eigen::RowVectorXd mean_dn = dn.colwise().mean();
        Eigen::RowVectorXd mean_dn_norm = (dn.array() * norm.array()).colwise().mean();
        d = ((dn.rowwise() - mean_dn).array() -
             norm.array().rowwise() * mean_dn_norm.array())
                .rowwise() *
            cache_inv_std_[l].array();
      }
    }

    Map<const MatrixXd> w(params_.data() + off_[l].w, fout, fin);
    if (accumulate_param_grads) {
      Map<MatrixXd> dw(grad_.data() + off_[l].w, fout, fin);
      dw.noalias() += d * cache_in_[l].transpose();
      grad_.segment(off_[l].b, fout) += d.rowwise().sum();
    }
    d = w.transpose() * d;
  }
  return d;
}

Adam::Adam(int n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(VectorXd::Zero(n)), v_(VectorXd::Zero(n)) {}

void Adam::step(VectorXd& params, const VectorXd& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("Adam size mismatch");
  if (!grad.allFinite()) {
    ++skipped_;
    return;
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_.array() + (1.0 - beta2_) * grad.array().square();
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -=
      lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
}

void Adam::set_state(const VectorXd& m, const VectorXd& v, long t) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw std::invalid_argument("Adam state size mismatch");
  m_ = m;
  v_ = v;
  t_ = t;
}

GaussianPolicy::GaussianPolicy(const MlpSpec& trunk_spec, int act_dim,
                               bool state_dependent_std)
    : trunk_(trunk_spec), act_dim_(act_dim), state_dep_(state_dependent_std) {
  const int expected = state_dep_ ? 2 * act_dim : act_dim;
  if (trunk_.out_dim() != expected)
    throw std::invalid_argument("GaussianPolicy trunk output dim mismatch");
  if (!state_dep_) {
    free_log_std_ = VectorXd::Zero(act_dim);
    free_log_std_grad_ = VectorXd::Zero(act_dim);
  }
}

void GaussianPolicy::zero_grad() {
  trunk_.zero_grad();
  if (!state_dep_) free_log_std_grad_.setZero();
}

int GaussianPolicy::num_params() const {
  return trunk_.num_params() + (state_dep_ ? 0 : act_dim_);
}

VectorXd GaussianPolicy::params_flat() const {
  VectorXd p(num_params());
  p.head(trunk_.num_params()) = trunk_.params();
  if (!state_dep_) p.tail(act_dim_) = free_log_std_;
  return p;
}

void GaussianPolicy::set_params_flat(const VectorXd& p) {
  if (p.size() != num_params()) {
    throw std::invalid_argument("GaussianPolicy::set_params_flat: size mismatch");
  }
  trunk_.params() = p.head(trunk_.num_params());
  if (!state_dep_) free_log_std_ = p.tail(act_dim_);
}

VectorXd GaussianPolicy::grad_flat() const {
  VectorXd g(num_params());
  g.head(trunk_.num_params()) = trunk_.grad();
  if (!state_dep_) g.tail(act_dim_) = free_log_std_grad_;
  return g;
}

void GaussianPolicy::init(Rng& rng) { trunk_.init(rng); }

void GaussianPolicy::init_head_zero(double log_std_bias) {
  // The last layer's parameters sit at the tail of the flat vector:
  // [W_last (fout x fin), b_last (fout)].
  const auto& sizes = trunk_.spec().layer_sizes;
  const int fin = sizes[sizes.size() - 2];
  const int fout = sizes.back();
  const int tail = fin * fout + fout;
  trunk_.params().tail(tail).setZero();
  if (state_dep_) {
    // Bias rows [act, 2*act) are the log_std outputs.
    trunk_.params().tail(fout).segment(act_dim_, act_dim_).setConstant(log_std_bias);
  } else {
    free_log_std_.setConstant(log_std_bias);
  }
}

GaussianPolicy::Dist GaussianPolicy::forward(const MatrixXd& obs) {
  MatrixXd out = trunk_.forward(obs);
  Dist d;
  if (state_dep_) {
    d.mean = out.topRows(act_dim_);
    MatrixXd raw = out.bottomRows(act_dim_);
    clamp_mask_ = ((raw.array() > kLogStdMin) && (raw.array() < kLogStdMax))
                      .cast<double>();
    d.log_std = raw.array().max(kLogStdMin).min(kLogStdMax);
  } else {
    d.mean = out;
    VectorXd clamped =
        free_log_std_.array().max(kLogStdMin).min(kLogStdMax);
    clamp_mask_ = ((free_log_std_.array() > kLogStdMin) &&
                   (free_log_std_.array() < kLogStdMax))
                      .cast<double>()
                      .matrix();
    d.log_std = clamped.replicate(1, obs.cols());
  }
  return d;
}

GaussianPolicy::Dist GaussianPolicy::forward_nograd(const MatrixXd& obs) const {
  MatrixXd out = trunk_.forward_nograd(obs);
  Dist d;
  if (state_dep_) {
    d.mean = out.topRows(act_dim_);
    d.log_std =
        out.bottomRows(act_dim_).array().max(kLogStdMin).min(kLogStdMax);
  } else {
    d.mean = out;
    VectorXd clamped =
        free_log_std_.array().max(kLogStdMin).min(kLogStdMax);
    d.log_std = clamped.replicate(1, obs.cols());
  }
  return d;
}

VectorXd GaussianPolicy::log_prob(const Dist& d, const MatrixXd& actions) {
  MatrixXd z = (actions - d.mean).array() * (-d.log_std).array().exp();
  VectorXd lp = (-0.5 * z.array().square()).colwise().sum();
  lp -= d.log_std.colwise().sum().transpose();
  lp.array() -= 0.5 * kLog2Pi * static_cast<double>(d.mean.rows());
  return lp;
}

VectorXd GaussianPolicy::entropy(const Dist& d) {
  VectorXd h = d.log_std.colwise().sum().transpose();
  h.array() += 0.5 * (1.0 + kLog2Pi) * static_cast<double>(d.mean.rows());
  return h;
}

MatrixXd GaussianPolicy::sample(const Dist& d, Rng& rng) {
  MatrixXd eps(d.mean.rows(), d.mean.cols());
  for (Eigen::Index b = 0; b < eps.cols(); ++b)
    for (Eigen::Index i = 0; i < eps.rows(); ++i) eps(i, b) = rng.normal();
  return d.mean.array() + d.log_std.array().exp() * eps.array();
}

MatrixXd GaussianPolicy::backward(const MatrixXd& d_mean,
                                  const MatrixXd& d_log_std,
                                  bool accumulate_param_grads) {
  if (state_dep_) {
    MatrixXd dy(2 * act_dim_, d_mean.cols());
    dy.topRows(act_dim_) = d_mean;
    dy.bottomRows(act_dim_) = d_log_std.array() * clamp_mask_.array();
    return trunk_.backward(dy, accumulate_param_grads);
  }
  if (accumulate_param_grads)
    free_log_std_grad_.array() +=
        d_log_std.rowwise().sum().array() * clamp_mask_.col(0).array();
  return trunk_.backward(d_mean, accumulate_param_grads);
}

CriticEnsemble::CriticEnsemble(const MlpSpec& spec, int n_members) {
  if (n_members < 2)
    throw std::invalid_argument("CriticEnsemble needs at least 2 members");
  if (spec.layer_sizes.back() != 1)
    throw std::invalid_argument("critic output must be scalar");
  members_.reserve(n_members);
  for (int i = 0; i < n_members; ++i) members_.emplace_back(spec);
}

void CriticEnsemble::init(Rng& rng) {
  for (auto& m : members_) m.init(rng);
}

void CriticEnsemble::zero_grad() {
  for (auto& m : members_) m.zero_grad();
}

Eigen::RowVectorXd CriticEnsemble::min_value(const MatrixXd& input) const {
  Eigen::RowVectorXd best = members_[0].forward_nograd(input).row(0);
  for (size_t i = 1; i < members_.size(); ++i)
    best = best.cwiseMin(members_[i].forward_nograd(input).row(0));
  return best;
}

void CriticEnsemble::polyak_from(const CriticEnsemble& src, double tau) {
  if (src.members_.size() != members_.size())
    throw std::invalid_argument("polyak ensemble size mismatch");
  for (size_t i = 0; i < members_.size(); ++i)
    members_[i].params() =
        (1.0 - tau) * members_[i].params() + tau * src.members_[i].params();
}

ImageEncoder::ImageEncoder(int pixels, int hidden, int feature_dim)
    : feat_(feature_dim),
      front_(MlpSpec{{pixels, hidden, feature_dim}, Activation::kRelu, false}),
      wrist_(MlpSpec{{pixels, hidden, feature_dim}, Activation::kRelu, false}) {}

void ImageEncoder::init(Rng& rng) {
  front_.init(rng);
  wrist_.init(rng);
}

void ImageEncoder::zero_grad() {
  front_.zero_grad();
  wrist_.zero_grad();
}

MatrixXd ImageEncoder::forward(const MatrixXd& front_px,
                               const MatrixXd& wrist_px) {
  MatrixXd out(2 * feat_, front_px.cols());
  out.topRows(feat_) = front_.forward(front_px);
  out.bottomRows(feat_) = wrist_.forward(wrist_px);
  return out;
}

MatrixXd ImageEncoder::forward_nograd(const MatrixXd& front_px,
                                      const MatrixXd& wrist_px) const {
  MatrixXd out(2 * feat_, front_px.cols());
  out.topRows(feat_) = front_.forward_nograd(front_px);
  out.bottomRows(feat_) = wrist_.forward_nograd(wrist_px);
  return out;
}

void ImageEncoder::backward(const MatrixXd& d_features) {
  front_.backward(d_features.topRows(feat_));
  wrist_.backward(d_features.bottomRows(feat_));
}

double finite_diff_max_rel_err(
    const std::function<double(const VectorXd&)>& loss, VectorXd& params,
    const VectorXd& analytic_grad, double eps) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    const double h = eps * std::max(1.0, std::abs(saved));
    params[i] = saved + h;
    const double up = loss(params);
    params[i] = saved - h;
    const double down = loss(params);
    params[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double rel =
        std::abs(analytic_grad[i] - fd) / (std::abs(analytic_grad[i]) + 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

uint64_t fnv1a_combine(uint64_t h, const VectorXd& v) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  const size_t n = static_cast<size_t>(v.size()) * sizeof(double);
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a_hash(const VectorXd& v) {
  return fnv1a_combine(14695981039346656037ull, v);
}

}  // namespace residrl
