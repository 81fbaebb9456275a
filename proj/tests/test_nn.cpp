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

#include <cmath>

#include "doctest.h"
#include "residrl/nn.hpp"

using namespace residrl;

TEST_CASE("single hidden tanh unit matches the hand computation") {
  Mlp net(MlpSpec{{1, 1, 1}, Activation::kTanh, false});
  // Layout: [W0, b0, W1, b1]
  net.params() << 0.5, 0.1, 2.0, -0.3;
  MatrixXd x(1, 1);
  x << 0.7;
  MatrixXd y = net.forward(x);
  CHECK(y(0, 0) == doctest::Approx(0.5437980105000157).epsilon(1e-14));
  CHECK(net.forward_nograd(x)(0, 0) == y(0, 0));
}

TEST_CASE("linear model squared loss gives the textbook gradient") {
  Mlp net(MlpSpec{{2, 1}, Activation::kTanh, false});
  net.params() << 0.3, -0.7, 0.2;  // w = (0.3, -0.7), b = 0.2
  MatrixXd x(2, 1);
  x << 1.5, -2.0;
  const double target = 1.0;
  MatrixXd pred = net.forward(x);
  const double p = pred(0, 0);  // 0.3*1.5 + (-0.7)*(-2.0) + 0.2 = 2.05
  CHECK(p == doctest::Approx(2.05).epsilon(1e-14));

  MatrixXd dy(1, 1);
  dy << 2.0 * (p - target);
  net.zero_grad();
  MatrixXd dx = net.backward(dy);
  // d/dw = 2 (pred - y) x, d/db = 2 (pred - y)
  CHECK(net.grad()[0] == doctest::Approx(2.0 * (p - target) * 1.5).epsilon(1e-14));
  CHECK(net.grad()[1] == doctest::Approx(2.0 * (p - target) * -2.0).epsilon(1e-14));
  CHECK(net.grad()[2] == doctest::Approx(2.0 * (p - target)).epsilon(1e-14));
  CHECK(dx(0, 0) == doctest::Approx(2.0 * (p - target) * 0.3).epsilon(1e-14));
}

TEST_CASE("constant loss yields zero gradient") {
  Rng rng(3);
  Mlp net(MlpSpec{{4, 8, 2}, Activation::kRelu, false});
  net.init(rng);
  MatrixXd x(4, 5);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  net.forward(x);
  net.zero_grad();
  net.backward(MatrixXd::Zero(2, 5));
  CHECK(net.grad().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward without forward is rejected") {
  Mlp net(MlpSpec{{2, 3, 1}, Activation::kTanh, false});
  CHECK_THROWS_AS(net.backward(MatrixXd::Zero(1, 4)), std::logic_error);
  Rng rng(1);
  net.init(rng);
  net.forward(MatrixXd::Zero(2, 3));
  // Stale batch size.
  CHECK_THROWS_AS(net.backward(MatrixXd::Zero(1, 4)), std::logic_error);
}

namespace {

// Scalar test loss: weighted sum of outputs plus a soft square, so gradients
// exercise both the linear and nonlinear parts of the output surface.
double probe_loss(Mlp& net, const MatrixXd& x, const MatrixXd& w) {
  MatrixXd y = net.forward_nograd(x);
  return (y.array() * w.array()).sum() + 0.1 * y.array().square().sum();
}

double gradcheck(const MlpSpec& spec, uint64_t seed) {
  Rng rng(seed);
  Mlp net(spec);
  net.init(rng);
  const int B = 7;
  MatrixXd x(spec.layer_sizes.front(), B);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-2, 2);
  MatrixXd w(spec.layer_sizes.back(), B);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);

  MatrixXd y = net.forward(x);
  net.zero_grad();
  net.backward(w + 0.2 * y);
  VectorXd analytic = net.grad();
  auto loss = [&](const VectorXd& p) {
    VectorXd saved = net.params();
    net.params() = p;
    double val = probe_loss(net, x, w);
    net.params() = saved;
    return val;
  };
  return finite_diff_max_rel_err(loss, net.params(), analytic);
}

}  // namespace

TEST_CASE("finite differences confirm every parameter gradient") {
  CHECK(gradcheck({{5, 16, 3}, Activation::kTanh, false}, 11) < 1e-4);
  CHECK(gradcheck({{5, 16, 3}, Activation::kRelu, false}, 12) < 1e-4);
  CHECK(gradcheck({{6, 12, 12, 2}, Activation::kRelu, true}, 13) < 1e-4);
  CHECK(gradcheck({{4, 10, 1}, Activation::kTanh, true}, 14) < 1e-4);
}

TEST_CASE("input gradients survive with parameter accumulation disabled") {
  Rng rng(21);
  Mlp net(MlpSpec{{3, 8, 1}, Activation::kRelu, false});
  net.init(rng);
  MatrixXd x(3, 4);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  net.forward(x);
  net.zero_grad();
  MatrixXd dx_with = net.backward(MatrixXd::Ones(1, 4), true);
  VectorXd g = net.grad();
  CHECK(g.cwiseAbs().maxCoeff() > 0.0);

  net.forward(x);
  net.zero_grad();
  MatrixXd dx_without = net.backward(MatrixXd::Ones(1, 4), false);
  CHECK(net.grad().cwiseAbs().maxCoeff() == 0.0);
  CHECK(dx_with == dx_without);
}

TEST_CASE("layer norm standardizes each sample before gain and shift") {
  Rng rng(31);
  Mlp net(MlpSpec{{6, 10, 10, 1}, Activation::kRelu, true});
  net.init(rng);
  // With unit gain and zero shift the hidden pre-activation of each sample
  // has near-zero mean; verify through a probe: scaling the input must not
  // change the normalized magnitude much, unlike an un-normalized net.
  MatrixXd x(6, 3);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  MatrixXd y1 = net.forward_nograd(x);
  MatrixXd y2 = net.forward_nograd(100.0 * x);
  CHECK(std::isfinite(y2.array().abs().maxCoeff()));
  CHECK(y2.array().abs().maxCoeff() < 50.0 * std::max(1.0, y1.array().abs().maxCoeff()));
}

TEST_CASE("gaussian log density worked values") {
  GaussianPolicy::Dist d;
  d.mean = MatrixXd::Zero(3, 1);
  d.log_std = MatrixXd::Zero(3, 1);  // std = 1
  MatrixXd at_mode = d.mean;
  VectorXd lp = GaussianPolicy::log_prob(d, at_mode);
  CHECK(lp[0] == doctest::Approx(-2.756815599614018).epsilon(1e-14));

  // Shift invariance: translate mean and action together.
  GaussianPolicy::Dist shifted = d;
  shifted.mean.array() += 3.7;
  MatrixXd action = at_mode.array() + 3.7;
  CHECK(GaussianPolicy::log_prob(shifted, action)[0] == doctest::Approx(lp[0]).epsilon(1e-14));

  // Doubling std at the mode costs 3 ln 2.
  GaussianPolicy::Dist wide = d;
  wide.log_std.array() += std::log(2.0);
  CHECK(lp[0] - GaussianPolicy::log_prob(wide, at_mode)[0] ==
        doctest::Approx(2.0794415416798357).epsilon(1e-12));
}

TEST_CASE("policy heads honor the log_std clamp") {
  GaussianPolicy pol(MlpSpec{{4, 8, 6}, Activation::kTanh, false}, 3, true);
  Rng rng(5);
  pol.init(rng);
  // Force the raw log_std outputs far out of range via the head bias.
  auto& p = pol.trunk().params();
  p.tail(6).segment(3, 3).setConstant(40.0);
  auto d = pol.forward_nograd(MatrixXd::Random(4, 9));
  CHECK(d.log_std.maxCoeff() == GaussianPolicy::kLogStdMax);
  p.tail(6).segment(3, 3).setConstant(-40.0);
  d = pol.forward_nograd(MatrixXd::Random(4, 9));
  CHECK(d.log_std.minCoeff() == GaussianPolicy::kLogStdMin);
}

TEST_CASE("zero-initialized head means zero mean for any input") {
  GaussianPolicy pol(MlpSpec{{7, 16, 16, 6}, Activation::kRelu, false}, 3, true);
  Rng rng(9);
  pol.init(rng);
  pol.init_head_zero(-1.0);
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd obs(7, 5);
    for (int i = 0; i < obs.size(); ++i) obs.data()[i] = rng.uniform(-50, 50);
    auto d = pol.forward_nograd(obs);
    CHECK(d.mean.cwiseAbs().maxCoeff() == 0.0);
    CHECK(d.log_std.minCoeff() == doctest::Approx(-1.0));
    CHECK(d.log_std.maxCoeff() == doctest::Approx(-1.0));
  }
}

TEST_CASE("state-independent std replicates the free parameter") {
  GaussianPolicy pol(MlpSpec{{4, 8, 3}, Activation::kTanh, false}, 3, false);
  Rng rng(13);
  pol.init(rng);
  pol.free_log_std() << -0.5, 0.0, 0.25;
  auto d = pol.forward_nograd(MatrixXd::Random(4, 6));
  for (int b = 0; b < 6; ++b) {
    CHECK(d.log_std(0, b) == -0.5);
    CHECK(d.log_std(2, b) == 0.25);
  }
}

TEST_CASE("sampling with a fixed seed is bit-for-bit reproducible") {
  GaussianPolicy::Dist d;
  d.mean = MatrixXd::Random(3, 8);
  d.log_std = MatrixXd::Constant(3, 8, -0.3);
  Rng a(99), b(99);
  MatrixXd s1 = GaussianPolicy::sample(d, a);
  MatrixXd s2 = GaussianPolicy::sample(d, b);
  CHECK(s1 == s2);
  MatrixXd s3 = GaussianPolicy::sample(d, a);
  CHECK(s1 != s3);
}

TEST_CASE("ensemble min is invariant to member ordering") {
  MlpSpec spec{{5, 12, 1}, Activation::kRelu, true};
  CriticEnsemble e1(spec, 2), e2(spec, 2);
  Rng rng(7);
  e1.init(rng);
  // e2 gets the same members in swapped order.
  e2.member(0).params() = e1.member(1).params();
  e2.member(1).params() = e1.member(0).params();
  MatrixXd in = MatrixXd::Random(5, 11);
  CHECK(e1.min_value(in) == e2.min_value(in));
  // And the min really is the element-wise minimum of the members.
  Eigen::RowVectorXd q0 = e1.member(0).forward_nograd(in).row(0);
  Eigen::RowVectorXd q1 = e1.member(1).forward_nograd(in).row(0);
  CHECK(e1.min_value(in) == q0.cwiseMin(q1));
}

TEST_CASE("polyak averaging moves targets toward the source") {
  MlpSpec spec{{3, 6, 1}, Activation::kRelu, false};
  CriticEnsemble online(spec, 2), target(spec, 2);
  Rng rng(17);
  online.init(rng);
  target.init(rng);
  VectorXd before = target.member(0).params();
  target.polyak_from(online, 0.25);
  VectorXd expect = 0.75 * before + 0.25 * online.member(0).params();
  CHECK((target.member(0).params() - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("optimizer worked values and non-finite skip") {
  VectorXd p(1), g(1);
  p << 1.0;
  g << 1.0;
  Adam opt(1, 1e-3);
  opt.step(p, g);
  CHECK(1.0 - p[0] == doctest::Approx(0.0009999999900000003).epsilon(1e-9));

  // A fresh optimizer with a zero gradient has zero moments and moves nothing.
  VectorXd frozen(1);
  frozen << 2.5;
  Adam fresh(1, 1e-3);
  VectorXd keep_fresh = frozen;
  fresh.step(frozen, VectorXd::Zero(1));
  CHECK(frozen == keep_fresh);
  // After a real step the first moment persists, so a zero gradient still
  // moves parameters (momentum), just by less than a full step.
  VectorXd before_coast = p;
  opt.step(p, VectorXd::Zero(1));
  CHECK(p[0] < before_coast[0]);

  // Repeated identical gradients: monotone movement against the gradient.
  VectorXd q(1);
  q << 0.5;
  Adam opt2(1, 1e-2);
  double prev = q[0];
  for (int i = 0; i < 50; ++i) {
    opt2.step(q, g);
    CHECK(q[0] < prev);
    prev = q[0];
  }

  // Non-finite gradients are skipped and counted.
  VectorXd bad(1);
  bad << std::nan("");
  VectorXd keep = q;
  opt2.step(q, bad);
  CHECK(q == keep);
  CHECK(opt2.skipped() == 1);
}

TEST_CASE("finite differences confirm the policy head gradients") {
  // Loss: mean over batch of log_prob of a fixed action batch. The backward
  // path must route d_log_std through the clamp mask and, for the
  // state-independent head, into the free parameter.
  for (bool state_dep : {true, false}) {
    GaussianPolicy pol(MlpSpec{{4, 10, state_dep ? 4 : 2}, Activation::kTanh, true}, 2,
                       state_dep);
    Rng rng(state_dep ? 41U : 43U);
    pol.init(rng);
    const int B = 6;
    MatrixXd obs(4, B), act(2, B);
    for (int i = 0; i < obs.size(); ++i) obs.data()[i] = rng.uniform(-1, 1);
    for (int i = 0; i < act.size(); ++i) act.data()[i] = rng.uniform(-2, 2);

    auto d = pol.forward(obs);
    // d log N / d mean = z / std, d log N / d log_std = z^2 - 1, z = (a-mu)/std.
    MatrixXd std = d.log_std.array().exp();
    MatrixXd z = (act - d.mean).array() / std.array();
    MatrixXd d_mean = (z.array() / std.array()) / B;
    MatrixXd d_log_std = (z.array().square() - 1.0) / B;
    pol.zero_grad();
    pol.backward(d_mean, d_log_std);

    VectorXd analytic(pol.trunk().num_params() + (state_dep ? 0 : 2));
    analytic.head(pol.trunk().num_params()) = pol.trunk().grad();
    if (!state_dep) analytic.tail(2) = pol.free_log_std_grad();

    auto loss = [&](const VectorXd& p) {
      VectorXd saved_t = pol.trunk().params();
      VectorXd saved_f = state_dep ? VectorXd() : VectorXd(pol.free_log_std());
      pol.trunk().params() = p.head(pol.trunk().num_params());
      if (!state_dep) pol.free_log_std() = p.tail(2);
      double val = GaussianPolicy::log_prob(pol.forward_nograd(obs), act).mean();
      pol.trunk().params() = saved_t;
      if (!state_dep) pol.free_log_std() = saved_f;
      return val;
    };
    VectorXd packed(analytic.size());
    packed.head(pol.trunk().num_params()) = pol.trunk().params();
    if (!state_dep) packed.tail(2) = pol.free_log_std();
    CHECK(finite_diff_max_rel_err(loss, packed, analytic) < 1e-4);
  }
}

TEST_CASE("policy entropy matches the closed form") {
  GaussianPolicy::Dist d;
  d.mean = MatrixXd::Zero(2, 3);
  d.log_std = MatrixXd::Zero(2, 3);
  VectorXd h = GaussianPolicy::entropy(d);
  // Per dim: 0.5 (1 + ln 2 pi), two dims.
  const double expect = 1.0 + std::log(2.0 * M_PI);
  CHECK(h[0] == doctest::Approx(expect).epsilon(1e-14));
  d.log_std.array() += 0.7;
  CHECK(GaussianPolicy::entropy(d)[1] == doctest::Approx(expect + 1.4).epsilon(1e-12));
}

TEST_CASE("image encoder concatenates per-view features") {
  ImageEncoder enc(16, 8, 4);
  Rng rng(23);
  enc.init(rng);
  MatrixXd f = MatrixXd::Random(16, 3), w = MatrixXd::Random(16, 3);
  MatrixXd feat = enc.forward(f, w);
  REQUIRE(feat.rows() == 8);
  CHECK(feat.topRows(4) == enc.front().forward_nograd(f));
  CHECK(feat.bottomRows(4) == enc.wrist().forward_nograd(w));
  enc.zero_grad();
  enc.backward(MatrixXd::Ones(8, 3));
  CHECK(enc.front().grad().cwiseAbs().maxCoeff() > 0.0);
  CHECK(enc.wrist().grad().cwiseAbs().maxCoeff() > 0.0);
}
