#include <doctest.h>

#include <cmath>

#include "disncl/autodiff.hpp"
#include "disncl/nn.hpp"
#include "disncl/rng.hpp"
#include "fd_check.hpp"

using namespace disncl;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(long r, long c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (long i = 0; i < r; ++i) {
    for (long j = 0; j < c; ++j) m(i, j) = rng.normal() * scale;
  }
  return m;
}

}  // namespace

TEST_CASE("scalar values and basic arithmetic") {
  Tape t;
  Var a = t.input(Mat::Constant(2, 3, 2.0), true);
  Var b = t.input(Mat::Constant(2, 3, 5.0), true);
  Var s = ad::sum(a * b + 2.0 * a - b);
  CHECK(s.scalar() == doctest::Approx(6 * (10.0 + 4.0 - 5.0)));
  t.backward(s);
  CHECK(a.grad()(0, 0) == doctest::Approx(5.0 + 2.0));
  CHECK(b.grad()(1, 2) == doctest::Approx(2.0 - 1.0));
}

TEST_CASE("gradient accumulates when a node is reused") {
  Tape t;
  Var a = t.input(Mat::Constant(1, 1, 3.0), true);
  Var y = a * a;  // dy/da = 2a = 6
  t.backward(y);
  CHECK(a.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("every op matches central finite differences") {
  Rng rng(42);
  const double tol = 1e-6;

  SUBCASE("matmul + bias + activations") {
    auto build = [](Tape&, const std::vector<Var>& v) {
      Var h = ad::add_row_broadcast(ad::matmul(v[0], v[1]), v[2]);
      Var s = ad::tanh_op(h) + ad::relu(h) + ad::leaky_relu(h, 0.2) + ad::sigmoid(h);
      return ad::mean(s * s);
    };
    auto res = fdcheck::compare_gradients(
        build, {random_mat(4, 3, rng), random_mat(3, 5, rng), random_mat(1, 5, rng)});
    CHECK(res.max_rel_err < tol);
  }

  SUBCASE("log exp clamp") {
    auto build = [](Tape&, const std::vector<Var>& v) {
      Var p = ad::sigmoid(v[0]);
      Var c = ad::clamp(p, 0.2, 0.8);
      return ad::sum(ad::log_op(c)) + ad::mean(ad::exp_op(0.3 * v[0]));
    };
    auto res = fdcheck::compare_gradients(build, {random_mat(5, 4, rng)});
    CHECK(res.max_rel_err < tol);
  }

  SUBCASE("rows gather concat transpose") {
    auto build = [](Tape&, const std::vector<Var>& v) {
      Var g = ad::rows(v[0], {2, 0, 2, 1});
      Var e = ad::gather(v[0], {{0, 1}, {2, 2}, {0, 1}});
      Var cc = ad::concat_cols(g, ad::rows(ad::transpose(v[0]), {0, 1, 2, 0}));
      return ad::sum(cc * cc) + ad::sum(e * e);
    };
    auto res = fdcheck::compare_gradients(build, {random_mat(3, 3, rng)});
    CHECK(res.max_rel_err < tol);
  }

  SUBCASE("softmax rows") {
    auto build = [](Tape& t, const std::vector<Var>& v) {
      Var p = ad::softmax_rows(v[0]);
      Var w = t.constant(Mat::Constant(4, 6, 0.7));
      return ad::sum(w * ad::log_op(ad::clamp(p, 1e-12, 1.0)));
    };
    auto res = fdcheck::compare_gradients(build, {random_mat(4, 6, rng, 2.0)});
    CHECK(res.max_rel_err < tol);
  }

  SUBCASE("row l2 normalization") {
    auto build = [](Tape&, const std::vector<Var>& v) {
      Var h = ad::matmul(ad::l2_normalize_rows(v[0]), ad::transpose(ad::l2_normalize_rows(v[1])));
      return ad::mean(h * h * h);
    };
    auto res = fdcheck::compare_gradients(build, {random_mat(4, 5, rng), random_mat(4, 5, rng)});
    CHECK(res.max_rel_err < tol);
  }

  SUBCASE("mlp forward") {
    nn::ParamSet ps;
    Rng init(7);
    nn::add_mlp(ps, "net", {{4, 8, 8, 2}, nn::Activation::LeakyRelu, 0.2}, init);
    const nn::MlpRef ref = nn::mlp_ref(ps, "net", {{4, 8, 8, 2}, nn::Activation::LeakyRelu, 0.2});
    std::vector<Mat> leaves;
    for (const auto& p : ps.items) leaves.push_back(p.value.cast<double>());
    leaves.push_back(random_mat(6, 4, rng));
    auto build = [&](Tape& t, const std::vector<Var>& v) {
      nn::BoundParams bound;
      for (std::size_t i = 0; i + 1 < v.size(); ++i) bound.vars.push_back(v[i]);
      return ad::mean(ad::tanh_op(nn::mlp_forward(t, bound, ref, v.back())));
    };
    auto res = fdcheck::compare_gradients(build, leaves);
    CHECK(res.max_rel_err < tol);
  }
}

TEST_CASE("softmax rows sum to one and are stable for large logits") {
  Tape t;
  Mat big(2, 3);
  big << 1000.0, 1001.0, 999.0, -1000.0, -1000.0, -1000.0;
  Var p = ad::softmax_rows(t.input(big, false));
  for (long r = 0; r < 2; ++r) {
    CHECK(p.value().row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(std::isfinite(p.value().maxCoeff()));
  CHECK(p.value()(1, 0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("l2_normalize_rows passes zero rows through") {
  Tape t;
  Mat x = Mat::Zero(2, 3);
  x(1, 0) = 3.0;
  x(1, 1) = 4.0;
  Var y = ad::l2_normalize_rows(t.input(x, true));
  CHECK(y.value().row(0).norm() == 0.0);
  CHECK(y.value()(1, 0) == doctest::Approx(0.6));
  CHECK(y.value()(1, 1) == doctest::Approx(0.8));
  t.backward(ad::sum(y));
}

TEST_CASE("backward from a constant root is a legal no-op") {
  Tape t;
  Var a = t.input(Mat::Constant(2, 2, 1.0), true);
  Var c = t.scalar_constant(0.0);
  t.backward(c);
  CHECK((a.grad().size() == 0 || a.grad().norm() == 0.0));
}

TEST_CASE("backward rejects non-scalar roots and foreign tapes") {
  Tape t;
  Var a = t.input(Mat::Zero(2, 2), true);
  CHECK_THROWS_AS(t.backward(a), std::logic_error);
  Tape t2;
  Var b = t2.input(Mat::Zero(2, 2), true);
  CHECK_THROWS_AS(ad::add(a, b), std::logic_error);
}

TEST_CASE("adam descends a quadratic and quantizes state to f32") {
  nn::ParamSet ps;
  nn::MatF w(1, 1);
  w(0, 0) = 4.0f;
  ps.items.push_back({"w", w});
  nn::Adam adam(ps);
  nn::AdamConfig cfg;
  cfg.lr = 0.1;
  for (int i = 0; i < 200; ++i) {
    const double x = static_cast<double>(ps.items[0].value(0, 0));
    std::vector<Mat> grads{Mat::Constant(1, 1, 2.0 * x)};
    adam.step(ps, grads, cfg, -1.0);
  }
  CHECK(std::abs(ps.items[0].value(0, 0)) < 1e-2);
  // float32-canonical storage: value equals its own f32 round-trip.
  const float stored = ps.items[0].value(0, 0);
  CHECK(static_cast<float>(static_cast<double>(stored)) == stored);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  nn::ParamSet ps;
  ps.items.push_back({"w", nn::MatF::Constant(2, 2, 1.5f)});
  nn::Adam adam(ps);
  nn::AdamConfig cfg;
  cfg.lr = 0.0;
  adam.step(ps, {Mat::Constant(2, 2, 3.0)}, cfg, -1.0);
  CHECK(ps.items[0].value == nn::MatF::Constant(2, 2, 1.5f));
}
