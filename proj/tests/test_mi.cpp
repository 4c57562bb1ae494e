#include <doctest.h>

#include <cmath>

#include "disncl/common.hpp"
#include "disncl/encoders.hpp"
#include "disncl/mi.hpp"
#include "disncl/nn.hpp"
#include "disncl/rng.hpp"
#include "disncl/synthetic.hpp"
#include "fd_check.hpp"

using namespace disncl;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(long r, long c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (long i = 0; i < r; ++i) {
    for (long j = 0; j < c; ++j) m(i, j) = rng.normal();
  }
  return m;
}

Discriminator constant_half_disc(int da, int db) {
  Discriminator d(da, db, 8, 0.2, 0);
  for (auto& p : d.params().items) p.value.setZero();
  return d;  // zero logits -> sigmoid 0.5 everywhere
}

// Correlated scalar pairs (x, y) with corr rho; exact MI = -ln(1-rho^2)/2.
void gaussian_pairs(double rho, long n, std::uint64_t seed, Mat& a, Mat& b) {
  Rng rng(seed);
  a.resize(n, 1);
  b.resize(n, 1);
  for (long i = 0; i < n; ++i) {
    const double x = rng.normal();
    a(i, 0) = x;
    b(i, 0) = rho * x + std::sqrt(1.0 - rho * rho) * rng.normal();
  }
}

}  // namespace

TEST_CASE("jsd_mi with a constant-0.5 discriminator equals 2 ln 0.5") {
  const Discriminator disc = constant_half_disc(3, 3);
  Tape tape;
  const auto bound = disc.bind(tape, false);
  Rng rng(1);
  Var v = jsd_mi(disc, tape, bound, tape.constant(random_mat(8, 3, 5)),
                 tape.constant(random_mat(8, 3, 6)), marginal_derangement(rng, 8));
  CHECK(v.scalar() == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("a hand-built perfect discriminator drives jsd_mi to the clamped supremum") {
  // Scores depend on |a - b|: equal pair -> logit c1 (saturated high),
  // deranged pair -> logit c1 - c2 (saturated low). Output hits the clamp.
  Discriminator disc(1, 1, 2, 0.2, 0);
  auto& ps = disc.params();
  ps.at("disc.W0").value << 1.0f, -1.0f, -1.0f, 1.0f;      // h = [a-b, b-a]
  ps.at("disc.b0").value.setZero();
  ps.at("disc.W1").value << 1.0f, 1.0f, 1.0f, 1.0f;        // h2 ~ |a-b| (leaky mix)
  ps.at("disc.b1").value.setZero();
  ps.at("disc.W2").value << -200.0f, -200.0f;
  ps.at("disc.b2").value << 60.0f;

  Mat a(4, 1), b(4, 1);
  a << 0.0, 1.0, 0.0, 1.0;
  b = a;  // joint pairs identical; any derangement mismatches at least half
  Tape tape;
  const auto bound = disc.bind(tape, false);
  std::vector<int> perm = {1, 0, 3, 2};  // swaps: |a-b'| = 1 on every row
  Var v = jsd_mi(disc, tape, bound, tape.constant(a), tape.constant(b), perm);
  CHECK(v.scalar() == doctest::Approx(2.0 * std::log(1.0 - 1e-6)).epsilon(1e-9));
  CHECK(v.scalar() < 0.0);
  CHECK(v.scalar() > -3e-6);
}

TEST_CASE("jsd_mi is nonpositive for any discriminator") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Discriminator disc(4, 4, 8, 0.2, seed);
    Tape tape;
    const auto bound = disc.bind(tape, false);
    Rng rng(seed + 100);
    Var v = jsd_mi(disc, tape, bound, tape.constant(random_mat(12, 4, seed)),
                   tape.constant(random_mat(12, 4, seed + 50)), marginal_derangement(rng, 12));
    CHECK(v.scalar() <= 0.0);
  }
}

TEST_CASE("jsd_mi rejects batches that cannot form marginal pairs") {
  Discriminator disc(2, 2, 4, 0.2, 0);
  Tape tape;
  const auto bound = disc.bind(tape, false);
  Rng rng(0);
  CHECK_THROWS_AS(jsd_mi(disc, tape, bound, tape.constant(random_mat(1, 2, 1)),
                         tape.constant(random_mat(1, 2, 2)), {0}),
                  SizeError);
  CHECK_THROWS_AS(marginal_derangement(rng, 1), SizeError);
}

TEST_CASE("trained jsd discriminator recovers ln 2 on matched one-hot codes") {
  // Joint: a = b = one-hot of a fair binary symbol. Exact MI = ln 2, from
  // the discrete oracle on the matching world.
  DiscreteWorld w;
  w.nv = w.nt = 2;
  w.nf = 2;
  w.joint.assign(8, 0.0);
  w.factorized = true;
  w.p(0, 0, 0) = 0.5;
  w.p(1, 1, 1) = 0.5;
  w.validate();
  const double exact = exact_mi(w, MITerm::I_VF);
  CHECK(exact == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const long n = 512;
  Mat a(n, 2);
  Rng rng(9);
  for (long i = 0; i < n; ++i) {
    const int s = static_cast<int>(rng.index(2));
    a(i, 0) = s == 0 ? 1.0 : 0.0;
    a(i, 1) = s == 1 ? 1.0 : 0.0;
  }
  Mat b = a;

  Discriminator disc(2, 2, 16, 0.2, 4);
  nn::Adam adam(disc.params());
  nn::AdamConfig cfg;
  cfg.lr = 5e-3;
  for (int step = 0; step < 400; ++step) {
    Tape tape;
    const auto bound = disc.bind(tape, true);
    Var obj = jsd_mi(disc, tape, bound, tape.constant(a), tape.constant(b),
                     marginal_derangement(rng, n));
    tape.backward(obj);
    adam.step(disc.params(), nn::collect_grads(disc.params(), bound), cfg, +1.0);
  }
  const double readout = jsd_mi_readout(disc, a, b);
  CHECK(readout == doctest::Approx(exact).epsilon(0.15));
  CHECK(std::abs(readout - exact) < 0.1);
}

TEST_CASE("adversarial penalty with a constant discriminator has zero encoder gradient") {
  const Discriminator disc = constant_half_disc(2, 2);
  Tape tape;
  const auto bound = disc.bind(tape, false);
  Var a = tape.input(random_mat(6, 2, 3), true);
  Var b = tape.input(random_mat(6, 2, 4), true);
  Rng rng(5);
  const AdversarialPenalty p =
      adversarial_mi_penalty(disc, tape, bound, a, b, marginal_derangement(rng, 6));
  CHECK(p.disc_objective.scalar() == doctest::Approx(2.0 * std::log(0.5)));
  CHECK(p.encoder_penalty.scalar() == doctest::Approx(2.0 * std::log(0.5)));
  tape.backward(p.encoder_penalty);
  CHECK(a.grad().norm() == 0.0);
  CHECK(b.grad().norm() == 0.0);
}

TEST_CASE("independent codes keep a trained adversarial discriminator near 2 ln 0.5") {
  const long n = 1024;
  Mat a = random_mat(n, 2, 11);
  Mat b = random_mat(n, 2, 12);
  Discriminator disc(2, 2, 16, 0.2, 7);
  nn::Adam adam(disc.params());
  nn::AdamConfig cfg;
  cfg.lr = 2e-3;
  Rng rng(13);
  double obj = 0.0;
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    const auto bound = disc.bind(tape, true);
    Var v = jsd_mi(disc, tape, bound, tape.constant(a), tape.constant(b),
                   marginal_derangement(rng, n));
    obj = v.scalar();
    tape.backward(v);
    adam.step(disc.params(), nn::collect_grads(disc.params(), bound), cfg, +1.0);
  }
  // Bayes-optimal output under independence is 0.5.
  CHECK(obj == doctest::Approx(2.0 * std::log(0.5)).epsilon(0.08));
}

TEST_CASE("kl_gaussian_bound") {
  SUBCASE("zero for equal means, closed form otherwise") {
    Mat mu = random_mat(5, 3, 21);
    Tape tape;
    CHECK(kl_gaussian_bound(tape.constant(mu), tape.constant(mu)).scalar() == 0.0);
    Mat d = Mat::Zero(5, 3);
    d.col(0).setOnes();  // per-row delta [1, 0, 0]
    CHECK(kl_gaussian_bound(tape.constant(mu + d), tape.constant(mu)).scalar() ==
          doctest::Approx(0.5).epsilon(1e-6));
    // Doubling the delta quadruples the bound.
    CHECK(kl_gaussian_bound(tape.constant(mu + 2.0 * d), tape.constant(mu)).scalar() ==
          doctest::Approx(2.0).epsilon(1e-9));
  }

  SUBCASE("nonnegative, zero iff equal") {
    for (int trial = 0; trial < 30; ++trial) {
      const Mat a = random_mat(4, 6, 100 + trial);
      const Mat b = random_mat(4, 6, 200 + trial);
      CHECK(kl_gaussian_bound_eval(a, b) >= 0.0);
      if (!a.isApprox(b)) CHECK(kl_gaussian_bound_eval(a, b) > 0.0);
    }
  }

  SUBCASE("shape mismatch rejected") {
    Tape tape;
    CHECK_THROWS_AS(
        kl_gaussian_bound(tape.constant(Mat::Zero(3, 2)), tape.constant(Mat::Zero(2, 3))),
        SizeError);
  }

  SUBCASE("gradient matches finite differences") {
    auto build = [](Tape&, const std::vector<Var>& v) {
      return kl_gaussian_bound(v[0], v[1]);
    };
    auto res = fdcheck::compare_gradients(build, {random_mat(4, 3, 31), random_mat(4, 3, 32)});
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("MINE sanity") {
  SUBCASE("independent standard normals estimate below 0.05 nats") {
    Mat a = random_mat(2000, 1, 41);
    Mat b = random_mat(2000, 1, 42);
    StatisticNet net(1, 1, 32, 3);
    MineOptions opts;
    opts.seed = 7;
    const MIEstimate est = mine_estimate(net, a, b, 300, opts);
    CHECK_FALSE(est.failed);
    CHECK(est.value < 0.05);
  }

  SUBCASE("rho = 0.8 bivariate gaussian within 0.1 of the closed form") {
    Mat a, b;
    gaussian_pairs(0.8, 4000, 43, a, b);
    StatisticNet net(1, 1, 64, 5);
    MineOptions opts;
    opts.seed = 11;
    const MIEstimate est = mine_estimate(net, a, b, 500, opts);
    const double exact = -0.5 * std::log(1.0 - 0.8 * 0.8);
    CHECK_FALSE(est.failed);
    CHECK(std::abs(est.value - exact) < 0.1);
  }

  SUBCASE("identical 4-symbol uniform codes within 0.1 of ln 4") {
    const long n = 4000;
    Mat a(n, 4);
    a.setZero();
    Rng rng(17);
    for (long i = 0; i < n; ++i) a(i, static_cast<long>(rng.index(4))) = 1.0;
    Mat b = a;
    StatisticNet net(4, 4, 64, 9);
    MineOptions opts;
    opts.seed = 19;
    const MIEstimate est = mine_estimate(net, a, b, 500, opts);
    CHECK_FALSE(est.failed);
    CHECK(std::abs(est.value - std::log(4.0)) < 0.1);
  }

  SUBCASE("too few samples violate the stability precondition") {
    StatisticNet net(1, 1, 8, 1);
    Mat a = random_mat(100, 1, 51), b = random_mat(100, 1, 52);
    CHECK_THROWS_AS(mine_estimate(net, a, b, 10), RangeError);
  }
}

TEST_CASE("adversarial minimization strips a rho=0.9 dependence") {
  // Trainable bounded map adversarially matched against y; residual
  // dependence measured by MINE against the -ln(1-rho^2)/2 = 0.83 start.
  Mat x, y;
  gaussian_pairs(0.9, 1000, 61, x, y);
  const double initial_mi = -0.5 * std::log(1.0 - 0.81);
  CHECK(initial_mi == doctest::Approx(0.8304).epsilon(1e-3));

  {
    StatisticNet probe(1, 1, 64, 23);
    MineOptions opts;
    opts.seed = 29;
    const MIEstimate before = mine_estimate(probe, x, y, 400, opts);
    CHECK_FALSE(before.failed);
    CHECK(std::abs(before.value - initial_mi) < 0.15);
  }

  nn::ParamSet enc;
  Rng init(31);
  const nn::MlpSpec enc_spec{{1, 8, 1}, nn::Activation::LeakyRelu, 0.2};
  nn::add_mlp(enc, "enc", enc_spec, init);
  const nn::MlpRef enc_ref = nn::mlp_ref(enc, "enc", enc_spec);
  Discriminator disc(1, 1, 64, 0.2, 37);
  nn::Adam adam_enc(enc);
  nn::Adam adam_disc(disc.params());
  nn::AdamConfig cfg_enc, cfg_disc;
  cfg_enc.lr = 5e-3;
  cfg_disc.lr = 5e-3;

  const int steps = 800;
  Rng rng(41);
  for (int step = 0; step < steps; ++step) {
    if (step == steps / 2) {  // settle the min-max oscillation
      cfg_enc.lr *= 0.1;
      cfg_disc.lr *= 0.1;
    }
    {
      Tape tape;
      const auto denc = nn::bind(tape, enc, false);
      const auto dbound = disc.bind(tape, true);
      Var codes = ad::tanh_op(nn::mlp_forward(tape, denc, enc_ref, tape.constant(x)));
      Var obj = jsd_mi(disc, tape, dbound, codes, tape.constant(y),
                       marginal_derangement(rng, x.rows()));
      tape.backward(obj);
      adam_disc.step(disc.params(), nn::collect_grads(disc.params(), dbound), cfg_disc, +1.0);
    }
    {
      Tape tape;
      const auto denc = nn::bind(tape, enc, true);
      const auto dbound = disc.bind(tape, false);
      Var codes = ad::tanh_op(nn::mlp_forward(tape, denc, enc_ref, tape.constant(x)));
      const AdversarialPenalty p = adversarial_mi_penalty(
          disc, tape, dbound, codes, tape.constant(y), marginal_derangement(rng, x.rows()));
      tape.backward(p.encoder_penalty);
      adam_enc.step(enc, nn::collect_grads(enc, denc), cfg_enc, -1.0);
    }
  }

  // Residual dependence after adversarial training.
  Tape tape;
  const auto denc = nn::bind(tape, enc, false);
  const Mat codes = ad::tanh_op(nn::mlp_forward(tape, denc, enc_ref, tape.constant(x))).value();
  StatisticNet probe(1, 1, 64, 43);
  MineOptions opts;
  opts.seed = 47;
  const MIEstimate after = mine_estimate(probe, codes, y, 400, opts);
  CHECK_FALSE(after.failed);
  CHECK(after.value < 0.05);
}

TEST_CASE("exact_mi on discrete worlds") {
  SUBCASE("independent uniform pair has zero MI") {
    DiscreteWorld w;
    w.nv = w.nt = 2;
    w.nf = 2;
    w.joint.assign(8, 0.0);
    for (int v = 0; v < 2; ++v) {
      for (int t = 0; t < 2; ++t) {
        for (int f = 0; f < 2; ++f) w.p(v, t, f) = 0.125;
      }
    }
    CHECK(exact_mi(w, MITerm::I_VT) == doctest::Approx(0.0));
    CHECK(exact_mi(w, MITerm::I_VF) == doctest::Approx(0.0));
  }

  SUBCASE("perfectly correlated uniform binary pair gives ln 2") {
    DiscreteWorld w;
    w.nv = w.nt = 2;
    w.nf = 1;
    w.joint.assign(4, 0.0);
    w.p(0, 0, 0) = 0.5;
    w.p(1, 1, 0) = 0.5;
    CHECK(exact_mi(w, MITerm::I_VT) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("joint [[0.4, 0.1], [0.1, 0.4]] gives 0.192745") {
    DiscreteWorld w;
    w.nv = w.nt = 2;
    w.nf = 1;
    w.joint.assign(4, 0.0);
    w.p(0, 0, 0) = 0.4;
    w.p(0, 1, 0) = 0.1;
    w.p(1, 0, 0) = 0.1;
    w.p(1, 1, 0) = 0.4;
    CHECK(exact_mi(w, MITerm::I_VT) == doctest::Approx(0.192745).epsilon(1e-5));
  }

  SUBCASE("string selectors map to terms; unknown selectors throw") {
    const DiscreteWorld w = build_discrete_world({3, 3, 3, 5});
    CHECK(exact_mi(w, "I(V;F)") == exact_mi(w, MITerm::I_VF));
    CHECK(exact_mi(w, "H(V|T)") == exact_mi(w, MITerm::H_V_given_T));
    CHECK(exact_mi(w, "H(V|T)") ==
          doctest::Approx(exact_mi(w, MITerm::H_V) - exact_mi(w, MITerm::I_VT)).epsilon(1e-12));
    CHECK_THROWS_AS(exact_mi(w, "I(X;Y)"), ConfigError);
  }
}

TEST_CASE("jsd and adversarial gradients match finite differences") {
  Discriminator disc(3, 3, 6, 0.2, 71);
  std::vector<Mat> leaves;
  for (const auto& p : disc.params().items) leaves.push_back(p.value.cast<double>());
  leaves.push_back(random_mat(5, 3, 72));
  leaves.push_back(random_mat(5, 3, 73));
  std::vector<int> perm = {2, 0, 4, 1, 3};  // fixed derangement of 5
  auto build = [&](Tape& t, const std::vector<Var>& v) {
    nn::BoundParams bound;
    for (std::size_t i = 0; i + 2 < v.size(); ++i) bound.vars.push_back(v[i]);
    return jsd_mi(disc, t, bound, v[v.size() - 2], v[v.size() - 1], perm);
  };
  auto res = fdcheck::compare_gradients(build, leaves);
  CHECK(res.max_rel_err < 1e-4);
}
