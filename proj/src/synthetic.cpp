#include "disncl/synthetic.hpp"

#include <cmath>
#include <string>

#include "disncl/common.hpp"

namespace disncl {

void LatentSpec::validate() const {
  if (dim_shared < 1) throw ConfigError("LatentSpec: dim_shared must be >= 1");
  if (dim_excl_v < 0 || dim_excl_t < 0) {
    throw ConfigError("LatentSpec: exclusive dims must be >= 0");
  }
  if (obs_dim_v < 1 || obs_dim_t < 1) throw ConfigError("LatentSpec: obs dims must be >= 1");
  if (noise_std < 0.0) throw ConfigError("LatentSpec: noise_std must be >= 0");
}

double PairDataset::noise_fraction() const {
  if (noise_mask.empty()) return 0.0;
  long flagged = 0;
  for (auto b : noise_mask) flagged += b ? 1 : 0;
  return static_cast<double>(flagged) / static_cast<double>(noise_mask.size());
}

PairDataset PairDataset::slice(long begin, long end) const {
  if (begin < 0 || end > size() || begin > end) throw RangeError("PairDataset::slice: bad range");
  PairDataset out;
  const long n = end - begin;
  out.V = V.middleRows(begin, n);
  out.T = T.middleRows(begin, n);
  out.match.assign(match.begin() + begin, match.begin() + end);
  out.noise_mask.assign(noise_mask.begin() + begin, noise_mask.begin() + end);
  out.has_latents = has_latents;
  if (has_latents) {
    out.z_shared_v = z_shared_v.middleRows(begin, n);
    out.z_shared_t = z_shared_t.middleRows(begin, n);
    out.z_excl_v = z_excl_v.middleRows(begin, n);
    out.z_excl_t = z_excl_t.middleRows(begin, n);
  }
  out.spec = spec;
  return out;
}

namespace {

// Fixed random map: x -> tanh(W x + b). W ~ N(0, 1/in_dim), b ~ N(0, 0.1^2).
struct AffineTanh {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;  // out

  static AffineTanh draw(int in_dim, int out_dim, Rng& rng) {
    AffineTanh m;
    m.W.resize(out_dim, in_dim);
    const double scale = in_dim > 0 ? 1.0 / std::sqrt(static_cast<double>(in_dim)) : 0.0;
    for (int r = 0; r < out_dim; ++r) {
      for (int c = 0; c < in_dim; ++c) m.W(r, c) = rng.normal() * scale;
    }
    m.b.resize(out_dim);
    for (int r = 0; r < out_dim; ++r) m.b(r) = rng.normal() * 0.1;
    return m;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    return ((W * x) + b).array().tanh();
  }
};

Eigen::MatrixXd draw_gaussian(long rows, long cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) m(r, c) = rng.normal();
  }
  return m;
}

}  // namespace

PairDataset generate_pairs(const LatentSpec& spec, long n) {
  spec.validate();
  if (n < 1) throw ConfigError("generate_pairs: n must be >= 1");

  Rng rng(spec.seed);
  const AffineTanh gv = AffineTanh::draw(spec.dim_shared + spec.dim_excl_v, spec.obs_dim_v, rng);
  const AffineTanh gt = AffineTanh::draw(spec.dim_shared + spec.dim_excl_t, spec.obs_dim_t, rng);

  PairDataset d;
  d.spec = spec;
  d.has_latents = true;
  d.z_shared_v = draw_gaussian(n, spec.dim_shared, rng);
  d.z_shared_t = d.z_shared_v;
  d.z_excl_v = draw_gaussian(n, spec.dim_excl_v, rng);
  d.z_excl_t = draw_gaussian(n, spec.dim_excl_t, rng);
  d.V.resize(n, spec.obs_dim_v);
  d.T.resize(n, spec.obs_dim_t);
  d.match.assign(static_cast<std::size_t>(n), 1);
  d.noise_mask.assign(static_cast<std::size_t>(n), 0);

  Eigen::VectorXd zin_v(spec.dim_shared + spec.dim_excl_v);
  Eigen::VectorXd zin_t(spec.dim_shared + spec.dim_excl_t);
  for (long i = 0; i < n; ++i) {
    zin_v.head(spec.dim_shared) = d.z_shared_v.row(i);
    if (spec.dim_excl_v > 0) zin_v.tail(spec.dim_excl_v) = d.z_excl_v.row(i);
    zin_t.head(spec.dim_shared) = d.z_shared_t.row(i);
    if (spec.dim_excl_t > 0) zin_t.tail(spec.dim_excl_t) = d.z_excl_t.row(i);
    d.V.row(i) = gv.apply(zin_v);
    d.T.row(i) = gt.apply(zin_t);
    if (spec.noise_std > 0.0) {
      for (long c = 0; c < d.V.cols(); ++c) d.V(i, c) += spec.noise_std * rng.normal();
      for (long c = 0; c < d.T.cols(); ++c) d.T(i, c) += spec.noise_std * rng.normal();
    }
  }

  // Quantize to f32 values so an in-memory dataset equals its container
  // round-trip bitwise (the container stores f32).
  d.V = d.V.cast<float>().cast<double>();
  d.T = d.T.cast<float>().cast<double>();
  d.z_shared_v = d.z_shared_v.cast<float>().cast<double>();
  d.z_shared_t = d.z_shared_t.cast<float>().cast<double>();
  d.z_excl_v = d.z_excl_v.cast<float>().cast<double>();
  d.z_excl_t = d.z_excl_t.cast<float>().cast<double>();
  return d;
}

namespace {

enum class Side { V, T };

PairDataset inject_noise(const PairDataset& data, double eta, std::uint64_t seed, Side side) {
  if (eta < 0.0 || eta >= 1.0) throw RangeError("inject_noise: eta must be in [0, 1)");
  const long n = data.size();
  const long k = static_cast<long>(std::floor(eta * static_cast<double>(n)));
  PairDataset out = data;
  if (k == 0) return out;
  if (k < 2) throw RangeError("inject_noise: eta*N must be >= 2 (derangement needs two rows)");

  Rng rng(seed);
  const auto chosen = rng.sample_without_replacement(static_cast<std::size_t>(n),
                                                     static_cast<std::size_t>(k));
  const auto perm = rng.derangement(static_cast<std::size_t>(k));

  for (std::size_t j = 0; j < chosen.size(); ++j) {
    const long dst = static_cast<long>(chosen[j]);
    const long src = static_cast<long>(chosen[perm[j]]);
    if (side == Side::V) {
      out.V.row(dst) = data.V.row(src);
      if (data.has_latents) {
        out.z_shared_v.row(dst) = data.z_shared_v.row(src);
        out.z_excl_v.row(dst) = data.z_excl_v.row(src);
      }
    } else {
      out.T.row(dst) = data.T.row(src);
      if (data.has_latents) {
        out.z_shared_t.row(dst) = data.z_shared_t.row(src);
        out.z_excl_t.row(dst) = data.z_excl_t.row(src);
      }
    }
    out.match[static_cast<std::size_t>(dst)] = 0;
    out.noise_mask[static_cast<std::size_t>(dst)] = 1;
  }
  return out;
}

}  // namespace

PairDataset inject_noise_shuffle_images(const PairDataset& data, double eta, std::uint64_t seed) {
  return inject_noise(data, eta, seed, Side::V);
}

PairDataset inject_noise_permute_captions(const PairDataset& data, double eta, std::uint64_t seed) {
  return inject_noise(data, eta, seed, Side::T);
}

void DiscreteWorld::validate() const {
  if (nv < 1 || nt < 1 || nf < 1) throw SizeError("DiscreteWorld: empty alphabet");
  if (joint.size() != static_cast<std::size_t>(nv) * nt * nf) {
    throw SizeError("DiscreteWorld: joint table size mismatch");
  }
  double total = 0.0;
  for (double x : joint) {
    if (x < 0.0) throw RangeError("DiscreteWorld: negative probability");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-12) throw RangeError("DiscreteWorld: joint does not sum to 1");
  if (factorized) {
    // p(F | V, T) must not depend on T: p(v,t,f) * p(v) == p(v,f) * p(v,t).
    for (int v = 0; v < nv; ++v) {
      double pv = 0.0;
      std::vector<double> pvf(static_cast<std::size_t>(nf), 0.0);
      std::vector<double> pvt(static_cast<std::size_t>(nt), 0.0);
      for (int t = 0; t < nt; ++t) {
        for (int f = 0; f < nf; ++f) {
          const double x = p(v, t, f);
          pv += x;
          pvf[static_cast<std::size_t>(f)] += x;
          pvt[static_cast<std::size_t>(t)] += x;
        }
      }
      for (int t = 0; t < nt; ++t) {
        for (int f = 0; f < nf; ++f) {
          const double lhs = p(v, t, f) * pv;
          const double rhs = pvf[static_cast<std::size_t>(f)] * pvt[static_cast<std::size_t>(t)];
          if (std::abs(lhs - rhs) > 1e-12) {
            throw RangeError("DiscreteWorld: factorization flag set but p(F|V,T) != p(F|V)");
          }
        }
      }
    }
  }
}

DiscreteWorld build_discrete_world(const DiscreteWorldSpec& spec) {
  constexpr int kMaxAlphabet = 8;
  if (spec.alphabet_v < 1 || spec.alphabet_t < 1 || spec.alphabet_f < 1 ||
      spec.alphabet_v > kMaxAlphabet || spec.alphabet_t > kMaxAlphabet ||
      spec.alphabet_f > kMaxAlphabet) {
    throw SizeError("build_discrete_world: alphabets must be within [1, 8]");
  }
  Rng rng(spec.seed);
  DiscreteWorld w;
  w.nv = spec.alphabet_v;
  w.nt = spec.alphabet_t;
  w.nf = spec.alphabet_f;
  w.joint.assign(static_cast<std::size_t>(w.nv) * w.nt * w.nf, 0.0);
  w.factorized = true;

  // Random positive p(v,t).
  Eigen::MatrixXd pvt(w.nv, w.nt);
  double total = 0.0;
  for (int v = 0; v < w.nv; ++v) {
    for (int t = 0; t < w.nt; ++t) {
      pvt(v, t) = rng.uniform() + 1e-3;
      total += pvt(v, t);
    }
  }
  pvt /= total;

  // Random row-stochastic channel p(f|v); F is generated from V alone.
  Eigen::MatrixXd pfv(w.nv, w.nf);
  for (int v = 0; v < w.nv; ++v) {
    double row = 0.0;
    for (int f = 0; f < w.nf; ++f) {
      pfv(v, f) = rng.uniform() + 1e-3;
      row += pfv(v, f);
    }
    pfv.row(v) /= row;
  }

  for (int v = 0; v < w.nv; ++v) {
    for (int t = 0; t < w.nt; ++t) {
      for (int f = 0; f < w.nf; ++f) {
        w.p(v, t, f) = pvt(v, t) * pfv(v, f);
      }
    }
  }
  w.validate();
  return w;
}

}  // namespace disncl
