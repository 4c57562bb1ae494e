#include "disncl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "disncl/common.hpp"

namespace disncl {

nlohmann::json RetrievalReport::to_json() const {
  nlohmann::json j;
  j["r_sum"] = r_sum;
  j["k_capped"] = k_capped;
  for (int k : ks) {
    j["i2t"]["r@" + std::to_string(k)] = recall_i2t.at(k);
    j["t2i"]["r@" + std::to_string(k)] = recall_t2i.at(k);
  }
  return j;
}

RetrievalReport recall_at_k(const Eigen::MatrixXd& H, const std::vector<int>& k_list) {
  if (H.rows() != H.cols()) throw SizeError("recall_at_k: H must be square");
  const long n = H.rows();
  if (n < 1) throw SizeError("recall_at_k: empty matrix");

  RetrievalReport rep;
  // Pessimistic rank of the diagonal: ties count against it.
  std::vector<long> rank_i2t(static_cast<std::size_t>(n)), rank_t2i(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const double d = H(i, i);
    long r_row = 1, r_col = 1;
    for (long j = 0; j < n; ++j) {
      if (j == i) continue;
      if (H(i, j) >= d) ++r_row;
      if (H(j, i) >= d) ++r_col;
    }
    rank_i2t[static_cast<std::size_t>(i)] = r_row;
    rank_t2i[static_cast<std::size_t>(i)] = r_col;
  }
  double six_sum = 0.0;
  for (int k : k_list) {
    int kk = k;
    if (kk > n) {
      kk = static_cast<int>(n);
      rep.k_capped = true;
    }
    long hit_i2t = 0, hit_t2i = 0;
    for (long i = 0; i < n; ++i) {
      if (rank_i2t[static_cast<std::size_t>(i)] <= kk) ++hit_i2t;
      if (rank_t2i[static_cast<std::size_t>(i)] <= kk) ++hit_t2i;
    }
    const double ri = static_cast<double>(hit_i2t) / static_cast<double>(n);
    const double rt = static_cast<double>(hit_t2i) / static_cast<double>(n);
    rep.ks.push_back(k);
    rep.recall_i2t[k] = ri;
    rep.recall_t2i[k] = rt;
    six_sum += ri + rt;
  }
  rep.r_sum = 100.0 * six_sum;
  return rep;
}

nlohmann::json FiltrationQuality::to_json() const {
  return {{"precision", precision},
          {"recall", recall},
          {"clean_count", clean_count},
          {"true_clean_count", true_clean_count},
          {"hit_count", hit_count}};
}

FiltrationQuality filtration_quality(const CleanSet& clean,
                                     const std::vector<std::uint8_t>& noise_mask) {
  FiltrationQuality q;
  q.clean_count = static_cast<long>(clean.size());
  for (auto b : noise_mask) q.true_clean_count += b ? 0 : 1;
  for (int i : clean) {
    if (i < 0 || i >= static_cast<int>(noise_mask.size())) {
      throw RangeError("filtration_quality: clean index out of range");
    }
    if (!noise_mask[static_cast<std::size_t>(i)]) ++q.hit_count;
  }
  q.precision = q.clean_count > 0
                    ? static_cast<double>(q.hit_count) / static_cast<double>(q.clean_count)
                    : 0.0;
  q.recall = q.true_clean_count > 0
                 ? static_cast<double>(q.hit_count) / static_cast<double>(q.true_clean_count)
                 : 0.0;
  return q;
}

FiltrationQuality filtration_eval(const EncoderStack& encoders, const PairDataset& data,
                                  int batch_size) {
  if (batch_size < 2) throw SizeError("filtration_eval: batch_size must be >= 2");
  FiltrationQuality agg;
  const CosineSimilarity cosine;
  for (long begin = 0; begin + 2 <= data.size(); begin += batch_size) {
    const long end = std::min<long>(begin + batch_size, data.size());
    if (end - begin < 2) break;
    const PairDataset part = data.slice(begin, end);
    const auto enc = encoders.encode_eval(part.V, part.T);
    const Eigen::MatrixXd H = similarity_matrix(enc.codes, cosine);
    const CleanSet clean = filter_clean(H);
    const FiltrationQuality q = filtration_quality(clean, part.noise_mask);
    agg.clean_count += q.clean_count;
    agg.true_clean_count += q.true_clean_count;
    agg.hit_count += q.hit_count;
  }
  agg.precision = agg.clean_count > 0
                      ? static_cast<double>(agg.hit_count) / static_cast<double>(agg.clean_count)
                      : 0.0;
  agg.recall = agg.true_clean_count > 0 ? static_cast<double>(agg.hit_count) /
                                              static_cast<double>(agg.true_clean_count)
                                        : 0.0;
  return agg;
}

nlohmann::json DisentanglementReport::to_json() const {
  auto mi_json = [](const MIEstimate& e) {
    return nlohmann::json{
        {"value_nats", e.value}, {"failed", e.failed}, {"n_samples", e.n_samples}};
  };
  nlohmann::json j;
  j["mi_vs_vx"] = mi_json(mi_vs_vx);
  j["mi_ts_tx"] = mi_json(mi_ts_tx);
  j["r1_invariant"] = r1_invariant;
  j["r1_exclusive"] = r1_exclusive;
  j["chance_r1"] = chance_r1;
  if (has_latent_probes) {
    j["probe_r2_zs_from_vs"] = probe_r2_zs_from_vs;
    j["probe_r2_zv_from_vx"] = probe_r2_zv_from_vx;
  }
  return j;
}

double linear_probe_r2(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets) {
  if (features.rows() != targets.rows()) throw SizeError("linear_probe_r2: row mismatch");
  const long n = features.rows();
  Eigen::MatrixXd x(n, features.cols() + 1);
  x << features, Eigen::VectorXd::Ones(n);
  const Eigen::MatrixXd coef = x.colPivHouseholderQr().solve(targets);
  const Eigen::MatrixXd resid = targets - x * coef;
  const Eigen::MatrixXd centered = targets.rowwise() - targets.colwise().mean();
  const double sst = centered.squaredNorm();
  if (sst <= 0.0) return 0.0;
  return 1.0 - resid.squaredNorm() / sst;
}

DisentanglementReport disentanglement_report(const EncoderStack& encoders,
                                             const PairDataset& test, const EvalOptions& opts) {
  DisentanglementReport rep;
  const auto enc = encoders.encode_eval(test.V, test.T);
  const CosineSimilarity cosine;

  const Eigen::MatrixXd h_inv = cosine.matrix_eval(enc.codes.V_S, enc.codes.T_S);
  const Eigen::MatrixXd h_exc = cosine.matrix_eval(enc.codes.V_X, enc.codes.T_X);
  const RetrievalReport r_inv = recall_at_k(h_inv, {1});
  const RetrievalReport r_exc = recall_at_k(h_exc, {1});
  rep.r1_invariant = 0.5 * (r_inv.recall_i2t.at(1) + r_inv.recall_t2i.at(1));
  rep.r1_exclusive = 0.5 * (r_exc.recall_i2t.at(1) + r_exc.recall_t2i.at(1));
  rep.chance_r1 = 1.0 / static_cast<double>(test.size());

  // MINE diagnostics; divergence is reported per-field, not fatal.
  auto run_mine = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      std::uint64_t stream) -> MIEstimate {
    MIEstimate est;
    est.kind = MIKind::Mine;
    est.n_samples = a.rows();
    try {
      StatisticNet net(static_cast<int>(a.cols()), static_cast<int>(b.cols()), opts.mine_hidden,
                       derive_seed(opts.seed, stream));
      MineOptions mo;
      mo.seed = derive_seed(opts.seed, stream + 100);
      est = mine_estimate(net, a, b, opts.mine_steps, mo);
    } catch (const std::exception&) {
      est.failed = true;
    }
    return est;
  };
  rep.mi_vs_vx = run_mine(enc.codes.V_S, enc.codes.V_X, 1);
  rep.mi_ts_tx = run_mine(enc.codes.T_S, enc.codes.T_X, 2);

  if (test.has_latents && test.z_excl_v.cols() > 0) {
    rep.has_latent_probes = true;
    rep.probe_r2_zs_from_vs = linear_probe_r2(enc.codes.V_S, test.z_shared_v);
    rep.probe_r2_zv_from_vx = linear_probe_r2(enc.codes.V_X, test.z_excl_v);
  } else if (test.has_latents) {
    rep.has_latent_probes = true;
    rep.probe_r2_zs_from_vs = linear_probe_r2(enc.codes.V_S, test.z_shared_v);
    rep.probe_r2_zv_from_vx = 0.0;
  }
  return rep;
}

nlohmann::json SimilarityHistogram::to_json() const {
  return {{"edges", edges},
          {"clean_counts", clean_counts},
          {"noisy_counts", noisy_counts},
          {"clean_mean", clean_mean},
          {"noisy_mean", noisy_mean}};
}

std::string SimilarityHistogram::to_csv() const {
  std::ostringstream os;
  os << "bin_lo,bin_hi,clean_count,noisy_count\n";
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    os << edges[i] << ',' << edges[i + 1] << ',' << clean_counts[i] << ',' << noisy_counts[i]
       << '\n';
  }
  return os.str();
}

SimilarityHistogram similarity_histogram(const Eigen::MatrixXd& H,
                                         const std::vector<std::uint8_t>& noise_mask, int bins) {
  if (H.rows() != H.cols()) throw SizeError("similarity_histogram: H must be square");
  if (static_cast<long>(noise_mask.size()) != H.rows()) {
    throw SizeError("similarity_histogram: mask length mismatch");
  }
  if (bins < 1) throw SizeError("similarity_histogram: bins must be >= 1");

  SimilarityHistogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) {
    h.edges[static_cast<std::size_t>(i)] = -1.0 + 2.0 * static_cast<double>(i) / bins;
  }
  h.clean_counts.assign(static_cast<std::size_t>(bins), 0);
  h.noisy_counts.assign(static_cast<std::size_t>(bins), 0);
  double clean_sum = 0.0, noisy_sum = 0.0;
  long clean_n = 0, noisy_n = 0;
  for (long i = 0; i < H.rows(); ++i) {
    const double v = H(i, i);
    int bin = static_cast<int>(std::floor((v + 1.0) / 2.0 * bins));
    bin = std::clamp(bin, 0, bins - 1);
    if (noise_mask[static_cast<std::size_t>(i)]) {
      ++h.noisy_counts[static_cast<std::size_t>(bin)];
      noisy_sum += v;
      ++noisy_n;
    } else {
      ++h.clean_counts[static_cast<std::size_t>(bin)];
      clean_sum += v;
      ++clean_n;
    }
  }
  h.clean_mean = clean_n > 0 ? clean_sum / clean_n : 0.0;
  h.noisy_mean = noisy_n > 0 ? noisy_sum / noisy_n : 0.0;
  return h;
}

}  // namespace disncl
