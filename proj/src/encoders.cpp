#include "disncl/encoders.hpp"

#include "disncl/common.hpp"
#include "disncl/rng.hpp"

namespace disncl {

void EncoderConfig::validate() const {
  if (obs_dim_v < 1 || obs_dim_t < 1) throw ConfigError("EncoderConfig: obs dims must be >= 1");
  if (feat_dim < 1 || code_dim < 1 || enc_hidden < 1 || head_hidden < 1) {
    throw ConfigError("EncoderConfig: layer widths must be >= 1");
  }
}

EncoderStack::EncoderStack(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const nn::MlpSpec enc_v{{cfg.obs_dim_v, cfg.enc_hidden, cfg.feat_dim}, nn::Activation::Relu};
  const nn::MlpSpec enc_t{{cfg.obs_dim_t, cfg.enc_hidden, cfg.feat_dim}, nn::Activation::Relu};
  const nn::MlpSpec head{{cfg.feat_dim, cfg.head_hidden, cfg.head_hidden, cfg.code_dim},
                         nn::Activation::LeakyRelu,
                         cfg.leaky_slope};
  nn::add_mlp(params_, "f", enc_v, rng);
  nn::add_mlp(params_, "g", enc_t, rng);
  nn::add_mlp(params_, "f_S", head, rng);
  nn::add_mlp(params_, "f_X", head, rng);
  nn::add_mlp(params_, "g_S", head, rng);
  nn::add_mlp(params_, "g_X", head, rng);
  f_ = nn::mlp_ref(params_, "f", enc_v);
  g_ = nn::mlp_ref(params_, "g", enc_t);
  f_s_ = nn::mlp_ref(params_, "f_S", head);
  f_x_ = nn::mlp_ref(params_, "f_X", head);
  g_s_ = nn::mlp_ref(params_, "g_S", head);
  g_x_ = nn::mlp_ref(params_, "g_X", head);
}

nn::BoundParams EncoderStack::bind(ad::Tape& tape, bool requires_grad) const {
  return nn::bind(tape, params_, requires_grad);
}

EncoderStack::Forward EncoderStack::encode(ad::Tape& tape, const nn::BoundParams& bound,
                                           ad::Var V, ad::Var T) const {
  if (V.value().rows() < 1) throw SizeError("encode: empty batch");
  if (V.value().cols() != cfg_.obs_dim_v || T.value().cols() != cfg_.obs_dim_t) {
    throw ConfigError("encode: input dims do not match encoder config");
  }
  Forward out;
  out.F_V = nn::mlp_forward(tape, bound, f_, V);
  out.F_T = nn::mlp_forward(tape, bound, g_, T);
  out.V_S = nn::mlp_forward(tape, bound, f_s_, out.F_V);
  out.V_X = nn::mlp_forward(tape, bound, f_x_, out.F_V);
  out.T_S = nn::mlp_forward(tape, bound, g_s_, out.F_T);
  out.T_X = nn::mlp_forward(tape, bound, g_x_, out.F_T);
  return out;
}

EncoderStack::EvalOutput EncoderStack::encode_eval(const Eigen::MatrixXd& V,
                                                   const Eigen::MatrixXd& T) const {
  ad::Tape tape;
  const nn::BoundParams bound = bind(tape, /*requires_grad=*/false);
  const Forward fwd = encode(tape, bound, tape.constant(V), tape.constant(T));
  EvalOutput out;
  out.F_V = fwd.F_V.value();
  out.F_T = fwd.F_T.value();
  out.codes.V_S = fwd.V_S.value();
  out.codes.V_X = fwd.V_X.value();
  out.codes.T_S = fwd.T_S.value();
  out.codes.T_X = fwd.T_X.value();
  return out;
}

Discriminator::Discriminator(int dim_a, int dim_b, int hidden, double leaky_slope,
                             std::uint64_t seed)
    : dim_a_(dim_a), dim_b_(dim_b) {
  Rng rng(seed);
  const nn::MlpSpec spec{{dim_a + dim_b, hidden, hidden, 1}, nn::Activation::LeakyRelu,
                         leaky_slope};
  nn::add_mlp(params_, "disc", spec, rng);
  net_ = nn::mlp_ref(params_, "disc", spec);
}

nn::BoundParams Discriminator::bind(ad::Tape& tape, bool requires_grad) const {
  return nn::bind(tape, params_, requires_grad);
}

ad::Var Discriminator::score(ad::Tape& tape, const nn::BoundParams& bound, ad::Var a,
                             ad::Var b) const {
  if (a.value().rows() != b.value().rows()) {
    throw SizeError("Discriminator::score: row counts differ");
  }
  if (a.value().cols() != dim_a_ || b.value().cols() != dim_b_) {
    throw ConfigError("Discriminator::score: input dims do not match");
  }
  ad::Var x = ad::concat_cols(a, b);
  ad::Var logits = nn::mlp_forward(tape, bound, net_, x);
  return ad::clamp(ad::sigmoid(logits), kClampEps, 1.0 - kClampEps);
}

double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v, bool* degenerate) {
  if (degenerate) *degenerate = false;
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return u.dot(v) / (nu * nv);
}

ad::Var CosineSimilarity::matrix(ad::Tape&, ad::Var v_s, ad::Var t_s) const {
  return ad::matmul(ad::l2_normalize_rows(v_s), ad::transpose(ad::l2_normalize_rows(t_s)));
}

Eigen::MatrixXd CosineSimilarity::matrix_eval(const Eigen::MatrixXd& v_s,
                                              const Eigen::MatrixXd& t_s) const {
  auto normalize = [](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (long r = 0; r < m.rows(); ++r) {
      const double n = m.row(r).norm();
      if (n != 0.0) out.row(r) /= n;
    }
    return out;
  };
  return normalize(v_s) * normalize(t_s).transpose();
}

double CosineSimilarity::pair(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                              bool* degenerate) const {
  return cosine_similarity(u, v, degenerate);
}

Eigen::MatrixXd similarity_matrix(const DisentangledCodes& codes, const SimilarityFn& sim) {
  if (codes.V_S.rows() < 2) throw SizeError("similarity_matrix: batch must have B >= 2");
  return sim.matrix_eval(codes.V_S, codes.T_S);
}

}  // namespace disncl
