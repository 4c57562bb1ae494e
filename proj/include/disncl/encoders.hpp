#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "disncl/autodiff.hpp"
#include "disncl/nn.hpp"

namespace disncl {

struct EncoderConfig {
  int obs_dim_v = 0;
  int obs_dim_t = 0;
  int feat_dim = 1024;    // unified feature space F_V / F_T
  int code_dim = 512;     // V_S / V_X / T_S / T_X subspaces
  int enc_hidden = 1024;  // hidden width of the two-layer encoders f, g
  int head_hidden = 256;  // hidden width of heads and discriminators
  double leaky_slope = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

// Per-batch disentangled codes (plain matrices, evaluation path).
struct DisentangledCodes {
  Eigen::MatrixXd V_S, V_X, T_S, T_X;
};

// Modality encoders f, g (two-layer relu MLPs into the unified feature
// space) plus the four disentangling heads f_S, f_X, g_S, g_X (three-layer
// leaky-relu MLPs). All parameters live in one named ParamSet so the
// optimizer and checkpoints see a flat collection.
class EncoderStack {
 public:
  EncoderStack() = default;
  explicit EncoderStack(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  nn::BoundParams bind(ad::Tape& tape, bool requires_grad) const;

  // One forward pass producing all five code groups.
  struct Forward {
    ad::Var F_V, F_T;
    ad::Var V_S, V_X, T_S, T_X;
  };
  Forward encode(ad::Tape& tape, const nn::BoundParams& bound, ad::Var V, ad::Var T) const;

  struct EvalOutput {
    Eigen::MatrixXd F_V, F_T;
    DisentangledCodes codes;
  };
  EvalOutput encode_eval(const Eigen::MatrixXd& V, const Eigen::MatrixXd& T) const;

 private:
  EncoderConfig cfg_;
  nn::ParamSet params_;
  nn::MlpRef f_, g_, f_s_, f_x_, g_s_, g_x_;
};

// Three-layer MLP on a concatenated code pair, LeakyReLU hidden units,
// scalar logistic output clamped to (1e-6, 1 - 1e-6) so downstream log
// terms stay finite.
class Discriminator {
 public:
  static constexpr double kClampEps = 1e-6;

  Discriminator() = default;
  Discriminator(int dim_a, int dim_b, int hidden, double leaky_slope, std::uint64_t seed);

  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  int dim_a() const { return dim_a_; }
  int dim_b() const { return dim_b_; }

  nn::BoundParams bind(ad::Tape& tape, bool requires_grad) const;
  // a: k x dim_a, b: k x dim_b -> k x 1 scores in (eps, 1-eps).
  ad::Var score(ad::Tape& tape, const nn::BoundParams& bound, ad::Var a, ad::Var b) const;

 private:
  int dim_a_ = 0, dim_b_ = 0;
  nn::ParamSet params_;
  nn::MlpRef net_;
};

// Scalar cosine similarity in [-1, 1]; a zero vector yields 0 and sets the
// degenerate flag when provided.
double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                         bool* degenerate = nullptr);

// Similarity function over the modality-invariant subspace, pluggable so a
// learnable module could replace cosine without touching callers.
class SimilarityFn {
 public:
  virtual ~SimilarityFn() = default;
  virtual ad::Var matrix(ad::Tape& tape, ad::Var v_s, ad::Var t_s) const = 0;
  virtual Eigen::MatrixXd matrix_eval(const Eigen::MatrixXd& v_s,
                                      const Eigen::MatrixXd& t_s) const = 0;
  virtual double pair(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                      bool* degenerate) const = 0;
};

class CosineSimilarity final : public SimilarityFn {
 public:
  ad::Var matrix(ad::Tape& tape, ad::Var v_s, ad::Var t_s) const override;
  Eigen::MatrixXd matrix_eval(const Eigen::MatrixXd& v_s,
                              const Eigen::MatrixXd& t_s) const override;
  double pair(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
              bool* degenerate) const override;
};

// H[i][j] = similarity(V_S^i, T_S^j); consumes only the invariant codes.
Eigen::MatrixXd similarity_matrix(const DisentangledCodes& codes,
                                  const SimilarityFn& sim = CosineSimilarity{});

}  // namespace disncl
