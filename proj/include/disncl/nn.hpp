#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "disncl/autodiff.hpp"
#include "disncl/rng.hpp"

namespace disncl::nn {

using MatF = Eigen::MatrixXf;

// A named parameter matrix. Storage is float32-canonical: values written
// back after an optimizer step are quantized to f32 so that checkpoints
// (raw f32 blobs) round-trip losslessly and resumed runs replay exactly.
struct Param {
  std::string name;
  MatF value;
};

struct ParamSet {
  std::vector<Param> items;

  int find(const std::string& name) const;
  const Param& at(const std::string& name) const;
  Param& at(const std::string& name);
  std::size_t scalar_count() const;
};

// Tape-bound views of a ParamSet, parallel to items.
struct BoundParams {
  std::vector<ad::Var> vars;
  ad::Var operator[](std::size_t i) const { return vars[i]; }
};

BoundParams bind(ad::Tape& tape, const ParamSet& params, bool requires_grad);

// Reads accumulated gradients for every bound parameter (zeros where a
// parameter did not participate in the graph).
std::vector<ad::Mat> collect_grads(const ParamSet& params, const BoundParams& bound);

enum class Activation { Relu, LeakyRelu, Tanh };

// dims = {in, h1, ..., out}; one linear layer per adjacent pair, hidden
// activation between layers, linear output.
struct MlpSpec {
  std::vector<int> dims;
  Activation hidden_act = Activation::LeakyRelu;
  double leaky_slope = 0.2;
};

// Appends He-initialized parameters "<prefix>.W<k>" / "<prefix>.b<k>".
void add_mlp(ParamSet& ps, const std::string& prefix, const MlpSpec& spec, Rng& rng);

// Resolved parameter indices for a previously added MLP.
struct MlpRef {
  MlpSpec spec;
  std::vector<int> w_idx;
  std::vector<int> b_idx;
};

MlpRef mlp_ref(const ParamSet& ps, const std::string& prefix, const MlpSpec& spec);

ad::Var mlp_forward(ad::Tape& tape, const BoundParams& bound, const MlpRef& ref, ad::Var x);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with f32-canonical moments; update math in f64, state quantized back
// to f32 after each step (see Param).
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParamSet& shape);

  // direction = -1 for descent, +1 for ascent.
  void step(ParamSet& params, const std::vector<ad::Mat>& grads, const AdamConfig& cfg,
            double direction);

  std::int64_t step_count() const { return t_; }

  // Moments exposed for checkpointing, parallel to the ParamSet.
  std::vector<MatF>& m() { return m_; }
  std::vector<MatF>& v() { return v_; }
  const std::vector<MatF>& m() const { return m_; }
  const std::vector<MatF>& v() const { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  std::vector<MatF> m_;
  std::vector<MatF> v_;
  std::int64_t t_ = 0;
};

}  // namespace disncl::nn
