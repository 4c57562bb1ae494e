#include "disncl/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace disncl::nn {

int ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

const Param& ParamSet::at(const std::string& name) const {
  const int i = find(name);
  if (i < 0) throw std::out_of_range("ParamSet: no parameter named " + name);
  return items[static_cast<std::size_t>(i)];
}

Param& ParamSet::at(const std::string& name) {
  const int i = find(name);
  if (i < 0) throw std::out_of_range("ParamSet: no parameter named " + name);
  return items[static_cast<std::size_t>(i)];
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items) n += static_cast<std::size_t>(p.value.size());
  return n;
}

BoundParams bind(ad::Tape& tape, const ParamSet& params, bool requires_grad) {
  BoundParams b;
  b.vars.reserve(params.items.size());
  for (const auto& p : params.items) {
    b.vars.push_back(tape.input(p.value.cast<double>(), requires_grad));
  }
  return b;
}

std::vector<ad::Mat> collect_grads(const ParamSet& params, const BoundParams& bound) {
  std::vector<ad::Mat> out;
  out.reserve(params.items.size());
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    const ad::Var v = bound.vars[i];
    if (v.tape()->requires_grad(v.id()) && v.grad().size() != 0) {
      out.push_back(v.grad());
    } else {
      out.push_back(ad::Mat::Zero(params.items[i].value.rows(), params.items[i].value.cols()));
    }
  }
  return out;
}

void add_mlp(ParamSet& ps, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  if (spec.dims.size() < 2) throw std::invalid_argument("add_mlp: need at least one layer");
  for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
    const int in = spec.dims[l];
    const int out = spec.dims[l + 1];
    // He-style scaling keeps pre-activation variance near 1 for (leaky) relu.
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    MatF w(in, out);
    for (int r = 0; r < in; ++r) {
      for (int c = 0; c < out; ++c) {
        w(r, c) = static_cast<float>(rng.normal() * scale);
      }
    }
    MatF b = MatF::Zero(1, out);
    ps.items.push_back({prefix + ".W" + std::to_string(l), std::move(w)});
    ps.items.push_back({prefix + ".b" + std::to_string(l), std::move(b)});
  }
}

MlpRef mlp_ref(const ParamSet& ps, const std::string& prefix, const MlpSpec& spec) {
  MlpRef ref;
  ref.spec = spec;
  for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
    const int wi = ps.find(prefix + ".W" + std::to_string(l));
    const int bi = ps.find(prefix + ".b" + std::to_string(l));
    if (wi < 0 || bi < 0) throw std::out_of_range("mlp_ref: missing layer params for " + prefix);
    ref.w_idx.push_back(wi);
    ref.b_idx.push_back(bi);
  }
  return ref;
}

ad::Var mlp_forward(ad::Tape&, const BoundParams& bound, const MlpRef& ref, ad::Var x) {
  ad::Var h = x;
  const std::size_t layers = ref.w_idx.size();
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::add_row_broadcast(ad::matmul(h, bound.vars[static_cast<std::size_t>(ref.w_idx[l])]),
                              bound.vars[static_cast<std::size_t>(ref.b_idx[l])]);
    if (l + 1 < layers) {
      switch (ref.spec.hidden_act) {
        case Activation::Relu:
          h = ad::relu(h);
          break;
        case Activation::LeakyRelu:
          h = ad::leaky_relu(h, ref.spec.leaky_slope);
          break;
        case Activation::Tanh:
          h = ad::tanh_op(h);
          break;
      }
    }
  }
  return h;
}

Adam::Adam(const ParamSet& shape) {
  m_.reserve(shape.items.size());
  v_.reserve(shape.items.size());
  for (const auto& p : shape.items) {
    m_.push_back(MatF::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(MatF::Zero(p.value.rows(), p.value.cols()));
  }
}

void Adam::step(ParamSet& params, const std::vector<ad::Mat>& grads, const AdamConfig& cfg,
                double direction) {
  if (grads.size() != params.items.size() || m_.size() != params.items.size()) {
    throw std::logic_error("Adam::step: state/parameter size mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    ad::Mat g = grads[i];
    ad::Mat m = m_[i].cast<double>();
    ad::Mat v = v_[i].cast<double>();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const ad::Mat mhat = m / bc1;
    const ad::Mat vhat = v / bc2;
    ad::Mat p = params.items[i].value.cast<double>();
    p += direction * cfg.lr * (mhat.array() / (vhat.array().sqrt() + cfg.eps)).matrix();
    params.items[i].value = p.cast<float>();
    m_[i] = m.cast<float>();
    v_[i] = v.cast<float>();
  }
}

}  // namespace disncl::nn
