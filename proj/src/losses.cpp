#include "disncl/losses.hpp"

#include <algorithm>
#include <cmath>

#include "disncl/common.hpp"

namespace disncl {

void LossWeights::validate() const {
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("LossWeights: gamma must be in [0,1]");
  if (beta3 < 0.0 || beta3 > 1.0) throw ConfigError("LossWeights: beta3 must be in [0,1]");
  if (tau <= 0.0) throw ConfigError("LossWeights: tau must be > 0");
  if (m <= 1.0) throw ConfigError("LossWeights: m must be > 1");
  if (alpha < 0.0) throw ConfigError("LossWeights: alpha must be >= 0");
}

CleanSet filter_clean(const Eigen::MatrixXd& H) {
  if (H.rows() != H.cols()) throw SizeError("filter_clean: H must be square");
  CleanSet clean;
  const long b = H.rows();
  for (long i = 0; i < b; ++i) {
    const double hii = H(i, i);
    bool keep = true;
    for (long j = 0; j < b && keep; ++j) {
      if (H(i, j) > hii || H(j, i) > hii) keep = false;
    }
    if (keep) clean.push_back(static_cast<int>(i));
  }
  return clean;
}

double adaptive_margin(double h_ii, const LossWeights& w, bool* clamped) {
  if (w.m <= 1.0) throw ConfigError("adaptive_margin: m must be > 1");
  if (clamped) *clamped = h_ii < 0.0 || h_ii > 1.0;
  const double h = std::clamp(h_ii, 0.0, 1.0);
  return (std::pow(w.m, h) - 1.0) / (w.m - 1.0) * w.alpha;
}

const char* disc_role_name(DiscRole role) {
  switch (role) {
    case DiscRole::JsdSV: return "jsd_s_v";
    case DiscRole::JsdST: return "jsd_s_t";
    case DiscRole::JsdXV: return "jsd_x_v";
    case DiscRole::JsdXT: return "jsd_x_t";
    case DiscRole::AdvXV: return "adv_x_v";
    case DiscRole::AdvXT: return "adv_x_t";
    case DiscRole::RegV: return "reg_v";
    case DiscRole::RegT: return "reg_t";
  }
  return "unknown";
}

DiscriminatorBank::DiscriminatorBank(const EncoderConfig& cfg, std::uint64_t seed) {
  const int code = cfg.code_dim;
  const int feat = cfg.feat_dim;
  const int hid = cfg.head_hidden;
  const double slope = cfg.leaky_slope;
  discs.reserve(kNumDiscRoles);
  auto mk = [&](DiscRole role, int da, int db) {
    discs.push_back(
        Discriminator(da, db, hid, slope, derive_seed(seed, static_cast<std::uint64_t>(role))));
  };
  mk(DiscRole::JsdSV, code, feat);
  mk(DiscRole::JsdST, code, feat);
  mk(DiscRole::JsdXV, code, feat);
  mk(DiscRole::JsdXT, code, feat);
  mk(DiscRole::AdvXV, code, feat);
  mk(DiscRole::AdvXT, code, feat);
  mk(DiscRole::RegV, code, code);
  mk(DiscRole::RegT, code, code);
}

BoundBank bind_bank(ad::Tape& tape, const DiscriminatorBank& bank, bool requires_grad) {
  BoundBank out;
  out.bound.reserve(bank.discs.size());
  for (const auto& d : bank.discs) out.bound.push_back(d.bind(tape, requires_grad));
  return out;
}

namespace {

ad::Var zero_scalar(ad::Tape& tape) { return tape.scalar_constant(0.0); }

// Gathers the row subset of every code group, or passes through when the
// subset is the whole batch.
struct SubsetCodes {
  ad::Var F_V, F_T, V_S, V_X, T_S, T_X;
};

SubsetCodes take_rows(const BatchCodes& c, const CleanSet& rows) {
  const long b = c.V_S.value().rows();
  if (static_cast<long>(rows.size()) == b) {
    return {c.F_V, c.F_T, c.V_S, c.V_X, c.T_S, c.T_X};
  }
  return {ad::rows(c.F_V, rows), ad::rows(c.F_T, rows), ad::rows(c.V_S, rows),
          ad::rows(c.V_X, rows), ad::rows(c.T_S, rows), ad::rows(c.T_X, rows)};
}

const nn::BoundParams& bound_of(const BoundBank& bd, DiscRole r) {
  return bd.bound[static_cast<std::size_t>(r)];
}

}  // namespace

LossTermResult loss_S(ad::Tape& tape, const BatchCodes& codes, const DiscriminatorBank& bank,
                      const BoundBank& bd, const CleanSet& rows, const LossWeights& w, Rng& rng) {
  LossTermResult out;
  if (rows.size() < 2) {
    out.value = zero_scalar(tape);
    out.skipped = true;
    return out;
  }
  const SubsetCodes s = take_rows(codes, rows);
  const long n = static_cast<long>(rows.size());
  ad::Var jsd_v = jsd_mi(bank.at(DiscRole::JsdSV), tape, bound_of(bd, DiscRole::JsdSV), s.V_S,
                         s.F_T, marginal_derangement(rng, n));
  ad::Var jsd_t = jsd_mi(bank.at(DiscRole::JsdST), tape, bound_of(bd, DiscRole::JsdST), s.T_S,
                         s.F_V, marginal_derangement(rng, n));
  ad::Var kl = kl_gaussian_bound(s.V_S, s.T_S) + kl_gaussian_bound(s.T_S, s.V_S);
  out.value = -(jsd_v + jsd_t) + w.beta1 * kl;
  out.disc_objectives = {jsd_v, jsd_t};
  return out;
}

LossTermResult loss_X(ad::Tape& tape, const BatchCodes& codes, const DiscriminatorBank& bank,
                      const BoundBank& bd, const CleanSet& rows, const LossWeights& w, Rng& rng) {
  LossTermResult out;
  if (rows.size() < 2) {
    out.value = zero_scalar(tape);
    out.skipped = true;
    return out;
  }
  const SubsetCodes s = take_rows(codes, rows);
  const long n = static_cast<long>(rows.size());
  ad::Var jsd_v = jsd_mi(bank.at(DiscRole::JsdXV), tape, bound_of(bd, DiscRole::JsdXV), s.V_X,
                         s.F_V, marginal_derangement(rng, n));
  ad::Var jsd_t = jsd_mi(bank.at(DiscRole::JsdXT), tape, bound_of(bd, DiscRole::JsdXT), s.T_X,
                         s.F_T, marginal_derangement(rng, n));
  AdversarialPenalty adv_v =
      adversarial_mi_penalty(bank.at(DiscRole::AdvXV), tape, bound_of(bd, DiscRole::AdvXV),
                             s.V_X, s.F_T, marginal_derangement(rng, n));
  AdversarialPenalty adv_t =
      adversarial_mi_penalty(bank.at(DiscRole::AdvXT), tape, bound_of(bd, DiscRole::AdvXT),
                             s.T_X, s.F_V, marginal_derangement(rng, n));
  out.value = -(jsd_v + jsd_t) +
              (1.0 + w.beta2) * (adv_v.encoder_penalty + adv_t.encoder_penalty);
  out.disc_objectives = {jsd_v, jsd_t, adv_v.disc_objective, adv_t.disc_objective};
  return out;
}

DisLosses loss_dis(ad::Tape& tape, const BatchCodes& codes, const DiscriminatorBank& bank,
                   const BoundBank& bd, const CleanSet& rows, const LossWeights& w, Rng& rng) {
  DisLosses out;
  out.s = loss_S(tape, codes, bank, bd, rows, w, rng);
  out.x = loss_X(tape, codes, bank, bd, rows, w, rng);
  out.skipped = out.s.skipped && out.x.skipped;
  out.dis = w.gamma * out.s.value + (1.0 - w.gamma) * out.x.value;
  return out;
}

namespace {

// Margin column for the active rows: constant alpha, or the soft margin
// (m^h - 1)/(m - 1) * alpha computed from clamped diagonal similarities.
ad::Var margin_column(ad::Tape& tape, ad::Var h_diag, const LossWeights& w, bool constant) {
  if (constant) {
    return tape.constant(
        ad::Mat::Constant(h_diag.value().rows(), 1, w.alpha));
  }
  ad::Var h = ad::clamp(h_diag, 0.0, 1.0);
  ad::Var powed = ad::exp_op(std::log(w.m) * h);
  return (w.alpha / (w.m - 1.0)) * (powed - 1.0);
}

}  // namespace

AlignResult loss_align(ad::Tape& tape, ad::Var H, const CleanSet& clean, const LossWeights& w,
                       bool warmup, bool use_adaptive_margin) {
  const Eigen::MatrixXd& hv = H.value();
  const long b = hv.rows();
  if (b < 2) throw SizeError("loss_align: B must be >= 2");

  CleanSet active;
  if (warmup) {
    active.resize(static_cast<std::size_t>(b));
    for (long i = 0; i < b; ++i) active[static_cast<std::size_t>(i)] = static_cast<int>(i);
  } else {
    active = clean;
  }
  AlignResult out;
  if (active.empty()) {
    out.value = tape.scalar_constant(0.0);
    out.skipped = true;
    return out;
  }

  std::vector<std::pair<int, int>> diag_idx, text_idx, img_idx;
  diag_idx.reserve(active.size());
  for (int i : active) {
    // Hard negatives are mined over the whole batch: with small clean sets
    // a clean-only candidate pool collapses the ranking signal entirely.
    int best_t = -1, best_i = -1;
    double best_t_val = 0.0, best_i_val = 0.0;
    for (int j = 0; j < static_cast<int>(b); ++j) {
      if (j == i) continue;
      if (best_t < 0 || hv(i, j) > best_t_val) {
        best_t = j;
        best_t_val = hv(i, j);
      }
      if (best_i < 0 || hv(j, i) > best_i_val) {
        best_i = j;
        best_i_val = hv(j, i);
      }
    }
    diag_idx.push_back({i, i});
    text_idx.push_back({i, best_t});
    img_idx.push_back({best_i, i});
  }

  ad::Var h_diag = ad::gather(H, diag_idx);
  ad::Var h_text = ad::gather(H, text_idx);
  ad::Var h_img = ad::gather(H, img_idx);
  const bool constant = warmup || !use_adaptive_margin;
  ad::Var margin = margin_column(tape, h_diag, w, constant);
  out.value = ad::sum(ad::relu(margin - h_diag + h_text)) +
              ad::sum(ad::relu(margin - h_diag + h_img));
  return out;
}

namespace {

Eigen::MatrixXd row_mask(const CleanSet& clean, long b) {
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(b, b);
  for (int i : clean) mask.row(i).setOnes();
  return mask;
}

}  // namespace

SoftTargetsGraph soft_targets(ad::Tape& tape, ad::Var H, const CleanSet& clean,
                              const LossWeights& w, const SoftTargets* frozen_y) {
  const long b = H.value().rows();
  if (b < 2) throw SizeError("soft_targets: B must be >= 2");
  ad::Var mask = tape.constant(row_mask(clean, b));
  ad::Var h_i2t = mask * H;
  ad::Var h_t2i = mask * ad::transpose(H);
  SoftTargetsGraph out;
  out.p_i2t = ad::softmax_rows((1.0 / w.tau) * h_i2t);
  out.p_t2i = ad::softmax_rows((1.0 / w.tau) * h_t2i);

  if (frozen_y) {
    out.y_i2t = frozen_y->y_i2t;
    out.y_t2i = frozen_y->y_t2i;
    return out;
  }

  // Bootstrapped targets: detached constants per step.
  const Eigen::MatrixXd p_i2t = out.p_i2t.value();
  const Eigen::MatrixXd p_t2i = out.p_t2i.value();
  out.y_i2t = Eigen::MatrixXd::Zero(b, b);
  out.y_t2i = Eigen::MatrixXd::Zero(b, b);
  for (int i : clean) {
    out.y_i2t.row(i) = (1.0 - w.beta3) * p_t2i.row(i);
    out.y_i2t(i, i) += w.beta3;
    out.y_t2i.row(i) = (1.0 - w.beta3) * p_i2t.row(i);
    out.y_t2i(i, i) += w.beta3;
  }
  return out;
}

SoftTargets SoftTargetsGraph::detached() const {
  return SoftTargets{p_i2t.value(), p_t2i.value(), y_i2t, y_t2i};
}

SoftTargets soft_targets_eval(const Eigen::MatrixXd& H, const CleanSet& clean,
                              const LossWeights& w) {
  ad::Tape tape;
  return soft_targets(tape, tape.constant(H), clean, w).detached();
}

SoftResult loss_soft(ad::Tape& tape, const SoftTargetsGraph& targets, const CleanSet& clean) {
  SoftResult out;
  if (clean.empty()) {
    out.value = tape.scalar_constant(0.0);
    out.skipped = true;
    return out;
  }
  const long b = targets.p_i2t.value().rows();
  Eigen::MatrixXd y_i2t = Eigen::MatrixXd::Zero(b, b);
  Eigen::MatrixXd y_t2i = Eigen::MatrixXd::Zero(b, b);
  for (int i : clean) {
    y_i2t.row(i) = targets.y_i2t.row(i);
    y_t2i.row(i) = targets.y_t2i.row(i);
  }
  ad::Var log_p_i2t = ad::log_op(ad::clamp(targets.p_i2t, 1e-12, 1.0));
  ad::Var log_p_t2i = ad::log_op(ad::clamp(targets.p_t2i, 1e-12, 1.0));
  out.value = -(ad::sum(tape.constant(y_i2t) * log_p_i2t) +
                ad::sum(tape.constant(y_t2i) * log_p_t2i));
  return out;
}

LossTermResult loss_reg(ad::Tape& tape, const BatchCodes& codes, const DiscriminatorBank& bank,
                        const BoundBank& bd, Rng& rng) {
  LossTermResult out;
  const long b = codes.V_S.value().rows();
  if (b < 2) {
    out.value = zero_scalar(tape);
    out.skipped = true;
    return out;
  }
  AdversarialPenalty reg_v =
      adversarial_mi_penalty(bank.at(DiscRole::RegV), tape, bound_of(bd, DiscRole::RegV),
                             codes.V_S, codes.V_X, marginal_derangement(rng, b));
  AdversarialPenalty reg_t =
      adversarial_mi_penalty(bank.at(DiscRole::RegT), tape, bound_of(bd, DiscRole::RegT),
                             codes.T_S, codes.T_X, marginal_derangement(rng, b));
  out.value = reg_v.encoder_penalty + reg_t.encoder_penalty;
  out.disc_objectives = {reg_v.disc_objective, reg_t.disc_objective};
  return out;
}

LossBundle build_losses(ad::Tape& tape, const BatchCodes& codes, ad::Var H,
                        const DiscriminatorBank& bank, const BoundBank& bd,
                        const LossWeights& w, const AblationSwitches& ab, bool warmup,
                        bool dis_on_clean_only, Rng rng) {
  w.validate();
  LossBundle out;
  const long b = H.value().rows();
  out.clean = filter_clean(H.value());

  CleanSet all(static_cast<std::size_t>(b));
  for (long i = 0; i < b; ++i) all[static_cast<std::size_t>(i)] = static_cast<int>(i);
  out.active = (warmup || !ab.use_filtration) ? all : out.clean;

  std::vector<ad::Var> disc_objs;
  ad::Var total = tape.scalar_constant(0.0);

  if (warmup) {
    out.align = loss_align(tape, H, out.active, w, /*warmup=*/true);
    out.dis.s.value = out.dis.x.value = out.dis.dis = tape.scalar_constant(0.0);
    out.dis.skipped = true;
    out.soft.value = tape.scalar_constant(0.0);
    out.soft.skipped = true;
    out.reg.value = tape.scalar_constant(0.0);
    out.reg.skipped = true;
    out.total = out.align.value;
    out.disc_total = tape.scalar_constant(0.0);
    return out;
  }

  out.align = loss_align(tape, H, out.active, w, /*warmup=*/false, ab.use_adaptive_margin);
  total = total + out.align.value;

  if (ab.enable_dis) {
    const CleanSet& dis_rows = dis_on_clean_only ? out.active : all;
    out.dis = loss_dis(tape, codes, bank, bd, dis_rows, w, rng);
    total = total + out.dis.dis;
    for (auto v : out.dis.s.disc_objectives) disc_objs.push_back(v);
    for (auto v : out.dis.x.disc_objectives) disc_objs.push_back(v);
  } else {
    out.dis.s.value = out.dis.x.value = out.dis.dis = tape.scalar_constant(0.0);
    out.dis.s.skipped = out.dis.x.skipped = out.dis.skipped = true;
  }

  if (ab.enable_soft) {
    SoftTargetsGraph targets = soft_targets(tape, H, out.active, w);
    out.soft = loss_soft(tape, targets, out.active);
    total = total + out.soft.value;
  } else {
    out.soft.value = tape.scalar_constant(0.0);
    out.soft.skipped = true;
  }

  if (ab.enable_reg) {
    out.reg = loss_reg(tape, codes, bank, bd, rng);
    total = total + out.reg.value;
    for (auto v : out.reg.disc_objectives) disc_objs.push_back(v);
  } else {
    out.reg.value = tape.scalar_constant(0.0);
    out.reg.skipped = true;
  }

  out.total = total;
  ad::Var disc_total = tape.scalar_constant(0.0);
  for (auto v : disc_objs) disc_total = disc_total + v;
  out.disc_total = disc_total;
  out.has_disc_objectives = !disc_objs.empty();
  return out;
}

}  // namespace disncl
