#include "disncl/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "disncl/common.hpp"
#include "disncl/container.hpp"

namespace fs = std::filesystem;

namespace disncl {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (warmup_epochs < 0) throw ConfigError("TrainConfig: warmup_epochs must be >= 0");
  if (warmup_epochs >= epochs) throw ConfigError("TrainConfig: warmup_epochs must be < epochs");
  if (batch < 2) throw ConfigError("TrainConfig: batch must be >= 2");
  if (lr < 0.0 || lr_disc < 0.0) throw ConfigError("TrainConfig: learning rates must be >= 0");
  if (lr_decay_factor <= 0.0) throw ConfigError("TrainConfig: lr_decay_factor must be > 0");
  if (checkpoint_every < 1) throw ConfigError("TrainConfig: checkpoint_every must be >= 1");
}

int TrainConfig::resolved_decay_at() const {
  // Paper schedule: decay after epoch 25 of 50; scaled proportionally.
  if (lr_decay_at >= 0) return lr_decay_at;
  return epochs / 2;
}

double TrainConfig::lr_for_epoch(int main_epoch) const {
  return main_epoch > resolved_decay_at() ? lr * lr_decay_factor : lr;
}

double TrainConfig::lr_disc_for_epoch(int main_epoch) const {
  return main_epoch > resolved_decay_at() ? lr_disc * lr_decay_factor : lr_disc;
}

PairBatch make_batch(const PairDataset& data, const std::vector<long>& idx) {
  PairBatch b;
  b.V.resize(static_cast<long>(idx.size()), data.V.cols());
  b.T.resize(static_cast<long>(idx.size()), data.T.cols());
  b.match.resize(idx.size());
  b.noise_mask.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    b.V.row(static_cast<long>(i)) = data.V.row(idx[i]);
    b.T.row(static_cast<long>(i)) = data.T.row(idx[i]);
    b.match[i] = data.match[static_cast<std::size_t>(idx[i])];
    b.noise_mask[i] = data.noise_mask[static_cast<std::size_t>(idx[i])];
  }
  return b;
}

nlohmann::json LossReport::to_json() const {
  return {{"step", step},
          {"epoch", epoch},
          {"warmup", warmup},
          {"loss_s", loss_s},
          {"loss_x", loss_x},
          {"loss_dis", loss_dis},
          {"loss_align", loss_align},
          {"loss_soft", loss_soft},
          {"loss_reg", loss_reg},
          {"loss_total", loss_total},
          {"grad_norm_dis", grad_norm_dis},
          {"grad_norm_align", grad_norm_align},
          {"grad_norm_soft", grad_norm_soft},
          {"grad_norm_reg", grad_norm_reg},
          {"grad_norm_total", grad_norm_total},
          {"clean_size", clean_size},
          {"filtration_precision", filtration_precision},
          {"filtration_recall", filtration_recall},
          {"dis_skipped", dis_skipped},
          {"align_skipped", align_skipped},
          {"soft_skipped", soft_skipped}};
}

TrainState init_state(const TrainSetup& setup) {
  setup.train.validate();
  setup.weights.validate();
  TrainState st;
  EncoderConfig model = setup.model;
  model.seed = setup.model_seed;
  st.encoders = EncoderStack(model);
  st.bank = DiscriminatorBank(model, derive_seed(setup.model_seed, 17));
  st.adam_enc = nn::Adam(st.encoders.params());
  st.adam_disc.clear();
  for (const auto& d : st.bank.discs) st.adam_disc.push_back(nn::Adam(d.params()));
  st.run_rng = Rng(setup.train.seed);
  return st;
}

namespace {

double grad_norm(const nn::ParamSet& params, const nn::BoundParams& bound) {
  double acc = 0.0;
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    const ad::Var v = bound.vars[i];
    if (v.grad().size() != 0) acc += v.grad().squaredNorm();
  }
  return std::sqrt(acc);
}

}  // namespace

LossReport train_step(TrainState& st, const PairBatch& batch, const TrainSetup& setup,
                      bool warmup, double lr, double lr_disc) {
  if (batch.size() < 2) throw SizeError("train_step: batch must have B >= 2");
  const CosineSimilarity cosine;

  // Per-step randomness: one seed per phase so each phase replays the same
  // derangements on its own tape.
  const std::uint64_t seed_disc = st.run_rng.next_u64();
  const std::uint64_t seed_enc = st.run_rng.next_u64();

  // Phase 1+2+3: forward, filtration, discriminator ascent (skipped during
  // warmup; no filtration or estimator updates there).
  if (!warmup) {
    ad::Tape tape;
    const nn::BoundParams enc_bound = st.encoders.bind(tape, /*requires_grad=*/false);
    const BoundBank bank_bound = bind_bank(tape, st.bank, /*requires_grad=*/true);
    const auto fwd =
        st.encoders.encode(tape, enc_bound, tape.constant(batch.V), tape.constant(batch.T));
    const BatchCodes codes{fwd.F_V, fwd.F_T, fwd.V_S, fwd.V_X, fwd.T_S, fwd.T_X};
    ad::Var H = cosine.matrix(tape, fwd.V_S, fwd.T_S);
    LossBundle bundle =
        build_losses(tape, codes, H, st.bank, bank_bound, setup.weights, setup.ablation,
                     /*warmup=*/false, setup.train.dis_on_clean_only, Rng(seed_disc));
    if (bundle.has_disc_objectives) {
      tape.backward(bundle.disc_total);
      nn::AdamConfig acfg;
      acfg.lr = lr_disc;
      for (std::size_t i = 0; i < st.bank.discs.size(); ++i) {
        auto grads = nn::collect_grads(st.bank.discs[i].params(), bank_bound.bound[i]);
        st.adam_disc[i].step(st.bank.discs[i].params(), grads, acfg, /*ascent=*/+1.0);
      }
    }
  }

  // Phase 4: encoder/head descent on L_total with the freshest critics.
  ad::Tape tape;
  const nn::BoundParams enc_bound = st.encoders.bind(tape, /*requires_grad=*/true);
  const BoundBank bank_bound = bind_bank(tape, st.bank, /*requires_grad=*/false);
  const auto fwd =
      st.encoders.encode(tape, enc_bound, tape.constant(batch.V), tape.constant(batch.T));
  const BatchCodes codes{fwd.F_V, fwd.F_T, fwd.V_S, fwd.V_X, fwd.T_S, fwd.T_X};
  ad::Var H = cosine.matrix(tape, fwd.V_S, fwd.T_S);
  LossBundle bundle =
      build_losses(tape, codes, H, st.bank, bank_bound, setup.weights, setup.ablation, warmup,
                   setup.train.dis_on_clean_only, Rng(seed_enc));

  LossReport rep;
  rep.step = st.step;
  rep.epoch = st.epoch + 1;
  rep.warmup = warmup;
  rep.loss_s = bundle.dis.s.value.scalar();
  rep.loss_x = bundle.dis.x.value.scalar();
  rep.loss_dis = bundle.dis.dis.scalar();
  rep.loss_align = bundle.align.value.scalar();
  rep.loss_soft = bundle.soft.value.scalar();
  rep.loss_reg = bundle.reg.value.scalar();
  rep.loss_total = bundle.total.scalar();
  rep.clean_size = static_cast<int>(bundle.clean.size());
  rep.dis_skipped = bundle.dis.skipped;
  rep.align_skipped = bundle.align.skipped;
  rep.soft_skipped = bundle.soft.skipped;
  const FiltrationQuality fq = filtration_quality(bundle.clean, batch.noise_mask);
  rep.filtration_precision = fq.precision;
  rep.filtration_recall = fq.recall;

  if (!std::isfinite(rep.loss_total)) {
    throw TrainingDiverged("non-finite loss at step " + std::to_string(st.step));
  }

  if (setup.train.log_grad_norms && !warmup) {
    auto comp_norm = [&](ad::Var v) {
      tape.zero_grad();
      tape.backward(v);
      return grad_norm(st.encoders.params(), enc_bound);
    };
    rep.grad_norm_dis = bundle.dis.skipped ? 0.0 : comp_norm(bundle.dis.dis);
    rep.grad_norm_align = bundle.align.skipped ? 0.0 : comp_norm(bundle.align.value);
    rep.grad_norm_soft = bundle.soft.skipped ? 0.0 : comp_norm(bundle.soft.value);
    rep.grad_norm_reg = bundle.reg.skipped ? 0.0 : comp_norm(bundle.reg.value);
    tape.zero_grad();
  }

  tape.backward(bundle.total);
  rep.grad_norm_total = grad_norm(st.encoders.params(), enc_bound);
  if (warmup) rep.grad_norm_align = rep.grad_norm_total;

  nn::AdamConfig acfg;
  acfg.lr = lr;
  auto grads = nn::collect_grads(st.encoders.params(), enc_bound);
  st.adam_enc.step(st.encoders.params(), grads, acfg, /*descent=*/-1.0);
  ++st.step;
  return rep;
}

namespace {

std::vector<std::vector<long>> epoch_batches(long n, int batch, Rng& rng) {
  std::vector<long> order(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<std::vector<long>> batches;
  for (long begin = 0; begin < n; begin += batch) {
    const long end = std::min<long>(begin + batch, n);
    if (end - begin < 2) break;  // derangements and filtration need >= 2 rows
    batches.emplace_back(order.begin() + begin, order.begin() + end);
  }
  return batches;
}

}  // namespace

void run_warmup(TrainState& st, const PairDataset& train, const TrainSetup& setup,
                const std::function<void(const LossReport&)>& sink) {
  for (int e = 0; e < setup.train.warmup_epochs; ++e) {
    const auto batches = epoch_batches(train.size(), setup.train.batch, st.run_rng);
    for (const auto& idx : batches) {
      const LossReport rep = train_step(st, make_batch(train, idx), setup, /*warmup=*/true,
                                        setup.train.lr, setup.train.lr_disc);
      if (sink) sink(rep);
    }
    ++st.epoch;
  }
}

void save_checkpoint(const std::string& path, const TrainState& st) {
  Container c;
  c.meta["kind"] = "checkpoint";
  c.meta["step"] = st.step;
  c.meta["epoch"] = st.epoch;
  c.meta["rng"] = st.run_rng.serialize();
  c.meta["adam_enc_t"] = st.adam_enc.step_count();
  nlohmann::json disc_t = nlohmann::json::array();
  for (const auto& a : st.adam_disc) disc_t.push_back(a.step_count());
  c.meta["adam_disc_t"] = disc_t;

  for (const auto& p : st.encoders.params().items) c.arrays.push_back({"enc." + p.name, p.value});
  for (std::size_t i = 0; i < st.encoders.params().items.size(); ++i) {
    const auto& name = st.encoders.params().items[i].name;
    c.arrays.push_back({"adam.enc.m." + name, st.adam_enc.m()[i]});
    c.arrays.push_back({"adam.enc.v." + name, st.adam_enc.v()[i]});
  }
  for (int r = 0; r < kNumDiscRoles; ++r) {
    const auto role = static_cast<DiscRole>(r);
    const auto& disc = st.bank.at(role);
    const std::string prefix = std::string("disc.") + disc_role_name(role) + ".";
    for (const auto& p : disc.params().items) c.arrays.push_back({prefix + p.name, p.value});
    for (std::size_t i = 0; i < disc.params().items.size(); ++i) {
      const auto& name = disc.params().items[i].name;
      c.arrays.push_back({"adam." + prefix + "m." + name,
                          st.adam_disc[static_cast<std::size_t>(r)].m()[i]});
      c.arrays.push_back({"adam." + prefix + "v." + name,
                          st.adam_disc[static_cast<std::size_t>(r)].v()[i]});
    }
  }
  write_container(path, c);
}

namespace {

void load_into(const Container& c, const std::string& name, nn::MatF& dst) {
  const NamedArray* a = c.find(name);
  if (!a) throw IoError("checkpoint: missing array " + name);
  if (a->data.rows() != dst.rows() || a->data.cols() != dst.cols()) {
    throw IoError("checkpoint: shape mismatch for " + name);
  }
  dst = a->data;
}

}  // namespace

void load_checkpoint(const std::string& path, TrainState& st) {
  Container c = read_container(path);
  if (c.meta.value("kind", "") != "checkpoint") {
    throw IoError("load_checkpoint: " + path + " is not a checkpoint container");
  }
  st.step = c.meta.at("step").get<long>();
  st.epoch = c.meta.at("epoch").get<int>();
  st.run_rng = Rng::deserialize(c.meta.at("rng").get<std::string>());
  st.adam_enc.set_step_count(c.meta.at("adam_enc_t").get<std::int64_t>());
  const auto disc_t = c.meta.at("adam_disc_t");

  for (auto& p : st.encoders.params().items) load_into(c, "enc." + p.name, p.value);
  for (std::size_t i = 0; i < st.encoders.params().items.size(); ++i) {
    const auto& name = st.encoders.params().items[i].name;
    load_into(c, "adam.enc.m." + name, st.adam_enc.m()[i]);
    load_into(c, "adam.enc.v." + name, st.adam_enc.v()[i]);
  }
  for (int r = 0; r < kNumDiscRoles; ++r) {
    const auto role = static_cast<DiscRole>(r);
    auto& disc = st.bank.at(role);
    auto& adam = st.adam_disc[static_cast<std::size_t>(r)];
    adam.set_step_count(disc_t.at(static_cast<std::size_t>(r)).get<std::int64_t>());
    const std::string prefix = std::string("disc.") + disc_role_name(role) + ".";
    for (auto& p : disc.params().items) load_into(c, prefix + p.name, p.value);
    for (std::size_t i = 0; i < disc.params().items.size(); ++i) {
      const auto& name = disc.params().items[i].name;
      load_into(c, "adam." + prefix + "m." + name, adam.m()[i]);
      load_into(c, "adam." + prefix + "v." + name, adam.v()[i]);
    }
  }
}

FitResult fit(const TrainSetup& setup, const PairDataset& train, const PairDataset& test,
              const std::string& run_dir, const nlohmann::json& config_snapshot,
              const FitOptions& opts) {
  setup.train.validate();
  fs::create_directories(run_dir);
  fs::create_directories(run_dir + "/checkpoints");

  TrainState st = init_state(setup);
  if (opts.resume_from) load_checkpoint(*opts.resume_from, st);

  {
    std::ofstream cfg(run_dir + "/config.json", std::ios::trunc);
    cfg << config_snapshot.dump(2) << '\n';
  }

  std::ofstream metrics(run_dir + "/metrics.jsonl",
                        opts.resume_from ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("fit: cannot open metrics.jsonl under " + run_dir);

  // Per-epoch mean loss_total, recomputable from metrics.jsonl.
  std::vector<double> epoch_mean_total;
  std::vector<int> epoch_ids;

  auto write_failure_manifest = [&](const std::string& message) {
    nlohmann::json summary;
    summary["status"] = "failed";
    summary["error"] = message;
    summary["epochs_completed"] = st.epoch;
    summary["steps_completed"] = st.step;
    std::ofstream out(run_dir + "/summary.json", std::ios::trunc);
    out << summary.dump(2) << '\n';
  };

  const int total_epochs = setup.train.warmup_epochs + setup.train.epochs;
  try {
    while (st.epoch < total_epochs) {
      const bool warmup = st.epoch < setup.train.warmup_epochs;
      const int main_epoch = st.epoch - setup.train.warmup_epochs + 1;  // 1-based
      const double lr = warmup ? setup.train.lr : setup.train.lr_for_epoch(main_epoch);
      const double lr_disc =
          warmup ? setup.train.lr_disc : setup.train.lr_disc_for_epoch(main_epoch);

      const auto batches = epoch_batches(train.size(), setup.train.batch, st.run_rng);
      double total_acc = 0.0;
      long steps_in_epoch = 0;
      for (const auto& idx : batches) {
        const PairBatch batch = make_batch(train, idx);
        LossReport rep;
        try {
          rep = train_step(st, batch, setup, warmup, lr, lr_disc);
        } catch (const TrainingDiverged& e) {
          // Diagnostic dump of the offending batch, then abort the run.
          PairDataset dump;
          dump.V = batch.V;
          dump.T = batch.T;
          dump.match = batch.match;
          dump.noise_mask = batch.noise_mask;
          save_dataset(run_dir + "/diverged_batch.dncl", dump);
          write_failure_manifest(e.what());
          throw;
        }
        metrics << rep.to_json().dump() << '\n';
        if (opts.sink) opts.sink(rep);
        total_acc += rep.loss_total;
        ++steps_in_epoch;
      }
      ++st.epoch;
      epoch_ids.push_back(st.epoch);
      epoch_mean_total.push_back(steps_in_epoch > 0 ? total_acc / steps_in_epoch : 0.0);
      if (st.epoch % setup.train.checkpoint_every == 0 || st.epoch == total_epochs) {
        save_checkpoint(run_dir + "/checkpoints/epoch_" + std::to_string(st.epoch) + ".ckpt",
                        st);
      }
      metrics.flush();
      if (!metrics) throw IoError("fit: metrics.jsonl write failed");
    }
  } catch (const IoError& e) {
    write_failure_manifest(e.what());
    throw;
  }

  // Final evaluation on the held-out split.
  const CosineSimilarity cosine;
  const auto enc_test = st.encoders.encode_eval(test.V, test.T);
  const Eigen::MatrixXd h_test = similarity_matrix(enc_test.codes, cosine);
  const RetrievalReport retrieval = recall_at_k(h_test, opts.eval.ks);
  const FiltrationQuality filt = filtration_eval(st.encoders, train, setup.train.batch);

  nlohmann::json summary;
  summary["status"] = "ok";
  summary["epochs"] = st.epoch;
  summary["steps"] = st.step;
  summary["final_lr"] = setup.train.lr_for_epoch(setup.train.epochs);
  summary["epoch_mean_loss_total"] = epoch_mean_total;
  summary["epoch_ids"] = epoch_ids;
  summary["retrieval"] = retrieval.to_json();
  summary["filtration_train"] = filt.to_json();
  if (opts.eval_disentanglement) {
    summary["disentanglement"] = disentanglement_report(st.encoders, test, opts.eval).to_json();
  }
  if (opts.write_histograms) {
    // Train-split diagonal similarity histogram split by the noise mask.
    const long probe_n = std::min<long>(train.size(), 2000);
    const PairDataset probe = train.slice(0, probe_n);
    const auto enc_probe = st.encoders.encode_eval(probe.V, probe.T);
    const Eigen::MatrixXd h_probe = similarity_matrix(enc_probe.codes, cosine);
    const SimilarityHistogram hist =
        similarity_histogram(h_probe, probe.noise_mask, opts.eval.histogram_bins);
    summary["similarity_histogram"] = hist.to_json();
    std::ofstream csv(run_dir + "/similarity_histogram.csv", std::ios::trunc);
    csv << hist.to_csv();
  }

  std::ofstream out(run_dir + "/summary.json", std::ios::trunc);
  out << summary.dump(2) << '\n';
  if (!out) throw IoError("fit: cannot write summary.json");

  return FitResult{run_dir, summary};
}

}  // namespace disncl
