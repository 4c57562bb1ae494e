// disncl — experiment runner for the disentangled noisy-correspondence
// framework: dataset generation/ingest, training, evaluation, and noise
// sweeps with CSV/SVG outputs.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "disncl/common.hpp"
#include "disncl/config.hpp"
#include "disncl/container.hpp"
#include "disncl/evaluation.hpp"
#include "disncl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
  std::optional<std::int64_t> seed;
  std::optional<std::string> out;
  std::optional<int> epochs;
  std::optional<std::string> noise_protocol;
  std::optional<double> eta;
};

json load_raw_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw disncl::IoError("cannot open config file: " + path);
  json j;
  in >> j;
  return j;
}

json apply_overrides(json raw, const Overrides& ov) {
  if (ov.seed) raw["seed"] = *ov.seed;
  if (ov.out) raw["out_dir"] = *ov.out;
  if (ov.epochs) raw["train"]["epochs"] = *ov.epochs;
  if (ov.noise_protocol) raw["data"]["noise"]["protocol"] = *ov.noise_protocol;
  if (ov.eta) raw["data"]["noise"]["eta"] = *ov.eta;
  return raw;
}

int worker_threads() {
  const char* env = std::getenv("DISNCL_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return std::max(1, n);
}

std::string test_sibling_path(const std::string& path) {
  const fs::path p(path);
  fs::path out = p.parent_path() / (p.stem().string() + "_test" + p.extension().string());
  return out.string();
}

int cmd_generate(const std::string& config_path, const Overrides& ov) {
  const json raw = apply_overrides(load_raw_config(config_path), ov);
  const disncl::ExperimentConfig cfg = disncl::parse_experiment_config(raw);
  const disncl::PreparedExperiment prep = disncl::prepare_experiment(cfg);

  fs::path out = ov.out ? fs::path(*ov.out) : fs::path(cfg.out_dir) / "dataset.dncl";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  disncl::save_dataset(out.string(), prep.train);
  const std::string test_path = test_sibling_path(out.string());
  disncl::save_dataset(test_path, prep.test);

  std::cout << "wrote " << out.string() << " (train) and " << test_path << " (test)\n"
            << "  n_train=" << prep.train.size() << " n_test=" << prep.test.size()
            << " eta=" << prep.train.noise_fraction()
            << " dims=" << prep.train.V.cols() << "x" << prep.train.T.cols() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const Overrides& ov) {
  const json raw = apply_overrides(load_raw_config(config_path), ov);
  const disncl::ExperimentConfig cfg = disncl::parse_experiment_config(raw);
  disncl::PreparedExperiment prep = disncl::prepare_experiment(cfg);
  const disncl::FitResult res =
      disncl::fit(prep.setup, prep.train, prep.test, cfg.out_dir, prep.snapshot,
                  prep.fit_options);
  std::cout << "run complete: " << res.run_dir << "\n"
            << "  r_sum=" << res.summary["retrieval"]["r_sum"].get<double>() << "\n";
  return 0;
}

std::string latest_checkpoint(const std::string& run_dir) {
  const fs::path dir = fs::path(run_dir) / "checkpoints";
  int best = -1;
  std::string best_path;
  if (!fs::exists(dir)) throw disncl::IoError("no checkpoints under " + run_dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("epoch_", 0) == 0 && e.path().extension() == ".ckpt") {
      const int n = std::atoi(name.substr(6).c_str());
      if (n > best) {
        best = n;
        best_path = e.path().string();
      }
    }
  }
  if (best < 0) throw disncl::IoError("no checkpoints under " + run_dir);
  return best_path;
}

int cmd_eval(const std::string& run_dir, const std::string& checkpoint) {
  const disncl::ExperimentConfig cfg = disncl::load_experiment_config(run_dir + "/config.json");
  disncl::PreparedExperiment prep = disncl::prepare_experiment(cfg);
  disncl::TrainState st = disncl::init_state(prep.setup);
  const std::string ckpt = checkpoint.empty() ? latest_checkpoint(run_dir) : checkpoint;
  disncl::load_checkpoint(ckpt, st);

  const disncl::CosineSimilarity cosine;
  auto eval_split = [&](const disncl::PairDataset& data, bool with_disentanglement) {
    const auto enc = st.encoders.encode_eval(data.V, data.T);
    const Eigen::MatrixXd h = cosine.matrix_eval(enc.codes.V_S, enc.codes.T_S);
    json out;
    out["retrieval"] = disncl::recall_at_k(h, cfg.eval.options.ks).to_json();
    out["filtration"] =
        disncl::filtration_eval(st.encoders, data, prep.setup.train.batch).to_json();
    if (with_disentanglement && cfg.eval.disentanglement) {
      out["disentanglement"] =
          disncl::disentanglement_report(st.encoders, data, cfg.eval.options).to_json();
    }
    return out;
  };

  json report;
  report["checkpoint"] = ckpt;
  report["test"] = eval_split(prep.test, true);
  report["train"] = eval_split(prep.train, false);

  std::ofstream out(run_dir + "/eval.json", std::ios::trunc);
  out << report.dump(2) << '\n';
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_ingest(const std::string& path_a, const std::string& path_b, const std::string& out) {
  const disncl::PairDataset d = disncl::ingest_pair(path_a, path_b);
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  disncl::save_dataset(out, d);
  std::cout << "ingested " << d.size() << " pairs (" << d.V.cols() << "x" << d.T.cols()
            << ") -> " << out << "\n";
  return 0;
}

// ---- sweep ----

struct CellResult {
  double eta = 0.0;
  std::string variant;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  disncl::RetrievalReport retrieval;
};

disncl::RetrievalReport retrieval_from_summary(const json& s) {
  disncl::RetrievalReport r;
  r.r_sum = s.at("r_sum").get<double>();
  for (const auto& [key, val] : s.at("i2t").items()) {
    const int k = std::atoi(key.substr(2).c_str());
    r.ks.push_back(k);
    r.recall_i2t[k] = val.get<double>();
  }
  for (const auto& [key, val] : s.at("t2i").items()) {
    const int k = std::atoi(key.substr(2).c_str());
    r.recall_t2i[k] = val.get<double>();
  }
  std::sort(r.ks.begin(), r.ks.end());
  return r;
}

// Minimal polyline chart: r_sum (mean over seeds) vs eta, one line per
// variant. Static SVG only.
std::string render_rsum_svg(const std::vector<double>& etas,
                            const std::vector<std::string>& variants,
                            const std::vector<std::vector<double>>& values /*[variant][eta]*/) {
  const int width = 640, height = 420;
  const int ml = 70, mr = 150, mt = 30, mb = 50;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;
  double lo = 1e300, hi = -1e300;
  for (const auto& row : values) {
    for (double v : row) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!(lo < hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double ex_lo = *std::min_element(etas.begin(), etas.end());
  const double ex_hi = *std::max_element(etas.begin(), etas.end());
  auto sx = [&](double e) {
    return ex_hi > ex_lo ? ml + (e - ex_lo) / (ex_hi - ex_lo) * plot_w : ml + plot_w / 2;
  };
  auto sy = [&](double v) { return mt + (hi - v) / (hi - lo) * plot_h; };

  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
    << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  s << "<line x1='" << ml << "' y1='" << mt + plot_h << "' x2='" << ml + plot_w << "' y2='"
    << mt + plot_h << "' stroke='black'/>\n";
  s << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + plot_h
    << "' stroke='black'/>\n";
  for (double e : etas) {
    s << "<text x='" << sx(e) << "' y='" << mt + plot_h + 20
      << "' font-size='12' text-anchor='middle'>" << e << "</text>\n";
    s << "<line x1='" << sx(e) << "' y1='" << mt + plot_h << "' x2='" << sx(e) << "' y2='"
      << mt + plot_h + 4 << "' stroke='black'/>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    s << "<text x='" << ml - 8 << "' y='" << sy(v) + 4
      << "' font-size='12' text-anchor='end'>" << static_cast<int>(std::lround(v))
      << "</text>\n";
    s << "<line x1='" << ml - 4 << "' y1='" << sy(v) << "' x2='" << ml << "' y2='" << sy(v)
      << "' stroke='black'/>\n";
  }
  s << "<text x='" << ml + plot_w / 2 << "' y='" << height - 10
    << "' font-size='13' text-anchor='middle'>noise ratio</text>\n";
  s << "<text x='18' y='" << mt + plot_h / 2
    << "' font-size='13' text-anchor='middle' transform='rotate(-90 18 " << mt + plot_h / 2
    << ")'>R_sum</text>\n";
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    const char* color = colors[vi % 6];
    s << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
    for (std::size_t ei = 0; ei < etas.size(); ++ei) {
      s << sx(etas[ei]) << ',' << sy(values[vi][ei]) << ' ';
    }
    s << "'/>\n";
    for (std::size_t ei = 0; ei < etas.size(); ++ei) {
      s << "<circle cx='" << sx(etas[ei]) << "' cy='" << sy(values[vi][ei])
        << "' r='3' fill='" << color << "'/>\n";
    }
    const double ly = mt + 16 + 18 * static_cast<double>(vi);
    s << "<line x1='" << ml + plot_w + 10 << "' y1='" << ly << "' x2='" << ml + plot_w + 30
      << "' y2='" << ly << "' stroke='" << color << "' stroke-width='2'/>\n";
    s << "<text x='" << ml + plot_w + 36 << "' y='" << ly + 4 << "' font-size='12'>"
      << variants[vi] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

int cmd_sweep(const std::string& config_path, const Overrides& ov) {
  const json raw = apply_overrides(load_raw_config(config_path), ov);
  const disncl::ExperimentConfig base = disncl::parse_experiment_config(raw);
  const std::string out_dir = base.out_dir;
  fs::create_directories(out_dir);

  struct Cell {
    double eta;
    disncl::SweepVariant variant;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double eta : base.sweep.etas) {
    for (const auto& variant : base.sweep.variants) {
      for (std::uint64_t seed : base.sweep.seeds) {
        cells.push_back({eta, variant, seed});
      }
    }
  }

  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;

  auto run_cell = [&](std::size_t ci) {
    const Cell& cell = cells[ci];
    CellResult& res = results[ci];
    res.eta = cell.eta;
    res.variant = cell.variant.name;
    res.seed = cell.seed;
    std::ostringstream dir;
    dir << out_dir << "/cells/eta" << cell.eta << "_" << cell.variant.name << "_s" << cell.seed;
    try {
      json cell_raw = raw;
      cell_raw["seed"] = cell.seed;
      cell_raw["data"]["noise"]["eta"] = cell.eta;
      cell_raw["ablation"] = {{"enable_dis", cell.variant.ablation.enable_dis},
                              {"enable_soft", cell.variant.ablation.enable_soft},
                              {"enable_reg", cell.variant.ablation.enable_reg},
                              {"use_filtration", cell.variant.ablation.use_filtration},
                              {"use_adaptive_margin", cell.variant.ablation.use_adaptive_margin}};
      cell_raw["out_dir"] = dir.str();
      cell_raw.erase("sweep");
      const disncl::ExperimentConfig cfg = disncl::parse_experiment_config(cell_raw);
      disncl::PreparedExperiment prep = disncl::prepare_experiment(cfg);
      prep.fit_options.eval_disentanglement = false;  // cells report retrieval only
      prep.fit_options.write_histograms = false;
      const disncl::FitResult fr =
          disncl::fit(prep.setup, prep.train, prep.test, dir.str(), prep.snapshot,
                      prep.fit_options);
      res.retrieval = retrieval_from_summary(fr.summary.at("retrieval"));
      res.ok = true;
    } catch (const std::exception& e) {
      res.ok = false;
      res.error = e.what();
    }
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cout << "cell eta=" << cell.eta << " variant=" << cell.variant.name
              << " seed=" << cell.seed << (res.ok ? " ok" : std::string(" FAILED: ") + res.error);
    if (res.ok) std::cout << " r_sum=" << res.retrieval.r_sum;
    std::cout << std::endl;
  };

  const int threads = std::min<int>(worker_threads(), static_cast<int>(cells.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= cells.size()) return;
          run_cell(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  // Per-cell CSV shaped like the retrieval tables: R@1/5/10 both directions
  // plus R_sum.
  std::ofstream csv(out_dir + "/sweep.csv", std::ios::trunc);
  csv << "eta,variant,seed,status,r1_i2t,r5_i2t,r10_i2t,r1_t2i,r5_t2i,r10_t2i,r_sum\n";
  for (const auto& r : results) {
    csv << r.eta << ',' << r.variant << ',' << r.seed << ',' << (r.ok ? "ok" : "failed");
    if (r.ok) {
      for (int k : {1, 5, 10}) csv << ',' << 100.0 * r.retrieval.recall_i2t.at(k);
      for (int k : {1, 5, 10}) csv << ',' << 100.0 * r.retrieval.recall_t2i.at(k);
      csv << ',' << r.retrieval.r_sum;
    } else {
      csv << ",,,,,,,";
    }
    csv << '\n';
  }

  // Seed-averaged table + plot.
  std::vector<std::string> variant_names;
  for (const auto& v : base.sweep.variants) variant_names.push_back(v.name);
  std::vector<std::vector<double>> mean_rsum(variant_names.size(),
                                             std::vector<double>(base.sweep.etas.size(), 0.0));
  std::ofstream mcsv(out_dir + "/sweep_mean.csv", std::ios::trunc);
  mcsv << "eta,variant,n_ok,r_sum_mean\n";
  for (std::size_t vi = 0; vi < variant_names.size(); ++vi) {
    for (std::size_t ei = 0; ei < base.sweep.etas.size(); ++ei) {
      double acc = 0.0;
      int n = 0;
      for (const auto& r : results) {
        if (r.ok && r.variant == variant_names[vi] && r.eta == base.sweep.etas[ei]) {
          acc += r.retrieval.r_sum;
          ++n;
        }
      }
      const double mean = n > 0 ? acc / n : std::nan("");
      mean_rsum[vi][ei] = mean;
      mcsv << base.sweep.etas[ei] << ',' << variant_names[vi] << ',' << n << ',' << mean << '\n';
    }
  }
  std::ofstream svg(out_dir + "/sweep_rsum.svg", std::ios::trunc);
  svg << render_rsum_svg(base.sweep.etas, variant_names, mean_rsum);

  json summary;
  summary["cells_total"] = cells.size();
  long failures = 0;
  for (const auto& r : results) failures += r.ok ? 0 : 1;
  summary["cells_failed"] = failures;
  std::ofstream sj(out_dir + "/sweep_summary.json", std::ios::trunc);
  sj << summary.dump(2) << '\n';

  std::cout << "sweep complete: " << out_dir << "/sweep.csv (" << failures << " failures)\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disentangled noisy-correspondence learning experiments"};
  app.require_subcommand(1);

  std::string config_path, run_dir, checkpoint, path_a, path_b, out_path;
  Overrides ov;
  std::int64_t seed_flag = -1;
  std::string out_flag, protocol_flag;
  double eta_flag = -1.0;
  int epochs_flag = -1;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config) {
      cmd->add_option("--config", config_path, "experiment config JSON")->required();
    }
    cmd->add_option("--seed", seed_flag, "master seed override");
    cmd->add_option("--out", out_flag, "output path/directory override");
    cmd->add_option("--epochs", epochs_flag, "main-epoch count override");
    cmd->add_option("--noise-protocol", protocol_flag,
                    "noise protocol override (none|shuffle-images|permute-captions)");
    cmd->add_option("--eta", eta_flag, "noise ratio override");
  };

  CLI::App* generate = app.add_subcommand("generate", "build a synthetic pair dataset");
  add_common(generate, true);
  CLI::App* train = app.add_subcommand("train", "run warmup + training from a config");
  add_common(train, true);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a finished run directory");
  eval_cmd->add_option("--run", run_dir, "run directory (from train)")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint path (default: latest)");
  CLI::App* sweep = app.add_subcommand("sweep", "noise-ratio x ablation sweep");
  add_common(sweep, true);
  CLI::App* ingest = app.add_subcommand("ingest", "wrap two feature containers as a dataset");
  ingest->add_option("--a", path_a, "modality-A container")->required();
  ingest->add_option("--b", path_b, "modality-B container")->required();
  ingest->add_option("--out", out_path, "output dataset path")->required();

  CLI11_PARSE(app, argc, argv);

  if (seed_flag >= 0) ov.seed = seed_flag;
  if (!out_flag.empty()) ov.out = out_flag;
  if (epochs_flag > 0) ov.epochs = epochs_flag;
  if (!protocol_flag.empty()) ov.noise_protocol = protocol_flag;
  if (eta_flag >= 0.0) ov.eta = eta_flag;

  try {
    if (generate->parsed()) return cmd_generate(config_path, ov);
    if (train->parsed()) return cmd_train(config_path, ov);
    if (eval_cmd->parsed()) return cmd_eval(run_dir, checkpoint);
    if (sweep->parsed()) return cmd_sweep(config_path, ov);
    if (ingest->parsed()) return cmd_ingest(path_a, path_b, out_path);
  } catch (const disncl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
