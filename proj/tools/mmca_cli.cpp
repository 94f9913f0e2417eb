// mmca: command-line pipeline driver. Every subcommand resolves its inputs,
// writes a run manifest into a fresh run directory, then produces its
// artifacts there. No interactive steering; outputs are files.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmca/dataset.hpp"
#include "mmca/features.hpp"
#include "mmca/ingest.hpp"
#include "mmca/model.hpp"
#include "mmca/objective.hpp"
#include "mmca/special.hpp"
#include "mmca/synth.hpp"
#include "mmca/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmca;

namespace {

// --- plumbing --------------------------------------------------------------

std::string fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return "missing";
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!is) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  json j;
  is >> j;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

struct RunContext {
  fs::path dir;
  json manifest;
};

// Creates <out>/<timestamp>-s<seed>/ and writes the manifest before any long
// work starts.
RunContext open_run(const std::string& subcommand, const std::string& out_root,
                    uint64_t seed, const json& config,
                    const std::vector<std::string>& inputs) {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);

  RunContext ctx;
  ctx.dir = fs::path(out_root) / (std::string(stamp) + "-s" +
                                  std::to_string(seed) + "-" + subcommand);
  for (int suffix = 1; fs::exists(ctx.dir); ++suffix)
    ctx.dir = fs::path(out_root) / (std::string(stamp) + "-s" +
                                    std::to_string(seed) + "-" + subcommand +
                                    "." + std::to_string(suffix));
  fs::create_directories(ctx.dir);

  ctx.manifest["subcommand"] = subcommand;
  ctx.manifest["seed"] = seed;
  ctx.manifest["config"] = config;
  ctx.manifest["output_dir"] = ctx.dir.string();
  json in = json::array();
  for (const auto& p : inputs)
    in.push_back({{"path", p}, {"fnv1a", fnv1a_file(p)}});
  ctx.manifest["inputs"] = in;
  write_text(ctx.dir / "manifest.json", ctx.manifest.dump(2));
  std::cout << "run directory: " << ctx.dir.string() << "\n";
  return ctx;
}

// --- config parsing --------------------------------------------------------

ModelConfig model_from_json(const json& j, int n_segments) {
  ModelConfig c;
  c.n_segments = n_segments;
  c.H = j.value("H", c.H);
  c.F = j.value("F", c.F);
  c.d_f = j.value("d_f", c.d_f);
  c.d_dow = j.value("d_dow", c.d_dow);
  c.d_tod = j.value("d_tod", c.d_tod);
  c.d_a = j.value("d_a", c.d_a);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.dropout = j.value("dropout", c.dropout);
  c.steps_per_day = j.value("steps_per_day", c.steps_per_day);
  c.ff_mult = j.value("ff_mult", c.ff_mult);
  c.use_spatial = j.value("use_spatial", c.use_spatial);
  c.use_temporal = j.value("use_temporal", c.use_temporal);
  c.use_cross_attention = j.value("use_cross_attention", c.use_cross_attention);
  c.use_micro = j.value("use_micro", c.use_micro);
  if (j.contains("micro_feature_mask")) {
    auto m = j["micro_feature_mask"].get<std::vector<bool>>();
    if (static_cast<int>(m.size()) != kNumMicro)
      throw std::runtime_error("micro_feature_mask must list 7 flags");
    for (int i = 0; i < kNumMicro; ++i) c.micro_feature_mask[i] = m[i];
  }
  c.validate();
  return c;
}

TrainConfig train_from_json(const json& j, uint64_t seed) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.clip_gradients = j.value("clip_gradients", c.clip_gradients);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = seed;
  c.validate();
  return c;
}

struct SplitSpec {
  std::set<int> train_dates, test_dates;
  double validation_fraction = 0.10;
};

SplitSpec split_from_json(const json& j, const FrameGrid& grid) {
  SplitSpec s;
  if (j.contains("train_dates"))
    for (int d : j["train_dates"]) s.train_dates.insert(d);
  if (j.contains("test_dates"))
    for (int d : j["test_dates"]) s.test_dates.insert(d);
  s.validation_fraction = j.value("validation_fraction", 0.10);
  if (s.train_dates.empty()) {
    // default: all days but the last train, last day tests
    for (int d : grid.day_dates) s.train_dates.insert(d);
    if (grid.n_days() > 1) {
      int last = grid.day_dates.back();
      s.train_dates.erase(last);
      s.test_dates.insert(last);
    }
  }
  return s;
}

// --- shared pipeline stages ------------------------------------------------

void write_points_csv(const fs::path& path, const std::vector<CVPoint>& points) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "journey_id,timestamp,chainage_mi,heading_deg,speed_mph\n";
  os.precision(10);
  for (const auto& p : points)
    os << p.journey_id << ',' << p.timestamp << ',' << p.chainage_mi << ','
       << p.heading_deg << ',' << p.speed_mph << '\n';
}

void write_segments_csv(const fs::path& path, const SegmentIndex& index) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "segment_id,start_mi,end_mi,direction\n";
  os.precision(10);
  for (const auto& s : index.segments)
    os << s.segment_id << ',' << s.start_mi << ',' << s.end_mi << ','
       << s.direction << '\n';
}

struct ExtractOutput {
  FrameGrid grid;
  size_t parsed = 0, rejected = 0, journeys = 0;
};

ExtractOutput run_extract(const std::string& points_path,
                          const std::string& segments_path, const json& cfg,
                          double keep_fraction, uint64_t seed,
                          const fs::path* reject_log) {
  std::ifstream pis(points_path);
  if (!pis) throw std::runtime_error("cannot open points file " + points_path);
  auto parsed = parse_points(pis);
  if (reject_log) {
    std::ofstream os(*reject_log);
    os << "line_no,reason\n";
    for (const auto& r : parsed.rejected)
      os << r.line_no << ',' << r.reason << '\n';
  }
  std::ifstream sis(segments_path);
  if (!sis)
    throw std::runtime_error("cannot open segments file " + segments_path);
  auto index = parse_segment_index(sis);

  auto trajs = group_and_clean(parsed.points,
                               cfg.value("stationary_window_s", 600.0),
                               cfg.value("stationary_speed_cap_mph", 2.0));
  if (keep_fraction < 1.0)
    trajs = downsample_penetration(trajs, keep_fraction, seed);

  FeatureConfig fc;
  fc.steps_per_day = cfg.value("steps_per_day", fc.steps_per_day);
  fc.day_start_sec = cfg.value("day_start_sec", fc.day_start_sec);
  fc.interval_sec = cfg.value("interval_sec", fc.interval_sec);
  fc.free_flow_default_mph =
      cfg.value("free_flow_default_mph", fc.free_flow_default_mph);

  ExtractOutput out;
  out.grid = build_frame_grid(trajs, index, fc);
  out.parsed = parsed.points.size();
  out.rejected = parsed.rejected.size();
  out.journeys = trajs.size();
  return out;
}

struct TrainedRun {
  TrainResult result;
  ModelConfig mc;
  DatasetSplit split;
};

TrainedRun run_train(const FrameGrid& grid, const json& cfg, uint64_t seed) {
  ModelConfig mc = model_from_json(cfg.value("model", json::object()),
                                   grid.n_segments());
  TrainConfig tc = train_from_json(cfg.value("train", json::object()), seed);
  SplitSpec ss = split_from_json(cfg.value("split", json::object()), grid);
  auto windows = build_windows(grid, mc.H, mc.F);
  TrainedRun run;
  run.mc = mc;
  run.split = split_by_date(grid, windows, ss.train_dates, ss.test_dates,
                            ss.validation_fraction);
  run.result = train_model(grid, run.split, mc, tc);
  return run;
}

struct Evaluation {
  json metrics;
  std::vector<double> y, yhat, scale2, df, errors;
  AttentionScores first_batch_scores;
};

Evaluation evaluate_windows(const FrameGrid& grid,
                            const std::vector<WindowSpec>& specs,
                            const ModelParams& params, const NormStats& stats,
                            const ModelConfig& mc, double alpha) {
  if (specs.empty())
    throw std::runtime_error("evaluate: no windows in the requested split");
  Evaluation ev;
  std::vector<NormalizedWindow> ws;
  for (const auto& s : specs)
    ws.push_back(apply_norm(materialize_window(grid, s, mc.H, mc.F), stats));
  double mn = stats.min[kSegSpeed], mx = stats.max[kSegSpeed];
  double span = mx - mn;
  std::mt19937_64 drng(0);
  double nll_sum = 0.0;
  int64_t nll_count = 0;
  for (size_t start = 0; start < ws.size(); start += 32) {
    size_t end = std::min(ws.size(), start + 32);
    std::vector<const NormalizedWindow*> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&ws[i]);
    BatchInput in = make_batch(batch, mc);
    auto out = forward_model(in, params, mc, false, drng);
    if (start == 0) ev.first_batch_scores = out.scores;
    nll_sum += t_nll(out.mean, out.scale2, out.df, in.target).item() *
               static_cast<double>(end - start);
    nll_count += static_cast<int64_t>(end - start);
    for (size_t b = 0; b < batch.size(); ++b)
      for (int n = 0; n < mc.n_segments; ++n)
        for (int f = 0; f < mc.F; ++f) {
          size_t i = (b * mc.n_segments + n) * mc.F + f;
          double yh = denormalize_value(out.mean.data()[i], mn, mx);
          double yo = denormalize_value(in.target.data()[i], mn, mx);
          ev.yhat.push_back(yh);
          ev.y.push_back(yo);
          // variance scales with the square of the affine denormalization
          ev.scale2.push_back(out.scale2.data()[i] * span * span);
          ev.df.push_back(out.df.data()[i]);
          ev.errors.push_back(yo - yh);
        }
  }

  auto pm = point_metrics(ev.y, ev.yhat);
  ev.metrics["rmse"] = pm.rmse;
  ev.metrics["mae"] = pm.mae;
  ev.metrics["mape_pct"] = pm.mape_pct;
  ev.metrics["count"] = pm.count;
  ev.metrics["t_nll"] = nll_count ? nll_sum / nll_count : 0.0;
  ev.metrics["alpha"] = alpha;

  // per-sample layout here is [..., F], so horizons = F
  auto bounds = intervals(ev.yhat, ev.scale2, ev.df, alpha);
  auto rep = interval_eval(bounds, ev.y, mc.F, alpha);
  ev.metrics["mpiw"] = rep.mpiw;
  ev.metrics["picp"] = rep.picp;
  ev.metrics["mpiw_per_horizon"] = rep.mpiw_per_horizon;
  ev.metrics["picp_per_horizon"] = rep.picp_per_horizon;
  return ev;
}

void write_eval_artifacts(const fs::path& dir, const Evaluation& ev) {
  // per-speed-bin metrics
  {
    std::ofstream os(dir / "binned_metrics.csv");
    os << "speed_bin_mph,count,rmse,mae,mape_pct\n";
    for (const auto& [label, m] : binned_metrics(ev.y, ev.yhat))
      os << label << ',' << m.count << ',' << m.rmse << ',' << m.mae << ','
         << m.mape_pct << '\n';
  }
  // residual diagnostics: t fit, Q-Q pairs, histogram
  json diag;
  if (ev.errors.size() >= 100) {
    auto fit = fit_t_errors(ev.errors);
    diag["df"] = fit.df;
    diag["location"] = fit.location;
    diag["scale"] = fit.scale;
    diag["ks_statistic"] = fit.ks_statistic;
    std::ofstream qq(dir / "qq.csv");
    qq << "theoretical,sample\n";
    for (const auto& [t, s] : fit.qq) qq << t << ',' << s << '\n';
  }
  write_text(dir / "error_fit.json", diag.dump(2));
  {
    double lo = -20.0, hi = 20.0;
    int bins = 80;
    std::vector<int64_t> counts(bins, 0);
    for (double e : ev.errors) {
      int b = static_cast<int>((e - lo) / (hi - lo) * bins);
      if (b >= 0 && b < bins) ++counts[b];
    }
    std::ofstream os(dir / "error_hist.csv");
    os << "bin_left_mph,bin_right_mph,count\n";
    for (int b = 0; b < bins; ++b)
      os << lo + (hi - lo) * b / bins << ',' << lo + (hi - lo) * (b + 1) / bins
         << ',' << counts[b] << '\n';
  }
  export_attention_csv((dir / "attention.csv").string(), ev.first_batch_scores);
}

// --- subcommand bodies -----------------------------------------------------

int cmd_synth(const std::string& config_path, std::optional<uint64_t> seed,
              const std::string& out_root) {
  ScenarioConfig sc = scenario_from_json_file(config_path);
  if (seed) sc.seed = *seed;
  auto ctx = open_run("synth", out_root, sc.seed,
                      json::parse(scenario_to_json(sc)), {config_path});
  auto gen = generate(sc);
  write_points_csv(ctx.dir / "points.csv", gen.points);
  write_segments_csv(ctx.dir / "segments.csv", gen.index);
  save_dataset((ctx.dir / "truth.mmds").string(), gen.truth);
  std::cout << "synth: " << gen.points.size() << " points across "
            << sc.days << " day(s), " << sc.n_segments << " segments\n";
  return 0;
}

int cmd_extract(const std::string& config_path, uint64_t seed,
                const std::string& out_root, double keep_fraction) {
  json cfg = load_json(config_path);
  std::string points = cfg.at("points_csv");
  std::string segments = cfg.at("segments_csv");
  cfg["keep_fraction"] = keep_fraction;
  auto ctx = open_run("extract", out_root, seed, cfg,
                      {config_path, points, segments});
  fs::path reject_log = ctx.dir / "rejected.csv";
  auto out = run_extract(points, segments, cfg, keep_fraction, seed,
                         &reject_log);
  save_dataset((ctx.dir / "dataset.mmds").string(), out.grid);
  std::cout << "extract: " << out.parsed << " points kept, " << out.rejected
            << " rejected, " << out.journeys << " journeys, "
            << out.grid.n_days() << " day(s)\n";
  return 0;
}

int cmd_train(const std::string& config_path, uint64_t seed,
              const std::string& out_root) {
  json cfg = load_json(config_path);
  std::string dataset = cfg.at("dataset");
  auto ctx = open_run("train", out_root, seed, cfg, {config_path, dataset});
  auto loaded = load_dataset(dataset);
  auto run = run_train(loaded.grid, cfg, seed);
  save_checkpoint((ctx.dir / "checkpoint.mmck").string(), run.mc,
                  run.result.best_params, run.result.stats);
  save_run_record((ctx.dir / "run_record.jsonl").string(), run.result.record);
  std::cout << "train: best validation t-NLL "
            << run.result.record.best_val_loss << " at epoch "
            << run.result.record.best_epoch << " ("
            << run.result.record.epochs.size() << " epochs run)\n";
  return 0;
}

int cmd_evaluate(const std::string& config_path, uint64_t seed,
                 const std::string& out_root) {
  json cfg = load_json(config_path);
  std::string dataset = cfg.at("dataset");
  std::string checkpoint = cfg.at("checkpoint");
  auto ctx = open_run("evaluate", out_root, seed, cfg,
                      {config_path, dataset, checkpoint});
  auto loaded = load_dataset(dataset);
  auto ckpt = load_checkpoint(checkpoint);
  ckpt.config.n_segments = loaded.grid.n_segments();
  SplitSpec ss = split_from_json(cfg.value("split", json::object()),
                                 loaded.grid);
  auto windows = build_windows(loaded.grid, ckpt.config.H, ckpt.config.F);
  auto split = split_by_date(loaded.grid, windows, ss.train_dates,
                             ss.test_dates, ss.validation_fraction);
  const auto& eval_specs = split.test.empty() ? split.train : split.test;
  double alpha = cfg.value("alpha", 0.1);
  auto ev = evaluate_windows(loaded.grid, eval_specs, ckpt.params, ckpt.stats,
                             ckpt.config, alpha);
  ev.metrics["evaluated_split"] = split.test.empty() ? "train" : "test";
  write_text(ctx.dir / "metrics.json", ev.metrics.dump(2));
  write_eval_artifacts(ctx.dir, ev);
  std::cout << "evaluate: MAE " << ev.metrics["mae"] << " mph, RMSE "
            << ev.metrics["rmse"] << " mph, PICP " << ev.metrics["picp"]
            << "\n";
  return 0;
}

const std::vector<std::pair<std::string, ModelConfig (*)(ModelConfig)>>&
ablation_variants() {
  static const std::vector<std::pair<std::string, ModelConfig (*)(ModelConfig)>>
      v = {
          {"full", [](ModelConfig c) { return c; }},
          {"no_temporal",
           [](ModelConfig c) {
             c.use_temporal = false;
             return c;
           }},
          {"no_spatial",
           [](ModelConfig c) {
             c.use_spatial = false;
             return c;
           }},
          {"no_cross_attention",
           [](ModelConfig c) {
             c.use_cross_attention = false;
             return c;
           }},
          {"no_micro",
           [](ModelConfig c) {
             c.use_micro = false;
             return c;
           }},
      };
  return v;
}

int cmd_ablate(const std::string& config_path, uint64_t seed,
               const std::string& out_root, const std::string& variant) {
  json cfg = load_json(config_path);
  std::string dataset = cfg.at("dataset");
  auto ctx = open_run("ablate", out_root, seed, cfg, {config_path, dataset});
  auto loaded = load_dataset(dataset);
  double alpha = cfg.value("alpha", 0.1);

  std::ofstream table(ctx.dir / "ablation.csv");
  table << "variant,best_val_t_nll,test_mae,test_rmse,test_mape_pct,test_picp\n";
  bool matched = false;
  for (const auto& [name, tweak] : ablation_variants()) {
    if (!variant.empty() && variant != name) continue;
    matched = true;
    json vcfg = cfg;
    ModelConfig base = model_from_json(cfg.value("model", json::object()),
                                       loaded.grid.n_segments());
    ModelConfig mc = tweak(base);
    vcfg["model"]["use_spatial"] = mc.use_spatial;
    vcfg["model"]["use_temporal"] = mc.use_temporal;
    vcfg["model"]["use_cross_attention"] = mc.use_cross_attention;
    vcfg["model"]["use_micro"] = mc.use_micro;
    auto run = run_train(loaded.grid, vcfg, seed);
    const auto& specs = run.split.test.empty() ? run.split.train
                                               : run.split.test;
    auto ev = evaluate_windows(loaded.grid, specs, run.result.best_params,
                               run.result.stats, run.mc, alpha);
    table << name << ',' << run.result.record.best_val_loss << ','
          << ev.metrics["mae"].get<double>() << ','
          << ev.metrics["rmse"].get<double>() << ','
          << ev.metrics["mape_pct"].get<double>() << ','
          << ev.metrics["picp"].get<double>() << '\n';
    std::cout << "ablate[" << name
              << "]: test MAE " << ev.metrics["mae"].get<double>() << " mph\n";
  }
  if (!matched)
    throw std::runtime_error("unknown ablation variant " + variant);
  return 0;
}

int cmd_sweep(const std::string& config_path, uint64_t seed,
              const std::string& out_root) {
  json cfg = load_json(config_path);
  std::string dataset = cfg.at("dataset");
  auto ctx = open_run("sweep", out_root, seed, cfg, {config_path, dataset});
  auto loaded = load_dataset(dataset);
  ModelConfig mc = model_from_json(cfg.value("model", json::object()),
                                   loaded.grid.n_segments());
  TrainConfig base = train_from_json(cfg.value("train", json::object()), seed);
  SplitSpec ss = split_from_json(cfg.value("split", json::object()),
                                 loaded.grid);
  auto windows = build_windows(loaded.grid, mc.H, mc.F);
  auto split = split_by_date(loaded.grid, windows, ss.train_dates,
                             ss.test_dates, ss.validation_fraction);

  std::map<std::string, std::vector<double>> grid_spec;
  for (const auto& [key, values] : cfg.at("grid").items())
    grid_spec[key] = values.get<std::vector<double>>();
  auto entries = sweep(loaded.grid, split, mc, base, grid_spec);

  std::ofstream table(ctx.dir / "sweep.csv");
  table << "rank,best_val_t_nll";
  for (const auto& [key, values] : grid_spec) table << ',' << key;
  table << '\n';
  for (size_t i = 0; i < entries.size(); ++i) {
    table << i + 1 << ',' << entries[i].best_val_loss;
    for (const auto& [key, values] : grid_spec)
      table << ',' << entries[i].values.at(key);
    table << '\n';
  }
  std::cout << "sweep: " << entries.size() << " runs, best validation t-NLL "
            << entries.front().best_val_loss << "\n";
  return 0;
}

int cmd_penetration(const std::string& config_path, uint64_t seed,
                    const std::string& out_root, double keep_fraction) {
  json cfg = load_json(config_path);
  std::string points = cfg.at("points_csv");
  std::string segments = cfg.at("segments_csv");
  std::vector<double> fractions;
  if (keep_fraction > 0.0)
    fractions.push_back(keep_fraction);
  else if (cfg.contains("keep_fractions"))
    fractions = cfg["keep_fractions"].get<std::vector<double>>();
  else
    fractions = {0.25, 0.5, 0.75, 1.0};
  cfg["keep_fractions"] = fractions;
  auto ctx = open_run("penetration", out_root, seed, cfg,
                      {config_path, points, segments});
  double alpha = cfg.value("alpha", 0.1);

  std::ofstream table(ctx.dir / "penetration.csv");
  table << "keep_fraction,journeys,test_mae,test_rmse,test_mape_pct,test_picp,"
           "test_mpiw\n";
  for (double f : fractions) {
    auto extracted = run_extract(points, segments, cfg, f, seed, nullptr);
    auto run = run_train(extracted.grid, cfg, seed);
    const auto& specs = run.split.test.empty() ? run.split.train
                                               : run.split.test;
    auto ev = evaluate_windows(extracted.grid, specs, run.result.best_params,
                               run.result.stats, run.mc, alpha);
    table << f << ',' << extracted.journeys << ','
          << ev.metrics["mae"].get<double>() << ','
          << ev.metrics["rmse"].get<double>() << ','
          << ev.metrics["mape_pct"].get<double>() << ','
          << ev.metrics["picp"].get<double>() << ','
          << ev.metrics["mpiw"].get<double>() << '\n';
    std::cout << "penetration[" << f
              << "]: test MAE " << ev.metrics["mae"].get<double>() << " mph ("
              << extracted.journeys << " journeys)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"macro-micro cross-attention traffic speed forecaster"};
  app.require_subcommand(1);

  std::string config_path, out_root = "runs", variant;
  uint64_t seed = 0;
  bool seed_set = false;
  double keep_fraction = -1.0;

  auto add_common = [&](CLI::App* sub, bool needs_config = true) {
    auto* c = sub->add_option("--config", config_path, "config file (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "run seed")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--out", out_root, "parent directory for run outputs");
  };

  auto* synth = app.add_subcommand("synth", "scenario config -> CV points CSV");
  add_common(synth);
  auto* extract = app.add_subcommand(
      "extract", "points + segment index -> dataset file");
  add_common(extract);
  extract->add_option("--keep-fraction", keep_fraction,
                      "journey keep probability")
      ->check(CLI::Range(0.0, 1.0));
  auto* train = app.add_subcommand("train", "dataset -> checkpoint");
  add_common(train);
  auto* evaluate =
      app.add_subcommand("evaluate", "checkpoint + dataset -> metrics");
  add_common(evaluate);
  auto* ablate =
      app.add_subcommand("ablate", "train and compare model variants");
  add_common(ablate);
  ablate->add_option("--variant", variant,
                     "single variant: full, no_temporal, no_spatial, "
                     "no_cross_attention, no_micro");
  auto* sweep_cmd =
      app.add_subcommand("sweep", "training hyperparameter grid search");
  add_common(sweep_cmd);
  auto* penetration = app.add_subcommand(
      "penetration", "extract+train+evaluate at several keep fractions");
  add_common(penetration);
  penetration->add_option("--keep-fraction", keep_fraction,
                          "single keep fraction instead of the config list");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return cmd_synth(config_path,
                       seed_set ? std::optional<uint64_t>(seed) : std::nullopt,
                       out_root);
    if (extract->parsed())
      return cmd_extract(config_path, seed, out_root,
                         keep_fraction > 0.0 ? keep_fraction : 1.0);
    if (train->parsed()) return cmd_train(config_path, seed, out_root);
    if (evaluate->parsed()) return cmd_evaluate(config_path, seed, out_root);
    if (ablate->parsed())
      return cmd_ablate(config_path, seed, out_root, variant);
    if (sweep_cmd->parsed()) return cmd_sweep(config_path, seed, out_root);
    if (penetration->parsed())
      return cmd_penetration(config_path, seed, out_root, keep_fraction);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
