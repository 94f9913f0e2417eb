#include "mmca/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "mmca/objective.hpp"

namespace mmca {

void TrainConfig::validate() const {
  if (early_stop_patience > max_epochs)
    throw std::invalid_argument("TrainConfig: patience exceeds max_epochs");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("TrainConfig: validation_fraction outside (0,1)");
  if (batch_size <= 0 || max_epochs <= 0 || learning_rate <= 0.0)
    throw std::invalid_argument("TrainConfig: non-positive setting");
}

AdamOptimizer::AdamOptimizer(ModelParams& params, const TrainConfig& config)
    : params_(params), config_(config) {
  for (const auto& [name, t] : params_.entries()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& [name, t] : params_.entries()) t.zero_grad();
}

void AdamOptimizer::step() {
  ++t_;
  if (config_.clip_gradients) {
    double sq = 0.0;
    for (auto& [name, t] : params_.entries())
      for (double g : t.grad()) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) {
      double scale = config_.clip_norm / norm;
      for (auto& [name, t] : params_.entries())
        for (double& g : t.grad()) g *= scale;
    }
  }
  double bc1 = 1.0 - std::pow(config_.adam_beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.adam_beta2, static_cast<double>(t_));
  for (size_t i = 0; i < m_.size(); ++i) {
    auto& t = params_.entries()[i].second;
    const auto& g = t.grad();
    auto& d = t.data();
    for (size_t j = 0; j < d.size(); ++j) {
      m_[i][j] = config_.adam_beta1 * m_[i][j] + (1.0 - config_.adam_beta1) * g[j];
      v_[i][j] = config_.adam_beta2 * v_[i][j] +
                 (1.0 - config_.adam_beta2) * g[j] * g[j];
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      d[j] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.adam_eps);
    }
  }
}

DatasetSplit split_by_date(const FrameGrid& grid,
                           const std::vector<WindowSpec>& windows,
                           const std::set<int>& train_dates,
                           const std::set<int>& test_dates,
                           double validation_fraction) {
  for (int d : train_dates)
    if (test_dates.count(d))
      throw std::invalid_argument("split_by_date: date " + std::to_string(d) +
                                  " appears in both train and test sets");
  DatasetSplit split;
  int skipped = 0;
  std::vector<WindowSpec> train_pool;
  for (const auto& w : windows) {
    int date = grid.day_dates[w.day_idx];
    if (train_dates.count(date))
      train_pool.push_back(w);
    else if (test_dates.count(date))
      split.test.push_back(w);
    else
      ++skipped;
  }
  if (skipped > 0)
    std::cerr << "split_by_date: " << skipped
              << " windows on unlisted dates were excluded\n";
  // Window order is already (date, start); carve the trailing block off.
  size_t n_val = static_cast<size_t>(train_pool.size() * validation_fraction);
  size_t n_train = train_pool.size() - n_val;
  split.train.assign(train_pool.begin(), train_pool.begin() + n_train);
  split.validation.assign(train_pool.begin() + n_train, train_pool.end());
  return split;
}

namespace {

std::vector<NormalizedWindow> materialize_split(
    const FrameGrid& grid, const std::vector<WindowSpec>& specs,
    const NormStats& stats, int H, int F) {
  std::vector<NormalizedWindow> out;
  out.reserve(specs.size());
  for (const auto& s : specs)
    out.push_back(apply_norm(materialize_window(grid, s, H, F), stats));
  return out;
}

double eval_loss(const std::vector<NormalizedWindow>& windows,
                 const ModelParams& params, const ModelConfig& mc,
                 int batch_size) {
  double total = 0.0;
  int64_t count = 0;
  std::mt19937_64 dummy_rng(0);
  for (size_t start = 0; start < windows.size();
       start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(windows.size(), start + batch_size);
    std::vector<const NormalizedWindow*> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&windows[i]);
    BatchInput in = make_batch(batch, mc);
    auto out = forward_model(in, params, mc, /*train=*/false, dummy_rng);
    double loss = t_nll(out.mean, out.scale2, out.df, in.target).item();
    total += loss * static_cast<double>(end - start);
    count += static_cast<int64_t>(end - start);
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

ModelParams clone_params(const ModelParams& src) {
  ModelParams dst;
  for (const auto& [name, t] : src.entries())
    dst.add(name, Tensor(t.shape(), t.data(), true));
  return dst;
}

}  // namespace

TrainResult train_model(const FrameGrid& grid, const DatasetSplit& split,
                        const ModelConfig& mc, const TrainConfig& tc) {
  tc.validate();
  mc.validate();
  if (split.train.empty())
    throw std::invalid_argument("train_model: empty training split");

  NormStats stats = compute_norm_stats(grid, split.train, mc.H);
  auto train_windows = materialize_split(grid, split.train, stats, mc.H, mc.F);
  auto val_windows =
      materialize_split(grid, split.validation, stats, mc.H, mc.F);

  ModelParams params = init_params(mc, tc.seed);
  AdamOptimizer opt(params, tc);

  TrainResult result;
  result.stats = stats;
  result.record.best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;

  std::vector<size_t> order(train_windows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    // Batch order is a pure function of (seed, epoch).
    std::mt19937_64 shuffle_rng(tc.seed * 1000003ull +
                                static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    int64_t seen = 0;
    int batch_no = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(tc.batch_size), ++batch_no) {
      size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<const NormalizedWindow*> batch;
      for (size_t i = start; i < end; ++i)
        batch.push_back(&train_windows[order[i]]);
      BatchInput in = make_batch(batch, mc);
      std::mt19937_64 dropout_rng(tc.seed ^
                                  (static_cast<uint64_t>(epoch) * 0x9e3779b97f4a7c15ull +
                                   static_cast<uint64_t>(batch_no)));
      opt.zero_grad();
      auto out = forward_model(in, params, mc, /*train=*/true, dropout_rng);
      Tensor loss = t_nll(out.mean, out.scale2, out.df, in.target);
      double lv = loss.item();
      if (!std::isfinite(lv))
        throw std::runtime_error("train_model: non-finite loss at epoch " +
                                 std::to_string(epoch) + " batch " +
                                 std::to_string(batch_no));
      loss.backward();
      opt.step();
      epoch_loss += lv * static_cast<double>(end - start);
      seen += static_cast<int64_t>(end - start);
    }
    epoch_loss /= static_cast<double>(seen);

    double val_loss = val_windows.empty()
                          ? epoch_loss
                          : eval_loss(val_windows, params, mc, tc.batch_size);
    auto t1 = std::chrono::steady_clock::now();
    result.record.epochs.push_back(
        {epoch, epoch_loss, val_loss,
         std::chrono::duration<double>(t1 - t0).count()});

    if (val_loss < result.record.best_val_loss) {
      result.record.best_val_loss = val_loss;
      result.record.best_epoch = epoch;
      result.best_params = clone_params(params);
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= tc.early_stop_patience) break;
    }
  }
  return result;
}

void save_run_record(const std::string& path, const RunRecord& record) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_run_record: cannot open " + path);
  for (const auto& e : record.epochs) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss;
    j["wall_time_s"] = e.wall_time_s;
    j["best"] = (e.epoch == record.best_epoch);
    os << j.dump() << '\n';
  }
}

std::vector<SweepEntry> sweep(
    const FrameGrid& grid, const DatasetSplit& split, const ModelConfig& mc,
    const TrainConfig& base,
    const std::map<std::string, std::vector<double>>& param_grid) {
  for (const auto& [key, values] : param_grid)
    if (values.empty())
      throw std::invalid_argument("sweep: empty value list for " + key);

  std::vector<std::map<std::string, double>> points{{}};
  for (const auto& [key, values] : param_grid) {
    std::vector<std::map<std::string, double>> next;
    for (const auto& p : points)
      for (double v : values) {
        auto q = p;
        q[key] = v;
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }

  std::vector<SweepEntry> entries;
  for (const auto& point : points) {
    TrainConfig tc = base;
    for (const auto& [key, v] : point) {
      if (key == "learning_rate")
        tc.learning_rate = v;
      else if (key == "batch_size")
        tc.batch_size = static_cast<int>(v);
      else if (key == "max_epochs")
        tc.max_epochs = static_cast<int>(v);
      else if (key == "early_stop_patience")
        tc.early_stop_patience = static_cast<int>(v);
      else
        throw std::invalid_argument("sweep: unknown grid key " + key);
    }
    auto result = train_model(grid, split, mc, tc);
    SweepEntry e;
    e.values = point;
    e.best_val_loss = result.record.best_val_loss;
    e.record = std::move(result.record);
    entries.push_back(std::move(e));
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const SweepEntry& a, const SweepEntry& b) {
                     return a.best_val_loss < b.best_val_loss;
                   });
  return entries;
}

}  // namespace mmca
