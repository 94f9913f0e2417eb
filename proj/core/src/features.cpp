#include "mmca/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <tuple>

namespace mmca {

const std::array<const char*, kNumFeatures> kFeatureNames = {
    "seg_speed", "cv_volume", "cv_sv",     "f_hard_acc", "f_med_acc",
    "f_light_acc", "f_hard_brk", "f_med_brk", "f_light_brk"};

BehaviorClass classify_acceleration(double acc_mps2) {
  if (acc_mps2 >= 0.0) {
    if (acc_mps2 > 0.89) return BehaviorClass::kHardAccel;
    if (acc_mps2 >= 0.45) return BehaviorClass::kMedAccel;
    return BehaviorClass::kLightAccel;
  }
  double mag = -acc_mps2;
  if (mag > 1.19) return BehaviorClass::kHardBrake;
  if (mag >= 0.45) return BehaviorClass::kMedBrake;
  return BehaviorClass::kLightBrake;
}

double speed_volatility(const std::vector<std::vector<double>>& speeds_mph) {
  double total = 0.0;
  int contributing = 0;
  for (const auto& s : speeds_mph) {
    size_t k = s.size();
    if (k < 2) continue;
    double mean = 0.0;
    for (double v : s) mean += v;
    mean /= static_cast<double>(k);
    double ss = 0.0;
    for (double v : s) ss += (v - mean) * (v - mean);
    total += std::sqrt(ss / static_cast<double>(k - 1));
    ++contributing;
  }
  return contributing == 0 ? 0.0 : total / contributing;
}

std::array<int, 6> classify_accelerations(const Trajectory& traj) {
  std::array<int, 6> counts{};
  for (size_t j = 1; j < traj.points.size(); ++j) {
    double dt = static_cast<double>(traj.points[j].timestamp -
                                    traj.points[j - 1].timestamp);
    if (dt <= 0.0) continue;
    double dv_mps =
        (traj.points[j].speed_mph - traj.points[j - 1].speed_mph) * kMphToMps;
    ++counts[static_cast<int>(classify_acceleration(dv_mps / dt))];
  }
  return counts;
}

double& FrameGrid::at(int day, int interval, int seg, int feature) {
  return values[((static_cast<int64_t>(day) * config.steps_per_day + interval) *
                     n_segments() + seg) * kNumFeatures + feature];
}

double FrameGrid::at(int day, int interval, int seg, int feature) const {
  return values[((static_cast<int64_t>(day) * config.steps_per_day + interval) *
                     n_segments() + seg) * kNumFeatures + feature];
}

uint8_t& FrameGrid::imputed_at(int day, int interval, int seg) {
  return imputed[(static_cast<int64_t>(day) * config.steps_per_day + interval) *
                     n_segments() + seg];
}

bool FrameGrid::imputed_at(int day, int interval, int seg) const {
  return imputed[(static_cast<int64_t>(day) * config.steps_per_day + interval) *
                     n_segments() + seg] != 0;
}

SegmentFrame FrameGrid::frame(int day, int interval, int seg) const {
  SegmentFrame f;
  f.segment_id = segment_ids[seg];
  f.interval_start = static_cast<int64_t>(day_dates[day]) * 86400 +
                     config.day_start_sec +
                     static_cast<int64_t>(interval) * config.interval_sec;
  for (int i = 0; i < kNumFeatures; ++i) f.features[i] = at(day, interval, seg, i);
  f.is_imputed = imputed_at(day, interval, seg);
  return f;
}

FrameGrid build_frame_grid(const std::vector<Trajectory>& trajs,
                           const SegmentIndex& index,
                           const FeatureConfig& config) {
  if (index.segments.empty())
    throw std::runtime_error("build_frame_grid: empty segment index");
  const int n_seg = static_cast<int>(index.segments.size());
  const int steps = config.steps_per_day;

  // Locate (day, interval) of a timestamp; false when outside 06:00-22:00.
  auto locate = [&](int64_t ts, int& day_date, int& interval) {
    day_date = static_cast<int>(ts / 86400);
    int64_t sec = ts - static_cast<int64_t>(day_date) * 86400 -
                  config.day_start_sec;
    if (sec < 0) return false;
    interval = static_cast<int>(sec / config.interval_sec);
    return interval < steps;
  };
  auto segment_of = [&](double chainage) {
    for (int s = 0; s < n_seg; ++s)
      if (chainage >= index.segments[s].start_mi &&
          chainage < index.segments[s].end_mi)
        return s;
    return -1;
  };

  // cell key = (day_date, interval, segment)
  struct CellStats {
    std::map<std::string, std::vector<double>> speeds;  // per journey
    std::array<double, 6> freq{};
  };
  std::map<std::tuple<int, int, int>, CellStats> cells;
  std::set<int> day_set;

  for (const auto& traj : trajs) {
    for (size_t j = 0; j < traj.points.size(); ++j) {
      const auto& p = traj.points[j];
      int day, interval;
      if (!locate(p.timestamp, day, interval)) continue;
      day_set.insert(day);
      int seg = segment_of(p.chainage_mi);
      if (seg < 0) continue;
      auto& cell = cells[{day, interval, seg}];
      cell.speeds[traj.journey_id].push_back(p.speed_mph);
      if (j > 0) {
        // The event between j-1 and j belongs to point j's cell.
        double dt = static_cast<double>(p.timestamp -
                                        traj.points[j - 1].timestamp);
        if (dt > 0.0) {
          double acc =
              (p.speed_mph - traj.points[j - 1].speed_mph) * kMphToMps / dt;
          cell.freq[static_cast<int>(classify_acceleration(acc))] += 1.0;
        }
      }
    }
  }

  FrameGrid grid;
  grid.config = config;
  for (const auto& s : index.segments) grid.segment_ids.push_back(s.segment_id);
  grid.day_dates.assign(day_set.begin(), day_set.end());
  int n_days = grid.n_days();
  grid.values.assign(static_cast<size_t>(n_days) * steps * n_seg * kNumFeatures,
                     0.0);
  grid.imputed.assign(static_cast<size_t>(n_days) * steps * n_seg, 0);

  for (int d = 0; d < n_days; ++d) {
    int day_date = grid.day_dates[d];
    for (int interval = 0; interval < steps; ++interval) {
      for (int seg = 0; seg < n_seg; ++seg) {
        auto it = cells.find({day_date, interval, seg});
        if (it == cells.end() || it->second.speeds.empty()) {
          double carry = interval > 0 ? grid.at(d, interval - 1, seg, kSegSpeed)
                                      : config.free_flow_default_mph;
          grid.at(d, interval, seg, kSegSpeed) = carry;
          grid.imputed_at(d, interval, seg) = 1;
          continue;
        }
        const auto& cell = it->second;
        double speed_sum = 0.0;
        std::vector<std::vector<double>> per_journey;
        for (const auto& [jid, speeds] : cell.speeds) {
          double m = 0.0;
          for (double v : speeds) m += v;
          speed_sum += m / speeds.size();
          per_journey.push_back(speeds);
        }
        grid.at(d, interval, seg, kSegSpeed) =
            speed_sum / static_cast<double>(cell.speeds.size());
        grid.at(d, interval, seg, kCvVolume) =
            static_cast<double>(cell.speeds.size());
        grid.at(d, interval, seg, kCvSv) = speed_volatility(per_journey);
        for (int c = 0; c < 6; ++c)
          grid.at(d, interval, seg, kHardAcc + c) = cell.freq[c];
      }
    }
  }
  return grid;
}

std::vector<WindowSpec> build_windows(const FrameGrid& grid, int H, int F) {
  std::vector<WindowSpec> out;
  int steps = grid.config.steps_per_day;
  if (H + F > steps) return out;  // degenerate: zero windows
  for (int d = 0; d < grid.n_days(); ++d)
    for (int start = 0; start + H + F <= steps; ++start)
      out.push_back({d, start});
  return out;
}

FeatureWindow materialize_window(const FrameGrid& grid, const WindowSpec& spec,
                                 int H, int F) {
  FeatureWindow w;
  w.H = H;
  w.F = F;
  w.N = grid.n_segments();
  w.day_date = grid.day_dates[spec.day_idx];
  w.macro.resize(static_cast<size_t>(H) * w.N * kNumMacro);
  w.micro.resize(static_cast<size_t>(H) * w.N * kNumMicro);
  w.target_mph.resize(static_cast<size_t>(F) * w.N);
  w.tod_index.resize(H);
  w.dow_index.resize(H);
  int dow = (w.day_date % 7 + 7 + 4) % 7;  // epoch day 0 is a Thursday
  for (int t = 0; t < H; ++t) {
    w.tod_index[t] = spec.start_interval + t;
    w.dow_index[t] = dow;
    for (int n = 0; n < w.N; ++n) {
      for (int f = 0; f < kNumMacro; ++f)
        w.macro[(static_cast<size_t>(t) * w.N + n) * kNumMacro + f] =
            grid.at(spec.day_idx, spec.start_interval + t, n, f);
      for (int f = 0; f < kNumMicro; ++f)
        w.micro[(static_cast<size_t>(t) * w.N + n) * kNumMicro + f] =
            grid.at(spec.day_idx, spec.start_interval + t, n, kNumMacro + f);
    }
  }
  for (int t = 0; t < F; ++t)
    for (int n = 0; n < w.N; ++n)
      w.target_mph[static_cast<size_t>(t) * w.N + n] =
          grid.at(spec.day_idx, spec.start_interval + H + t, n, kSegSpeed);
  return w;
}

NormStats compute_norm_stats(const FrameGrid& grid,
                             const std::vector<WindowSpec>& windows, int H) {
  NormStats stats;
  stats.min.fill(std::numeric_limits<double>::infinity());
  stats.max.fill(-std::numeric_limits<double>::infinity());
  for (const auto& spec : windows)
    for (int t = 0; t < H; ++t)
      for (int n = 0; n < grid.n_segments(); ++n)
        for (int f = 0; f < kNumFeatures; ++f) {
          double v = grid.at(spec.day_idx, spec.start_interval + t, n, f);
          stats.min[f] = std::min(stats.min[f], v);
          stats.max[f] = std::max(stats.max[f], v);
        }
  return stats;
}

double normalize_value(double x, double mn, double mx, ClipReport* report) {
  if (report) ++report->total;
  if (mx <= mn) return 0.0;  // constant feature maps to 0
  double v = (x - mn) / (mx - mn);
  if (v < 0.0 || v > 1.0) {
    if (report) ++report->clipped;
    v = std::clamp(v, 0.0, 1.0);
  }
  return v;
}

double denormalize_value(double x, double mn, double mx) {
  return mn + x * (mx - mn);
}

NormalizedWindow apply_norm(const FeatureWindow& w, const NormStats& stats,
                            ClipReport* report) {
  NormalizedWindow nw;
  nw.raw = w;
  nw.macro.resize(w.macro.size());
  nw.micro.resize(w.micro.size());
  nw.target.resize(w.target_mph.size());
  for (size_t i = 0; i < w.macro.size(); ++i) {
    int f = static_cast<int>(i % kNumMacro);
    nw.macro[i] = normalize_value(w.macro[i], stats.min[f], stats.max[f], report);
  }
  for (size_t i = 0; i < w.micro.size(); ++i) {
    int f = kNumMacro + static_cast<int>(i % kNumMicro);
    nw.micro[i] = normalize_value(w.micro[i], stats.min[f], stats.max[f], report);
  }
  for (size_t i = 0; i < w.target_mph.size(); ++i)
    nw.target[i] = normalize_value(w.target_mph[i], stats.min[kSegSpeed],
                                   stats.max[kSegSpeed], report);
  return nw;
}

}  // namespace mmca
