#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmca/ingest.hpp"

namespace mmca {

constexpr double kMphToMps = 0.44704;

// Feature layout shared by the frame grid, dataset file, and model input.
// Index 0-1 are the macro features, 2-8 the micro features.
enum Feature : int {
  kSegSpeed = 0,
  kCvVolume = 1,
  kCvSv = 2,
  kHardAcc = 3,
  kMedAcc = 4,
  kLightAcc = 5,
  kHardBrk = 6,
  kMedBrk = 7,
  kLightBrk = 8,
};
constexpr int kNumFeatures = 9;
constexpr int kNumMacro = 2;
constexpr int kNumMicro = 7;
extern const std::array<const char*, kNumFeatures> kFeatureNames;

enum class BehaviorClass : int {
  kHardAccel = 0,
  kMedAccel = 1,
  kLightAccel = 2,
  kHardBrake = 3,
  kMedBrake = 4,
  kLightBrake = 5,
};

// Signed acceleration in m/s^2. Zero counts as light acceleration; the
// 0.45 / 0.89 / 1.19 boundary values fall into the medium classes.
BehaviorClass classify_acceleration(double acc_mps2);

// Mean over contributing trajectories of the sample (n-1) standard deviation
// of their point speeds. Trajectories with fewer than two points are skipped;
// zero when nothing contributes.
double speed_volatility(const std::vector<std::vector<double>>& speeds_mph);

// Consecutive-pair behavior counts over a whole trajectory (dt <= 0 pairs
// skipped). Order matches BehaviorClass.
std::array<int, 6> classify_accelerations(const Trajectory& traj);

struct FeatureConfig {
  int steps_per_day = 192;        // 06:00-22:00 at 5 min
  int day_start_sec = 6 * 3600;
  int interval_sec = 300;
  double free_flow_default_mph = 65.0;
};

struct SegmentFrame {
  std::string segment_id;
  int64_t interval_start = 0;
  std::array<double, kNumFeatures> features{};
  bool is_imputed = false;
};

// Dense per-(day, interval, segment) feature grid.
struct FrameGrid {
  std::vector<std::string> segment_ids;
  std::vector<int> day_dates;  // days since epoch, ascending
  FeatureConfig config;
  std::vector<double> values;    // [day][interval][segment][feature]
  std::vector<uint8_t> imputed;  // [day][interval][segment]

  int n_segments() const { return static_cast<int>(segment_ids.size()); }
  int n_days() const { return static_cast<int>(day_dates.size()); }
  double& at(int day, int interval, int seg, int feature);
  double at(int day, int interval, int seg, int feature) const;
  uint8_t& imputed_at(int day, int interval, int seg);
  bool imputed_at(int day, int interval, int seg) const;
  SegmentFrame frame(int day, int interval, int seg) const;
};

// Full feature pipeline: segment assignment, per-interval aggregation,
// zero-volume imputation. Cleaned trajectories in, dense grid out.
FrameGrid build_frame_grid(const std::vector<Trajectory>& trajs,
                           const SegmentIndex& index,
                           const FeatureConfig& config = {});

struct WindowSpec {
  int day_idx = 0;
  int start_interval = 0;  // position of the first input frame in the day grid
};

// Sliding windows with stride 1 that never straddle a day boundary.
std::vector<WindowSpec> build_windows(const FrameGrid& grid, int H, int F);

// Materialized model input. Raw (mph / count) units; normalization is applied
// separately so the stats stay invertible.
struct FeatureWindow {
  int H = 0, F = 0, N = 0;
  std::vector<double> macro;       // H*N*2
  std::vector<double> micro;       // H*N*7
  std::vector<double> target_mph;  // F*N
  std::vector<int> tod_index;      // H, in [0, steps_per_day)
  std::vector<int> dow_index;      // H, in [0, 7)
  int day_date = 0;
};

FeatureWindow materialize_window(const FrameGrid& grid, const WindowSpec& spec,
                                 int H, int F);

struct NormStats {
  std::array<double, kNumFeatures> min{};
  std::array<double, kNumFeatures> max{};
};

// Per-feature min/max over the input frames of the given (training) windows.
NormStats compute_norm_stats(const FrameGrid& grid,
                             const std::vector<WindowSpec>& windows, int H);

struct ClipReport {
  int64_t clipped = 0;
  int64_t total = 0;
};

double normalize_value(double x, double mn, double mx, ClipReport* report);
double denormalize_value(double x, double mn, double mx);

// Normalized copy of a window: macro/micro in [0,1], target scaled with the
// seg_speed stats.
struct NormalizedWindow {
  FeatureWindow raw;
  std::vector<double> macro;   // normalized
  std::vector<double> micro;
  std::vector<double> target;  // normalized seg_speed
};

NormalizedWindow apply_norm(const FeatureWindow& w, const NormStats& stats,
                            ClipReport* report = nullptr);

}  // namespace mmca
