#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmca/features.hpp"
#include "mmca/ingest.hpp"

namespace mmca {

// One congestion wave: a speed drop that starts at `origin_segment` and
// propagates upstream (toward lower segment indices).
struct Wave {
  int day = 0;               // index into the scenario's day list
  int start_interval = 0;    // 5-min grid position within the day
  int origin_segment = 0;
  int duration_intervals = 6;
  double severity = 0.5;     // fractional speed drop, (0, 1]
  double propagation_segments_per_interval = 1.0;
};

struct ScenarioConfig {
  int n_segments = 20;
  double segment_length_mi = 0.4;
  int days = 1;
  int start_date = 20454;  // days since epoch of the first day
  double free_flow_speed_mph = 65.0;
  double vehicles_per_interval = 6.0;  // Poisson arrival rate at the corridor head
  std::vector<Wave> waves;
  // Hard-brake bursts are injected this many intervals before a wave front
  // reaches a segment, while macro speed is still near free flow.
  int brake_lead_intervals = 2;
  double brake_injection_prob = 0.30;  // per point inside an injection window
  double baseline_brake_prob = 0.01;
  double speed_noise_mph = 1.5;  // AR(1) per-vehicle noise scale
  double ar1_rho = 0.7;
  uint64_t seed = 0;

  void validate() const;
};

struct GeneratedScenario {
  std::vector<CVPoint> points;  // 3-second spacing, emission order
  SegmentIndex index;
  // Aggregated with independent straight loops inside the generator; the
  // features pipeline applied to `points` must reproduce it.
  FrameGrid truth;
};

GeneratedScenario generate(const ScenarioConfig& config);

// Scenario config as JSON (CLI config file format).
ScenarioConfig scenario_from_json_file(const std::string& path);
std::string scenario_to_json(const ScenarioConfig& config);

}  // namespace mmca
