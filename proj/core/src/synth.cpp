#include "mmca/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

namespace mmca {

void ScenarioConfig::validate() const {
  if (n_segments <= 0 || days <= 0 || segment_length_mi <= 0.0)
    throw std::invalid_argument("ScenarioConfig: non-positive geometry");
  for (const auto& w : waves) {
    if (w.origin_segment < 0 || w.origin_segment >= n_segments)
      throw std::invalid_argument("ScenarioConfig: wave origin segment " +
                                  std::to_string(w.origin_segment) +
                                  " outside [0, " + std::to_string(n_segments) +
                                  ")");
    if (!(w.severity > 0.0 && w.severity <= 1.0))
      throw std::invalid_argument("ScenarioConfig: wave severity outside (0,1]");
    if (w.day < 0 || w.day >= days)
      throw std::invalid_argument("ScenarioConfig: wave day out of range");
    if (w.propagation_segments_per_interval <= 0.0)
      throw std::invalid_argument("ScenarioConfig: non-positive propagation");
  }
}

namespace {

constexpr int kStepsPerDay = 192;
constexpr int kDayStartSec = 6 * 3600;
constexpr int kIntervalSec = 300;
constexpr double kMinSpeed = 5.0;

// Interval at which a wave front reaches `seg` (fractional).
double wave_arrival(const Wave& w, int seg) {
  return w.start_interval +
         (w.origin_segment - seg) / w.propagation_segments_per_interval;
}

double field_speed(const ScenarioConfig& c, int day, double interval, int seg) {
  double v = c.free_flow_speed_mph;
  for (const auto& w : c.waves) {
    if (w.day != day || seg > w.origin_segment) continue;
    double arrival = wave_arrival(w, seg);
    if (interval >= arrival && interval < arrival + w.duration_intervals)
      v = std::min(v, c.free_flow_speed_mph * (1.0 - w.severity));
  }
  return std::max(v, kMinSpeed);
}

bool in_brake_window(const ScenarioConfig& c, int day, double interval,
                     int seg) {
  for (const auto& w : c.waves) {
    if (w.day != day || seg > w.origin_segment) continue;
    double arrival = wave_arrival(w, seg);
    if (interval >= arrival - c.brake_lead_intervals && interval < arrival)
      return true;
  }
  return false;
}

// Straight-loop aggregation of the emitted points, kept separate from the
// features pipeline so the two can be compared against each other.
FrameGrid aggregate_truth(const ScenarioConfig& c,
                          const std::vector<CVPoint>& points,
                          const SegmentIndex& index) {
  FrameGrid grid;
  grid.config.steps_per_day = kStepsPerDay;
  grid.config.day_start_sec = kDayStartSec;
  grid.config.interval_sec = kIntervalSec;
  for (const auto& s : index.segments) grid.segment_ids.push_back(s.segment_id);
  for (int d = 0; d < c.days; ++d) grid.day_dates.push_back(c.start_date + d);
  int n_seg = c.n_segments;
  grid.values.assign(
      static_cast<size_t>(c.days) * kStepsPerDay * n_seg * kNumFeatures, 0.0);
  grid.imputed.assign(static_cast<size_t>(c.days) * kStepsPerDay * n_seg, 0);

  auto cell_of = [&](const CVPoint& p, int& day, int& interval, int& seg) {
    int date = static_cast<int>(p.timestamp / 86400);
    day = date - c.start_date;
    if (day < 0 || day >= c.days) return false;
    int64_t sec = p.timestamp - static_cast<int64_t>(date) * 86400 - kDayStartSec;
    if (sec < 0) return false;
    interval = static_cast<int>(sec / kIntervalSec);
    if (interval >= kStepsPerDay) return false;
    seg = -1;
    for (int s = 0; s < n_seg; ++s)
      if (p.chainage_mi >= index.segments[s].start_mi &&
          p.chainage_mi < index.segments[s].end_mi) {
        seg = s;
        break;
      }
    return seg >= 0;
  };

  std::map<std::string, std::vector<CVPoint>> journeys;
  for (const auto& p : points) journeys[p.journey_id].push_back(p);

  struct Cell {
    std::map<std::string, std::vector<double>> speeds;
    std::array<double, 6> freq{};
  };
  std::map<std::tuple<int, int, int>, Cell> cells;
  for (const auto& [jid, pts] : journeys) {
    for (size_t j = 0; j < pts.size(); ++j) {
      int day, interval, seg;
      if (!cell_of(pts[j], day, interval, seg)) continue;
      auto& cell = cells[{day, interval, seg}];
      cell.speeds[jid].push_back(pts[j].speed_mph);
      if (j > 0) {
        double dt = static_cast<double>(pts[j].timestamp - pts[j - 1].timestamp);
        if (dt > 0.0) {
          double acc = (pts[j].speed_mph - pts[j - 1].speed_mph) * kMphToMps / dt;
          cell.freq[static_cast<int>(classify_acceleration(acc))] += 1.0;
        }
      }
    }
  }

  for (int d = 0; d < c.days; ++d)
    for (int interval = 0; interval < kStepsPerDay; ++interval)
      for (int seg = 0; seg < n_seg; ++seg) {
        auto it = cells.find({d, interval, seg});
        if (it == cells.end() || it->second.speeds.empty()) {
          grid.at(d, interval, seg, kSegSpeed) =
              interval > 0 ? grid.at(d, interval - 1, seg, kSegSpeed)
                           : grid.config.free_flow_default_mph;
          grid.imputed_at(d, interval, seg) = 1;
          continue;
        }
        const auto& cell = it->second;
        double mean_sum = 0.0, sv_sum = 0.0;
        int sv_n = 0;
        for (const auto& [jid, sp] : cell.speeds) {
          double m = 0.0;
          for (double v : sp) m += v;
          m /= static_cast<double>(sp.size());
          mean_sum += m;
          if (sp.size() >= 2) {
            double ss = 0.0;
            for (double v : sp) ss += (v - m) * (v - m);
            sv_sum += std::sqrt(ss / static_cast<double>(sp.size() - 1));
            ++sv_n;
          }
        }
        grid.at(d, interval, seg, kSegSpeed) =
            mean_sum / static_cast<double>(cell.speeds.size());
        grid.at(d, interval, seg, kCvVolume) =
            static_cast<double>(cell.speeds.size());
        grid.at(d, interval, seg, kCvSv) = sv_n ? sv_sum / sv_n : 0.0;
        for (int f = 0; f < 6; ++f)
          grid.at(d, interval, seg, kHardAcc + f) = cell.freq[f];
      }
  return grid;
}

}  // namespace

GeneratedScenario generate(const ScenarioConfig& c) {
  c.validate();
  GeneratedScenario out;
  double corridor_len = c.n_segments * c.segment_length_mi;
  for (int s = 0; s < c.n_segments; ++s)
    out.index.segments.push_back({"seg" + std::to_string(s),
                                  s * c.segment_length_mi,
                                  (s + 1) * c.segment_length_mi, "EB"});

  for (int day = 0; day < c.days; ++day) {
    // Per-day derived seed keeps days independent and the whole run
    // reproducible.
    std::mt19937_64 rng(c.seed ^ (0x5170000000000000ull +
                                  static_cast<uint64_t>(day) * 0x9e3779b9ull));
    std::poisson_distribution<int> arrivals(c.vehicles_per_interval);
    std::normal_distribution<double> noise_dist(
        0.0, c.speed_noise_mph * std::sqrt(1.0 - c.ar1_rho * c.ar1_rho));
    std::uniform_int_distribution<int> offset_dist(0, kIntervalSec - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    int64_t day_start = static_cast<int64_t>(c.start_date + day) * 86400 +
                        kDayStartSec;
    int64_t day_end = day_start + static_cast<int64_t>(kStepsPerDay) *
                                      kIntervalSec;
    for (int interval = 0; interval < kStepsPerDay; ++interval) {
      int n_spawn = arrivals(rng);
      for (int k = 0; k < n_spawn; ++k) {
        std::string jid = "d" + std::to_string(day) + "_i" +
                          std::to_string(interval) + "_v" + std::to_string(k);
        int64_t t = day_start + static_cast<int64_t>(interval) * kIntervalSec +
                    offset_dist(rng);
        double pos = 0.0;
        double noise = 0.0;
        double prev_speed = -1.0;
        bool braked_last_step = false;
        while (pos < corridor_len && t < day_end) {
          int seg = std::min(static_cast<int>(pos / c.segment_length_mi),
                             c.n_segments - 1);
          double interval_f =
              static_cast<double>(t - day_start) / kIntervalSec;
          double base = field_speed(c, day, interval_f, seg);
          noise = c.ar1_rho * noise + noise_dist(rng);
          double speed = base + noise;
          double brake_p = in_brake_window(c, day, interval_f, seg)
                               ? c.brake_injection_prob
                               : c.baseline_brake_prob;
          if (!braked_last_step && prev_speed > 15.0 && u(rng) < brake_p) {
            // One sharp 3 s deceleration crossing the hard-brake threshold,
            // recovered on the next step.
            speed = prev_speed - 12.0;
            braked_last_step = true;
          } else {
            braked_last_step = false;
          }
          speed = std::clamp(speed, 0.5, 119.0);
          out.points.push_back({jid, t, pos, 90.0, speed});
          prev_speed = speed;
          pos += speed / 1200.0;  // mph over a 3 s step, in miles
          t += 3;
        }
      }
    }
  }
  out.truth = aggregate_truth(c, out.points, out.index);
  return out;
}

ScenarioConfig scenario_from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("scenario_from_json_file: cannot open " + path);
  nlohmann::json j;
  is >> j;
  ScenarioConfig c;
  c.n_segments = j.value("n_segments", c.n_segments);
  c.segment_length_mi = j.value("segment_length_mi", c.segment_length_mi);
  c.days = j.value("days", c.days);
  c.start_date = j.value("start_date", c.start_date);
  c.free_flow_speed_mph = j.value("free_flow_speed_mph", c.free_flow_speed_mph);
  c.vehicles_per_interval =
      j.value("vehicles_per_interval", c.vehicles_per_interval);
  c.brake_lead_intervals = j.value("brake_lead_intervals", c.brake_lead_intervals);
  c.brake_injection_prob = j.value("brake_injection_prob", c.brake_injection_prob);
  c.baseline_brake_prob = j.value("baseline_brake_prob", c.baseline_brake_prob);
  c.speed_noise_mph = j.value("speed_noise_mph", c.speed_noise_mph);
  c.ar1_rho = j.value("ar1_rho", c.ar1_rho);
  c.seed = j.value("seed", c.seed);
  if (j.contains("waves"))
    for (const auto& wj : j["waves"]) {
      Wave w;
      w.day = wj.value("day", 0);
      w.start_interval = wj.value("start_interval", 0);
      w.origin_segment = wj.value("origin_segment", 0);
      w.duration_intervals = wj.value("duration_intervals", 6);
      w.severity = wj.value("severity", 0.5);
      w.propagation_segments_per_interval =
          wj.value("propagation_segments_per_interval", 1.0);
      c.waves.push_back(w);
    }
  c.validate();
  return c;
}

std::string scenario_to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["n_segments"] = c.n_segments;
  j["segment_length_mi"] = c.segment_length_mi;
  j["days"] = c.days;
  j["start_date"] = c.start_date;
  j["free_flow_speed_mph"] = c.free_flow_speed_mph;
  j["vehicles_per_interval"] = c.vehicles_per_interval;
  j["brake_lead_intervals"] = c.brake_lead_intervals;
  j["brake_injection_prob"] = c.brake_injection_prob;
  j["baseline_brake_prob"] = c.baseline_brake_prob;
  j["speed_noise_mph"] = c.speed_noise_mph;
  j["ar1_rho"] = c.ar1_rho;
  j["seed"] = c.seed;
  j["waves"] = nlohmann::json::array();
  for (const auto& w : c.waves)
    j["waves"].push_back({{"day", w.day},
                          {"start_interval", w.start_interval},
                          {"origin_segment", w.origin_segment},
                          {"duration_intervals", w.duration_intervals},
                          {"severity", w.severity},
                          {"propagation_segments_per_interval",
                           w.propagation_segments_per_interval}});
  return j.dump(2);
}

}  // namespace mmca
