#include "mmca/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mmca {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc{} && p == e && !s.empty();
}

bool parse_int64(const std::string& s, int64_t& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc{} && p == e && !s.empty();
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

ParseResult parse_points(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("parse_points: missing header");
  if (strip_cr(line) != "journey_id,timestamp,chainage_mi,heading_deg,speed_mph")
    throw std::runtime_error("parse_points: unexpected header: " + line);
  ParseResult result;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_csv(line);
    CVPoint p;
    if (fields.size() != 5 || fields[0].empty() ||
        !parse_int64(fields[1], p.timestamp) ||
        !parse_double(fields[2], p.chainage_mi) ||
        !parse_double(fields[3], p.heading_deg) ||
        !parse_double(fields[4], p.speed_mph)) {
      result.rejected.push_back({line_no, "malformed"});
      continue;
    }
    if (p.speed_mph < 0.0) {
      result.rejected.push_back({line_no, "negative-speed"});
      continue;
    }
    if (p.speed_mph >= kSpeedCapMph) {
      result.rejected.push_back({line_no, "speed-cap"});
      continue;
    }
    p.journey_id = fields[0];
    result.points.push_back(std::move(p));
  }
  return result;
}

SegmentIndex parse_segment_index(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("parse_segment_index: missing header");
  if (strip_cr(line) != "segment_id,start_mi,end_mi,direction")
    throw std::runtime_error("parse_segment_index: unexpected header: " + line);
  SegmentIndex index;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_csv(line);
    Segment s;
    if (fields.size() != 4 || !parse_double(fields[1], s.start_mi) ||
        !parse_double(fields[2], s.end_mi) || s.end_mi <= s.start_mi)
      throw std::runtime_error("parse_segment_index: bad row at line " +
                               std::to_string(line_no));
    s.segment_id = fields[0];
    s.direction = fields[3];
    index.segments.push_back(std::move(s));
  }
  return index;
}

std::vector<Trajectory> group_and_clean(const std::vector<CVPoint>& points,
                                        double stationary_window_s,
                                        double stationary_speed_cap_mph) {
  std::map<std::string, std::vector<CVPoint>> by_journey;
  for (const auto& p : points) by_journey[p.journey_id].push_back(p);

  std::vector<Trajectory> out;
  for (auto& [jid, pts] : by_journey) {
    std::stable_sort(pts.begin(), pts.end(),
                     [](const CVPoint& a, const CVPoint& b) {
                       return a.timestamp < b.timestamp;
                     });
    // Drop duplicate timestamps, keeping the first occurrence.
    std::vector<CVPoint> dedup;
    for (auto& p : pts)
      if (dedup.empty() || p.timestamp != dedup.back().timestamp)
        dedup.push_back(std::move(p));

    // Stationary-run scan: a run of consecutive slow points whose time span
    // reaches the window drops the whole journey.
    bool drop = false;
    size_t run_start = 0;
    bool in_run = false;
    for (size_t i = 0; i <= dedup.size(); ++i) {
      bool slow = i < dedup.size() && dedup[i].speed_mph < stationary_speed_cap_mph;
      if (slow && !in_run) {
        in_run = true;
        run_start = i;
      } else if (!slow && in_run) {
        in_run = false;
        double span = static_cast<double>(dedup[i - 1].timestamp -
                                          dedup[run_start].timestamp);
        if (span >= stationary_window_s) drop = true;
      }
    }
    if (drop) continue;
    out.push_back({jid, std::move(dedup)});
  }
  return out;
}

SegmentAssignment assign_segments(const Trajectory& traj,
                                  const SegmentIndex& index) {
  if (index.segments.empty())
    throw std::runtime_error("assign_segments: empty segment index");
  SegmentAssignment result;
  std::vector<Trajectory> per_segment(index.segments.size());
  for (const auto& p : traj.points) {
    int match = -1;
    for (size_t s = 0; s < index.segments.size(); ++s) {
      const auto& seg = index.segments[s];
      // Half-open [start, end): a boundary chainage belongs downstream.
      if (p.chainage_mi >= seg.start_mi && p.chainage_mi < seg.end_mi) {
        match = static_cast<int>(s);
        break;
      }
    }
    if (match < 0) {
      ++result.dropped_points;
      continue;
    }
    auto& t = per_segment[match];
    t.journey_id = traj.journey_id;
    t.points.push_back(p);
  }
  for (size_t s = 0; s < per_segment.size(); ++s)
    if (!per_segment[s].points.empty())
      result.pieces.emplace_back(index.segments[s].segment_id,
                                 std::move(per_segment[s]));
  return result;
}

std::vector<Trajectory> downsample_penetration(
    const std::vector<Trajectory>& trajs, double keep_fraction, uint64_t seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw std::invalid_argument(
        "downsample_penetration: keep_fraction must lie in (0, 1], got " +
        std::to_string(keep_fraction));
  if (keep_fraction == 1.0) return trajs;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Trajectory> out;
  for (const auto& t : trajs)
    if (u(rng) < keep_fraction) out.push_back(t);
  return out;
}

}  // namespace mmca
