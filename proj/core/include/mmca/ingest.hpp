#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <vector>

namespace mmca {

// One connected-vehicle GPS ping. Position is linear chainage along the
// corridor in miles; upstream projection from lat/lon is a preprocessing
// contract, not handled here.
struct CVPoint {
  std::string journey_id;
  int64_t timestamp = 0;  // seconds since epoch, nominally 3 s spacing
  double chainage_mi = 0.0;
  double heading_deg = 0.0;
  double speed_mph = 0.0;
};

struct Trajectory {
  std::string journey_id;
  std::vector<CVPoint> points;  // ordered by timestamp
};

struct Segment {
  std::string segment_id;
  double start_mi = 0.0;
  double end_mi = 0.0;
  std::string direction;
};

struct SegmentIndex {
  std::vector<Segment> segments;  // contiguous, non-overlapping per direction
};

struct RejectedRow {
  int line_no = 0;  // 1-based, header = line 1
  std::string reason;  // "speed-cap" | "malformed" | "negative-speed"
};

struct ParseResult {
  std::vector<CVPoint> points;
  std::vector<RejectedRow> rejected;
};

// Speeds at or above this are treated as sensor noise and rejected.
constexpr double kSpeedCapMph = 120.0;

// Expects the exact header `journey_id,timestamp,chainage_mi,heading_deg,speed_mph`.
// Malformed rows are logged and skipped; a bad header throws.
ParseResult parse_points(std::istream& in);

// `segment_id,start_mi,end_mi,direction`
SegmentIndex parse_segment_index(std::istream& in);

// Groups by journey_id and time-sorts. Journeys containing a run of
// consecutive points below `stationary_speed_cap` spanning at least
// `stationary_window` seconds are dropped entirely. Duplicate timestamps
// keep the first occurrence. Output ordered by journey_id.
std::vector<Trajectory> group_and_clean(const std::vector<CVPoint>& points,
                                        double stationary_window_s = 600.0,
                                        double stationary_speed_cap_mph = 2.0);

struct SegmentAssignment {
  // Parallel to index.segments order; only non-empty entries included.
  std::vector<std::pair<std::string, Trajectory>> pieces;
  int dropped_points = 0;  // chainage outside every segment
};

// Each point lands in exactly one segment; a chainage equal to a boundary
// goes to the downstream segment.
SegmentAssignment assign_segments(const Trajectory& traj,
                                  const SegmentIndex& index);

// Keeps each unique journey independently with probability keep_fraction.
// Deterministic for a fixed seed.
std::vector<Trajectory> downsample_penetration(
    const std::vector<Trajectory>& trajs, double keep_fraction, uint64_t seed);

}  // namespace mmca
