#include <doctest.h>

#include <sstream>

#include "mmca/ingest.hpp"

using namespace mmca;

namespace {

std::vector<CVPoint> journey(const std::string& id, int64_t t0, int n,
                             double chainage0, double speed,
                             double chainage_step = 0.01) {
  std::vector<CVPoint> pts;
  for (int i = 0; i < n; ++i)
    pts.push_back({id, t0 + 3 * i, chainage0 + chainage_step * i, 90.0, speed});
  return pts;
}

}  // namespace

TEST_SUITE("ingest") {

TEST_CASE("parser accepts clean rows and keeps order") {
  std::istringstream in(
      "journey_id,timestamp,chainage_mi,heading_deg,speed_mph\n"
      "j1,1000,0.50,92.0,61.5\n"
      "j2,1003,1.25,91.0,58.0\n");
  auto res = parse_points(in);
  REQUIRE(res.points.size() == 2);
  CHECK(res.rejected.empty());
  CHECK(res.points[0].journey_id == "j1");
  CHECK(res.points[0].timestamp == 1000);
  CHECK(res.points[0].chainage_mi == doctest::Approx(0.5));
  CHECK(res.points[1].speed_mph == doctest::Approx(58.0));
}

TEST_CASE("parser rejects a bad header") {
  std::istringstream in("journey,ts,mi,deg,mph\nj1,1,0.1,0,50\n");
  CHECK_THROWS_AS(parse_points(in), std::runtime_error);
}

TEST_CASE("speed 125 is rejected under the cap, 119.9 is kept") {
  std::istringstream in(
      "journey_id,timestamp,chainage_mi,heading_deg,speed_mph\n"
      "j1,1000,0.5,90,125\n"
      "j1,1003,0.5,90,119.9\n"
      "j1,1006,0.5,90,120\n");
  auto res = parse_points(in);
  REQUIRE(res.points.size() == 1);
  CHECK(res.points[0].speed_mph == doctest::Approx(119.9));
  REQUIRE(res.rejected.size() == 2);
  CHECK(res.rejected[0].line_no == 2);
  CHECK(res.rejected[0].reason == "speed-cap");
  CHECK(res.rejected[1].line_no == 4);
  CHECK(res.rejected[1].reason == "speed-cap");
}

TEST_CASE("negative speeds and malformed rows carry distinct reasons") {
  std::istringstream in(
      "journey_id,timestamp,chainage_mi,heading_deg,speed_mph\n"
      "j1,1000,0.5,90,-3\n"
      "j1,1003,not_a_number,90,50\n"
      "j1,1006,0.5,90\n"
      "j1,1009,0.5,90,55\n");
  auto res = parse_points(in);
  REQUIRE(res.points.size() == 1);
  REQUIRE(res.rejected.size() == 3);
  CHECK(res.rejected[0].reason == "negative-speed");
  CHECK(res.rejected[0].line_no == 2);
  CHECK(res.rejected[1].reason == "malformed");
  CHECK(res.rejected[2].reason == "malformed");
}

TEST_CASE("segment index parser round trips the example file") {
  std::istringstream in(
      "segment_id,start_mi,end_mi,direction\n"
      "S00,0.0,0.4,NB\n"
      "S01,0.4,0.8,NB\n");
  auto idx = parse_segment_index(in);
  REQUIRE(idx.segments.size() == 2);
  CHECK(idx.segments[1].segment_id == "S01");
  CHECK(idx.segments[1].start_mi == doctest::Approx(0.4));
  CHECK(idx.segments[1].direction == "NB");
}

TEST_CASE("grouping sorts by time and drops duplicate timestamps") {
  std::vector<CVPoint> pts;
  pts.push_back({"a", 1006, 0.3, 90, 50});
  pts.push_back({"a", 1000, 0.1, 90, 48});
  pts.push_back({"a", 1000, 0.9, 90, 99});  // duplicate ts, later in input
  pts.push_back({"a", 1003, 0.2, 90, 49});
  auto trajs = group_and_clean(pts);
  REQUIRE(trajs.size() == 1);
  REQUIRE(trajs[0].points.size() == 3);
  CHECK(trajs[0].points[0].timestamp == 1000);
  CHECK(trajs[0].points[0].speed_mph == doctest::Approx(48));  // first kept
  CHECK(trajs[0].points[2].timestamp == 1006);
}

TEST_CASE("a 700 s stationary run drops the journey, 90 s does not") {
  // 700 s of near-zero speed: 234 points at 3 s spacing spans 699 s; use 235.
  auto slow = journey("stuck", 5000, 235, 1.0, 0.5, 0.0);
  auto moving = journey("stuck", 5000 + 3 * 235, 40, 1.0, 55.0);
  slow.insert(slow.end(), moving.begin(), moving.end());

  auto brief = journey("brief", 5000, 31, 2.0, 0.5, 0.0);  // 90 s stop
  auto after = journey("brief", 5000 + 3 * 31, 40, 2.0, 55.0);
  brief.insert(brief.end(), after.begin(), after.end());

  std::vector<CVPoint> all = slow;
  all.insert(all.end(), brief.begin(), brief.end());
  auto trajs = group_and_clean(all, 600.0, 2.0);
  REQUIRE(trajs.size() == 1);
  CHECK(trajs[0].journey_id == "brief");
}

TEST_CASE("cleaning is monotone: rejecting more rows never adds journeys") {
  std::vector<CVPoint> pts;
  for (int j = 0; j < 5; ++j) {
    auto tr = journey("j" + std::to_string(j), 1000 + 40 * j, 20, 0.1 * j, 45.0);
    pts.insert(pts.end(), tr.begin(), tr.end());
  }
  auto base = group_and_clean(pts);
  std::vector<CVPoint> fewer(pts.begin(), pts.begin() + pts.size() / 2);
  auto reduced = group_and_clean(fewer);
  CHECK(reduced.size() <= base.size());
  for (const auto& t : reduced) {
    bool found = false;
    for (const auto& b : base) found = found || b.journey_id == t.journey_id;
    CHECK(found);
  }
}

TEST_CASE("a chainage on a boundary goes to the downstream segment") {
  SegmentIndex idx;
  idx.segments.push_back({"S00", 0.0, 0.4, "NB"});
  idx.segments.push_back({"S01", 0.4, 0.8, "NB"});
  Trajectory traj;
  traj.journey_id = "j";
  traj.points.push_back({"j", 0, 0.39, 90, 50});
  traj.points.push_back({"j", 3, 0.40, 90, 50});  // exactly on the boundary
  traj.points.push_back({"j", 6, 0.41, 90, 50});
  auto assigned = assign_segments(traj, idx);
  REQUIRE(assigned.pieces.size() == 2);
  CHECK(assigned.pieces[0].first == "S00");
  CHECK(assigned.pieces[0].second.points.size() == 1);
  CHECK(assigned.pieces[1].first == "S01");
  CHECK(assigned.pieces[1].second.points.size() == 2);
  CHECK(assigned.dropped_points == 0);
}

TEST_CASE("chainage outside every segment is counted, not assigned") {
  SegmentIndex idx;
  idx.segments.push_back({"S00", 0.0, 0.4, "NB"});
  Trajectory traj;
  traj.journey_id = "j";
  traj.points.push_back({"j", 0, 0.2, 90, 50});
  traj.points.push_back({"j", 3, 0.8, 90, 50});
  traj.points.push_back({"j", 6, -0.1, 90, 50});
  auto assigned = assign_segments(traj, idx);
  REQUIRE(assigned.pieces.size() == 1);
  CHECK(assigned.pieces[0].second.points.size() == 1);
  CHECK(assigned.dropped_points == 2);
}

TEST_CASE("assigning against an empty index throws") {
  Trajectory traj;
  traj.points.push_back({"j", 0, 0.2, 90, 50});
  CHECK_THROWS_AS(assign_segments(traj, SegmentIndex{}), std::runtime_error);
}

TEST_CASE("penetration downsampling is binomial and deterministic") {
  std::vector<Trajectory> trajs(5000);
  for (int i = 0; i < 5000; ++i) {
    trajs[i].journey_id = "j" + std::to_string(i);
    trajs[i].points = journey(trajs[i].journey_id, 0, 2, 0.0, 50.0);
  }
  auto half = downsample_penetration(trajs, 0.5, 1234);
  // 3.8 sigma around np = 2500
  CHECK(half.size() >= 2300);
  CHECK(half.size() <= 2700);

  auto again = downsample_penetration(trajs, 0.5, 1234);
  REQUIRE(again.size() == half.size());
  for (size_t i = 0; i < half.size(); ++i)
    CHECK(again[i].journey_id == half[i].journey_id);

  auto other = downsample_penetration(trajs, 0.5, 99);
  bool differs = other.size() != half.size();
  for (size_t i = 0; !differs && i < std::min(other.size(), half.size()); ++i)
    differs = other[i].journey_id != half[i].journey_id;
  CHECK(differs);

  auto all = downsample_penetration(trajs, 1.0, 7);
  CHECK(all.size() == trajs.size());
  CHECK_THROWS_AS(downsample_penetration(trajs, 0.0, 7), std::invalid_argument);
  CHECK_THROWS_AS(downsample_penetration(trajs, 1.5, 7), std::invalid_argument);
}

}  // TEST_SUITE
