#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

#include "mslam/errors.hpp"
#include "mslam/simulator.hpp"
#include "mslam/sparse_map.hpp"
#include "mslam/tracking.hpp"

using namespace mslam;

namespace {

CameraIntrinsics intrinsics() { return {}; }

// A frame looking at a frontal wall 2 m away; point i sits on a fixed pixel grid.
Frame wall_frame(int id, int n_points, int first_pixel = 0) {
  const auto intr = intrinsics();
  Frame f;
  f.id = id;
  f.timestamp = id / 30.0;
  f.depth = DepthImage(intr.width, intr.height);
  std::fill(f.depth.data.begin(), f.depth.data.end(), 2.0);
  for (int i = 0; i < n_points; ++i) {
    const int k = first_pixel + i;
    PointObservation p;
    p.landmark_id = k;
    p.pixel = Vec2(5.0 + (k % 30) * 5.0, 5.0 + (k / 30) * 5.0);
    p.descriptor = k;
    f.points.push_back(p);
  }
  f.pose = Pose::identity();
  f.has_pose = true;
  f.reset_matches();
  return f;
}

// Marks observation i as matched to map point ids[i].
void match_points(Frame& f, const std::vector<int>& ids) {
  for (std::size_t i = 0; i < ids.size() && i < f.points.size(); ++i) f.point_matches[i] = ids[i];
}

std::vector<int> iota_ids(int first, int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), first);
  return v;
}

}  // namespace

TEST_CASE("keyframe rule at the 90% boundary") {
  const auto ref = iota_ids(0, 100);
  CHECK(needs_keyframe(iota_ids(0, 89), ref));
  CHECK_FALSE(needs_keyframe(iota_ids(0, 91), ref));
  CHECK_FALSE(needs_keyframe(iota_ids(0, 90), ref));
  CHECK(needs_keyframe(iota_ids(0, 50), std::vector<int>{}));
  CHECK(tracked_ratio(iota_ids(5, 100), ref) == doctest::Approx(0.95));
}

TEST_CASE("keyframe rule against a stored keyframe") {
  SparseMap map;
  Frame f0 = wall_frame(0, 100);
  map.insert_keyframe(f0, intrinsics());
  const Keyframe& kf = *map.keyframe(0);
  Frame f1 = wall_frame(1, 100);
  match_points(f1, iota_ids(0, 89));
  CHECK(needs_keyframe(f1, kf));
  match_points(f1, iota_ids(0, 91));
  CHECK_FALSE(needs_keyframe(f1, kf));
}

TEST_CASE("first keyframe turns every observation with depth into a landmark") {
  SparseMap map;
  Frame f = wall_frame(0, 50);
  const auto rep = map.insert_keyframe(f, intrinsics());
  CHECK(rep.new_points == 50);
  CHECK(map.points().size() == 50);
  for (const auto& m : f.point_matches) CHECK(m.has_value());
  for (const auto& [id, p] : map.points()) {
    CHECK(p.observers == std::set<int>{0});
    CHECK(p.position.z() == doctest::Approx(2.0));
  }
}

TEST_CASE("50 new points add 50 map points") {
  SparseMap map;
  Frame f0 = wall_frame(0, 50);
  map.insert_keyframe(f0, intrinsics());
  Frame f1 = wall_frame(1, 100);
  match_points(f1, iota_ids(0, 50));
  const auto rep = map.insert_keyframe(f1, intrinsics());
  CHECK(rep.new_points == 50);
  CHECK(map.points().size() == 100);
  CHECK(map.point(0)->observers == std::set<int>{0, 1});
}

TEST_CASE("observations without depth spawn nothing") {
  SparseMap map;
  Frame f = wall_frame(0, 10);
  std::fill(f.depth.data.begin(), f.depth.data.end(), 0.0);
  const auto rep = map.insert_keyframe(f, intrinsics());
  CHECK(rep.new_points == 0);
  CHECK(map.points().empty());
  CHECK(map.keyframes().size() == 1);
}

TEST_CASE("re-observing a plane merges clouds") {
  SceneConfig sc;
  const auto world = build_world(sc);
  const auto poses = sample_trajectory({}, world);
  const auto intr = intrinsics();
  TrackerConfig tc;
  auto frame_at = [&](int k) {
    const auto obs = observe_features(world, poses[k], intr, {}, k, frame_timestamp(k));
    Frame f;
    f.id = k;
    f.timestamp = obs.timestamp;
    f.depth = obs.depth;
    f.points = obs.points;
    f.lines = obs.lines;
    f.planes = extract_planes(obs.depth, intr, tc.extraction);
    f.pose = poses[k];
    f.reset_matches();
    return f;
  };
  SparseMap map;
  Frame f0 = frame_at(0);
  REQUIRE(!f0.planes.empty());
  map.insert_keyframe(f0, intr);
  const std::size_t planes_before = map.planes().size();
  std::map<int, std::size_t> cloud_before;
  for (const auto& [id, p] : map.planes()) cloud_before[id] = p.cloud.size();

  SUBCASE("same frame again leaves plane clouds unchanged") {
    Frame again = frame_at(0);
    again.id = 1;
    again.plane_matches = f0.plane_matches;
    map.insert_keyframe(again, intr);
    CHECK(map.planes().size() == planes_before);
    for (const auto& [id, p] : map.planes()) CHECK(p.cloud.size() == cloud_before[id]);
  }
  SUBCASE("a later frame adds only new voxels") {
    Frame f1 = frame_at(15);
    // Associate by ground-truth orientation, as the tracker would.
    for (std::size_t i = 0; i < f1.planes.size(); ++i) {
      const PlaneParams pw = transform_plane(f1.pose.inverse(), f1.planes[i].params);
      for (const auto& [id, mp] : map.planes()) {
        if (mp.plane.normal.dot(pw.normal) > 0.99 && std::abs(mp.plane.d - pw.d) < 0.05) f1.plane_matches[i] = id;
      }
    }
    const auto rep = map.insert_keyframe(f1, intr);
    int merged = 0;
    for (const auto& m : f1.plane_matches) merged += m.has_value();
    REQUIRE(merged > 0);
    CHECK(static_cast<int>(map.planes().size()) == static_cast<int>(planes_before) + rep.new_planes);
    for (const auto& [id, size] : cloud_before) {
      const MapPlane* p = map.plane(id);
      REQUIRE(p != nullptr);
      CHECK(p->cloud.size() >= size);
    }
  }
  for (const auto& [id, p] : map.planes()) {
    // Cloud near its plane, one point per in-plane voxel.
    std::set<std::array<long long, 3>> cells;
    for (const auto& x : p.cloud) {
      CHECK(std::abs(p.plane.signed_distance(x)) <= 0.04);
      const Vec3 q = x - p.plane.signed_distance(x) * p.plane.normal;
      cells.insert({static_cast<long long>(std::floor(q.x() / 0.2)), static_cast<long long>(std::floor(q.y() / 0.2)),
                    static_cast<long long>(std::floor(q.z() / 0.2))});
    }
    CHECK(cells.size() == p.cloud.size());
  }
}

TEST_CASE("local map follows covisibility") {
  const auto intr = intrinsics();
  SparseMap map;
  Frame a = wall_frame(0, 30);
  map.insert_keyframe(a, intr);  // points 0..29
  Frame b = wall_frame(1, 34, 100);
  match_points(b, iota_ids(0, 14));  // weight 14 with a
  map.insert_keyframe(b, intr);
  Frame c = wall_frame(2, 35, 200);
  match_points(c, iota_ids(0, 15));  // weight 15 with a
  map.insert_keyframe(c, intr);
  Frame d = wall_frame(3, 10, 300);  // shares nothing
  map.insert_keyframe(d, intr);

  CHECK(map.covisibility().weight(0, 1) == 0);
  CHECK(map.covisibility().weight(0, 2) == 15);
  CHECK(map.covisibility().is_symmetric());

  SUBCASE("threshold excludes weight 14") {
    Frame q = wall_frame(4, 30);
    match_points(q, iota_ids(0, 30));
    const auto local = map.local_map(q);
    CHECK(local.keyframes == std::vector<int>{0, 2});
    const std::set<int> ids(local.point_ids.begin(), local.point_ids.end());
    for (int id : a.matched_point_ids()) CHECK(ids.count(id));
    for (int id : c.matched_point_ids()) CHECK(ids.count(id));
    for (int id : b.matched_point_ids()) {
      if (id >= 14) CHECK_FALSE(ids.count(id));
    }
  }
  SUBCASE("disconnected keyframe contributes only its own landmarks") {
    Frame q = wall_frame(4, 10, 300);
    match_points(q, d.matched_point_ids());
    const auto local = map.local_map(q);
    CHECK(local.keyframes == std::vector<int>{3});
    auto expect = d.matched_point_ids();
    std::sort(expect.begin(), expect.end());
    CHECK(local.point_ids == expect);
  }
  SUBCASE("no matches gives an empty local map") {
    Frame q = wall_frame(4, 10);
    CHECK(map.local_map(q).keyframes.empty());
  }
}

TEST_CASE("single-keyframe local map is that keyframe") {
  SparseMap map;
  Frame a = wall_frame(0, 20);
  map.insert_keyframe(a, intrinsics());
  Frame q = wall_frame(1, 20);
  match_points(q, iota_ids(0, 5));
  const auto local = map.local_map(q);
  CHECK(local.keyframes == std::vector<int>{0});
  CHECK(local.point_ids == iota_ids(0, 20));
}

TEST_CASE("culling") {
  const auto intr = intrinsics();
  SUBCASE("landmark seen once is removed after the grace window") {
    SparseMap map;
    Frame f0 = wall_frame(0, 21);
    map.insert_keyframe(f0, intr);  // point 20 is never seen again
    for (int k = 1; k <= 5; ++k) {
      Frame f = wall_frame(k, 20);
      match_points(f, iota_ids(0, 20));
      map.insert_keyframe(f, intr);
    }
    const auto rep = map.cull(ManhattanMap{});
    CHECK(std::find(rep.points.begin(), rep.points.end(), 20) != rep.points.end());
    CHECK(map.point(20) == nullptr);
    CHECK(map.point(0) != nullptr);
  }
  SUBCASE("young landmark survives") {
    SparseMap map;
    Frame f0 = wall_frame(0, 10);
    map.insert_keyframe(f0, intr);
    Frame f1 = wall_frame(1, 10, 50);
    map.insert_keyframe(f1, intr);
    const auto rep = map.cull(ManhattanMap{});
    CHECK(rep.points.empty());
    CHECK(map.points().size() == 20);
  }
  auto redundant_map = [&](SparseMap& map) {
    for (int k = 0; k < 5; ++k) {
      Frame f = wall_frame(k, 20);
      if (k > 0) match_points(f, iota_ids(0, 20));
      map.insert_keyframe(f, intr);
    }
  };
  SUBCASE("fully redundant keyframe is removed") {
    SparseMap map;
    redundant_map(map);
    const auto rep = map.cull(ManhattanMap{});
    CHECK(!rep.keyframes.empty());
    CHECK(map.keyframe(4) != nullptr);  // newest is kept
    CHECK(map.covisibility().is_symmetric());
    for (const auto& [id, kf] : map.keyframes()) {
      for (int pid : kf.point_ids) CHECK(map.point(pid) != nullptr);
    }
    for (const auto& [id, p] : map.points()) {
      CHECK(!p.observers.empty());
      for (int kf : p.observers) CHECK(map.keyframe(kf) != nullptr);
    }
  }
  SUBCASE("MF reference keyframe is retained") {
    SparseMap map;
    redundant_map(map);
    ManhattanMap mf;
    ManhattanEntry e;
    e.reference_frame = 0;
    mf.insert(e);
    const auto rep = map.cull(mf);
    CHECK(std::find(rep.keyframes.begin(), rep.keyframes.end(), 0) == rep.keyframes.end());
    CHECK(map.keyframe(0) != nullptr);
  }
}

TEST_CASE("covisibility graph") {
  CovisibilityGraph g(15);
  g.set_weight(1, 2, 20);
  g.set_weight(2, 3, 14);
  CHECK(g.weight(2, 1) == 20);
  CHECK(g.weight(3, 2) == 0);
  CHECK(g.neighbors(2) == std::vector<int>{1});
  g.set_weight(1, 2, 3);
  CHECK(g.neighbors(1).empty());
  g.set_weight(1, 3, 30);
  g.remove(3);
  CHECK(g.neighbors(1).empty());
  CHECK(g.is_symmetric());
}

TEST_CASE("map invariants hold along a tracked sequence") {
  SceneConfig sc;
  const auto world = build_world(sc);
  TrajectorySpec ts;
  ts.frame_count = 200;
  const auto poses = sample_trajectory(ts, world);
  const auto intr = intrinsics();
  SparseMap map;
  ManhattanMap mf;
  Tracker tracker(intr, {}, map, mf);
  int keyframes = 0;
  for (int k = 0; k < static_cast<int>(poses.size()); ++k) {
    const auto obs = observe_features(world, poses[k], intr, {}, k, frame_timestamp(k));
    const auto r = tracker.track(obs, poses.front());
    keyframes += r.keyframe.has_value();
    REQUIRE(map.covisibility().is_symmetric());
    for (const auto& [a, nbrs] : map.covisibility().adjacency()) {
      REQUIRE(map.keyframe(a) != nullptr);
      for (const auto& [b, w] : nbrs) CHECK(w >= map.covisibility().threshold());
    }
    for (const auto& [id, kf] : map.keyframes()) {
      for (int pid : kf.point_ids) REQUIRE(map.point(pid) != nullptr);
      for (int lid : kf.line_ids) REQUIRE(map.line(lid) != nullptr);
      for (int pid : kf.plane_ids) REQUIRE(map.plane(pid) != nullptr);
    }
    for (const auto& [id, p] : map.points()) REQUIRE(!p.observers.empty());
    for (const auto& [id, e] : mf.entries()) {
      CHECK(map.keyframe(e.reference_frame) != nullptr);
      for (int pid : e.plane_ids) CHECK(map.plane(pid) != nullptr);
    }
    for (std::size_t i = 0; i < r.frame.point_matches.size(); ++i) {
      if (r.keyframe && r.frame.point_matches[i]) CHECK(map.point(*r.frame.point_matches[i]) != nullptr);
    }
  }
  CHECK(keyframes >= 2);
}

TEST_CASE("JSON and PLY export") {
  SparseMap map;
  Frame f = wall_frame(0, 5);
  f.planes.push_back({});
  f.planes.back().params = {Vec3(0, 0, -1), 2.0};
  f.planes.back().cloud = {Vec3(0, 0, 2), Vec3(0.5, 0, 2), Vec3(0, 0.5, 2)};
  f.reset_matches();
  map.insert_keyframe(f, intrinsics());
  const auto j = map.to_json();
  CHECK(j.at("points").size() == 5);
  CHECK(j.at("planes").size() == 1);
  CHECK(j.at("keyframes").size() == 1);

  const auto dir = std::filesystem::temp_directory_path() / "mslam_test_sparse";
  std::filesystem::create_directories(dir);
  map.export_plane_ply(dir / "planes.ply");
  std::ifstream in(dir / "planes.ply");
  std::string line;
  int vertices = -1;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) vertices = std::stoi(line.substr(15));
  }
  CHECK(vertices == 3);
  CHECK_THROWS_AS(map.export_plane_ply(dir / "missing" / "x.ply"), Error);
  std::filesystem::remove_all(dir);
}
