#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include <foresee/rng.hpp>
#include <foresee/simulator.hpp>

#include "test_util.hpp"

using fse::Archetype;
using fse::BoundingBox;
using fse::OdometryState;
using fse::Pose;
using fse::Rng;
using fse::Scene;
using fse::SimConfig;

namespace {

// Straight scene with the centerline extension generate_scene would build.
Scene manual_scene(const SimConfig& cfg, const std::vector<OdometryState>& odo) {
    Scene scene;
    scene.odometry = odo;
    scene.poses = fse::integrate_path(odo, cfg.dt, cfg.wheelbase);
    for (const Pose& p : scene.poses) scene.centerline.push_back({p.x, p.y});
    const Pose& last = scene.poses.back();
    for (int i = 1; i <= 8; ++i) {
        scene.centerline.push_back(
            {last.x + 5.0 * i * std::cos(last.heading), last.y + 5.0 * i * std::sin(last.heading)});
    }
    return scene;
}

} // namespace

TEST_CASE("simulator: straight-line integration matches the closed form") {
    const double v = 7.3, dt = 0.06;
    std::vector<OdometryState> odo(31, {v, 0.0});
    const auto poses = fse::integrate_path(odo, dt, 2.7);
    REQUIRE(poses.size() == 31);
    for (std::size_t k = 0; k < poses.size(); ++k) {
        CHECK(std::abs(poses[k].x - v * dt * static_cast<double>(k)) < 1e-9);
        CHECK(poses[k].y == 0.0);
        CHECK(poses[k].heading == 0.0);
    }
    std::vector<OdometryState> still(10, {0.0, 12.0});
    for (const Pose& p : fse::integrate_path(still, dt, 2.7)) {
        CHECK(p.x == 0.0);
        CHECK(p.y == 0.0);
    }
    CHECK_THROWS_AS(fse::integrate_path({}, dt, 2.7), fse::ContractError);
}

TEST_CASE("simulator: constant steering traces a circle") {
    const double v = 6.0, delta = 8.0, dt = 0.06, wheelbase = 2.7;
    std::vector<OdometryState> odo(40, {v, delta});
    const auto poses = fse::integrate_path(odo, dt, wheelbase);

    // Circumcenter from the first three points; every midpoint-integrated
    // step has equal chord length and turn angle, so the path is a regular
    // polygon inscribed in one circle.
    const double ax = poses[0].x, ay = poses[0].y;
    const double bx = poses[1].x, by = poses[1].y;
    const double cx = poses[2].x, cy = poses[2].y;
    const double d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
    REQUIRE(std::abs(d) > 1e-12);
    const double ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) +
                       (cx * cx + cy * cy) * (ay - by)) /
                      d;
    const double uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) +
                       (cx * cx + cy * cy) * (bx - ax)) /
                      d;
    const double radius = std::hypot(ax - ux, ay - uy);
    for (const Pose& p : poses) {
        CHECK(std::abs(std::hypot(p.x - ux, p.y - uy) - radius) < 1e-6);
    }
}

TEST_CASE("simulator: pedestrian schedules integrate piecewise") {
    fse::PedestrianSpec ped;
    ped.x0 = 1.0;
    ped.y0 = -2.0;
    ped.schedule.push_back({0, 1.0, 0.0});
    ped.schedule.push_back({5, 0.0, 2.0});
    const auto pos = fse::pedestrian_position(ped, 8, 0.5);
    CHECK(pos[0] == doctest::Approx(1.0 + 5 * 0.5).epsilon(1e-12));
    CHECK(pos[1] == doctest::Approx(-2.0 + 3 * 1.0).epsilon(1e-12));
    const auto start = fse::pedestrian_position(ped, 0, 0.5);
    CHECK(start[0] == 1.0);
    CHECK(start[1] == -2.0);
}

TEST_CASE("simulator: projection geometry") {
    SimConfig cfg;
    std::vector<OdometryState> odo(5, {0.0, 0.0});
    Scene scene = manual_scene(cfg, odo);

    SUBCASE("pedestrian on the optical axis lands on the principal point") {
        fse::PedestrianSpec ped;
        ped.x0 = 12.0;
        ped.y0 = 0.0;
        ped.schedule.push_back({0, 0.0, 0.0});
        scene.pedestrians.push_back(ped);
        const auto box = fse::project_pedestrian(scene, cfg, 0, 0);
        REQUIRE(box.has_value());
        CHECK(std::abs(0.5 * (box->x_tl + box->x_br) - cfg.principal_x) < 1e-9);
        CHECK(box->y_br > box->y_tl);
    }
    SUBCASE("doubling the depth halves the apparent height and width") {
        for (double depth : {10.0, 20.0}) {
            fse::PedestrianSpec ped;
            ped.x0 = depth;
            ped.schedule.push_back({0, 0.0, 0.0});
            scene.pedestrians.push_back(ped);
        }
        const auto near = fse::project_pedestrian(scene, cfg, 0, 0);
        const auto far = fse::project_pedestrian(scene, cfg, 1, 0);
        REQUIRE(near.has_value());
        REQUIRE(far.has_value());
        CHECK(std::abs((near->y_br - near->y_tl) - 2.0 * (far->y_br - far->y_tl)) < 1e-9);
        CHECK(std::abs((near->x_br - near->x_tl) - 2.0 * (far->x_br - far->x_tl)) < 1e-9);
    }
    SUBCASE("behind-camera and sub-pixel pedestrians disappear") {
        fse::PedestrianSpec behind;
        behind.x0 = -10.0;
        behind.schedule.push_back({0, 0.0, 0.0});
        scene.pedestrians.push_back(behind);
        CHECK_FALSE(fse::project_pedestrian(scene, cfg, 0, 0).has_value());
        fse::PedestrianSpec distant;
        distant.x0 = 1000.0;
        distant.schedule.push_back({0, 0.0, 0.0});
        scene.pedestrians.push_back(distant);
        CHECK_FALSE(fse::project_pedestrian(scene, cfg, 1, 0).has_value());
    }
    SUBCASE("projection matches the pinhole formula at a random pose") {
        Rng rng(801);
        for (int trial = 0; trial < 60; ++trial) {
            Scene s;
            Pose pose{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-3.0, 3.0)};
            s.poses = {pose};
            s.odometry = {{5.0, 0.0}};
            fse::PedestrianSpec ped;
            ped.x0 = rng.uniform(-40, 40);
            ped.y0 = rng.uniform(-40, 40);
            ped.schedule.push_back({0, 0.0, 0.0});
            s.pedestrians.push_back(ped);

            const double dx = ped.x0 - pose.x;
            const double dy = ped.y0 - pose.y;
            const double depth = std::cos(pose.heading) * dx + std::sin(pose.heading) * dy;
            const double lateral = std::sin(pose.heading) * dx - std::cos(pose.heading) * dy;
            const auto got = fse::project_pedestrian(s, cfg, 0, 0);
            if (depth <= cfg.min_depth) {
                CHECK_FALSE(got.has_value());
                continue;
            }
            const auto clampw = [&](double u) { return std::clamp(u, 0.0, static_cast<double>(cfg.image_width)); };
            const auto clamph = [&](double u) { return std::clamp(u, 0.0, static_cast<double>(cfg.image_height)); };
            const double x_tl = clampw(cfg.focal_px * (lateral - 0.25) / depth + cfg.principal_x);
            const double x_br = clampw(cfg.focal_px * (lateral + 0.25) / depth + cfg.principal_x);
            const double y_tl = clamph(cfg.focal_px * (cfg.cam_height - cfg.ped_height) / depth + cfg.principal_y);
            const double y_br = clamph(cfg.focal_px * cfg.cam_height / depth + cfg.principal_y);
            if (x_br - x_tl < 1.0 || y_br - y_tl < 1.0) {
                CHECK_FALSE(got.has_value());
                continue;
            }
            REQUIRE(got.has_value());
            CHECK(got->x_tl == doctest::Approx(x_tl).epsilon(1e-12));
            CHECK(got->y_tl == doctest::Approx(y_tl).epsilon(1e-12));
            CHECK(got->x_br == doctest::Approx(x_br).epsilon(1e-12));
            CHECK(got->y_br == doctest::Approx(y_br).epsilon(1e-12));
        }
    }
    SUBCASE("contract violations") {
        CHECK_THROWS_AS(fse::project_pedestrian(scene, cfg, 0, 0), fse::ContractError); // no peds
        fse::PedestrianSpec ped;
        ped.schedule.push_back({0, 0.0, 0.0});
        scene.pedestrians.push_back(ped);
        CHECK_THROWS_AS(fse::project_pedestrian(scene, cfg, 0, 99), fse::ContractError);
    }
}

TEST_CASE("simulator: detection noise") {
    SimConfig cfg;
    const BoundingBox clean{100.0, 50.0, 140.0, 120.0};
    SUBCASE("zero sigma passes the box through bitwise") {
        cfg.sigma_det = 0.0;
        Rng rng(803);
        const BoundingBox noisy = fse::add_detection_noise(clean, cfg, rng);
        CHECK(noisy.x_tl == clean.x_tl);
        CHECK(noisy.y_tl == clean.y_tl);
        CHECK(noisy.x_br == clean.x_br);
        CHECK(noisy.y_br == clean.y_br);
    }
    SUBCASE("inlier jitter has the configured standard deviation") {
        cfg.sigma_det = 2.0;
        cfg.outlier_prob = 0.0;
        Rng rng(805);
        double sum = 0.0, sum2 = 0.0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            const BoundingBox noisy = fse::add_detection_noise(clean, cfg, rng);
            const double d[4] = {noisy.x_tl - clean.x_tl, noisy.y_tl - clean.y_tl,
                                 noisy.x_br - clean.x_br, noisy.y_br - clean.y_br};
            for (double v : d) {
                sum += v;
                sum2 += v * v;
            }
        }
        const double count = 4.0 * n;
        const double var = sum2 / count - (sum / count) * (sum / count);
        CHECK(std::abs(std::sqrt(var) - cfg.sigma_det) < 0.02 * cfg.sigma_det);
    }
    SUBCASE("outliers appear at the configured rate") {
        cfg.sigma_det = 2.0;
        cfg.outlier_prob = 0.01;
        cfg.outlier_factor = 10.0;
        Rng rng(807);
        // An outlier multiplies the std by 10; flagging any corner beyond
        // 4.5 sigma catches ~98.5% of them with ~3e-5 false positives.
        int flagged = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            const BoundingBox noisy = fse::add_detection_noise(clean, cfg, rng);
            const double m = std::max(
                std::max(std::abs(noisy.x_tl - clean.x_tl), std::abs(noisy.y_tl - clean.y_tl)),
                std::max(std::abs(noisy.x_br - clean.x_br), std::abs(noisy.y_br - clean.y_br)));
            if (m > 4.5 * cfg.sigma_det) ++flagged;
        }
        CHECK(flagged > 850);
        CHECK(flagged < 1150);
    }
}

TEST_CASE("simulator: road raster") {
    SimConfig cfg;
    SUBCASE("straight road renders column-symmetric") {
        const Scene scene = manual_scene(cfg, std::vector<OdometryState>(20, {6.0, 0.0}));
        const fse::Array raster = fse::render_road_raster(scene, cfg, 3);
        REQUIRE(raster.rows() == cfg.raster_size);
        for (int r = 0; r < cfg.raster_size; ++r) {
            for (int c = 0; c < cfg.raster_size; ++c) {
                CHECK(raster.at(r, c) == raster.at(r, cfg.raster_size - 1 - c));
            }
        }
        // The forward strip straight ahead is road; the far corners are not.
        CHECK(raster.at(cfg.raster_size - 1, cfg.raster_size / 2) == 1.0);
        CHECK(raster.at(0, 0) == 0.0);
    }
    SUBCASE("an enormous road half-width paints everything road") {
        cfg.road_half_width = 1e6;
        const Scene scene = manual_scene(cfg, std::vector<OdometryState>(10, {6.0, 0.0}));
        const fse::Array raster = fse::render_road_raster(scene, cfg, 0);
        for (std::size_t i = 0; i < raster.size(); ++i) CHECK(raster[i] == 1.0);
    }
    SUBCASE("obstacles mark their cells at half intensity") {
        Scene scene = manual_scene(cfg, std::vector<OdometryState>(10, {6.0, 0.0}));
        // Cell (r=20, c=16) center for the frame-0 pose at the origin.
        const double forward = (static_cast<double>(cfg.raster_size - 1 - 20) + 0.5) * cfg.raster_cell;
        const double lateral = (16.0 - 0.5 * cfg.raster_size + 0.5) * cfg.raster_cell;
        scene.obstacles.push_back({forward, -lateral, 0.3});
        const fse::Array raster = fse::render_road_raster(scene, cfg, 0);
        // Half intensity lands on the 8-bit grid as round(0.5 * 255) = 128.
        CHECK(raster.at(20, 16) == 128.0 / 255.0);
    }
    SUBCASE("opposite arcs render mirrored rasters") {
        const Scene left = manual_scene(cfg, std::vector<OdometryState>(20, {6.0, 8.0}));
        const Scene right = manual_scene(cfg, std::vector<OdometryState>(20, {6.0, -8.0}));
        const fse::Array a = fse::render_road_raster(left, cfg, 10);
        const fse::Array b = fse::render_road_raster(right, cfg, 10);
        int differing = 0;
        for (int r = 0; r < cfg.raster_size; ++r) {
            for (int c = 0; c < cfg.raster_size; ++c) {
                if (a.at(r, c) != b.at(r, cfg.raster_size - 1 - c)) ++differing;
            }
        }
        CHECK(differing <= cfg.raster_size * cfg.raster_size / 50);
    }
    SUBCASE("values stay on the 8-bit grid") {
        Rng rng(809);
        Scene scene = fse::generate_scene(cfg, 0, rng);
        const fse::Array raster = fse::render_road_raster(scene, cfg, 7);
        for (std::size_t i = 0; i < raster.size(); ++i) {
            const double scaled = raster[i] * 255.0;
            CHECK(std::abs(scaled - std::lround(scaled)) < 1e-9);
        }
    }
}

TEST_CASE("simulator: generated scenes stay internally consistent") {
    SimConfig cfg;
    Rng master(42);
    int multi_segment = 0, total_peds = 0;
    std::set<Archetype> seen;
    for (int id = 0; id < 40; ++id) {
        Rng scene_rng = master.fork(static_cast<std::uint64_t>(id));
        const Scene scene = fse::generate_scene(cfg, id, scene_rng);
        seen.insert(scene.archetype);
        REQUIRE(scene.odometry.size() == static_cast<std::size_t>(cfg.frames));
        REQUIRE(scene.poses.size() == scene.odometry.size());
        const auto want = fse::integrate_path(scene.odometry, cfg.dt, cfg.wheelbase);
        for (std::size_t k = 0; k < want.size(); ++k) {
            CHECK(scene.poses[k].x == want[k].x);
            CHECK(scene.poses[k].y == want[k].y);
            CHECK(scene.poses[k].heading == want[k].heading);
        }
        CHECK(scene.pedestrians.size() >= static_cast<std::size_t>(cfg.min_peds));
        CHECK(scene.pedestrians.size() <= static_cast<std::size_t>(cfg.max_peds));
        for (const auto& ped : scene.pedestrians) {
            REQUIRE(!ped.schedule.empty());
            CHECK(ped.schedule.front().start_frame == 0);
            for (std::size_t s = 1; s < ped.schedule.size(); ++s)
                CHECK(ped.schedule[s].start_frame > ped.schedule[s - 1].start_frame);
            if (!ped.constant_velocity()) ++multi_segment;
            ++total_peds;
        }
    }
    // Straight/arc/turn/decelerate draws split 30/15/35/20; forty scenes
    // essentially always hit all four.
    CHECK(seen.size() == 4);
    CHECK(static_cast<double>(multi_segment) >= 0.3 * static_cast<double>(total_peds));
}

TEST_CASE("simulator: tracks reproject and redraw bitwise") {
    SimConfig cfg;
    Rng master(99);
    Rng scene_rng = master.fork(3);
    const Scene scene = fse::generate_scene(cfg, 3, scene_rng);
    long dropped = 0;
    const auto tracks = fse::scene_tracks(scene, cfg, scene_rng, "train", &dropped);
    const auto again = fse::scene_tracks(scene, cfg, scene_rng, "train", nullptr);
    REQUIRE(tracks.size() == again.size());
    for (std::size_t i = 0; i < tracks.size(); ++i) {
        const fse::Track& t = tracks[i];
        CHECK(static_cast<int>(t.frames.size()) >= cfg.min_track_len);
        CHECK(t.split == "train");
        for (const fse::FrameObs& f : t.frames) {
            const auto clean = fse::project_pedestrian(scene, cfg, t.ped_id, f.t);
            REQUIRE(clean.has_value());
            CHECK(f.box_clean.x_tl == clean->x_tl);
            CHECK(f.box_clean.y_tl == clean->y_tl);
            CHECK(f.box_clean.x_br == clean->x_br);
            CHECK(f.box_clean.y_br == clean->y_br);
            CHECK(f.odo.speed == scene.odometry[static_cast<std::size_t>(f.t)].speed);
            CHECK(f.odo.steering == scene.odometry[static_cast<std::size_t>(f.t)].steering);
        }
        const int raster_local = std::min(7, static_cast<int>(t.frames.size()) - 1);
        const fse::Array raster =
            fse::render_road_raster(scene, cfg, t.frames[static_cast<std::size_t>(raster_local)].t);
        CHECK(t.raster == raster);
        // Same scene_rng, same forked noise stream: the draw is reproducible.
        for (std::size_t fidx = 0; fidx < t.frames.size(); ++fidx) {
            CHECK(t.frames[fidx].box_noisy.x_tl == again[i].frames[fidx].box_noisy.x_tl);
            CHECK(t.frames[fidx].box_noisy.y_br == again[i].frames[fidx].box_noisy.y_br);
        }
    }
}

TEST_CASE("simulator: subset predicates read the stored odometry") {
    fse::Track track;
    for (int t = 0; t < 5; ++t) {
        fse::FrameObs f;
        f.odo = {8.0, 0.5};
        track.frames.push_back(f);
    }
    CHECK_FALSE(fse::is_curved_track(track));
    CHECK_FALSE(fse::is_nontrivial_ego_track(track));
    track.frames[2].odo.steering = -3.0;
    CHECK(fse::is_curved_track(track));
    CHECK(fse::is_nontrivial_ego_track(track));
    track.frames[2].odo.steering = 0.0;
    track.frames[4].odo.speed = 5.0;
    CHECK_FALSE(fse::is_curved_track(track));
    CHECK(fse::is_nontrivial_ego_track(track)); // speed range >= 2
}

TEST_CASE("simulator: dataset emission is deterministic and self-describing") {
    SimConfig cfg;
    cfg.scale_divisor = 500; // 5/1/3 scenes
    testutil::TempDir dir_a("emit_a");
    testutil::TempDir dir_b("emit_b");
    const auto sum_a = fse::emit_dataset(cfg, 2024, dir_a.fs().string());
    const auto sum_b = fse::emit_dataset(cfg, 2024, dir_b.fs().string());
    CHECK(sum_a.train_tracks == sum_b.train_tracks);
    CHECK(sum_a.dropped_short == sum_b.dropped_short);
    CHECK(sum_a.train_tracks > 0);
    CHECK(sum_a.test_tracks > 0);

    for (const char* name : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"}) {
        const auto bytes_a = testutil::read_file_bytes((dir_a.fs() / name).string());
        const auto bytes_b = testutil::read_file_bytes((dir_b.fs() / name).string());
        CHECK(bytes_a == bytes_b);
        CHECK(!bytes_a.empty());
    }

    const auto manifest = fse::read_manifest((dir_a.fs() / "manifest.json").string());
    CHECK(manifest["seed"] == 2024);
    CHECK(manifest["counts"]["scenes"]["train"] == 5);
    CHECK(manifest["counts"]["scenes"]["val"] == 1);
    CHECK(manifest["counts"]["scenes"]["test"] == 3);

    const auto count_lines = [](const std::string& path) {
        const auto bytes = testutil::read_file_bytes(path);
        long lines = 0;
        for (char ch : bytes)
            if (ch == '\n') ++lines;
        return lines;
    };
    CHECK(count_lines((dir_a.fs() / "train.jsonl").string()) ==
          manifest["counts"]["train"].get<long>());
    CHECK(count_lines((dir_a.fs() / "val.jsonl").string()) == manifest["counts"]["val"].get<long>());
    CHECK(count_lines((dir_a.fs() / "test.jsonl").string()) ==
          manifest["counts"]["test"].get<long>());
    CHECK(manifest["counts"]["train"].get<long>() == sum_a.train_tracks);

    const fse::Dataset ds = fse::load_dataset(dir_a.fs().string());
    CHECK(static_cast<long>(ds.split("train").size()) == sum_a.train_tracks);
    CHECK(static_cast<long>(ds.split("val").size()) == sum_a.val_tracks);
    CHECK(static_cast<long>(ds.split("test").size()) == sum_a.test_tracks);
    for (const fse::Track* t : ds.split("train")) CHECK(t->split == "train");
}

TEST_CASE("simulator: split arithmetic and config checks") {
    SimConfig cfg;
    CHECK(cfg.train_scenes() == 297);
    CHECK(cfg.val_scenes() == 50);
    CHECK(cfg.test_scenes() == 152);
    cfg.scale_divisor = 1;
    CHECK(cfg.train_scenes() == 2975);
    cfg.scale_divisor = 0;
    CHECK_THROWS_AS(cfg.validate(), fse::ConfigError);
    cfg = SimConfig{};
    cfg.outlier_prob = 1.5;
    CHECK_THROWS_AS(cfg.validate(), fse::ConfigError);
    cfg = SimConfig{};
    cfg.min_peds = 3;
    cfg.max_peds = 2;
    CHECK_THROWS_AS(cfg.validate(), fse::ConfigError);

    const SimConfig round = SimConfig::from_json(SimConfig{}.to_json());
    CHECK(round.to_json().dump() == SimConfig{}.to_json().dump());
}
