#include "foresee/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "foresee/error.hpp"
#include "foresee/hash.hpp"
#include "foresee/parallel.hpp"

namespace fse {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double squared_dist_to_segment(double px, double py, const std::array<double, 2>& a,
                               const std::array<double, 2>& b) {
    const double abx = b[0] - a[0];
    const double aby = b[1] - a[1];
    const double apx = px - a[0];
    const double apy = py - a[1];
    const double len2 = abx * abx + aby * aby;
    double t = len2 > 0.0 ? (apx * abx + apy * aby) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = apx - t * abx;
    const double dy = apy - t * aby;
    return dx * dx + dy * dy;
}

double squared_dist_to_polyline(double px, double py, const std::vector<std::array<double, 2>>& line) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < line.size(); ++i)
        best = std::min(best, squared_dist_to_segment(px, py, line[i], line[i + 1]));
    return best;
}

struct WalkDraw {
    double vx = 0.0;
    double vy = 0.0;
};

WalkDraw draw_walk_velocity(Rng& rng, double stand_prob) {
    if (rng.uniform01() < stand_prob) return {0.0, 0.0};
    const double speed = rng.uniform(0.4, 2.0);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return {speed * std::cos(angle), speed * std::sin(angle)};
}

} // namespace

void SimConfig::validate() const {
    if (frames < 2) throw ConfigError("SimConfig: frames must be at least 2");
    if (!(dt > 0.0)) throw ConfigError("SimConfig: dt must be positive");
    if (image_width <= 0 || image_height <= 0) throw ConfigError("SimConfig: image dims must be positive");
    if (!(focal_px > 0.0)) throw ConfigError("SimConfig: focal_px must be positive");
    if (!(min_depth > 0.0)) throw ConfigError("SimConfig: min_depth must be positive");
    if (!(wheelbase > 0.0)) throw ConfigError("SimConfig: wheelbase must be positive");
    if (!(ped_height > 0.0) || !(ped_width > 0.0))
        throw ConfigError("SimConfig: pedestrian size must be positive");
    if (sigma_det < 0.0) throw ConfigError("SimConfig: sigma_det must be non-negative");
    if (outlier_prob < 0.0 || outlier_prob > 1.0)
        throw ConfigError("SimConfig: outlier_prob must lie in [0, 1]");
    if (outlier_factor < 1.0) throw ConfigError("SimConfig: outlier_factor must be at least 1");
    if (raster_size <= 0) throw ConfigError("SimConfig: raster_size must be positive");
    if (!(raster_cell > 0.0)) throw ConfigError("SimConfig: raster_cell must be positive");
    if (!(road_half_width > 0.0)) throw ConfigError("SimConfig: road_half_width must be positive");
    if (min_peds < 1 || max_peds < min_peds)
        throw ConfigError("SimConfig: need 1 <= min_peds <= max_peds");
    if (scale_divisor < 1 || scale_divisor > 500)
        throw ConfigError("SimConfig: scale_divisor must lie in [1, 500]");
    if (min_track_len < 2) throw ConfigError("SimConfig: min_track_len must be at least 2");
}

nlohmann::json SimConfig::to_json() const {
    nlohmann::json j;
    j["frames"] = frames;
    j["dt"] = dt;
    j["image_width"] = image_width;
    j["image_height"] = image_height;
    j["focal_px"] = focal_px;
    j["principal_x"] = principal_x;
    j["principal_y"] = principal_y;
    j["cam_height"] = cam_height;
    j["min_depth"] = min_depth;
    j["wheelbase"] = wheelbase;
    j["ped_height"] = ped_height;
    j["ped_width"] = ped_width;
    j["sigma_det"] = sigma_det;
    j["outlier_prob"] = outlier_prob;
    j["outlier_factor"] = outlier_factor;
    j["raster_size"] = raster_size;
    j["raster_cell"] = raster_cell;
    j["road_half_width"] = road_half_width;
    j["min_peds"] = min_peds;
    j["max_peds"] = max_peds;
    j["scale_divisor"] = scale_divisor;
    j["min_track_len"] = min_track_len;
    return j;
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
    SimConfig cfg;
    cfg.frames = j.value("frames", cfg.frames);
    cfg.dt = j.value("dt", cfg.dt);
    cfg.image_width = j.value("image_width", cfg.image_width);
    cfg.image_height = j.value("image_height", cfg.image_height);
    cfg.focal_px = j.value("focal_px", cfg.focal_px);
    cfg.principal_x = j.value("principal_x", cfg.principal_x);
    cfg.principal_y = j.value("principal_y", cfg.principal_y);
    cfg.cam_height = j.value("cam_height", cfg.cam_height);
    cfg.min_depth = j.value("min_depth", cfg.min_depth);
    cfg.wheelbase = j.value("wheelbase", cfg.wheelbase);
    cfg.ped_height = j.value("ped_height", cfg.ped_height);
    cfg.ped_width = j.value("ped_width", cfg.ped_width);
    cfg.sigma_det = j.value("sigma_det", cfg.sigma_det);
    cfg.outlier_prob = j.value("outlier_prob", cfg.outlier_prob);
    cfg.outlier_factor = j.value("outlier_factor", cfg.outlier_factor);
    cfg.raster_size = j.value("raster_size", cfg.raster_size);
    cfg.raster_cell = j.value("raster_cell", cfg.raster_cell);
    cfg.road_half_width = j.value("road_half_width", cfg.road_half_width);
    cfg.min_peds = j.value("min_peds", cfg.min_peds);
    cfg.max_peds = j.value("max_peds", cfg.max_peds);
    cfg.scale_divisor = j.value("scale_divisor", cfg.scale_divisor);
    cfg.min_track_len = j.value("min_track_len", cfg.min_track_len);
    return cfg;
}

std::string to_string(Archetype a) {
    switch (a) {
        case Archetype::straight: return "straight";
        case Archetype::arc: return "arc";
        case Archetype::turn: return "turn";
        case Archetype::decelerate: return "decelerate";
    }
    throw ContractError("to_string: unknown archetype");
}

std::vector<Pose> integrate_path(const std::vector<OdometryState>& odometry, double dt,
                                 double wheelbase) {
    if (odometry.empty()) throw ContractError("integrate_path: empty odometry");
    std::vector<Pose> poses(odometry.size());
    poses[0] = Pose{};
    for (std::size_t k = 0; k + 1 < odometry.size(); ++k) {
        const double v = odometry[k].speed;
        const double yaw_rate = v * std::tan(odometry[k].steering * kDegToRad) / wheelbase;
        const Pose& p = poses[k];
        const double mid_heading = p.heading + 0.5 * yaw_rate * dt;
        poses[k + 1].x = p.x + v * std::cos(mid_heading) * dt;
        poses[k + 1].y = p.y + v * std::sin(mid_heading) * dt;
        poses[k + 1].heading = p.heading + yaw_rate * dt;
    }
    return poses;
}

std::array<double, 2> pedestrian_position(const PedestrianSpec& ped, int frame, double dt) {
    double x = ped.x0;
    double y = ped.y0;
    for (int k = 0; k < frame; ++k) {
        const VelSegment* active = &ped.schedule.front();
        for (const auto& seg : ped.schedule)
            if (seg.start_frame <= k) active = &seg;
        x += active->vx * dt;
        y += active->vy * dt;
    }
    return {x, y};
}

Scene generate_scene(const SimConfig& cfg, int scene_id, Rng& rng) {
    cfg.validate();
    Scene scene;
    scene.id = scene_id;

    const double archetype_draw = rng.uniform01();
    if (archetype_draw < 0.30)
        scene.archetype = Archetype::straight;
    else if (archetype_draw < 0.45)
        scene.archetype = Archetype::arc;
    else if (archetype_draw < 0.80)
        scene.archetype = Archetype::turn;
    else
        scene.archetype = Archetype::decelerate;

    scene.odometry.resize(static_cast<std::size_t>(cfg.frames));
    double turn_sign = 0.0;
    double stop_distance = -1.0;
    switch (scene.archetype) {
        case Archetype::straight: {
            const double v0 = rng.uniform(5.0, 11.0);
            for (auto& o : scene.odometry) o = {v0, 0.0};
            break;
        }
        case Archetype::arc: {
            const double v0 = rng.uniform(4.0, 9.0);
            const double sign = rng.uniform01() < 0.5 ? 1.0 : -1.0;
            const double delta = sign * rng.uniform(4.0, 10.0);
            for (auto& o : scene.odometry) o = {v0, delta};
            break;
        }
        case Archetype::turn: {
            const double v0 = rng.uniform(5.0, 10.0);
            // Onset past the generation frame so the conditioning window is
            // flat and only the raster reveals the upcoming bend.
            const int onset = 9 + static_cast<int>(rng.uniform_index(10));
            const int ramp = 6;
            // Asymmetric direction mix keeps the conditional mean steering
            // away from zero, separating learned models from the
            // repeat-last-value baseline.
            turn_sign = rng.uniform01() < 2.0 / 3.0 ? 1.0 : -1.0;
            const double delta_max = turn_sign * rng.uniform(10.0, 20.0);
            for (int k = 0; k < cfg.frames; ++k) {
                double delta = 0.0;
                if (k >= onset) {
                    const double frac = std::min(1.0, static_cast<double>(k - onset + 1) / ramp);
                    delta = frac * delta_max;
                }
                scene.odometry[static_cast<std::size_t>(k)] = {v0, delta};
            }
            break;
        }
        case Archetype::decelerate: {
            const double v0 = rng.uniform(5.0, 11.0);
            const int d0 = 8 + static_cast<int>(rng.uniform_index(6));
            const int d1 = std::min(cfg.frames - 1, d0 + 6 + static_cast<int>(rng.uniform_index(5)));
            for (int k = 0; k < cfg.frames; ++k) {
                double v = v0;
                if (k >= d1)
                    v = 0.0;
                else if (k >= d0)
                    v = v0 * static_cast<double>(d1 - k) / static_cast<double>(d1 - d0);
                scene.odometry[static_cast<std::size_t>(k)] = {v, 0.0};
            }
            stop_distance = 0.0;
            for (int k = 0; k < d1; ++k) stop_distance += scene.odometry[static_cast<std::size_t>(k)].speed * cfg.dt;
            break;
        }
    }

    scene.poses = integrate_path(scene.odometry, cfg.dt, cfg.wheelbase);

    const int ped_count =
        cfg.min_peds + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cfg.max_peds - cfg.min_peds + 1)));
    scene.pedestrians.reserve(static_cast<std::size_t>(ped_count));
    const double lateral_bias = 3.0 * turn_sign;
    for (int i = 0; i < ped_count; ++i) {
        PedestrianSpec ped;
        ped.x0 = rng.uniform(14.0, 34.0);
        ped.y0 = rng.uniform(-9.0, 9.0) + lateral_bias;
        const WalkDraw first = draw_walk_velocity(rng, 0.15);
        ped.schedule.push_back({0, first.vx, first.vy});
        if (rng.uniform01() < 0.55) {
            const int k1 = 6 + static_cast<int>(rng.uniform_index(14));
            const WalkDraw second = draw_walk_velocity(rng, 0.25);
            ped.schedule.push_back({k1, second.vx, second.vy});
            const int k2 = k1 + 4 + static_cast<int>(rng.uniform_index(8));
            if (k2 < cfg.frames - 1 && rng.uniform01() < 0.5) {
                const WalkDraw third = draw_walk_velocity(rng, 0.25);
                ped.schedule.push_back({k2, third.vx, third.vy});
            }
        }
        scene.pedestrians.push_back(std::move(ped));
    }

    if (stop_distance >= 0.0) {
        Obstacle blocker;
        blocker.x = stop_distance + 3.0 + rng.uniform(0.0, 2.0);
        blocker.y = rng.uniform(-0.8, 0.8);
        blocker.radius = 1.2;
        scene.obstacles.push_back(blocker);
    }
    const int clutter = static_cast<int>(rng.uniform_index(3));
    for (int i = 0; i < clutter; ++i) {
        Obstacle ob;
        ob.x = rng.uniform(6.0, 26.0);
        const double side = rng.uniform01() < 0.5 ? 1.0 : -1.0;
        ob.y = side * rng.uniform(5.5, 11.0);
        ob.radius = rng.uniform(0.6, 1.0);
        scene.obstacles.push_back(ob);
    }

    scene.centerline.reserve(scene.poses.size() + 8);
    for (const auto& p : scene.poses) scene.centerline.push_back({p.x, p.y});
    const Pose& last = scene.poses.back();
    const double hc = std::cos(last.heading);
    const double hs = std::sin(last.heading);
    for (int i = 1; i <= 8; ++i)
        scene.centerline.push_back({last.x + 5.0 * i * hc, last.y + 5.0 * i * hs});
    return scene;
}

std::optional<BoundingBox> project_pedestrian(const Scene& scene, const SimConfig& cfg, int ped_index,
                                              int frame) {
    if (ped_index < 0 || ped_index >= static_cast<int>(scene.pedestrians.size()))
        throw ContractError("project_pedestrian: pedestrian index out of range");
    if (frame < 0 || frame >= static_cast<int>(scene.poses.size()))
        throw ContractError("project_pedestrian: frame out of range");
    const Pose& p = scene.poses[static_cast<std::size_t>(frame)];
    const auto pos = pedestrian_position(scene.pedestrians[static_cast<std::size_t>(ped_index)], frame, cfg.dt);
    const double dx = pos[0] - p.x;
    const double dy = pos[1] - p.y;
    const double ch = std::cos(p.heading);
    const double sh = std::sin(p.heading);
    const double depth = ch * dx + sh * dy;
    if (depth <= cfg.min_depth) return std::nullopt;
    const double lateral = sh * dx - ch * dy; // camera x axis points right

    const double half_w = 0.5 * cfg.ped_width;
    const double u_left = cfg.focal_px * (lateral - half_w) / depth + cfg.principal_x;
    const double u_right = cfg.focal_px * (lateral + half_w) / depth + cfg.principal_x;
    const double v_top = cfg.focal_px * (cfg.cam_height - cfg.ped_height) / depth + cfg.principal_y;
    const double v_bottom = cfg.focal_px * cfg.cam_height / depth + cfg.principal_y;

    BoundingBox box;
    box.x_tl = std::clamp(u_left, 0.0, static_cast<double>(cfg.image_width));
    box.y_tl = std::clamp(v_top, 0.0, static_cast<double>(cfg.image_height));
    box.x_br = std::clamp(u_right, 0.0, static_cast<double>(cfg.image_width));
    box.y_br = std::clamp(v_bottom, 0.0, static_cast<double>(cfg.image_height));
    if (box.x_br - box.x_tl < 1.0 || box.y_br - box.y_tl < 1.0) return std::nullopt;
    return box;
}

std::vector<std::optional<BoundingBox>> project_to_boxes(const Scene& scene, const SimConfig& cfg,
                                                         int frame) {
    std::vector<std::optional<BoundingBox>> boxes;
    boxes.reserve(scene.pedestrians.size());
    for (int i = 0; i < static_cast<int>(scene.pedestrians.size()); ++i)
        boxes.push_back(project_pedestrian(scene, cfg, i, frame));
    return boxes;
}

BoundingBox add_detection_noise(const BoundingBox& box, const SimConfig& cfg, Rng& rng) {
    const bool outlier = rng.uniform01() < cfg.outlier_prob;
    const double std_dev = cfg.sigma_det * (outlier ? cfg.outlier_factor : 1.0);
    BoundingBox noisy;
    noisy.x_tl = box.x_tl + std_dev * rng.normal();
    noisy.y_tl = box.y_tl + std_dev * rng.normal();
    noisy.x_br = box.x_br + std_dev * rng.normal();
    noisy.y_br = box.y_br + std_dev * rng.normal();
    return noisy;
}

Array render_road_raster(const Scene& scene, const SimConfig& cfg, int frame) {
    if (frame < 0 || frame >= static_cast<int>(scene.poses.size()))
        throw ContractError("render_road_raster: frame out of range");
    const Pose& p = scene.poses[static_cast<std::size_t>(frame)];
    const double ch = std::cos(p.heading);
    const double sh = std::sin(p.heading);
    const int size = cfg.raster_size;
    const double hw2 = cfg.road_half_width * cfg.road_half_width;
    Array out = Array::zeros({size, size});
    for (int r = 0; r < size; ++r) {
        const double forward = (static_cast<double>(size - 1 - r) + 0.5) * cfg.raster_cell;
        for (int c = 0; c < size; ++c) {
            const double lateral = (static_cast<double>(c) - 0.5 * size + 0.5) * cfg.raster_cell;
            const double wx = p.x + forward * ch + lateral * sh;
            const double wy = p.y + forward * sh - lateral * ch;
            double value = squared_dist_to_polyline(wx, wy, scene.centerline) <= hw2 ? 1.0 : 0.0;
            for (const auto& ob : scene.obstacles) {
                const double ox = wx - ob.x;
                const double oy = wy - ob.y;
                if (ox * ox + oy * oy <= ob.radius * ob.radius) value = 0.5;
            }
            out.at(r, c) = static_cast<double>(std::lround(value * 255.0)) / 255.0;
        }
    }
    return out;
}

std::vector<Track> scene_tracks(const Scene& scene, const SimConfig& cfg, const Rng& scene_rng,
                                const std::string& split, long* dropped_short) {
    std::vector<Track> tracks;
    for (int ped = 0; ped < static_cast<int>(scene.pedestrians.size()); ++ped) {
        int best_start = 0;
        int best_len = 0;
        int run_start = -1;
        for (int f = 0; f <= cfg.frames; ++f) {
            const bool visible = f < cfg.frames && project_pedestrian(scene, cfg, ped, f).has_value();
            if (visible && run_start < 0) run_start = f;
            if (!visible && run_start >= 0) {
                if (f - run_start > best_len) {
                    best_start = run_start;
                    best_len = f - run_start;
                }
                run_start = -1;
            }
        }
        if (best_len < cfg.min_track_len) {
            if (dropped_short) ++*dropped_short;
            continue;
        }

        Rng noise_rng = scene_rng.fork(1000 + static_cast<std::uint64_t>(ped));
        Track track;
        track.scene_id = scene.id;
        track.ped_id = ped;
        track.split = split;
        track.frames.reserve(static_cast<std::size_t>(best_len));
        for (int f = best_start; f < best_start + best_len; ++f) {
            FrameObs obs;
            obs.t = f;
            obs.box_clean = *project_pedestrian(scene, cfg, ped, f);
            obs.box_noisy = add_detection_noise(obs.box_clean, cfg, noise_rng);
            obs.odo = scene.odometry[static_cast<std::size_t>(f)];
            track.frames.push_back(obs);
        }
        const int raster_local = std::min(7, best_len - 1);
        track.raster = render_road_raster(scene, cfg, track.frames[static_cast<std::size_t>(raster_local)].t);
        tracks.push_back(std::move(track));
    }
    return tracks;
}

bool is_curved_track(const Track& track) {
    for (const auto& f : track.frames)
        if (std::abs(f.odo.steering) >= 3.0) return true;
    return false;
}

bool is_nontrivial_ego_track(const Track& track) {
    if (is_curved_track(track)) return true;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& f : track.frames) {
        lo = std::min(lo, f.odo.speed);
        hi = std::max(hi, f.odo.speed);
    }
    return hi - lo >= 2.0;
}

DatasetSummary emit_dataset(const SimConfig& cfg, std::uint64_t seed, const std::string& dir) {
    cfg.validate();
    const Rng master(seed);
    DatasetSummary summary;

    struct SplitPlan {
        const char* name;
        int scenes;
        int first_id;
    };
    const int n_train = cfg.train_scenes();
    const int n_val = cfg.val_scenes();
    const int n_test = cfg.test_scenes();
    const SplitPlan plans[3] = {
        {"train", n_train, 0},
        {"val", n_val, n_train},
        {"test", n_test, n_train + n_val},
    };

    nlohmann::json counts;
    for (const auto& plan : plans) {
        std::vector<std::vector<Track>> slots(static_cast<std::size_t>(plan.scenes));
        std::vector<long> dropped(static_cast<std::size_t>(plan.scenes), 0);
        parallel_for(static_cast<std::size_t>(plan.scenes), [&](std::size_t i) {
            const int scene_id = plan.first_id + static_cast<int>(i);
            Rng scene_rng = master.fork(static_cast<std::uint64_t>(scene_id));
            const Scene scene = generate_scene(cfg, scene_id, scene_rng);
            slots[i] = scene_tracks(scene, cfg, scene_rng, plan.name, &dropped[i]);
        });
        std::vector<Track> tracks;
        for (auto& slot : slots)
            for (auto& t : slot) tracks.push_back(std::move(t));
        for (long d : dropped) summary.dropped_short += d;
        write_tracks_jsonl(dir + "/" + plan.name + ".jsonl", tracks);
        counts[plan.name] = tracks.size();
        if (plan.name == std::string("train"))
            summary.train_tracks = static_cast<long>(tracks.size());
        else if (plan.name == std::string("val"))
            summary.val_tracks = static_cast<long>(tracks.size());
        else
            summary.test_tracks = static_cast<long>(tracks.size());
    }
    counts["dropped_short"] = summary.dropped_short;
    counts["scenes"] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};

    nlohmann::json manifest;
    manifest["config"] = cfg.to_json();
    manifest["config_hash"] = fnv1a64_hex(cfg.to_json().dump());
    manifest["counts"] = counts;
    manifest["format_version"] = 1;
    manifest["seed"] = seed;
    write_manifest(dir + "/manifest.json", manifest);
    return summary;
}

} // namespace fse
