#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "foresee/array.hpp"
#include "foresee/types.hpp"

namespace fse {

struct FrameObs {
    int t = 0;
    BoundingBox box_clean;
    BoundingBox box_noisy;
    OdometryState odo;
};

/// One pedestrian's observed sequence plus the scene raster rendered at the
/// last conditioning frame. Raster cell values lie on the 8-bit grid k/255
/// so disk round-trips are exact.
struct Track {
    int scene_id = 0;
    int ped_id = 0;
    std::vector<FrameObs> frames;
    Array raster; // {raster_size, raster_size}
    std::string split;
};

struct Dataset {
    std::vector<Track> tracks;
    nlohmann::json manifest;

    std::vector<const Track*> split(const std::string& name) const;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Write with a temp file + rename so readers never see partial content.
void atomic_write_file(const std::string& path, const std::string& content);

nlohmann::json track_to_json(const Track& track);
Track track_from_json(const nlohmann::json& j);

/// One JSON object per line. Tracks keep their stored order.
void write_tracks_jsonl(const std::string& path, const std::vector<Track>& tracks);
std::vector<Track> read_tracks_jsonl(const std::string& path, const std::string& split);

void write_manifest(const std::string& path, const nlohmann::json& manifest);
nlohmann::json read_manifest(const std::string& path);

/// Reads manifest.json plus train/val/test.jsonl from a dataset directory.
Dataset load_dataset(const std::string& dir);

} // namespace fse
