#include "foresee/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fse {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<const Track*> Dataset::split(const std::string& name) const {
    std::vector<const Track*> out;
    for (const Track& t : tracks) {
        if (t.split == name) out.push_back(&t);
    }
    return out;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
} // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        const std::uint32_t b0 = bytes[i];
        const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
        const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
        const std::uint32_t chunk = (b0 << 16) | (b1 << 8) | b2;
        out += kB64[(chunk >> 18) & 63];
        out += kB64[(chunk >> 12) & 63];
        out += i + 1 < bytes.size() ? kB64[(chunk >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? kB64[chunk & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw IoError("base64 length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=') {
                if (i + 4 != text.size() || k < 2) throw IoError("misplaced base64 padding");
                vals[k] = 0;
                ++pad;
            } else {
                if (pad > 0) throw IoError("misplaced base64 padding");
                vals[k] = b64_value(c);
                if (vals[k] < 0) throw IoError("invalid base64 character");
            }
        }
        const std::uint32_t chunk = (static_cast<std::uint32_t>(vals[0]) << 18) |
                                    (static_cast<std::uint32_t>(vals[1]) << 12) |
                                    (static_cast<std::uint32_t>(vals[2]) << 6) |
                                    static_cast<std::uint32_t>(vals[3]);
        out.push_back(static_cast<std::uint8_t>((chunk >> 16) & 255));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((chunk >> 8) & 255));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(chunk & 255));
    }
    return out;
}

void atomic_write_file(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + target.parent_path().string() + ": " + ec.message());
    }
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("rename to " + path + " failed: " + ec.message());
}

namespace {

std::vector<std::uint8_t> raster_bytes(const Array& raster) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(raster.size());
    for (std::size_t i = 0; i < raster.size(); ++i) {
        const double v = raster[i];
        if (v < 0.0 || v > 1.0) throw ContractError("raster cell outside [0,1]");
        bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
    return bytes;
}

Array raster_from_bytes(const std::vector<std::uint8_t>& bytes, int side) {
    if (static_cast<std::size_t>(side) * side != bytes.size()) {
        throw IoError("raster byte count " + std::to_string(bytes.size()) + " is not " +
                      std::to_string(side) + "x" + std::to_string(side));
    }
    Array r({side, side});
    for (std::size_t i = 0; i < bytes.size(); ++i) r[i] = bytes[i] / 255.0;
    return r;
}

} // namespace

json track_to_json(const Track& track) {
    json frames = json::array();
    for (const FrameObs& f : track.frames) {
        frames.push_back({{"t", f.t},
                          {"box_clean", {f.box_clean.x_tl, f.box_clean.y_tl, f.box_clean.x_br, f.box_clean.y_br}},
                          {"box_noisy", {f.box_noisy.x_tl, f.box_noisy.y_tl, f.box_noisy.x_br, f.box_noisy.y_br}},
                          {"speed", f.odo.speed},
                          {"steering", f.odo.steering}});
    }
    return {{"scene_id", track.scene_id},
            {"ped_id", track.ped_id},
            {"frames", std::move(frames)},
            {"raster", base64_encode(raster_bytes(track.raster))},
            {"split", track.split}};
}

namespace {
BoundingBox box_from_json(const json& a) {
    if (!a.is_array() || a.size() != 4) throw IoError("box field must be a 4-array");
    return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), a[3].get<double>()};
}
} // namespace

Track track_from_json(const json& j) {
    Track t;
    t.scene_id = j.at("scene_id").get<int>();
    t.ped_id = j.at("ped_id").get<int>();
    for (const json& fj : j.at("frames")) {
        FrameObs f;
        f.t = fj.at("t").get<int>();
        f.box_clean = box_from_json(fj.at("box_clean"));
        f.box_noisy = box_from_json(fj.at("box_noisy"));
        f.odo.speed = fj.at("speed").get<double>();
        f.odo.steering = fj.at("steering").get<double>();
        t.frames.push_back(f);
    }
    const std::vector<std::uint8_t> bytes = base64_decode(j.at("raster").get<std::string>());
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(bytes.size()))));
    t.raster = raster_from_bytes(bytes, side);
    t.split = j.at("split").get<std::string>();
    return t;
}

void write_tracks_jsonl(const std::string& path, const std::vector<Track>& tracks) {
    std::ostringstream out;
    for (const Track& t : tracks) out << track_to_json(t).dump() << '\n';
    atomic_write_file(path, out.str());
}

std::vector<Track> read_tracks_jsonl(const std::string& path, const std::string& split) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<Track> tracks;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw IoError(path + ":" + std::to_string(lineno) + ": invalid JSON");
        Track t = track_from_json(j);
        if (!split.empty() && t.split != split) {
            throw IoError(path + ":" + std::to_string(lineno) + ": split '" + t.split +
                          "' does not match file '" + split + "'");
        }
        tracks.push_back(std::move(t));
    }
    return tracks;
}

void write_manifest(const std::string& path, const json& manifest) {
    atomic_write_file(path, manifest.dump(2) + "\n");
}

json read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw IoError(path + ": invalid JSON");
    return j;
}

Dataset load_dataset(const std::string& dir) {
    Dataset d;
    d.manifest = read_manifest(dir + "/manifest.json");
    for (const char* split : {"train", "val", "test"}) {
        std::vector<Track> tracks = read_tracks_jsonl(dir + "/" + split + ".jsonl", split);
        for (Track& t : tracks) d.tracks.push_back(std::move(t));
    }
    return d;
}

} // namespace fse
