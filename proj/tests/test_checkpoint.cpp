#include <doctest.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <foresee/bbox_model.hpp>
#include <foresee/checkpoint.hpp>
#include <foresee/hash.hpp>
#include <foresee/rng.hpp>

#include "test_util.hpp"

using fse::Array;
using fse::Checkpoint;
using fse::CheckpointCorruptError;
using fse::CheckpointHashError;
using fse::CheckpointKindError;
using fse::CheckpointManifest;
using fse::CheckpointVersionError;
using fse::ContractError;
using fse::IoError;
using fse::Rng;

namespace {

CheckpointManifest sample_manifest() {
    CheckpointManifest m;
    m.model_kind = "bbox";
    m.config = {{"hidden_dim", 4}, {"horizon", 2}};
    m.stage = 2;
    m.metrics = {{"val", 1.5}};
    return m;
}

bool bits_equal(const Array& a, const Array& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    return true;
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Rewrites the trailing content hash after a deliberate header or manifest
// edit, so the edit reaches the check it targets instead of the hash check.
std::string rehashed(std::string bytes) {
    const std::uint64_t h = fse::fnv1a64(bytes.substr(0, bytes.size() - 8));
    for (int i = 0; i < 8; ++i)
        bytes[bytes.size() - 8 + static_cast<std::size_t>(i)] =
            static_cast<char>((h >> (8 * i)) & 0xff);
    return bytes;
}

} // namespace

TEST_CASE("fnv1a64 matches the published test vectors") {
    CHECK(fse::fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fse::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fse::fnv1a64("foobar") == 0x85944171f73967e8ULL);
    CHECK(fse::fnv1a64_hex("") == "cbf29ce484222325");
    CHECK(fse::fnv1a64_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("checkpoint round-trips doubles bitwise") {
    testutil::TempDir dir("ckpt_roundtrip");
    const std::string path = dir.path() + "/model.fse";

    Rng rng(101);
    Array w1 = testutil::random_array({3, 4}, rng);
    Array w2({1, 8});
    w2[0] = 0.0;
    w2[1] = -0.0;
    w2[2] = 5e-324;
    w2[3] = -1e308;
    w2[4] = std::numeric_limits<double>::quiet_NaN();
    w2[5] = std::numeric_limits<double>::infinity();
    w2[6] = -std::numeric_limits<double>::infinity();
    w2[7] = 0.1;

    const CheckpointManifest m = sample_manifest();
    fse::save_checkpoint(path, m, {{"w1", &w1}, {"w2", &w2}});
    const Checkpoint ckpt = fse::load_checkpoint(path);

    CHECK(ckpt.manifest.model_kind == "bbox");
    CHECK(ckpt.manifest.stage == 2);
    CHECK(ckpt.manifest.config == m.config);
    CHECK(ckpt.manifest.metrics == m.metrics);
    CHECK(ckpt.manifest.config_hash == fse::fnv1a64_hex(m.config.dump()));

    REQUIRE(ckpt.arrays.size() == 2);
    CHECK(ckpt.arrays[0].first == "w1");
    CHECK(ckpt.arrays[1].first == "w2");
    CHECK(bits_equal(ckpt.arrays[0].second, w1));
    CHECK(bits_equal(ckpt.arrays[1].second, w2));

    CHECK(bits_equal(ckpt.find("w2"), w2));
    CHECK_THROWS_AS(ckpt.find("w3"), ContractError);

    CHECK_NOTHROW(fse::require_kind(ckpt, "bbox"));
    CHECK_THROWS_AS(fse::require_kind(ckpt, "odometry"), CheckpointKindError);
    CHECK_NOTHROW(fse::require_config(ckpt, m.config));
    nlohmann::json other = m.config;
    other["horizon"] = 3;
    CHECK_THROWS_AS(fse::require_config(ckpt, other), CheckpointHashError);

    SUBCASE("null metrics are stored as an empty object") {
        CheckpointManifest bare;
        bare.model_kind = "odometry";
        fse::save_checkpoint(path, bare, {{"w1", &w1}});
        const Checkpoint reloaded = fse::load_checkpoint(path);
        CHECK(reloaded.manifest.metrics == nlohmann::json::object());
        CHECK(reloaded.manifest.stage == 0);
    }
}

TEST_CASE("single-precision payload widens back exactly to float values") {
    testutil::TempDir dir("ckpt_f32");
    const std::string path64 = dir.path() + "/full.fse";
    const std::string path32 = dir.path() + "/half.fse";

    Array w({1, 4});
    w[0] = 0.1;
    w[1] = 1.0 / 3.0;
    w[2] = 3.141592653589793;
    w[3] = -1e-30;

    const CheckpointManifest m = sample_manifest();
    fse::save_checkpoint(path64, m, {{"w", &w}});
    fse::save_checkpoint(path32, m, {{"w", &w}}, true);

    const Checkpoint narrow = fse::load_checkpoint(path32);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double widened = static_cast<double>(static_cast<float>(w[i]));
        CHECK(narrow.find("w")[i] == widened);
    }
    CHECK(narrow.find("w")[0] != w[0]); // 0.1 is not float-representable

    const std::string full_bytes = testutil::read_file_bytes(path64);
    const std::string half_bytes = testutil::read_file_bytes(path32);
    CHECK(half_bytes.size() == full_bytes.size() - w.size() * 4);
}

TEST_CASE("assign_arrays restores a model by name") {
    testutil::TempDir dir("ckpt_assign");
    const std::string path = dir.path() + "/bbox.fse";

    fse::BboxConfig cfg;
    cfg.past_steps = 2;
    cfg.horizon = 2;
    cfg.embed_dim = 8;
    cfg.hidden_dim = 4;
    Rng rng(7);
    const fse::BboxWeights original = fse::bbox_init(cfg, rng);

    CheckpointManifest m = sample_manifest();
    fse::save_checkpoint(path, m, original.named());
    const Checkpoint ckpt = fse::load_checkpoint(path);

    Rng other(8);
    fse::BboxWeights restored = fse::bbox_init(cfg, other);
    fse::assign_arrays(ckpt, restored.named());
    const auto a = original.named();
    const auto b = restored.named();
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(bits_equal(*a[k].second, *b[k].second));

    SUBCASE("a missing slot name is corrupt") {
        Array extra({1, 2});
        CHECK_THROWS_AS(fse::assign_arrays(ckpt, {{"no_such_array", &extra}}), CheckpointCorruptError);
    }
    SUBCASE("a shape mismatch is corrupt") {
        fse::BboxConfig wide = cfg;
        wide.hidden_dim = 6;
        Rng wrng(9);
        fse::BboxWeights mismatched = fse::bbox_init(wide, wrng);
        CHECK_THROWS_AS(fse::assign_arrays(ckpt, mismatched.named()), CheckpointCorruptError);
    }
}

TEST_CASE("load failures are distinguishable by type") {
    testutil::TempDir dir("ckpt_failures");
    const std::string path = dir.path() + "/good.fse";
    Rng rng(3);
    Array w = testutil::random_array({2, 3}, rng);
    fse::save_checkpoint(path, sample_manifest(), {{"w", &w}});
    const std::string good = testutil::read_file_bytes(path);
    REQUIRE(good.size() > 32);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(fse::load_checkpoint(dir.path() + "/absent.fse"), IoError);
    }
    SUBCASE("foreign bytes") {
        const std::string bad = dir.path() + "/foreign.fse";
        write_file_bytes(bad, "just some text, definitely not weights");
        CHECK_THROWS_AS(fse::load_checkpoint(bad), CheckpointCorruptError);
    }
    SUBCASE("a single flipped payload byte breaks the content hash") {
        std::string bytes = good;
        bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x01);
        const std::string bad = dir.path() + "/flipped.fse";
        write_file_bytes(bad, bytes);
        CHECK_THROWS_AS(fse::load_checkpoint(bad), CheckpointCorruptError);
    }
    SUBCASE("truncation") {
        for (const std::size_t keep : {good.size() - 12, good.size() / 2, std::size_t{10}}) {
            const std::string bad = dir.path() + "/short.fse";
            write_file_bytes(bad, good.substr(0, keep));
            CHECK_THROWS_AS(fse::load_checkpoint(bad), CheckpointCorruptError);
        }
    }
    SUBCASE("unknown format version") {
        std::string bytes = good;
        bytes[4] = 2;
        bytes[5] = bytes[6] = bytes[7] = 0;
        const std::string bad = dir.path() + "/v2.fse";
        write_file_bytes(bad, rehashed(bytes));
        CHECK_THROWS_AS(fse::load_checkpoint(bad), CheckpointVersionError);
    }
    SUBCASE("manifest whose stored config hash disagrees with its config") {
        std::string bytes = good;
        const std::size_t at = bytes.find("\"config_hash\":\"");
        REQUIRE(at != std::string::npos);
        std::size_t digit = at + std::string("\"config_hash\":\"").size();
        bytes[digit] = bytes[digit] == '0' ? '1' : '0';
        const std::string bad = dir.path() + "/badhash.fse";
        write_file_bytes(bad, rehashed(bytes));
        CHECK_THROWS_AS(fse::load_checkpoint(bad), CheckpointCorruptError);
    }
}
