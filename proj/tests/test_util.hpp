#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <foresee/array.hpp>
#include <foresee/rng.hpp>

namespace testutil {

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

inline fse::Array random_array(std::vector<int> shape, fse::Rng& rng, double lo = -2.0, double hi = 2.0) {
    fse::Array a(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
    return a;
}

inline double max_abs_diff(const fse::Array& a, const fse::Array& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Fresh scratch directory under the system temp root, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = (std::filesystem::temp_directory_path() /
                 ("foresee_test_" + tag + "_" + std::to_string(counter++)))
                    .string();
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::string& path() const { return path_; }
    std::filesystem::path fs() const { return std::filesystem::path(path_); }

private:
    std::string path_;
};

inline std::string read_file_bytes(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) return {};
    std::string out;
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, got);
    std::fclose(f);
    return out;
}

} // namespace testutil
