/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <unistd.h>

#include "evotaxo/clustering.hpp"
#include "evotaxo/config.hpp"

#ifndef EVOTAXO_TEST_DATA
#error "EVOTAXO_TEST_DATA must point at tests/data"
#endif

namespace evotaxo::testing {

inline std::filesystem::path data_dir() { return EVOTAXO_TEST_DATA; }

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

/// Fresh directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("evotaxo-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Environment with no EVOTAXO_* variables set.
inline EnvLookup empty_env() {
    return [](const char*) -> std::optional<std::string> { return std::nullopt; };
}

/// Square matrix from a CSV file of doubles.
inline DistanceMatrix read_matrix_csv(const std::filesystem::path& p) {
    std::istringstream in(read_file(p));
    std::vector<std::vector<double>> rows;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream cells(line);
        for (std::string cell; std::getline(cells, cell, ',');) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    DistanceMatrix d(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.size()) throw std::runtime_error("matrix is not square: " + p.string());
        for (std::size_t j = i + 1; j < rows.size(); ++j) d.set(i, j, rows[i][j]);
    }
    return d;
}

/// Uniform double in [0, 1) from the top 53 bits.
template <class R>
double unit_double(R& rng) {
    return static_cast<double>(rng.next() >> 11) * 0x1.0p-53;
}

}  // namespace evotaxo::testing
