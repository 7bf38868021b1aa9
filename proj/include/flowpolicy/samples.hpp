#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpolicy/numeric.hpp"
#include "flowpolicy/rng.hpp"

namespace flowpolicy {

// Row-major n x dim sample matrix with optional integer labels.
struct SampleSet {
    int dim = 0;
    long count = 0;
    Vec data;                 // count * dim
    std::vector<int> labels;  // empty or size count
    bool has_labels = false;

    std::span<const double> row(long i) const {
        return {data.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }
    void append(std::span<const double> x, int label = 0) {
        data.insert(data.end(), x.begin(), x.end());
        if (has_labels) labels.push_back(label);
        ++count;
    }
};

// Shared draw protocol so student and teacher samplers can be seed-paired:
// sample i always uses the same noise and condition streams.
inline Vec draw_noise(int dim, std::uint64_t seed, long index) {
    return substream(seed, RngUse::Noise, index).normal_vec(static_cast<std::size_t>(dim));
}

inline int draw_condition(const std::vector<int>& class_ids, std::uint64_t seed, long index) {
    if (class_ids.empty()) return 0;
    Rng r = substream(seed, RngUse::Condition, index);
    return class_ids[static_cast<std::size_t>(r.uniform_index(class_ids.size()))];
}

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

// CSV schema: header `dim0,...,dim{D-1}[,label]`, one sample per row.
inline void write_samples_csv(const std::string& path, const SampleSet& s) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    for (int d = 0; d < s.dim; ++d) f << (d ? "," : "") << "dim" << d;
    if (s.has_labels) f << ",label";
    f << "\n";
    for (long i = 0; i < s.count; ++i) {
        auto r = s.row(i);
        for (int d = 0; d < s.dim; ++d) f << (d ? "," : "") << format_double(r[static_cast<std::size_t>(d)]);
        if (s.has_labels) f << "," << s.labels[static_cast<std::size_t>(i)];
        f << "\n";
    }
}

inline SampleSet read_samples_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty csv: " + path);
    SampleSet s;
    {
        std::stringstream hs(line);
        std::string col;
        int d = 0;
        while (std::getline(hs, col, ',')) {
            if (col == "label") {
                s.has_labels = true;
            } else if (col == "dim" + std::to_string(d)) {
                ++d;
            } else {
                throw std::runtime_error("bad csv header column '" + col + "' in " + path);
            }
        }
        s.dim = d;
        if (d == 0) throw std::runtime_error("csv has no dim columns: " + path);
    }
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        for (int d = 0; d < s.dim; ++d) {
            if (!std::getline(ls, cell, ',')) throw std::runtime_error("short csv row in " + path);
            s.data.push_back(std::stod(cell));
        }
        if (s.has_labels) {
            if (!std::getline(ls, cell, ',')) throw std::runtime_error("missing label in " + path);
            s.labels.push_back(std::stoi(cell));
        }
        ++s.count;
    }
    if (!all_finite(s.data)) throw std::runtime_error("csv contains non-finite values: " + path);
    return s;
}

}  // namespace flowpolicy
