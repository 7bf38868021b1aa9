#pragma once

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "flowpolicy/ode.hpp"
#include "flowpolicy/samples.hpp"

namespace flowpolicy {

// Trajectory dump: tau,t,dim0,...,dim{D-1}
inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    int dim = traj.states.empty() ? 0 : static_cast<int>(traj.states.front().size());
    f << "tau,t";
    for (int d = 0; d < dim; ++d) f << ",dim" << d;
    f << "\n";
    for (std::size_t i = 0; i < traj.taus.size(); ++i) {
        f << format_double(traj.taus[i]) << "," << format_double(traj.ts[i]);
        for (double x : traj.states[i]) f << "," << format_double(x);
        f << "\n";
    }
}

// 2D scatter (higher-D uses the first two dims): fixed 800x800 viewbox,
// axis-fit with a 5% margin, reference samples in a second color.
inline void write_svg_scatter(const std::string& path, const SampleSet& samples, const SampleSet* reference) {
    if (samples.dim < 1) throw std::invalid_argument("plot: samples have no dimensions");
    auto x_of = [](const SampleSet& s, long i) { return s.row(i)[0]; };
    auto y_of = [](const SampleSet& s, long i) { return s.dim > 1 ? s.row(i)[1] : 0.0; };
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    auto fit = [&](const SampleSet& s) {
        for (long i = 0; i < s.count; ++i) {
            lo_x = std::min(lo_x, x_of(s, i));
            hi_x = std::max(hi_x, x_of(s, i));
            lo_y = std::min(lo_y, y_of(s, i));
            hi_y = std::max(hi_y, y_of(s, i));
        }
    };
    fit(samples);
    if (reference) fit(*reference);
    double span_x = std::max(hi_x - lo_x, 1e-9), span_y = std::max(hi_y - lo_y, 1e-9);
    lo_x -= 0.05 * span_x;
    hi_x += 0.05 * span_x;
    lo_y -= 0.05 * span_y;
    hi_y += 0.05 * span_y;
    const double size = 800.0;
    auto px = [&](double x) { return (x - lo_x) / (hi_x - lo_x) * size; };
    auto py = [&](double y) { return size - (y - lo_y) / (hi_y - lo_y) * size; };
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 800\">\n";
    f << "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
    auto draw = [&](const SampleSet& s, const char* color) {
        for (long i = 0; i < s.count; ++i)
            f << "<circle cx=\"" << format_double(px(x_of(s, i))) << "\" cy=\"" << format_double(py(y_of(s, i)))
              << "\" r=\"2\" fill=\"" << color << "\" fill-opacity=\"0.6\"/>\n";
    };
    if (reference) draw(*reference, "#d62728");
    draw(samples, "#1f77b4");
    f << "</svg>\n";
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << j.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    return nlohmann::json::parse(f);
}

// One JSON object per line; no timestamps so logs are reproducible.
class JsonlLogger {
public:
    explicit JsonlLogger(const std::string& path) : f_(path) {
        if (!f_) throw std::runtime_error("cannot open for writing: " + path);
    }
    void log(const nlohmann::json& j) { f_ << j.dump() << "\n" << std::flush; }

private:
    std::ofstream f_;
};

}  // namespace flowpolicy
