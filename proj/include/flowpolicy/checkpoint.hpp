#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "flowpolicy/student.hpp"

namespace flowpolicy {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json student_config_to_json(const StudentConfig& cfg) {
    nlohmann::json head;
    if (cfg.head == StudentConfig::Head::Dx) {
        head = {{"type", "dx"}, {"points", cfg.dx_points}};
    } else {
        head = {{"type", "gm"},
                {"chunks", cfg.gm_chunks},
                {"components", cfg.gm_components},
                {"chunk_dim", cfg.gm_chunk_dim}};
    }
    return {{"dim", cfg.dim},        {"hidden", cfg.hidden},       {"time_freqs", cfg.time_freqs},
            {"n_classes", cfg.n_classes}, {"head", std::move(head)}};
}

inline StudentConfig student_config_from_json(const nlohmann::json& j) {
    StudentConfig cfg;
    cfg.dim = j.at("dim").get<int>();
    cfg.hidden = j.at("hidden").get<std::vector<int>>();
    cfg.time_freqs = j.at("time_freqs").get<int>();
    cfg.n_classes = j.at("n_classes").get<int>();
    const auto& head = j.at("head");
    std::string type = head.at("type").get<std::string>();
    if (type == "dx") {
        cfg.head = StudentConfig::Head::Dx;
        cfg.dx_points = head.at("points").get<int>();
    } else if (type == "gm") {
        cfg.head = StudentConfig::Head::Gm;
        cfg.gm_chunks = head.at("chunks").get<int>();
        cfg.gm_components = head.at("components").get<int>();
        cfg.gm_chunk_dim = head.at("chunk_dim").get<int>();
    } else {
        throw std::invalid_argument("checkpoint: unknown head type '" + type + "'");
    }
    cfg.validate();
    return cfg;
}

inline void save_checkpoint(const std::string& path, const StudentConfig& cfg, const TrainState& state) {
    nlohmann::json j = {{"version", kCheckpointVersion},
                        {"student_config", student_config_to_json(cfg)},
                        {"params", state.params},
                        {"ema_params", state.ema_params},
                        {"adam_m", state.adam_m},
                        {"adam_v", state.adam_v},
                        {"iteration", state.iteration},
                        {"seed", state.seed}};
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << j.dump(2) << "\n";
}

inline std::pair<StudentConfig, TrainState> load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw std::invalid_argument("checkpoint: unsupported version");
    StudentConfig cfg = student_config_from_json(j.at("student_config"));
    TrainState st;
    st.params = j.at("params").get<Vec>();
    st.ema_params = j.at("ema_params").get<Vec>();
    st.adam_m = j.at("adam_m").get<Vec>();
    st.adam_v = j.at("adam_v").get<Vec>();
    st.iteration = j.at("iteration").get<long>();
    st.seed = j.at("seed").get<std::uint64_t>();
    std::size_t n = static_cast<std::size_t>(cfg.param_count());
    if (st.params.size() != n || st.ema_params.size() != n || st.adam_m.size() != n || st.adam_v.size() != n)
        throw std::invalid_argument("checkpoint: parameter vector lengths do not match the config");
    if (!all_finite(st.params) || !all_finite(st.ema_params) || !all_finite(st.adam_m) || !all_finite(st.adam_v))
        throw std::invalid_argument("checkpoint: non-finite values");
    return {std::move(cfg), std::move(st)};
}

}  // namespace flowpolicy
