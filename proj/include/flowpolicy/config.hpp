#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowpolicy/checkpoint.hpp"
#include "flowpolicy/distill.hpp"
#include "flowpolicy/ode.hpp"
#include "flowpolicy/student.hpp"
#include "flowpolicy/teacher.hpp"

namespace flowpolicy {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

// Strict JSON object reader: every key must be consumed, unknown keys reject.
class StrictObject {
public:
    StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
    }

    template <class T>
    T require(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError("config: missing required key " + path_ + "." + key);
        return get_as<T>(key);
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return get_as<T>(key);
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const nlohmann::json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void done() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError("config: unknown key " + path_ + "." + it.key());
    }

    const std::string& path() const { return path_; }

private:
    template <class T>
    T get_as(const std::string& key) {
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config: bad value type at " + path_ + "." + key);
        }
    }

    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace detail

struct EvalConfig {
    long n_samples = 2048;
    std::vector<std::string> metrics = {"sliced_wasserstein", "endpoint_mse", "diversity"};
    int teacher_substeps = 128;
    int n_projections = 128;
};

struct IoConfig {
    std::string out_dir = "run_out";
    std::string dataset = "gm-grid";  // gm-grid | rings | checkerboard | csv
    std::string dataset_csv;
    long dataset_size = 10000;
};

struct RunConfig {
    int version = 1;
    std::uint64_t seed = 0;
    TeacherSpec teacher;
    StudentConfig student;
    TrainConfig train;
    RolloutConfig rollout;
    double temperature = 1.0;
    bool temperature_on_final = false;
    EvalConfig eval;
    IoConfig io;

    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
};

inline RunConfig RunConfig::from_json(const nlohmann::json& root) {
    detail::StrictObject top(root, "$");
    RunConfig cfg;
    cfg.version = top.get<int>("version", 1);
    if (cfg.version != 1) throw ConfigError("config: unsupported version");
    cfg.seed = top.get<std::uint64_t>("seed", 0);

    {
        detail::StrictObject t(top.raw("teacher"), "$.teacher");
        const auto& classes = t.raw("classes");
        if (!classes.is_array() || classes.empty()) throw ConfigError("config: $.teacher.classes must be a non-empty array");
        int dim = -1;
        for (std::size_t ci = 0; ci < classes.size(); ++ci) {
            detail::StrictObject c(classes[ci], "$.teacher.classes[" + std::to_string(ci) + "]");
            GmPrior p;
            int id = c.require<int>("id");
            p.weights = c.require<Vec>("weights");
            p.stds = c.require<Vec>("stds");
            auto means = c.require<std::vector<Vec>>("means");
            c.done();
            p.n_components = static_cast<int>(p.weights.size());
            if (means.size() != p.weights.size() || p.stds.size() != p.weights.size())
                throw ConfigError("config: teacher class " + std::to_string(id) + " has inconsistent component counts");
            p.dim = means.empty() ? 0 : static_cast<int>(means.front().size());
            for (const auto& m : means) {
                if (static_cast<int>(m.size()) != p.dim)
                    throw ConfigError("config: teacher means must share one dimension");
                p.means.insert(p.means.end(), m.begin(), m.end());
            }
            if (dim < 0) dim = p.dim;
            if (p.dim != dim) throw ConfigError("config: teacher classes must share one dimension");
            cfg.teacher.class_ids.push_back(id);
            cfg.teacher.class_priors.push_back(std::move(p));
        }
        cfg.teacher.dim = dim;
        cfg.teacher.cfg_scale = t.get<double>("cfg_scale", 1.0);
        auto interval = t.get<Vec>("cfg_interval", {0.0, 1.0});
        if (interval.size() != 2) throw ConfigError("config: $.teacher.cfg_interval must be [lo, hi]");
        cfg.teacher.cfg_lo = interval[0];
        cfg.teacher.cfg_hi = interval[1];
        t.done();
        try {
            cfg.teacher.finalize();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }

    {
        detail::StrictObject s(top.raw("student"), "$.student");
        cfg.student.dim = cfg.teacher.dim;
        cfg.student.hidden = s.get<std::vector<int>>("hidden", {256, 256, 256});
        cfg.student.time_freqs = s.get<int>("time_freqs", 16);
        std::string cond = s.get<std::string>("condition_embedding", "none");
        if (cond == "one-hot")
            cfg.student.n_classes = static_cast<int>(cfg.teacher.class_ids.size());
        else if (cond == "none")
            cfg.student.n_classes = 0;
        else
            throw ConfigError("config: $.student.condition_embedding must be 'one-hot' or 'none'");
        detail::StrictObject h(s.raw("head"), "$.student.head");
        std::string type = h.require<std::string>("type");
        if (type == "dx") {
            cfg.student.head = StudentConfig::Head::Dx;
            cfg.student.dx_points = h.get<int>("points", 10);
        } else if (type == "gm") {
            cfg.student.head = StudentConfig::Head::Gm;
            cfg.student.gm_components = h.get<int>("components", 8);
            cfg.student.gm_chunks = h.get<int>("chunks", 1);
            cfg.student.gm_chunk_dim = h.get<int>("chunk_dim", cfg.teacher.dim / std::max(1, cfg.student.gm_chunks));
        } else {
            throw ConfigError("config: $.student.head.type must be 'dx' or 'gm'");
        }
        h.done();
        s.done();
    }

    {
        detail::StrictObject t(top.raw("train"), "$.train");
        std::string mode = t.get<std::string>("mode", "simple");
        if (mode == "simple")
            cfg.train.mode = TrainConfig::Mode::Simple;
        else if (mode == "data-dependent")
            cfg.train.mode = TrainConfig::Mode::DataDependent;
        else if (mode == "data-free")
            cfg.train.mode = TrainConfig::Mode::DataFree;
        else
            throw ConfigError("config: $.train.mode must be simple|data-dependent|data-free");
        cfg.train.nfe = t.get<int>("nfe", 1);
        cfg.train.shift_m = t.get<double>("shift", 1.0);
        cfg.train.lr = t.get<double>("lr", 1e-3);
        cfg.train.batch_size = t.get<int>("batch_size", 64);
        cfg.train.iterations = t.require<long>("iterations");
        cfg.train.n_intermediate = t.get<int>("n_intermediate", 2);
        cfg.train.window_dtau = t.get<double>("window_dtau", 3.0 / 128);
        cfg.train.dropout_rate = t.get<double>("dropout_rate", 0.05);
        if (t.has("mixing")) {
            detail::StrictObject m(t.raw("mixing"), "$.train.mixing");
            std::string mm = m.require<std::string>("mode");
            if (mm == "off") {
                cfg.train.mixing.mode = MixingConfig::Mode::Off;
            } else if (mm == "scheduled") {
                cfg.train.mixing.mode = MixingConfig::Mode::Scheduled;
                cfg.train.mixing.decay_iterations = m.require<long>("decay_iterations");
            } else {
                throw ConfigError("config: $.train.mixing.mode must be off|scheduled");
            }
            m.done();
        }
        cfg.train.n_teacher_steps = t.get<int>("n_teacher_steps", 4);
        cfg.train.warm_start_iterations = t.get<long>("warm_start_iterations", 0);
        cfg.train.final_step_scale = t.get<double>("final_step_scale", 1.0);
        cfg.train.eval_every = t.get<long>("eval_every", 1000);
        cfg.train.seed = cfg.seed;
        t.done();
    }

    if (top.has("rollout")) {
        detail::StrictObject r(top.raw("rollout"), "$.rollout");
        cfg.rollout.substep = r.get<double>("substep", 1.0 / 128);
        cfg.temperature = r.get<double>("temperature", 1.0);
        cfg.temperature_on_final = r.get<bool>("temperature_on_final", false);
        cfg.rollout.record_trajectory = r.get<bool>("record_trajectory", false);
        r.done();
    }
    cfg.rollout.shift_m = cfg.train.shift_m;
    cfg.rollout.window_dtau = cfg.train.window_dtau;

    if (top.has("eval")) {
        detail::StrictObject e(top.raw("eval"), "$.eval");
        cfg.eval.n_samples = e.get<long>("n_samples", 2048);
        cfg.eval.metrics = e.get<std::vector<std::string>>(
            "metrics", {"sliced_wasserstein", "endpoint_mse", "diversity"});
        cfg.eval.n_projections = e.get<int>("n_projections", 128);
        if (e.has("reference")) {
            detail::StrictObject ref(e.raw("reference"), "$.eval.reference");
            cfg.eval.teacher_substeps = ref.get<int>("teacher_substeps", 128);
            ref.done();
        }
        e.done();
        for (const auto& m : cfg.eval.metrics)
            if (m != "sliced_wasserstein" && m != "endpoint_mse" && m != "diversity")
                throw ConfigError("config: unknown eval metric '" + m + "'");
    }

    if (top.has("io")) {
        detail::StrictObject i(top.raw("io"), "$.io");
        cfg.io.out_dir = i.get<std::string>("out_dir", "run_out");
        cfg.io.dataset = i.get<std::string>("dataset", "gm-grid");
        cfg.io.dataset_csv = i.get<std::string>("dataset_csv", "");
        cfg.io.dataset_size = i.get<long>("dataset_size", 10000);
        i.done();
    }

    top.done();
    cfg.validate();
    return cfg;
}

inline void RunConfig::validate() const {
    try {
        student.validate();
        train.validate(student);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (student.head == StudentConfig::Head::Gm && student.gm_chunks * student.gm_chunk_dim != teacher.dim)
        throw ConfigError("config: gm head chunks*chunk_dim must equal the teacher dimension");
    if (!(rollout.substep > 0.0 && rollout.substep <= 1.0)) throw ConfigError("config: rollout.substep outside (0,1]");
    if (!(temperature > 0.0)) throw ConfigError("config: rollout.temperature must be > 0");
    if (eval.n_samples < 2) throw ConfigError("config: eval.n_samples must be >= 2");
    if (eval.teacher_substeps < 1) throw ConfigError("config: eval.reference.teacher_substeps must be >= 1");
    if (eval.n_projections < 1) throw ConfigError("config: eval.n_projections must be >= 1");
    if (io.dataset != "gm-grid" && io.dataset != "rings" && io.dataset != "checkerboard" && io.dataset != "csv")
        throw ConfigError("config: io.dataset must be gm-grid|rings|checkerboard|csv");
    if (io.dataset == "csv" && io.dataset_csv.empty())
        throw ConfigError("config: io.dataset_csv required for csv datasets");
}

// Resolved dump: every effective value appears explicitly.
inline nlohmann::json RunConfig::to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t i = 0; i < teacher.class_ids.size(); ++i) {
        const GmPrior& p = teacher.class_priors[i];
        nlohmann::json means = nlohmann::json::array();
        for (int j = 0; j < p.n_components; ++j) {
            auto m = p.mean(j);
            means.push_back(Vec(m.begin(), m.end()));
        }
        classes.push_back({{"id", teacher.class_ids[i]},
                           {"weights", p.weights},
                           {"means", means},
                           {"stds", p.stds}});
    }
    nlohmann::json mixing;
    if (train.mixing.mode == MixingConfig::Mode::Off)
        mixing = {{"mode", "off"}};
    else
        mixing = {{"mode", "scheduled"}, {"decay_iterations", train.mixing.decay_iterations}};
    std::string mode = train.mode == TrainConfig::Mode::Simple ? "simple"
                       : train.mode == TrainConfig::Mode::DataDependent ? "data-dependent"
                                                                        : "data-free";
    nlohmann::json head;
    if (student.head == StudentConfig::Head::Dx)
        head = {{"type", "dx"}, {"points", student.dx_points}};
    else
        head = {{"type", "gm"},
                {"chunks", student.gm_chunks},
                {"components", student.gm_components},
                {"chunk_dim", student.gm_chunk_dim}};
    return {
        {"version", version},
        {"seed", seed},
        {"teacher",
         {{"classes", classes}, {"cfg_scale", teacher.cfg_scale}, {"cfg_interval", Vec{teacher.cfg_lo, teacher.cfg_hi}}}},
        {"student",
         {{"hidden", student.hidden},
          {"time_freqs", student.time_freqs},
          {"condition_embedding", student.n_classes > 0 ? "one-hot" : "none"},
          {"head", head}}},
        {"train",
         {{"mode", mode},
          {"nfe", train.nfe},
          {"shift", train.shift_m},
          {"lr", train.lr},
          {"batch_size", train.batch_size},
          {"iterations", train.iterations},
          {"n_intermediate", train.n_intermediate},
          {"window_dtau", train.window_dtau},
          {"dropout_rate", train.dropout_rate},
          {"mixing", mixing},
          {"n_teacher_steps", train.n_teacher_steps},
          {"warm_start_iterations", train.warm_start_iterations},
          {"final_step_scale", train.final_step_scale},
          {"eval_every", train.eval_every}}},
        {"rollout",
         {{"substep", rollout.substep},
          {"temperature", temperature},
          {"temperature_on_final", temperature_on_final},
          {"record_trajectory", rollout.record_trajectory}}},
        {"eval",
         {{"n_samples", eval.n_samples},
          {"metrics", eval.metrics},
          {"reference", {{"teacher_substeps", eval.teacher_substeps}}},
          {"n_projections", eval.n_projections}}},
        {"io",
         {{"out_dir", io.out_dir},
          {"dataset", io.dataset},
          {"dataset_csv", io.dataset_csv},
          {"dataset_size", io.dataset_size}}},
    };
}

}  // namespace flowpolicy
