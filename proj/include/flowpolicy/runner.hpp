#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowpolicy/checkpoint.hpp"
#include "flowpolicy/config.hpp"
#include "flowpolicy/distill.hpp"
#include "flowpolicy/io.hpp"
#include "flowpolicy/metrics.hpp"
#include "flowpolicy/ode.hpp"
#include "flowpolicy/policy.hpp"
#include "flowpolicy/teacher.hpp"

namespace flowpolicy {

inline int class_index(const std::vector<int>& class_ids, int class_id) {
    for (std::size_t i = 0; i < class_ids.size(); ++i)
        if (class_ids[i] == class_id) return static_cast<int>(i);
    throw std::invalid_argument("unknown class id " + std::to_string(class_id));
}

// Seed-paired student sampling: sample i draws the shared (seed, i) noise and
// condition streams, matching teacher_sample_batch.
inline SampleSet student_sample_batch(const StudentConfig& scfg, const Vec& params,
                                      const std::vector<int>& class_ids, const StepGrid& grid,
                                      const RolloutConfig& rcfg, long n, std::uint64_t seed,
                                      std::vector<SampleResult>* detailed = nullptr) {
    SampleSet out;
    out.dim = scfg.dim;
    out.has_labels = true;
    for (long i = 0; i < n; ++i) {
        int cid = draw_condition(class_ids, seed, i);
        int cond = scfg.n_classes > 0 ? class_index(class_ids, cid) : 0;
        PolicyProvider provider = make_student_provider(scfg, params, rcfg.shift_m, cond);
        SampleResult res = sample_one(provider, grid, rcfg, draw_noise(scfg.dim, seed, i));
        out.append(res.endpoint, cid);
        if (detailed) detailed->push_back(std::move(res));
    }
    return out;
}

inline std::uint64_t eval_seed_for(std::uint64_t seed) { return mix64(seed ^ 0x45564153454544ull); }

// Metrics requested by the eval config; the reference set is seed-paired.
inline nlohmann::json compute_eval_metrics(const EvalConfig& eval, const SampleSet& student,
                                           const SampleSet& reference, std::uint64_t seed) {
    nlohmann::json out;
    for (const auto& m : eval.metrics) {
        if (m == "sliced_wasserstein")
            out["sliced_wasserstein"] = metric_sliced_wasserstein(student, reference, eval.n_projections, seed);
        else if (m == "endpoint_mse")
            out["endpoint_mse"] = metric_endpoint_alignment(student, reference);
        else if (m == "diversity")
            out["diversity"] = metric_diversity(student);
    }
    return out;
}

struct TrainOutputs {
    std::string config_path, log_path, checkpoint_path;
    StudentConfig student;
    TrainState state;
    nlohmann::json final_metrics;
};

// The `train` subcommand: writes the resolved config before any compute, runs
// the trainer with periodic eval logging, saves the final checkpoint.
inline TrainOutputs run_train(const RunConfig& cfg, const std::string& resume_path = "") {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.io.out_dir);
    TrainOutputs out;
    out.config_path = (fs::path(cfg.io.out_dir) / "resolved_config.json").string();
    out.log_path = (fs::path(cfg.io.out_dir) / "log.jsonl").string();
    out.checkpoint_path = (fs::path(cfg.io.out_dir) / "checkpoint.json").string();
    write_json_file(out.config_path, cfg.to_json());

    ToyDataset dataset;
    if (cfg.train.mode == TrainConfig::Mode::DataDependent) {
        if (cfg.io.dataset == "csv")
            dataset = load_dataset_csv(cfg.io.dataset_csv);
        else
            dataset = gen_toy_dataset(cfg.io.dataset, cfg.io.dataset_size, cfg.seed, &cfg.teacher);
        if (dataset.set.dim != cfg.teacher.dim) throw ConfigError("config: dataset dimension mismatch");
    }

    Trainer trainer(cfg.student, cfg.train, cfg.rollout, cfg.teacher, std::move(dataset));
    if (!resume_path.empty()) {
        auto [ck_cfg, ck_state] = load_checkpoint(resume_path);
        if (ck_cfg.layer_sizes() != cfg.student.layer_sizes())
            throw ConfigError("config: resume checkpoint does not match the student config");
        trainer.state() = std::move(ck_state);
    }

    std::uint64_t eval_seed = eval_seed_for(cfg.seed);
    SampleSet reference = teacher_sample_batch(cfg.teacher, cfg.eval.n_samples, cfg.eval.teacher_substeps,
                                               cfg.train.shift_m, eval_seed);
    RolloutConfig sample_cfg = cfg.rollout;
    sample_cfg.segment_temperatures = temperature_schedule(cfg.temperature, cfg.train.nfe, cfg.temperature_on_final);

    JsonlLogger log(out.log_path);
    StepReport rep;
    while (trainer.state().iteration < cfg.train.iterations) {
        rep = trainer.step();
        bool last = trainer.state().iteration == cfg.train.iterations;
        if (last || (cfg.train.eval_every > 0 && rep.iteration % cfg.train.eval_every == 0)) {
            SampleSet student = student_sample_batch(trainer.student_config(), trainer.state().ema_params,
                                                     cfg.teacher.class_ids, trainer.grid(), sample_cfg,
                                                     cfg.eval.n_samples, eval_seed);
            nlohmann::json metrics = compute_eval_metrics(cfg.eval, student, reference, eval_seed);
            nlohmann::json line = {{"iteration", rep.iteration}, {"loss", rep.loss}, {"mix_ratio", rep.mix_ratio}};
            line["metrics"] = metrics;
            log.log(line);
            if (last) out.final_metrics = metrics;
        }
    }
    if (cfg.train.iterations == 0) log.log({{"iteration", 0}, {"loss", nullptr}});

    save_checkpoint(out.checkpoint_path, trainer.student_config(), trainer.state());
    out.student = trainer.student_config();
    out.state = trainer.state();
    return out;
}

// FactorGm JSON round-trip for the toyfit policy artifact.
inline nlohmann::json factor_gm_to_json(const FactorGm& gm) {
    return {{"version", 1},
            {"chunks", gm.n_chunks},
            {"components", gm.n_components},
            {"chunk_dim", gm.chunk_dim},
            {"logits", gm.logits},
            {"means", gm.means},
            {"log_std", gm.log_std},
            {"x_src", gm.x_src},
            {"t_src", gm.t_src}};
}

inline FactorGm factor_gm_from_json(const nlohmann::json& j) {
    FactorGm gm;
    gm.n_chunks = j.at("chunks").get<int>();
    gm.n_components = j.at("components").get<int>();
    gm.chunk_dim = j.at("chunk_dim").get<int>();
    gm.logits = j.at("logits").get<Vec>();
    gm.means = j.at("means").get<Vec>();
    gm.log_std = j.at("log_std").get<double>();
    gm.x_src = j.at("x_src").get<Vec>();
    gm.t_src = j.at("t_src").get<double>();
    return gm;
}

// Toyfit targets from one teacher trajectory: states at n times spanning the
// domain, with the exact teacher velocity at each.
inline std::vector<ToyfitTarget> toyfit_targets_from_teacher(const TeacherSpec& teacher, int c, int n_targets,
                                                             double shift_m, std::uint64_t seed) {
    std::vector<ToyfitTarget> targets;
    Vec x = draw_noise(teacher.dim, seed, 0);
    double tau = 1.0;
    const double substep = 1.0 / 128;
    for (int n = 0; n < n_targets; ++n) {
        double tau_target = 1.0 - static_cast<double>(n) / n_targets;
        while (tau > tau_target + 1e-12) {
            double tau_next = std::max(tau - substep, tau_target);
            double t_hi = shift_time(tau, shift_m);
            Vec u = teacher_velocity_cfg(teacher, x, std::max(t_hi, kTimeFloor), c);
            axpy(-(t_hi - shift_time(tau_next, shift_m)), u, x);
            tau = tau_next;
        }
        ToyfitTarget tg;
        tg.t = std::max(shift_time(tau, shift_m), kTimeFloor);
        tg.x = x;
        tg.u = teacher_velocity_cfg(teacher, x, tg.t, c);
        targets.push_back(std::move(tg));
    }
    return targets;
}

}  // namespace flowpolicy
