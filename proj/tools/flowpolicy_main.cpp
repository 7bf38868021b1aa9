#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowpolicy/flowpolicy.hpp"

namespace fp = flowpolicy;
namespace fs = std::filesystem;

namespace {

fp::RunConfig load_run_config(const std::string& path) {
    return fp::RunConfig::from_json(fp::read_json_file(path));
}

int cmd_train(const std::string& config_path, const std::string& resume) {
    fp::RunConfig cfg = load_run_config(config_path);
    fp::TrainOutputs out = fp::run_train(cfg, resume);
    std::cout << "checkpoint: " << out.checkpoint_path << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt_path, int nfe, long n, std::uint64_t seed, const std::string& out_path,
               const std::string& traj_dir, double shift_m, double substep, double final_step_scale,
               double temperature, bool temperature_on_final, bool use_raw_params) {
    auto [cfg, state] = fp::load_checkpoint(ckpt_path);
    fp::StepGrid grid = fp::make_step_grid(nfe, final_step_scale);
    fp::RolloutConfig rcfg;
    rcfg.substep = substep;
    rcfg.shift_m = shift_m;
    rcfg.segment_temperatures = fp::temperature_schedule(temperature, nfe, temperature_on_final);
    rcfg.record_trajectory = !traj_dir.empty();
    std::vector<int> class_ids(static_cast<std::size_t>(cfg.n_classes));
    for (int i = 0; i < cfg.n_classes; ++i) class_ids[static_cast<std::size_t>(i)] = i;
    std::vector<fp::SampleResult> detailed;
    fp::SampleSet samples = fp::student_sample_batch(cfg, use_raw_params ? state.params : state.ema_params,
                                                     class_ids, grid, rcfg, n, seed,
                                                     rcfg.record_trajectory ? &detailed : nullptr);
    samples.has_labels = cfg.n_classes > 0;
    fp::write_samples_csv(out_path, samples);
    if (!traj_dir.empty()) {
        fs::create_directories(traj_dir);
        for (std::size_t i = 0; i < detailed.size(); ++i) {
            fp::Trajectory merged;
            for (const auto& seg : detailed[i].trajectories) {
                std::size_t start = merged.taus.empty() ? 0 : 1;
                for (std::size_t k = start; k < seg.taus.size(); ++k)
                    merged.push(seg.taus[k], seg.ts[k], seg.states[k]);
            }
            char name[64];
            std::snprintf(name, sizeof(name), "trajectory_%06zu.csv", i);
            fp::write_trajectory_csv((fs::path(traj_dir) / name).string(), merged);
        }
    }
    return 0;
}

int cmd_teacher_sample(const std::string& config_path, int substeps, long n, std::uint64_t seed,
                       const std::string& out_path) {
    fp::RunConfig cfg = load_run_config(config_path);
    fp::SampleSet ref = fp::teacher_sample_batch(cfg.teacher, n, substeps, cfg.train.shift_m, seed);
    fp::write_samples_csv(out_path, ref);
    return 0;
}

int cmd_eval(const std::string& samples_path, const std::string& reference_path, bool paired,
             const std::string& out_path, int n_projections, std::uint64_t seed) {
    fp::SampleSet a = fp::read_samples_csv(samples_path);
    fp::SampleSet b = fp::read_samples_csv(reference_path);
    nlohmann::json report = {{"version", 1},
                             {"n_samples", a.count},
                             {"n_reference", b.count},
                             {"n_projections", n_projections},
                             {"projection_seed", seed},
                             {"paired", paired}};
    report["sliced_wasserstein"] = fp::metric_sliced_wasserstein(a, b, n_projections, seed);
    report["diversity_mean_pairwise"] = fp::metric_diversity(a);
    if (paired) report["endpoint_alignment_mse"] = fp::metric_endpoint_alignment(a, b);
    fp::write_json_file(out_path, report);
    return 0;
}

int cmd_toyfit(const std::string& config_path, const std::string& out_path, int k, int l, int c_dim,
               int n_targets, long iters, double lr, int cond, std::uint64_t seed) {
    fp::RunConfig cfg = load_run_config(config_path);
    if (cond < 0) cond = cfg.teacher.class_ids.front();
    if (c_dim <= 0) c_dim = cfg.teacher.dim / std::max(1, l);
    if (l * c_dim != cfg.teacher.dim)
        throw fp::ConfigError("toyfit: l * c must equal the teacher dimension");
    auto targets = fp::toyfit_targets_from_teacher(cfg.teacher, cond, n_targets, cfg.train.shift_m, seed);
    fp::ToyfitResult res = fp::toyfit(targets, k, c_dim, l, iters, lr, seed);
    nlohmann::json j = fp::factor_gm_to_json(res.policy);
    j["residual_mse"] = res.report.residual_mse;
    j["diverged"] = res.report.diverged;
    j["iterations"] = res.report.iterations;
    fp::write_json_file(out_path, j);
    if (res.report.diverged)
        throw fp::NumericalError("toyfit: optimization diverged", res.report.diverged_at);
    std::cout << "residual_mse: " << res.report.residual_mse << "\n";
    return 0;
}

int cmd_plot(const std::string& samples_path, const std::string& overlay_path, const std::string& out_path) {
    fp::SampleSet a = fp::read_samples_csv(samples_path);
    if (!overlay_path.empty()) {
        fp::SampleSet b = fp::read_samples_csv(overlay_path);
        fp::write_svg_scatter(out_path, a, &b);
    } else {
        fp::write_svg_scatter(out_path, a, nullptr);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Policy-based few-step flow generation on toy densities"};
    app.require_subcommand(1);

    std::string config_path, resume, ckpt_path, out_path, traj_dir, samples_path, reference_path, overlay_path;
    int nfe = 1, substeps = 128, n_projections = 128;
    long n = 1024, iters = 20000;
    std::uint64_t seed = 0;
    double shift_m = 1.0, substep = 1.0 / 128, final_step_scale = 1.0, temperature = 1.0, lr = 0.03;
    bool temperature_on_final = false, use_raw_params = false, paired = false;
    int k = 8, l = 1, c_dim = 0, n_targets = 4, cond = -1;

    auto* train = app.add_subcommand("train", "train a student from a run config");
    train->add_option("--config", config_path, "run config json")->required();
    train->add_option("--resume", resume, "checkpoint to resume from");

    auto* sample = app.add_subcommand("sample", "sample a trained student");
    sample->add_option("--ckpt", ckpt_path)->required();
    sample->add_option("--nfe", nfe)->required();
    sample->add_option("--n", n)->required();
    sample->add_option("--seed", seed)->required();
    sample->add_option("--out", out_path)->required();
    sample->add_option("--trajectories", traj_dir, "directory for per-sample trajectory csv dumps");
    sample->add_option("--shift", shift_m);
    sample->add_option("--substep", substep);
    sample->add_option("--final-step-scale", final_step_scale);
    sample->add_option("--temperature", temperature);
    sample->add_flag("--temperature-on-final", temperature_on_final);
    sample->add_flag("--raw-params", use_raw_params, "sample with raw instead of EMA weights");

    auto* teacher = app.add_subcommand("teacher-sample", "sample the analytic teacher");
    teacher->add_option("--config", config_path)->required();
    teacher->add_option("--substeps", substeps);
    teacher->add_option("--n", n)->required();
    teacher->add_option("--seed", seed)->required();
    teacher->add_option("--out", out_path)->required();

    auto* eval = app.add_subcommand("eval", "metrics between two sample csv files");
    eval->add_option("--samples", samples_path)->required();
    eval->add_option("--reference", reference_path)->required();
    eval->add_flag("--paired", paired, "inputs are seed-paired; adds endpoint mse");
    eval->add_option("--out", out_path)->required();
    eval->add_option("--projections", n_projections);
    eval->add_option("--seed", seed);

    auto* toyfit = app.add_subcommand("toyfit", "fit a GM policy directly to one teacher trajectory");
    toyfit->add_option("--config", config_path)->required();
    toyfit->add_option("--out", out_path)->required();
    toyfit->add_option("--k", k);
    toyfit->add_option("--l", l);
    toyfit->add_option("--c", c_dim);
    toyfit->add_option("--n-targets", n_targets);
    toyfit->add_option("--iters", iters);
    toyfit->add_option("--lr", lr);
    toyfit->add_option("--cond", cond);
    toyfit->add_option("--seed", seed);

    auto* plot = app.add_subcommand("plot", "2d scatter svg of sample csv files");
    plot->add_option("--samples", samples_path)->required();
    plot->add_option("--overlay", overlay_path);
    plot->add_option("--out", out_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, resume);
        if (sample->parsed())
            return cmd_sample(ckpt_path, nfe, n, seed, out_path, traj_dir, shift_m, substep, final_step_scale,
                              temperature, temperature_on_final, use_raw_params);
        if (teacher->parsed()) return cmd_teacher_sample(config_path, substeps, n, seed, out_path);
        if (eval->parsed()) return cmd_eval(samples_path, reference_path, paired, out_path, n_projections, seed);
        if (toyfit->parsed()) return cmd_toyfit(config_path, out_path, k, l, c_dim, n_targets, iters, lr, cond, seed);
        if (plot->parsed()) return cmd_plot(samples_path, overlay_path, out_path);
    } catch (const fp::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
