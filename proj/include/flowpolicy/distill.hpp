#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "flowpolicy/gm.hpp"
#include "flowpolicy/ode.hpp"
#include "flowpolicy/rng.hpp"
#include "flowpolicy/schedule.hpp"
#include "flowpolicy/student.hpp"
#include "flowpolicy/teacher.hpp"

namespace flowpolicy {

struct MixingConfig {
    enum class Mode { Off, Scheduled } mode = Mode::Off;
    long decay_iterations = 0;
};

struct TrainConfig {
    int nfe = 1;
    double shift_m = 1.0;
    double lr = 1e-3;
    int batch_size = 64;
    long iterations = 10000;
    int n_intermediate = 2;          // intermediate states per student forward
    double window_dtau = 3.0 / 128;  // raw micro-window size; 0 = instantaneous loss
    double dropout_rate = 0.05;
    enum class Mode { Simple, DataDependent, DataFree } mode = Mode::Simple;
    MixingConfig mixing;
    int n_teacher_steps = 4;          // teacher steps per interval in mixed mode
    long warm_start_iterations = 0;   // behavior cloning for the first W iterations
    double final_step_scale = 1.0;
    long eval_every = 1000;
    std::uint64_t seed = 0;

    void validate(const StudentConfig& student) const {
        if (nfe < 1) throw std::invalid_argument("train: nfe must be >= 1");
        if (n_intermediate < 1) throw std::invalid_argument("train: n_intermediate must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        if (iterations < 0) throw std::invalid_argument("train: iterations must be >= 0");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw std::invalid_argument("train: dropout_rate outside [0,1)");
        if (dropout_rate > 0.0 && student.head != StudentConfig::Head::Gm)
            throw std::invalid_argument("train: dropout requires the GM head");
        if (window_dtau < 0.0) throw std::invalid_argument("train: window_dtau must be >= 0");
        if (mixing.mode == MixingConfig::Mode::Scheduled) {
            if (mixing.decay_iterations < 1 || mixing.decay_iterations > iterations)
                throw std::invalid_argument("train: decay_iterations must be in [1, iterations]");
        }
        if ((mixing.mode != MixingConfig::Mode::Off || warm_start_iterations > 0) && mode == Mode::DataFree)
            throw std::invalid_argument("train: trajectory mixing is not supported in data-free mode");
        if (n_teacher_steps < 1) throw std::invalid_argument("train: n_teacher_steps must be >= 1");
    }
};

// Partition of [tau_dst, tau_src] into teacher- and policy-tagged pieces.
// Teacher-tagged lengths sum to ratio * (tau_src - tau_dst); all boundaries
// are randomly placed under that constraint.
struct MixPlan {
    double teacher_ratio = 0.0;
    struct Piece {
        double tau_hi, tau_lo;
        bool teacher;
    };
    std::vector<Piece> pieces;
};

inline MixPlan make_mix_plan(double teacher_ratio, double tau_src, double tau_dst, int n_teacher_steps,
                             Rng& rng) {
    if (!(teacher_ratio >= 0.0 && teacher_ratio <= 1.0))
        throw std::invalid_argument("mix plan: ratio outside [0,1]");
    if (n_teacher_steps < 1) throw std::invalid_argument("mix plan: n_teacher_steps must be >= 1");
    if (!(tau_src > tau_dst)) throw std::invalid_argument("mix plan: empty interval");
    MixPlan plan;
    plan.teacher_ratio = teacher_ratio;
    double total = tau_src - tau_dst;
    if (teacher_ratio == 0.0) {
        plan.pieces.push_back({tau_src, tau_dst, false});
        return plan;
    }
    double teacher_len = teacher_ratio * total;
    double gap_len = total - teacher_len;
    int n = n_teacher_steps;
    // n teacher-piece lengths via sorted uniform cuts of teacher_len.
    Vec cuts(static_cast<std::size_t>(n) + 1);
    cuts[0] = 0.0;
    cuts[static_cast<std::size_t>(n)] = teacher_len;
    for (int i = 1; i < n; ++i) cuts[static_cast<std::size_t>(i)] = rng.uniform(0.0, teacher_len);
    std::sort(cuts.begin(), cuts.end());
    // n+1 gap lengths via sorted uniform cuts of gap_len.
    Vec gcuts(static_cast<std::size_t>(n) + 2);
    gcuts[0] = 0.0;
    gcuts[static_cast<std::size_t>(n) + 1] = gap_len;
    for (int i = 1; i <= n; ++i) gcuts[static_cast<std::size_t>(i)] = gap_len > 0.0 ? rng.uniform(0.0, gap_len) : 0.0;
    std::sort(gcuts.begin(), gcuts.end());

    double tau = tau_src;
    for (int i = 0; i <= n; ++i) {
        double gap = gcuts[static_cast<std::size_t>(i) + 1] - gcuts[static_cast<std::size_t>(i)];
        if (gap > 0.0) {
            plan.pieces.push_back({tau, tau - gap, false});
            tau -= gap;
        }
        if (i < n) {
            double seg = cuts[static_cast<std::size_t>(i) + 1] - cuts[static_cast<std::size_t>(i)];
            if (seg > 0.0) {
                plan.pieces.push_back({tau, tau - seg, true});
                tau -= seg;
            }
        }
    }
    if (!plan.pieces.empty()) plan.pieces.back().tau_lo = tau_dst;
    return plan;
}

struct StepReport {
    long iteration = 0;
    double loss = 0.0;
    double mix_ratio = 0.0;
    long teacher_queries = 0;
    std::vector<double> segment_weights;  // weights recorded for element 0
};

// pi-ID trainer. Owns the train state; teacher queries and rollouts are pure
// given the per-(iteration, element, purpose) RNG streams, so full runs are
// reproducible bit-for-bit from the seed.
class Trainer {
public:
    // Instrumentation hook: called with the learner policy and the detached
    // (possibly dropout-masked) policy for every processed segment.
    using Observer = std::function<void(const PolicyHandle& learner, const PolicyHandle& detached)>;

    Trainer(StudentConfig student_cfg, TrainConfig train_cfg, RolloutConfig rollout_cfg, TeacherSpec teacher,
            ToyDataset dataset = {})
        : scfg_(std::move(student_cfg)),
          tcfg_(std::move(train_cfg)),
          rcfg_(std::move(rollout_cfg)),
          teacher_(std::move(teacher)),
          dataset_(std::move(dataset)),
          grid_(make_step_grid(tcfg_.nfe, tcfg_.final_step_scale)) {
        scfg_.validate();
        tcfg_.validate(scfg_);
        rcfg_.shift_m = tcfg_.shift_m;
        rcfg_.segment_temperatures.clear();  // no temperature during training
        if (tcfg_.mode == TrainConfig::Mode::DataDependent && dataset_.set.count < 1)
            throw std::invalid_argument("train: data-dependent mode needs a dataset");
        if (scfg_.n_classes > 0 && scfg_.n_classes != static_cast<int>(teacher_.class_ids.size()))
            throw std::invalid_argument("train: student n_classes must match the teacher class count");
        state_ = init_train_state(scfg_, tcfg_.seed);
    }

    const StepGrid& grid() const { return grid_; }
    const TrainState& state() const { return state_; }
    TrainState& state() { return state_; }
    const StudentConfig& student_config() const { return scfg_; }
    const TrainConfig& train_config() const { return tcfg_; }
    const TeacherSpec& teacher() const { return teacher_; }

    double mix_ratio(long iter) const {
        if (iter < tcfg_.warm_start_iterations) return 1.0;
        if (tcfg_.mixing.mode != MixingConfig::Mode::Scheduled) return 0.0;
        double x = static_cast<double>(iter - tcfg_.warm_start_iterations) /
                   static_cast<double>(tcfg_.mixing.decay_iterations);
        return std::max(0.0, 1.0 - x);
    }

    StepReport step() {
        long iter = state_.iteration;  // 0-based during collection
        StepReport rep;
        rep.mix_ratio = mix_ratio(iter);
        std::vector<MatchItem> items;
        teacher_queries_ = 0;
        try {
            for (int b = 0; b < tcfg_.batch_size; ++b) collect_element(iter, b, rep, items);
            rep.loss = student_loss_and_grad(scfg_, state_.params, items, tcfg_.shift_m, grad_,
                                             tcfg_.batch_size);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string("train step aborted: ") + e.what(), iter);
        }
        rep.teacher_queries = teacher_queries_;
        state_.iteration += 1;
        adam_step(state_, grad_, tcfg_.lr);
        ema_update(state_);
        rep.iteration = state_.iteration;
        return rep;
    }

    // Matching loss on a held-out batch keyed by eval_tag; no optimizer update.
    double eval_loss(long eval_tag) {
        long iter = -1000000 - eval_tag;  // disjoint from training iterations
        StepReport rep;
        rep.mix_ratio = 0.0;
        std::vector<MatchItem> items;
        teacher_queries_ = 0;
        for (int b = 0; b < tcfg_.batch_size; ++b) collect_element_onpolicy(iter, b, rep, items);
        Vec tmp;
        return student_loss_and_grad(scfg_, state_.params, items, tcfg_.shift_m, tmp, tcfg_.batch_size);
    }

    Observer observer;

private:
    // Snap tau' up to the grid: tau_src = min{tau in S : tau >= tau'}.
    int snap_segment(double tau_prime) const {
        for (int seg = grid_.segments() - 1; seg >= 0; --seg)
            if (grid_.tau_hi(seg) >= tau_prime) return seg;
        return 0;
    }

    int draw_cond_index(long iter, int b) {
        if (teacher_.class_ids.size() <= 1) return 0;
        Rng r = substream(tcfg_.seed, RngUse::Condition, static_cast<std::uint64_t>(iter), b);
        return static_cast<int>(r.uniform_index(teacher_.class_ids.size()));
    }

    int cond_index_for_class(int class_id) const {
        for (std::size_t i = 0; i < teacher_.class_ids.size(); ++i)
            if (teacher_.class_ids[i] == class_id) return static_cast<int>(i);
        throw std::invalid_argument("train: dataset label is not a teacher class");
    }

    Vec teacher_query(std::span<const double> x, double t, int cond_index) {
        ++teacher_queries_;
        return teacher_velocity_cfg(teacher_, x, std::max(t, kTimeFloor), teacher_.class_ids[static_cast<std::size_t>(cond_index)]);
    }

    PolicyHandle make_detached(const PolicyHandle& learner, long iter, int b, int seg) {
        PolicyHandle detached = learner;
        if (tcfg_.dropout_rate > 0.0 && learner.kind == PolicyHandle::Kind::Gm) {
            Rng r = substream(tcfg_.seed, RngUse::Dropout, static_cast<std::uint64_t>(iter), b, seg);
            detached.gm = gm_dropout(learner.gm, tcfg_.dropout_rate, r);
        }
        if (observer) observer(learner, detached);
        return detached;
    }

    // One on-policy segment: n_intermediate independent detached rollouts from
    // x_src, each matched to the teacher (instantaneous or micro-window).
    MatchItem segment_onpolicy(long iter, int b, int seg, const Vec& x_src, double tau_src, double tau_dst,
                               int cond_index, double weight, PolicyHandle* detached_out = nullptr) {
        PolicyHandle learner =
            student_forward(scfg_, state_.params, x_src, tau_src, tau_dst, tcfg_.shift_m, cond_index);
        PolicyHandle detached = make_detached(learner, iter, b, seg);
        MatchItem item;
        item.x_src = x_src;
        item.tau_src = tau_src;
        item.tau_dst = tau_dst;
        item.cond = cond_index;
        for (int s = 0; s < tcfg_.n_intermediate; ++s) {
            Rng r = substream(tcfg_.seed, RngUse::Intermediate, static_cast<std::uint64_t>(iter), b, seg, s);
            double tau_i = r.uniform(tau_dst, tau_src);
            Vec x_i = rollout_policy(detached, x_src, tau_src, tau_i, rcfg_).endpoint;
            MatchPoint pt;
            pt.t = std::max(shift_time(tau_i, tcfg_.shift_m), kTimeFloor);
            pt.u_target = teacher_query(x_i, pt.t, cond_index);
            pt.weight = weight;
            if (tcfg_.window_dtau > 0.0)
                pt.window = micro_window_states(detached, x_i, tau_i, tcfg_.window_dtau, tau_dst, rcfg_);
            pt.x = std::move(x_i);
            item.points.push_back(std::move(pt));
        }
        if (detached_out) *detached_out = std::move(detached);
        return item;
    }

    // Mixed segment: per plan, teacher pieces advance with one coarse Euler
    // step of the queried teacher velocity and contribute an average-velocity
    // match; policy pieces advance with the detached rollout.
    MatchItem segment_mixed(long iter, int b, int seg, const Vec& x_src, double tau_src, double tau_dst,
                            int cond_index, double weight, double ratio) {
        PolicyHandle learner =
            student_forward(scfg_, state_.params, x_src, tau_src, tau_dst, tcfg_.shift_m, cond_index);
        PolicyHandle detached = make_detached(learner, iter, b, seg);
        MatchItem item;
        item.x_src = x_src;
        item.tau_src = tau_src;
        item.tau_dst = tau_dst;
        item.cond = cond_index;
        for (int s = 0; s < tcfg_.n_intermediate; ++s) {
            Rng r = substream(tcfg_.seed, RngUse::MixPlan, static_cast<std::uint64_t>(iter), b, seg, s);
            MixPlan plan = make_mix_plan(ratio, tau_src, tau_dst, tcfg_.n_teacher_steps, r);
            Vec x = x_src;
            for (const auto& piece : plan.pieces) {
                if (piece.teacher) {
                    double t_a = std::max(shift_time(piece.tau_hi, tcfg_.shift_m), kTimeFloor);
                    MatchPoint pt;
                    pt.x = x;
                    pt.t = t_a;
                    pt.u_target = teacher_query(x, t_a, cond_index);
                    pt.weight = weight;
                    pt.window =
                        micro_window_states(detached, x, piece.tau_hi, piece.tau_hi - piece.tau_lo, piece.tau_lo, rcfg_);
                    double h = shift_time(piece.tau_hi, tcfg_.shift_m) - shift_time(piece.tau_lo, tcfg_.shift_m);
                    axpy(-h, pt.u_target, x);
                    item.points.push_back(std::move(pt));
                } else {
                    x = rollout_policy(detached, x, piece.tau_hi, piece.tau_lo, rcfg_).endpoint;
                }
            }
        }
        return item;
    }

    void collect_element_onpolicy(long iter, int b, StepReport& rep, std::vector<MatchItem>& items) {
        if (tcfg_.mode == TrainConfig::Mode::DataFree) {
            int cond_index = draw_cond_index(iter, b);
            Vec x = substream(tcfg_.seed, RngUse::Noise, static_cast<std::uint64_t>(iter), b)
                        .normal_vec(static_cast<std::size_t>(scfg_.dim));
            for (int seg = 0; seg < grid_.segments(); ++seg) {
                double tau_hi = grid_.tau_hi(seg), tau_lo = grid_.tau_lo(seg);
                double weight = tau_hi - tau_lo;
                if (b == 0) rep.segment_weights.push_back(weight);
                PolicyHandle detached;
                items.push_back(segment_onpolicy(iter, b, seg, x, tau_hi, tau_lo, cond_index, weight, &detached));
                if (seg + 1 < grid_.segments()) x = rollout_policy(detached, x, tau_hi, tau_lo, rcfg_).endpoint;
            }
            return;
        }
        auto [seg, cond_index, x_src] = single_segment_start(iter, b);
        if (b == 0) rep.segment_weights.push_back(1.0);
        items.push_back(segment_onpolicy(iter, b, seg, x_src, grid_.tau_hi(seg), grid_.tau_lo(seg), cond_index, 1.0));
    }

    void collect_element(long iter, int b, StepReport& rep, std::vector<MatchItem>& items) {
        double ratio = mix_ratio(iter);
        if (ratio <= 0.0 || tcfg_.mode == TrainConfig::Mode::DataFree) {
            collect_element_onpolicy(iter, b, rep, items);
            return;
        }
        auto [seg, cond_index, x_src] = single_segment_start(iter, b);
        if (b == 0) rep.segment_weights.push_back(1.0);
        items.push_back(
            segment_mixed(iter, b, seg, x_src, grid_.tau_hi(seg), grid_.tau_lo(seg), cond_index, 1.0, ratio));
    }

    // tau' ~ U(0,1) snapped up to the grid; x_src per mode.
    std::tuple<int, int, Vec> single_segment_start(long iter, int b) {
        Rng tr = substream(tcfg_.seed, RngUse::TauPrime, static_cast<std::uint64_t>(iter), b);
        int seg = snap_segment(tr.uniform());
        int cond_index = draw_cond_index(iter, b);
        double tau_src = grid_.tau_hi(seg);
        double t_src = shift_time(tau_src, tcfg_.shift_m);
        Vec x_src;
        if (tcfg_.mode == TrainConfig::Mode::DataDependent) {
            Rng ir = substream(tcfg_.seed, RngUse::DataIndex, static_cast<std::uint64_t>(iter), b);
            long idx = static_cast<long>(ir.uniform_index(static_cast<std::uint64_t>(dataset_.set.count)));
            auto x0 = dataset_.set.row(idx);
            if (dataset_.set.has_labels) cond_index = cond_index_for_class(dataset_.set.labels[static_cast<std::size_t>(idx)]);
            Vec eps = substream(tcfg_.seed, RngUse::DiffusionEps, static_cast<std::uint64_t>(iter), b)
                          .normal_vec(x0.size());
            x_src = forward_diffuse(x0, eps, t_src);
        } else {
            x_src = substream(tcfg_.seed, RngUse::Noise, static_cast<std::uint64_t>(iter), b)
                        .normal_vec(static_cast<std::size_t>(scfg_.dim));
            // Roll through earlier segments with detached policies.
            for (int j = 0; j < seg; ++j) {
                PolicyHandle learner = student_forward(scfg_, state_.params, x_src, grid_.tau_hi(j),
                                                       grid_.tau_lo(j), tcfg_.shift_m, cond_index);
                PolicyHandle detached = make_detached(learner, iter, b, j);
                x_src = rollout_policy(detached, x_src, grid_.tau_hi(j), grid_.tau_lo(j), rcfg_).endpoint;
            }
        }
        return {seg, cond_index, std::move(x_src)};
    }

    StudentConfig scfg_;
    TrainConfig tcfg_;
    RolloutConfig rcfg_;
    TeacherSpec teacher_;
    ToyDataset dataset_;
    StepGrid grid_;
    TrainState state_;
    Vec grad_;
    long teacher_queries_ = 0;
};

}  // namespace flowpolicy
