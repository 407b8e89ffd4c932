#ifndef SDLTO_ORCHESTRATOR_HPP_
#define SDLTO_ORCHESTRATOR_HPP_

// Optimization drivers.
//
//   run_seq_to   one FEM evaluation and one MMA step per iteration
//   run_sdl_to   simulated warm-up, then learning steps (sample around the
//                recent history, evaluate in parallel, train, take a true
//                gradient step) alternating with online steps that feed the
//                network's gradient to the optimizer without any FEM solve
//
// Step kinds in the history:
//   simulated  true gradient from one FEM solve (warm-up, Seq-TO, fallback)
//   learning   batch of samples plus the current design, network retrained
//   learned    surrogate gradient, no solve
//
// FEM accounting (checked by RunManifest::accounting_holds):
//   fem = sample_solves + learning_steps + simulated_steps + audit_solves + 1
// where the 1 is the certification solve of the final design. Seq-TO has no
// certification solve; its fem count equals the iteration count.

#include "errors.hpp"
#include "mma.hpp"
#include "simp_core.hpp"
#include "surrogate.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace sdlto {

enum class RunMode { seq, sdl };
// mma: MMA step on a scratch copy of the optimizer state, so predicted
// gradients never feed the asymptote history. mma_tracked lets them.
enum class OnlineUpdate { mma, mma_tracked, projected };
enum class StepKind { simulated, learning, learned };

[[nodiscard]] inline char const* to_string (RunMode m) noexcept
{
    return m == RunMode::seq ? "seq" : "sdl";
}

[[nodiscard]] inline char const* to_string (OnlineUpdate u) noexcept
{
    switch (u) {
        case OnlineUpdate::mma: return "mma";
        case OnlineUpdate::mma_tracked: return "mma-tracked";
        case OnlineUpdate::projected: return "projected";
    }
    return "?";
}

[[nodiscard]] inline char const* to_string (StepKind k) noexcept
{
    switch (k) {
        case StepKind::simulated: return "simulated";
        case StepKind::learning: return "learning";
        case StepKind::learned: return "learned";
    }
    return "?";
}

struct RunConfig
{
    int max_iterations = 200;
    RunMode mode = RunMode::seq;
    SamplerConfig sampler;             // seed is taken from `seed`
    double lambda_star = 0.03;
    int window = 5;
    double move_limit = 0.2;
    bool volume_equality = true;
    MmaSettings mma;
    int workers = 1;
    std::uint64_t seed = 0;
    TrainingSettings training;         // seed derived per learning step
    int relearn_every = 25;            // forced relearn after this many online steps
    int audit_every = 0;               // evaluate every k-th online step; 0 = never
    OnlineUpdate online_update = OnlineUpdate::mma;
    double fidelity_threshold = 0.9;
    double holdout_fraction = 0.2;
    bool timing = false;               // record wall times (otherwise zero)

    void validate () const
    {
        if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
        if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
        if (window < 0) throw std::invalid_argument("window must be >= 0");
        if (!(lambda_star >= 0.0 && lambda_star <= 2.0)) {
            throw std::invalid_argument("lambda* must lie in [0, 2]");
        }
        if (!(move_limit > 0.0 && move_limit <= 1.0)) {
            throw std::invalid_argument("move limit must lie in (0, 1]");
        }
        if (relearn_every < 1) throw std::invalid_argument("relearn_every must be >= 1");
        if (audit_every < 0) throw std::invalid_argument("audit_every must be >= 0");
        if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
            throw std::invalid_argument("holdout fraction must lie in (0, 1)");
        }
        sampler.validate();
    }
};

struct IterationRecord
{
    int index = 0;
    StepKind kind = StepKind::simulated;
    std::optional<double> objective;   // of the design entering this step
    double volume = 0.0;               // of the design leaving it
    double change = 0.0;               // max |x_new - x|
    long fem_solves = 0;               // cumulative
    double wall_ms = 0.0;              // cumulative, zero unless timing
};

struct LearningStepInfo
{
    int iteration = 0;
    int samples = 0;                   // drawn designs evaluated, retries included
    int failed_samples = 0;
    int attempts = 0;                  // 1, or 2 after a failed gate
    double fidelity = 0.0;             // mean held-out cosine similarity
    bool accepted = false;
    int epochs = 0;
};

struct RunManifest
{
    RunMode mode = RunMode::seq;
    int iterations = 0;
    long fem_solves = 0;
    int learning_steps = 0;
    int online_steps = 0;
    int simulated_steps = 0;
    long sample_solves = 0;
    long audit_solves = 0;
    int certification_solves = 0;
    long critical_path_fem = 0;        // solves on the sequential path with `workers`
    int workers = 1;
    double initial_objective = 0.0;
    double final_objective = 0.0;      // certified for SDL-TO, last record for Seq-TO
    double wall_ms = 0.0;
    std::vector<LearningStepInfo> learning;

    [[nodiscard]] bool accounting_holds () const noexcept
    {
        if (learning_steps + online_steps + simulated_steps != iterations) return false;
        if (mode == RunMode::seq) {
            return fem_solves == iterations && simulated_steps == iterations;
        }
        return fem_solves == sample_solves + learning_steps + simulated_steps
                             + audit_solves + certification_solves
               && certification_solves == 1;
    }
};

struct RunResult
{
    Vector design;
    std::vector<IterationRecord> history;
    RunManifest manifest;
    std::optional<GradientNet> surrogate;  // last trained network
};


//-----------------------------------------------------------------------------
struct BatchItem
{
    bool ok = false;
    Evaluation evaluation;
    std::string error;
};

// Evaluates every design on up to `workers` threads. Results keep input
// order. A failed sample is marked; fewer than half succeeding is an error.
[[nodiscard]] inline std::vector<BatchItem>
evaluate_batch (std::vector<Vector> const& designs, Evaluator const& evaluator, int workers)
{
    if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
    std::vector<BatchItem> out(designs.size());
    if (designs.empty()) return out;

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < designs.size(); i = next++) {
            try {
                out[i].evaluation = evaluator.evaluate(designs[i]);
                out[i].ok = true;
            }
            catch (std::exception const& e) {
                out[i].error = e.what();
            }
        }
    };
    auto const threads = std::min<std::size_t>(std::size_t(workers), designs.size());
    if (threads == 1) {
        work();
    }
    else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    }

    std::size_t ok = 0;
    for (auto const& r : out) ok += r.ok ? 1 : 0;
    if (2 * ok < out.size()) {
        std::string first;
        for (auto const& r : out) {
            if (!r.ok) { first = r.error; break; }
        }
        throw BatchError(std::to_string(out.size() - ok) + " of " + std::to_string(out.size())
                         + " batch evaluations failed; first: " + first);
    }
    return out;
}


namespace detail {

class Stopwatch
{
public:
    explicit Stopwatch (bool on): on_{on}, start_{std::chrono::steady_clock::now()} {}

    [[nodiscard]] double ms () const
    {
        if (!on_) return 0.0;
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    bool on_;
    std::chrono::steady_clock::time_point start_;
};

// Shift-and-clip projection of y onto {alpha <= x <= beta, mean(x) = target}.
inline Vector project_volume (Vector const& y, Vector const& alpha, Vector const& beta, double target)
{
    auto at = [&](double s) { return Vector((y.array() + s).max(alpha.array()).min(beta.array())); };
    if (alpha.mean() >= target) return alpha;
    if (beta.mean() <= target) return beta;
    double lo = -1.0 - (y - alpha).maxCoeff();
    double hi = 1.0 + (beta - y).maxCoeff();
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        double const mid = 0.5 * (lo + hi);
        if (at(mid).mean() < target) lo = mid; else hi = mid;
    }
    return at(0.5 * (lo + hi));
}

class Stepper
{
public:
    Stepper (RunConfig const& cfg, double volume_target):
        cfg_{cfg},
        spec_{volume_target, cfg.move_limit, cfg.volume_equality}
    {
        spec_.validate();
    }

    [[nodiscard]] Vector mma (Vector const& x, Vector const& dfdx)
    {
        auto const c = volume_constraint(x, spec_.volume_target);
        return mma_update(x, dfdx, c.value, c.gradient, state_, spec_, cfg_.mma);
    }

    // step on a scratch copy of the optimizer state
    [[nodiscard]] Vector mma_detached (Vector const& x, Vector const& dfdx) const
    {
        auto const c = volume_constraint(x, spec_.volume_target);
        MmaState scratch = state_;
        return mma_update(x, dfdx, c.value, c.gradient, scratch, spec_, cfg_.mma);
    }

    // normalized steepest descent by one move limit, projected onto the
    // move box and the volume constraint
    [[nodiscard]] Vector projected (Vector const& x, Vector const& dfdx) const
    {
        double const scale = dfdx.cwiseAbs().maxCoeff();
        if (scale == 0.0) return x;
        Vector const alpha = (x.array() - spec_.move_limit).max(cfg_.mma.lower_bound);
        Vector const beta = (x.array() + spec_.move_limit).min(cfg_.mma.upper_bound);
        Vector const y = x - (spec_.move_limit / scale) * dfdx;
        return project_volume(y, alpha, beta, spec_.volume_target);
    }

private:
    RunConfig const& cfg_;
    ConstraintSpec spec_;
    MmaState state_;
};

template <class F>
decltype(auto) at_iteration (int k, F&& f)
{
    try {
        return f();
    }
    catch (Error const& e) {
        throw Error("iteration " + std::to_string(k) + ": " + e.what());
    }
}

}  // namespace detail


//-----------------------------------------------------------------------------
[[nodiscard]] inline RunResult run_seq_to (ProblemSpec const& problem, RunConfig const& cfg)
{
    cfg.validate();
    Evaluator const ev{problem};
    detail::Stepper stepper{cfg, problem.volume_fraction};
    detail::Stopwatch const clock{cfg.timing};

    RunResult res;
    res.manifest.mode = RunMode::seq;
    res.manifest.workers = cfg.workers;
    Vector x = Vector::Constant(ev.num_elements(), problem.volume_fraction);
    long fem = 0;
    for (int k = 0; k < cfg.max_iterations; ++k) {
        auto const e = detail::at_iteration(k, [&] { return ev.evaluate(x); });
        ++fem;
        Vector xn = detail::at_iteration(k, [&] { return stepper.mma(x, e.gradient); });
        IterationRecord r;
        r.index = k;
        r.kind = StepKind::simulated;
        r.objective = e.objective;
        r.volume = xn.mean();
        r.change = (xn - x).cwiseAbs().maxCoeff();
        r.fem_solves = fem;
        r.wall_ms = clock.ms();
        res.history.push_back(r);
        x = std::move(xn);
    }
    auto& m = res.manifest;
    m.iterations = cfg.max_iterations;
    m.simulated_steps = cfg.max_iterations;
    m.fem_solves = fem;
    m.critical_path_fem = fem;
    m.initial_objective = *res.history.front().objective;
    m.final_objective = *res.history.back().objective;
    m.wall_ms = clock.ms();
    res.design = std::move(x);
    return res;
}


[[nodiscard]] inline RunResult run_sdl_to (ProblemSpec const& problem, RunConfig const& cfg)
{
    cfg.validate();
    Evaluator const ev{problem};
    detail::Stepper stepper{cfg, problem.volume_fraction};
    detail::Stopwatch const clock{cfg.timing};
    int const n = ev.num_elements();

    RunResult res;
    auto& m = res.manifest;
    m.mode = RunMode::sdl;
    m.workers = cfg.workers;

    Vector x = Vector::Constant(n, problem.volume_fraction);
    LookbackBuffer buffer{cfg.window};
    std::optional<GradientNet> net;
    Vector reference;
    int online_since_learning = 0;
    bool fallback_next = false;
    long fem = 0;
    int online_count = 0;
    auto rounds = [&](long solves) { return (solves + cfg.workers - 1) / cfg.workers; };

    for (int k = 0; k < cfg.max_iterations; ++k) {
        buffer.push(x);
        IterationRecord r;
        r.index = k;
        Vector xn;

        bool const warm = k < cfg.window + 1;
        bool const online = !warm && !fallback_next && net
            && online_since_learning < cfg.relearn_every
            && !should_relearn(x, {cfg.lambda_star, reference});

        if (warm || fallback_next) {
            auto const e = detail::at_iteration(k, [&] { return ev.evaluate(x); });
            ++fem;
            ++m.critical_path_fem;
            ++m.simulated_steps;
            r.kind = StepKind::simulated;
            r.objective = e.objective;
            xn = detail::at_iteration(k, [&] { return stepper.mma(x, e.gradient); });
            fallback_next = false;
        }
        else if (online) {
            Vector const g = detail::at_iteration(k, [&] { return net->predict(x); });
            r.kind = StepKind::learned;
            ++m.online_steps;
            ++online_since_learning;
            ++online_count;
            if (cfg.audit_every > 0 && online_count % cfg.audit_every == 0) {
                r.objective = detail::at_iteration(k, [&] { return ev.evaluate(x).objective; });
                ++fem;
                ++m.audit_solves;
            }
            xn = detail::at_iteration(k, [&] {
                switch (cfg.online_update) {
                    case OnlineUpdate::mma_tracked: return stepper.mma(x, g);
                    case OnlineUpdate::projected: return stepper.projected(x, g);
                    case OnlineUpdate::mma: break;
                }
                return stepper.mma_detached(x, g);
            });
        }
        else {
            // learning step
            r.kind = StepKind::learning;
            LearningStepInfo info;
            info.iteration = k;
            int const step = m.learning_steps++;
            auto const env = envelope(buffer);

            Evaluation current;
            std::vector<TrainingPair> fit, held;
            for (int attempt = 0; attempt < 2; ++attempt) {
                SamplerConfig sc = cfg.sampler;
                sc.seed = cfg.seed;
                std::vector<Vector> batch;
                if (attempt == 0) {
                    batch.push_back(x);
                    batch.push_back(env.midpoint());
                    sc.n_samples = cfg.sampler.n_samples - 1;
                }
                else {
                    sc.n_samples = cfg.sampler.n_samples;
                }
                if (sc.n_samples > 0) {
                    auto draws = draw_samples(env, sc, std::uint64_t(2 * step + attempt));
                    for (auto& d : draws) batch.push_back(std::move(d));
                }
                auto const results = detail::at_iteration(k, [&] { return evaluate_batch(batch, ev, cfg.workers); });
                fem += long(batch.size());
                m.critical_path_fem += rounds(long(batch.size()));
                std::size_t first_sample = 0;
                if (attempt == 0) {
                    if (!results[0].ok) {
                        throw Error("iteration " + std::to_string(k) + ": current design failed: " + results[0].error);
                    }
                    current = results[0].evaluation;
                    first_sample = 1;
                    fit.push_back({x, current.gradient});
                }
                for (std::size_t i = first_sample; i < batch.size(); ++i) {
                    ++info.samples;
                    if (!results[i].ok) { ++info.failed_samples; continue; }
                    fit.push_back({batch[i], results[i].evaluation.gradient});
                }

                // hold out the most recent fraction of the drawn samples
                std::vector<TrainingPair> all = fit;
                all.insert(all.end(), held.begin(), held.end());
                int const drawn = int(all.size()) - 1;
                int const n_hold = std::clamp(int(std::lround(cfg.holdout_fraction * drawn)), 1, std::max(1, drawn - 1));
                held.assign(all.end() - n_hold, all.end());
                fit.assign(all.begin(), all.end() - n_hold);

                TrainingSettings ts = cfg.training;
                ts.seed = cfg.seed + 7919u * std::uint64_t(2 * step + attempt + 1);
                TrainingReport rep;
                GradientNet trained = [&] {
                    if (fit.size() < 2) {
                        // a single pair cannot be standardized; duplicate it
                        std::vector<TrainingPair> two{fit.front(), fit.front()};
                        return train(two, GradientNet::for_design_size(n, ts.hidden, ts.seed), ts, &rep);
                    }
                    return train(fit, GradientNet::for_design_size(n, ts.hidden, ts.seed), ts, &rep);
                }();
                double cos = 0.0;
                for (auto const& h : held) cos += cosine_similarity(trained.predict(h.design), h.gradient);
                cos /= double(held.size());
                info.attempts = attempt + 1;
                info.fidelity = cos;
                info.epochs = rep.epochs_run;
                if (cos >= cfg.fidelity_threshold) {
                    info.accepted = true;
                    net = std::move(trained);
                    break;
                }
            }
            m.sample_solves += info.samples;
            r.objective = current.objective;
            if (info.accepted) {
                reference = x;
                online_since_learning = 0;
            }
            else {
                net.reset();
                fallback_next = true;
            }
            m.learning.push_back(info);
            xn = detail::at_iteration(k, [&] { return stepper.mma(x, current.gradient); });
        }

        r.volume = xn.mean();
        r.change = (xn - x).cwiseAbs().maxCoeff();
        r.fem_solves = fem;
        r.wall_ms = clock.ms();
        res.history.push_back(r);
        x = std::move(xn);
    }

    auto const final_eval = detail::at_iteration(cfg.max_iterations, [&] { return ev.evaluate(x); });
    ++fem;
    ++m.critical_path_fem;
    m.certification_solves = 1;
    m.iterations = cfg.max_iterations;
    m.fem_solves = fem;
    m.initial_objective = *res.history.front().objective;
    m.final_objective = final_eval.objective;
    m.wall_ms = clock.ms();
    res.design = std::move(x);
    res.surrogate = std::move(net);
    return res;
}

[[nodiscard]] inline RunResult run (ProblemSpec const& problem, RunConfig const& cfg)
{
    return cfg.mode == RunMode::seq ? run_seq_to(problem, cfg) : run_sdl_to(problem, cfg);
}

}  // namespace sdlto

#endif
