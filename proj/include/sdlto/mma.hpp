#ifndef SDLTO_MMA_HPP_
#define SDLTO_MMA_HPP_

// Method of Moving Asymptotes for one objective and one linear(ized)
// constraint, plus the classical optimality-criteria update used to
// cross-check it.
//
// The objective is replaced by the usual separable MMA approximation
//   sum_i p_i / (U_i - x_i) + q_i / (x_i - L_i)
// and the constraint by its linearization, which is exact for the volume
// constraint. The subproblem is solved through its one-dimensional dual:
// for a fixed multiplier every variable decouples, and the multiplier is
// found by bisection on the constraint value.

#include "errors.hpp"
#include "grid_fem.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sdlto {

struct ConstraintSpec
{
    double volume_target = 0.5;
    double move_limit = 0.2;
    bool equality = true;  // false: g <= 0, true: g == 0

    void validate () const
    {
        if (!(volume_target > 0.0 && volume_target < 1.0)) {
            throw std::invalid_argument("volume target must lie in (0, 1)");
        }
        if (!(move_limit > 0.0 && move_limit <= 1.0)) {
            throw std::invalid_argument("move limit must lie in (0, 1]");
        }
    }
};

struct MmaSettings
{
    double asymptote_init = 0.5;
    double shrink = 0.7;        // on oscillation
    double expand = 1.2;        // on monotone progress
    double min_offset = 0.01;   // asymptote distance bounds, times range
    double max_offset = 10.0;
    double lower_bound = 0.0;
    double upper_bound = 1.0;
};

struct MmaState
{
    Vector lower;
    Vector upper;
    Vector x_prev;
    Vector x_prev2;
    int iteration = 0;
};

// Value and gradient of  mean(x) - target.
struct LinearConstraint
{
    double value;
    Vector gradient;
};

[[nodiscard]] inline LinearConstraint volume_constraint (Vector const& x, double target)
{
    auto const n = x.size();
    return {x.mean() - target, Vector::Constant(n, 1.0 / double(n))};
}


namespace detail {

// argmin over [lo, hi] of  p/(U-x) + q/(x-L) + a*x ; strictly convex.
inline double mma_argmin (double p, double q, double a, double low, double upp, double lo, double hi)
{
    auto dphi = [&](double x) {
        double const du = upp - x;
        double const dl = x - low;
        return p / (du * du) - q / (dl * dl) + a;
    };
    if (dphi(lo) >= 0.0) return lo;
    if (dphi(hi) <= 0.0) return hi;
    double const sp = std::sqrt(p);
    double const sq = std::sqrt(q);
    double x = std::clamp((sp * low + sq * upp) / (sp + sq), lo, hi);
    double a_lo = lo;
    double a_hi = hi;
    for (int it = 0; it < 100; ++it) {
        double const d = dphi(x);
        if (d > 0.0) a_hi = x; else a_lo = x;
        double const du = upp - x;
        double const dl = x - low;
        double const dd = 2.0 * p / (du * du * du) + 2.0 * q / (dl * dl * dl);
        double next = x - d / dd;
        if (!(next > a_lo && next < a_hi)) next = 0.5 * (a_lo + a_hi);
        if (std::abs(next - x) <= 1e-15 * (1.0 + std::abs(x)) || a_hi - a_lo <= 1e-15) {
            return next;
        }
        x = next;
    }
    return x;
}

}  // namespace detail


// One MMA step. `g`/`dgdx` describe the constraint g(x) <= 0 (or == 0 when
// spec.equality); the box is [lower_bound, upper_bound] intersected with
// the move limit around x.
[[nodiscard]] inline Vector
mma_update (Vector const& x, Vector const& dfdx, double g, Vector const& dgdx,
            MmaState& state, ConstraintSpec const& spec, MmaSettings const& cfg = {})
{
    auto const n = x.size();
    if (dfdx.size() != n || dgdx.size() != n) {
        throw std::invalid_argument("gradient length does not match the design");
    }
    if (!dfdx.allFinite() || !dgdx.allFinite() || !std::isfinite(g)) {
        throw NonFiniteError("nonfinite objective or constraint gradient passed to MMA");
    }
    double const range = cfg.upper_bound - cfg.lower_bound;

    // asymptotes
    if (state.iteration < 2 || state.lower.size() != n) {
        state.lower = x.array() - cfg.asymptote_init * range;
        state.upper = x.array() + cfg.asymptote_init * range;
    }
    else {
        for (Eigen::Index i = 0; i < n; ++i) {
            double const trend = (x[i] - state.x_prev[i]) * (state.x_prev[i] - state.x_prev2[i]);
            double const f = trend < 0.0 ? cfg.shrink : (trend > 0.0 ? cfg.expand : 1.0);
            double lo = x[i] - f * (state.x_prev[i] - state.lower[i]);
            double up = x[i] + f * (state.upper[i] - state.x_prev[i]);
            lo = std::clamp(lo, x[i] - cfg.max_offset * range, x[i] - cfg.min_offset * range);
            up = std::clamp(up, x[i] + cfg.min_offset * range, x[i] + cfg.max_offset * range);
            state.lower[i] = lo;
            state.upper[i] = up;
        }
    }
    state.x_prev2 = state.x_prev.size() == n ? state.x_prev : x;
    state.x_prev = x;
    ++state.iteration;

    double const scale = dfdx.cwiseAbs().maxCoeff();
    if (scale == 0.0) return x;

    Vector alpha(n), beta(n), p(n), q(n);
    double const reg = 1e-5 / range;
    for (Eigen::Index i = 0; i < n; ++i) {
        double const lo = state.lower[i];
        double const up = state.upper[i];
        alpha[i] = std::max({cfg.lower_bound, lo + 0.1 * (x[i] - lo), x[i] - spec.move_limit});
        beta[i] = std::min({cfg.upper_bound, up - 0.1 * (up - x[i]), x[i] + spec.move_limit});
        double const df = dfdx[i] / scale;
        double const dpos = std::max(df, 0.0);
        double const dneg = std::max(-df, 0.0);
        p[i] = (up - x[i]) * (up - x[i]) * (1.001 * dpos + 0.001 * dneg + reg);
        q[i] = (x[i] - lo) * (x[i] - lo) * (0.001 * dpos + 1.001 * dneg + reg);
    }

    Vector xn(n);
    double const base = g - dgdx.dot(x);
    auto primal = [&](double lambda) {
        for (Eigen::Index i = 0; i < n; ++i) {
            xn[i] = detail::mma_argmin(p[i], q[i], lambda * dgdx[i], state.lower[i], state.upper[i],
                                       alpha[i], beta[i]);
        }
        return base + dgdx.dot(xn);
    };

    double const h0 = primal(0.0);
    if (h0 == 0.0 || (!spec.equality && h0 <= 0.0)) return xn;

    double const gmax = dgdx.cwiseAbs().maxCoeff();
    if (gmax == 0.0) {
        throw DualSolveError("constraint violated with zero constraint gradient", 0.0, 0.0);
    }
    // h is nonincreasing in lambda; search the side where its sign changes
    double const dir = h0 > 0.0 ? 1.0 : -1.0;

    // the move-limited box may not reach the constraint at all; then take
    // the point of the box closest to feasibility
    Vector const free_choice = xn;
    for (Eigen::Index i = 0; i < n; ++i) {
        double const toward = dir * dgdx[i];
        if (toward > 0.0) xn[i] = alpha[i];
        else if (toward < 0.0) xn[i] = beta[i];
    }
    if (dir * (base + dgdx.dot(xn)) >= 0.0) return xn;
    xn = free_choice;

    double inner = 0.0;
    double outer = dir / gmax;
    int expansions = 0;
    while (dir * primal(outer) > 0.0) {
        inner = outer;
        outer *= 2.0;
        if (++expansions > 200) {
            throw DualSolveError("MMA dual search could not bracket the multiplier",
                                 std::min(inner, outer), std::max(inner, outer));
        }
    }
    double lo = std::min(inner, outer);
    double hi = std::max(inner, outer);
    for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(std::abs(lo), std::abs(hi)); ++it) {
        double const mid = 0.5 * (lo + hi);
        double const h = primal(mid);
        if (h == 0.0) return xn;
        if (h > 0.0) lo = mid; else hi = mid;
    }
    double const err_lo = std::abs(primal(lo));
    double const err_hi = std::abs(primal(hi));
    if (err_lo < err_hi) primal(lo);
    return xn;
}


// Optimality-criteria update with a bisected multiplier; enforces
// mean(x_new) == volume_target.
[[nodiscard]] inline Vector
oc_update (Vector const& x, Vector const& dfdx, double volume_target, double move)
{
    auto const n = x.size();
    if (dfdx.size() != n) {
        throw std::invalid_argument("gradient length does not match the design");
    }
    if (dfdx.maxCoeff() > 0.0) {
        throw std::invalid_argument("optimality criteria needs nonpositive sensitivities");
    }
    double const scale = dfdx.cwiseAbs().maxCoeff();
    Vector const be = scale > 0.0 ? Vector(-dfdx / scale) : Vector(Vector::Zero(n));
    Vector const lo = (x.array() - move).max(0.0);
    Vector const hi = (x.array() + move).min(1.0);

    Vector xn(n);
    auto candidate = [&](double lambda) {
        xn = (x.array() * (be.array() / lambda).sqrt()).max(lo.array()).min(hi.array());
        return xn.mean();
    };
    double l1 = 0.0;
    double l2 = 1e9;
    if (candidate(l2) > volume_target || hi.mean() < volume_target) {
        throw DualSolveError("optimality criteria bracket does not contain the volume target", l1, l2);
    }
    while ((l2 - l1) > 1e-14 * (l1 + l2)) {
        double const mid = 0.5 * (l1 + l2);
        if (candidate(mid) > volume_target) l1 = mid; else l2 = mid;
    }
    candidate(0.5 * (l1 + l2));
    return xn;
}

}  // namespace sdlto

#endif
