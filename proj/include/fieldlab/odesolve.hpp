#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fieldlab/dual.hpp"
#include "fieldlab/tape.hpp"
#include "fieldlab/tensor.hpp"

namespace fieldlab::odesolve {

enum class Method { euler, midpoint, rk4 };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::euler: return "euler";
        case Method::midpoint: return "midpoint";
        case Method::rk4: return "rk4";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "euler") return Method::euler;
    if (s == "midpoint") return Method::midpoint;
    if (s == "rk4") return Method::rk4;
    throw std::invalid_argument("unknown solver method '" + s + "'");
}

struct SolverSpec {
    Method method = Method::rk4;
    std::int64_t steps = 16;
    double t0 = 0.0;
    double t1 = 1.0;

    double dt() const { return (t1 - t0) / static_cast<double>(steps); }
    void validate() const {
        if (steps < 1) throw std::invalid_argument("solver spec: steps must be >= 1");
        if (!(t1 > t0)) throw std::invalid_argument("solver spec: t1 must exceed t0");
    }
};

// State shims so the same stepper runs on raw tensors, tape vars, and duals.
inline Tensor ode_add(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor ode_scale(const Tensor& a, double c) { return scale(a, c); }
inline ad::Var ode_add(ad::Var a, ad::Var b) { return a + b; }
inline ad::Var ode_scale(ad::Var a, double c) { return a.tape->scale(a, c); }
inline ad::Dual ode_add(ad::Dual a, ad::Dual b) { return ad::dadd(a, b); }
inline ad::Dual ode_scale(ad::Dual a, double c) { return ad::dscale(a, c); }

inline void check_step_finite(const Tensor& h, std::int64_t step) {
    if (!h.all_finite())
        throw std::runtime_error("integrate: non-finite state at step " + std::to_string(step));
}
inline void check_step_finite(ad::Var, std::int64_t) {}   // tape ops already check
inline void check_step_finite(ad::Dual, std::int64_t) {}

/// One step of the chosen scheme from (h, t).
template <typename State, typename Field>
State step_once(Field&& f, const State& h, double t, double dt, Method method) {
    switch (method) {
        case Method::euler:
            return ode_add(h, ode_scale(f(h, t), dt));
        case Method::midpoint: {
            State k1 = f(h, t);
            State k2 = f(ode_add(h, ode_scale(k1, 0.5 * dt)), t + 0.5 * dt);
            return ode_add(h, ode_scale(k2, dt));
        }
        case Method::rk4: {
            State k1 = f(h, t);
            State k2 = f(ode_add(h, ode_scale(k1, 0.5 * dt)), t + 0.5 * dt);
            State k3 = f(ode_add(h, ode_scale(k2, 0.5 * dt)), t + 0.5 * dt);
            State k4 = f(ode_add(h, ode_scale(k3, dt)), t + dt);
            State acc = ode_add(k1, ode_add(ode_scale(k2, 2.0), ode_add(ode_scale(k3, 2.0), k4)));
            return ode_add(h, ode_scale(acc, dt / 6.0));
        }
    }
    throw std::logic_error("unreachable solver method");
}

/// Fixed-step integration returning all steps+1 states including endpoints.
template <typename State, typename Field>
std::vector<State> integrate(Field&& f, State h0, const SolverSpec& spec) {
    spec.validate();
    std::vector<State> traj;
    traj.reserve(static_cast<std::size_t>(spec.steps) + 1);
    traj.push_back(std::move(h0));
    double dt = spec.dt();
    for (std::int64_t i = 0; i < spec.steps; ++i) {
        double t = spec.t0 + dt * static_cast<double>(i);
        State next = step_once(f, traj.back(), t, dt, spec.method);
        check_step_finite(next, i + 1);
        traj.push_back(std::move(next));
    }
    return traj;
}

template <typename Field>
Tensor endpoint(Field&& f, const Tensor& h0, const SolverSpec& spec) {
    return integrate(f, h0, spec).back();
}

/// || endpoint(spec) - endpoint(spec with doubled steps) ||_2
template <typename Field>
double regrid_error(Field&& f, const Tensor& h0, const SolverSpec& spec) {
    SolverSpec fine = spec;
    fine.steps *= 2;
    return norm2(sub(endpoint(f, h0, spec), endpoint(f, h0, fine)));
}

/// Gap between one direct integration over [t0, t1] and the composition of
/// two shorter ones split at t0 + split * (t1 - t0), at matched total step
/// counts.
template <typename Field>
double semigroup_error(Field&& f, const Tensor& h0, const SolverSpec& spec, double split) {
    if (!(split > 0.0 && split < 1.0)) throw std::invalid_argument("semigroup_error: split must be in (0,1)");
    spec.validate();
    Tensor direct = endpoint(f, h0, spec);

    double tm = spec.t0 + split * (spec.t1 - spec.t0);
    auto n1 = static_cast<std::int64_t>(std::llround(split * static_cast<double>(spec.steps)));
    n1 = std::max<std::int64_t>(1, std::min(spec.steps - 1, n1));
    SolverSpec first{spec.method, n1, spec.t0, tm};
    SolverSpec second{spec.method, spec.steps - n1, tm, spec.t1};
    Tensor composed = endpoint(f, endpoint(f, h0, first), second);
    return norm2(sub(direct, composed));
}

}  // namespace fieldlab::odesolve
