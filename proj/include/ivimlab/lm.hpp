#pragma once

// Bounded Levenberg-Marquardt least squares.
//
// Bounds are never enforced by clamping. Each parameter is mapped from an
// unconstrained internal coordinate through a strictly monotone transform,
// so every iterate lies inside its range by construction. The Jacobian is a
// forward-difference approximation taken in the internal coordinates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivimlab/error.hpp"

namespace ivimlab::lm {

struct Transform {
    enum class Kind { Identity, Log, Logistic, OffsetLog };

    Kind kind = Kind::Identity;
    double lo = 0.0;  // Logistic lower bound; OffsetLog floor
    double hi = 1.0;  // Logistic upper bound

    static Transform identity() { return {}; }
    static Transform positive() { return {Kind::Log, 0.0, 0.0}; }
    static Transform logistic(double lo, double hi) {
        if (!(hi > lo)) throw ArgumentError("logistic transform needs lo < hi");
        return {Kind::Logistic, lo, hi};
    }
    static Transform at_least(double floor) { return {Kind::OffsetLog, floor, 0.0}; }

    // Internal coordinate -> parameter.
    double forward(double u) const {
        switch (kind) {
            case Kind::Identity: return u;
            case Kind::Log: return std::exp(u);
            case Kind::Logistic: return lo + (hi - lo) / (1.0 + std::exp(-u));
            case Kind::OffsetLog: return lo + std::exp(u);
        }
        return u;
    }

    // Parameter -> internal coordinate. Only defined strictly inside the range.
    double inverse(double theta) const {
        switch (kind) {
            case Kind::Identity: return theta;
            case Kind::Log: return std::log(theta);
            case Kind::Logistic: {
                const double t = (theta - lo) / (hi - lo);
                return std::log(t / (1.0 - t));
            }
            case Kind::OffsetLog: return std::log(theta - lo);
        }
        return theta;
    }

    bool admits(double theta) const {
        if (!std::isfinite(theta)) return false;
        switch (kind) {
            case Kind::Identity: return true;
            case Kind::Log: return theta > 0.0;
            case Kind::Logistic: return theta > lo && theta < hi;
            case Kind::OffsetLog: return theta > lo;
        }
        return false;
    }
};

// Writes the n residuals for parameters theta (untransformed) into out.
using ResidualFn = std::function<void(std::span<const double> theta, std::span<double> out)>;

struct FitProblem {
    ResidualFn residual;
    std::size_t residual_count = 0;
    std::vector<double> initial;
    std::vector<Transform> transforms;  // empty means identity for all
};

struct Options {
    int max_iter = 200;
    double gtol = 1e-10;
    double xtol = 1e-10;
    double ftol = 1e-10;
    double lambda0 = 1e-3;
    double lambda_up = 2.0;
    double lambda_down = 3.0;
    double lambda_max = 1e32;
};

enum class Termination {
    ZeroResidual,
    GradientTolerance,
    StepTolerance,
    CostTolerance,
    MaxIterations,
    Diverged,
};

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::ZeroResidual: return "zero residual";
        case Termination::GradientTolerance: return "gradient below tolerance";
        case Termination::StepTolerance: return "step below tolerance";
        case Termination::CostTolerance: return "cost reduction below tolerance";
        case Termination::MaxIterations: return "iteration limit";
        case Termination::Diverged: return "diverged";
    }
    return "?";
}

struct FitResult {
    std::vector<double> params;
    double ssr = 0.0;  // sum of squared residuals at params
    int iterations = 0;
    bool converged = false;
    Termination reason = Termination::MaxIterations;
    std::string detail;
    std::vector<double> cost_history;  // initial ssr, then each accepted step
};

namespace detail {

inline bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

class TransformedProblem {
public:
    explicit TransformedProblem(const FitProblem& p) : p_(p), theta_(p.initial.size()) {
        if (!p_.transforms.empty() && p_.transforms.size() != p_.initial.size()) {
            throw DimensionError("transform count must match parameter count");
        }
    }

    std::size_t m() const { return p_.initial.size(); }
    std::size_t n() const { return p_.residual_count; }

    const Transform& transform(std::size_t i) const {
        static const Transform identity{};
        return p_.transforms.empty() ? identity : p_.transforms[i];
    }

    std::vector<double> to_params(const Eigen::VectorXd& u) const {
        std::vector<double> theta(m());
        for (std::size_t i = 0; i < m(); ++i) theta[i] = transform(i).forward(u[static_cast<Eigen::Index>(i)]);
        return theta;
    }

    Eigen::VectorXd residual(const Eigen::VectorXd& u) {
        for (std::size_t i = 0; i < m(); ++i) theta_[i] = transform(i).forward(u[static_cast<Eigen::Index>(i)]);
        Eigen::VectorXd r(static_cast<Eigen::Index>(n()));
        p_.residual(theta_, std::span<double>(r.data(), n()));
        return r;
    }

    // Forward differences, step max(1e-6, 1e-6 |u_i|).
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& u, const Eigen::VectorXd& r0) {
        Eigen::MatrixXd J(r0.size(), u.size());
        Eigen::VectorXd up = u;
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            const double h = std::max(1e-6, 1e-6 * std::abs(u[i]));
            up[i] = u[i] + h;
            const double step = up[i] - u[i];
            J.col(i) = (residual(up) - r0) / step;
            up[i] = u[i];
        }
        return J;
    }

private:
    const FitProblem& p_;
    std::vector<double> theta_;
};

}  // namespace detail

/// Gradient of the half sum of squares, J^T r, in the internal coordinates.
/// Exposed so tests can compare it against an independent finite-difference
/// estimate of the cost gradient.
inline std::vector<double> numerical_gradient(const FitProblem& problem, std::span<const double> internal) {
    detail::TransformedProblem tp(problem);
    Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(internal.data(), static_cast<Eigen::Index>(internal.size()));
    const Eigen::VectorXd r = tp.residual(u);
    const Eigen::VectorXd g = tp.jacobian(u, r).transpose() * r;
    return {g.data(), g.data() + g.size()};
}

inline FitResult fit(const FitProblem& problem, const Options& opt = {}) {
    const std::size_t m = problem.initial.size();
    if (m == 0) throw ArgumentError("fit problem has no parameters");
    if (problem.residual_count < m) {
        throw DimensionError("least squares needs at least as many residuals (" +
                             std::to_string(problem.residual_count) + ") as parameters (" +
                             std::to_string(m) + ")");
    }
    if (!problem.residual) throw ArgumentError("fit problem has no residual function");

    detail::TransformedProblem tp(problem);
    Eigen::VectorXd u(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) {
        if (!tp.transform(i).admits(problem.initial[i])) {
            throw ArgumentError("initial parameter " + std::to_string(i) + " lies outside its transform range");
        }
        u[static_cast<Eigen::Index>(i)] = tp.transform(i).inverse(problem.initial[i]);
    }

    FitResult out;
    Eigen::VectorXd r = tp.residual(u);
    out.params = problem.initial;
    if (!detail::all_finite(r)) {
        out.reason = Termination::Diverged;
        out.detail = "non-finite residual at the initial guess";
        out.ssr = std::numeric_limits<double>::infinity();
        return out;
    }
    double ssr = r.squaredNorm();
    out.ssr = ssr;
    out.cost_history.push_back(ssr);
    if (ssr == 0.0) {
        out.converged = true;
        out.reason = Termination::ZeroResidual;
        return out;
    }

    double lambda = opt.lambda0;
    Eigen::VectorXd scale = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    auto finish = [&](Termination why, bool converged, std::string detail = {}) {
        out.params = tp.to_params(u);
        out.ssr = ssr;
        out.reason = why;
        out.converged = converged;
        out.detail = std::move(detail);
        return out;
    };

    for (int iter = 0; iter < opt.max_iter; ++iter) {
        out.iterations = iter;
        const Eigen::MatrixXd J = tp.jacobian(u, r);
        if (!J.allFinite()) return finish(Termination::Diverged, false, "non-finite Jacobian");
        const Eigen::VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() <= opt.gtol) return finish(Termination::GradientTolerance, true);

        const Eigen::MatrixXd JtJ = J.transpose() * J;
        // Marquardt scaling by the largest column norm seen so far keeps the
        // damping meaningful when a column temporarily vanishes.
        scale = scale.cwiseMax(JtJ.diagonal());
        const double floor = std::max(scale.maxCoeff(), 1.0) * 1e-12;

        bool all_rejected_nonfinite = true;
        while (true) {
            Eigen::MatrixXd A = JtJ;
            for (Eigen::Index i = 0; i < A.rows(); ++i) A(i, i) += lambda * std::max(scale[i], floor);
            const Eigen::VectorXd delta = A.ldlt().solve(-g);
            const double step_norm = delta.norm();
            const bool tiny_step = step_norm <= opt.xtol * (u.norm() + opt.xtol);

            Eigen::VectorXd trial = u + delta;
            Eigen::VectorXd r_trial = tp.residual(trial);
            const bool finite = delta.allFinite() && detail::all_finite(r_trial);
            const double ssr_trial = finite ? r_trial.squaredNorm() : std::numeric_limits<double>::infinity();

            if (finite && ssr_trial < ssr) {
                const double reduction = ssr - ssr_trial;
                u = std::move(trial);
                r = std::move(r_trial);
                const double previous = ssr;
                ssr = ssr_trial;
                out.cost_history.push_back(ssr);
                lambda = std::max(lambda / opt.lambda_down, 1e-300);
                out.iterations = iter + 1;
                if (ssr == 0.0) return finish(Termination::ZeroResidual, true);
                if (tiny_step) return finish(Termination::StepTolerance, true);
                if (reduction <= opt.ftol * previous) return finish(Termination::CostTolerance, true);
                break;
            }

            all_rejected_nonfinite = all_rejected_nonfinite && !finite;
            if (finite && tiny_step) return finish(Termination::StepTolerance, true);
            lambda *= opt.lambda_up;
            if (lambda > opt.lambda_max) {
                if (all_rejected_nonfinite) {
                    return finish(Termination::Diverged, false, "every trial step produced non-finite residuals");
                }
                return finish(Termination::StepTolerance, true, "damping saturated without further decrease");
            }
        }
    }
    return finish(Termination::MaxIterations, false);
}

}  // namespace ivimlab::lm
