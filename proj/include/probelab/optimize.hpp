#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace probelab::optimize {

// Returns f(x) and writes the gradient into `grad` (already sized).
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
    std::size_t max_iterations = 500;
    double grad_tol = 1e-6;  // on the Euclidean gradient norm
    std::size_t memory = 10;
};

struct LbfgsResult {
    Eigen::VectorXd x;
    std::size_t iterations = 0;
    std::vector<double> loss_history;  // f at x0 and after every accepted step
    double grad_norm = 0.0;
    bool converged = false;
};

/// Limited-memory BFGS with a backtracking Armijo line search. Every
/// accepted step strictly decreases f, so loss_history is non-increasing.
LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& opts);

}  // namespace probelab::optimize
