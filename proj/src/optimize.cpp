#include "probelab/optimize.hpp"

#include <cmath>
#include <deque>

namespace probelab::optimize {

LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& opts) {
    constexpr double kArmijo = 1e-4;
    constexpr double kMinStep = 1e-20;

    LbfgsResult res;
    Eigen::VectorXd x = std::move(x0);
    Eigen::VectorXd g(x.size());
    double fx = f(x, g);
    res.loss_history.push_back(fx);

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;
    Eigen::VectorXd g_new(x.size()), x_new(x.size());
    std::vector<double> alpha(opts.memory);

    while (true) {
        res.grad_norm = g.norm();
        if (res.grad_norm <= opts.grad_tol) {
            res.converged = true;
            break;
        }
        if (res.iterations >= opts.max_iterations) break;

        // Two-loop recursion for the search direction.
        Eigen::VectorXd q = g;
        const std::size_t m = s_hist.size();
        for (std::size_t k = m; k-- > 0;) {
            alpha[k] = rho_hist[k] * s_hist[k].dot(q);
            q -= alpha[k] * y_hist[k];
        }
        if (m > 0) {
            q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        } else {
            q /= std::max(res.grad_norm, 1.0);
        }
        for (std::size_t k = 0; k < m; ++k) {
            const double beta = rho_hist[k] * y_hist[k].dot(q);
            q += s_hist[k] * (alpha[k] - beta);
        }
        Eigen::VectorXd dir = -q;
        double slope = g.dot(dir);
        if (!(slope < 0.0)) {
            // Lost descent; fall back to steepest descent and drop history.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -g / std::max(res.grad_norm, 1.0);
            slope = g.dot(dir);
        }

        double step = 1.0;
        double f_new = 0.0;
        bool accepted = false;
        while (step >= kMinStep) {
            x_new = x + step * dir;
            f_new = f(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= fx + kArmijo * step * slope && f_new < fx) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (s_hist.size() == opts.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
        }
        x.swap(x_new);
        g.swap(g_new);
        fx = f_new;
        res.loss_history.push_back(fx);
        ++res.iterations;
    }
    res.x = std::move(x);
    return res;
}

}  // namespace probelab::optimize
