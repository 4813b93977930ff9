#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "magcath/catheter.hpp"
#include "magcath/core.hpp"

// Independent ground-truth generators for tests and acceptance checks.
// Deliberately free of any engine or optimizer includes.

namespace magcath::oracles {

// Small-deflection Euler-Bernoulli cantilever under a uniformly distributed
// applied couple density c (N*m per unit length): integrates
//   E I w''(x) = M(x),  M(x) = c (L - x)
// by trapezoidal quadrature with w(0) = w'(0) = 0. Deflections are along a
// single lateral axis; the returned centerline lies in the x-z plane with
// the beam axis along z. Valid only for deflections well under 5% of L.
inline Polyline3 beam_cantilever_deflection(double length, double youngs, double area_moment,
                                            double couple_density, int samples) {
    if (youngs <= 0.0 || area_moment <= 0.0) throw ConfigError("beam stiffness must be positive");
    if (samples < 2) throw ConfigError("need at least 2 samples");

    const double dx = length / (samples - 1);
    std::vector<double> slope(samples, 0.0), w(samples, 0.0);
    const auto curvature = [&](double x) {
        return couple_density * (length - x) / (youngs * area_moment);
    };
    for (int i = 1; i < samples; ++i) {
        const double x0 = (i - 1) * dx, x1 = i * dx;
        slope[i] = slope[i - 1] + 0.5 * dx * (curvature(x0) + curvature(x1));
        w[i] = w[i - 1] + 0.5 * dx * (slope[i - 1] + slope[i]);
    }

    Polyline3 line;
    for (int i = 0; i < samples; ++i) line.points.emplace_back(w[i], 0.0, i * dx);
    return line;
}

// Same boundary-value problem solved by a second-order central finite
// difference sweep; used to cross-check the quadrature above.
inline double beam_tip_deflection_fd(double length, double youngs, double area_moment,
                                     double couple_density, int nodes) {
    if (nodes < 3) throw ConfigError("need at least 3 nodes");
    const double dx = length / (nodes - 1);
    std::vector<double> w(nodes, 0.0);
    // March w_{i+1} = 2 w_i - w_{i-1} + dx^2 M(x_i)/(EI), with the clamped
    // root giving w_0 = 0 and w_1 = w_0 + 0 * dx + dx^2/2 * M(0)/(EI).
    w[1] = 0.5 * dx * dx * couple_density * length / (youngs * area_moment);
    for (int i = 1; i + 1 < nodes; ++i) {
        const double m = couple_density * (length - i * dx) / (youngs * area_moment);
        w[i + 1] = 2.0 * w[i] - w[i - 1] + dx * dx * m;
    }
    return w.back();
}

inline double circular_area_moment(double diameter) {
    return M_PI * std::pow(diameter, 4) / 64.0;
}

struct AngleSearchResult {
    double theta = 0.0;
    double phi = 0.0;
    double error = 0.0;
};

// Exhaustive (theta, phi) grid search for single-segment problems. Ties go
// to the first grid point visited (theta-major, then phi).
inline AngleSearchResult brute_force_angle_search(
    const std::function<double(double theta, double phi)>& objective, double grid_deg) {
    const double step = grid_deg * M_PI / 180.0;
    AngleSearchResult best;
    bool first = true;
    for (double theta = 0.0; theta <= M_PI + 1e-12; theta += step) {
        for (double phi = -M_PI; phi < M_PI - 1e-12; phi += step) {
            const double e = objective(theta, phi);
            if (first || e < best.error) {
                best = {theta, phi, e};
                first = false;
            }
            if (theta < 1e-12 || theta > M_PI - 1e-12) break;  // poles: phi is degenerate
        }
    }
    return best;
}

// Two-stage variant: a coarse exhaustive pass followed by a fine exhaustive
// pass over the +/- one-coarse-cell window around the coarse optimum. For a
// unimodal objective this matches a dense fine_deg grid at a fraction of the
// evaluations.
inline AngleSearchResult brute_force_angle_search_refined(
    const std::function<double(double theta, double phi)>& objective, double coarse_deg,
    double fine_deg) {
    if (fine_deg <= 0.0 || coarse_deg < fine_deg)
        throw ConfigError("need 0 < fine_deg <= coarse_deg");
    AngleSearchResult best = brute_force_angle_search(objective, coarse_deg);
    const double coarse = coarse_deg * M_PI / 180.0;
    const double fine = fine_deg * M_PI / 180.0;
    for (double th = best.theta - coarse; th <= best.theta + coarse + 1e-12; th += fine) {
        const double theta = std::clamp(th, 0.0, M_PI);
        for (double ph = best.phi - coarse; ph <= best.phi + coarse + 1e-12; ph += fine) {
            double phi = std::remainder(ph, 2.0 * M_PI);  // wrap into [-pi, pi]
            const double e = objective(theta, phi);
            if (e < best.error) best = {theta, phi, e};
        }
    }
    return best;
}

// Planar variant: exhaustive search over a single in-plane angle.
inline std::pair<double, double> brute_force_planar_angle_search(
    const std::function<double(double angle)>& objective, double grid_deg) {
    const double step = grid_deg * M_PI / 180.0;
    double best_angle = 0.0, best_err = objective(0.0);
    for (double a = step; a < 2.0 * M_PI - 1e-12; a += step) {
        const double e = objective(a);
        if (e < best_err) {
            best_err = e;
            best_angle = a;
        }
    }
    return {best_angle, best_err};
}

}  // namespace magcath::oracles
