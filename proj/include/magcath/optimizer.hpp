#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <numeric>
#include <random>
#include <vector>

#include "magcath/catheter.hpp"
#include "magcath/shape.hpp"

namespace magcath {

enum class FieldMode { Fixed, FreeSingle, PerStage };

// Optimization unknowns: spherical angles per segment plus optional field
// components (one 3-vector for FreeSingle, one per stage for PerStage).
struct DesignVector {
    std::vector<std::pair<double, double>> angles;  // (theta, phi) radians
    std::vector<Vec3> fields_tesla;

    int dimension() const {
        return static_cast<int>(2 * angles.size() + 3 * fields_tesla.size());
    }

    Eigen::VectorXd pack() const {
        Eigen::VectorXd x(dimension());
        int i = 0;
        for (const auto& [theta, phi] : angles) {
            x[i++] = theta;
            x[i++] = phi;
        }
        for (const Vec3& b : fields_tesla) {
            x[i++] = b.x();
            x[i++] = b.y();
            x[i++] = b.z();
        }
        return x;
    }

    static DesignVector unpack(const Eigen::VectorXd& x, int segment_count, int field_count) {
        DesignVector v;
        int i = 0;
        for (int s = 0; s < segment_count; ++s) {
            const double theta = x[i++];
            const double phi = x[i++];
            v.angles.emplace_back(theta, phi);
        }
        for (int f = 0; f < field_count; ++f) {
            v.fields_tesla.emplace_back(x[i], x[i + 1], x[i + 2]);
            i += 3;
        }
        return v;
    }
};

inline Vec3 direction_from_angles(double theta, double phi) {
    return Vec3(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                std::cos(theta));
}

inline Vec3 project_to_ball(const Vec3& b, double max_norm) {
    if (max_norm < 0.0) return b;
    const double n = b.norm();
    return n > max_norm ? Vec3(b * (max_norm / n)) : b;
}

// Spherical angles -> unit directions; fields radially projected onto the
// feasible ball.
inline std::pair<MagnetizationProfile, std::vector<AppliedField>> decode(
    const DesignVector& v, double b_max_tesla) {
    MagnetizationProfile profile;
    for (const auto& [theta, phi] : v.angles)
        profile.directions.push_back(direction_from_angles(theta, phi));
    std::vector<AppliedField> fields;
    for (const Vec3& b : v.fields_tesla)
        fields.push_back(AppliedField{project_to_ball(b, b_max_tesla), b_max_tesla});
    return {profile, fields};
}

// Search start: Random draws the initial mean uniformly (angles on the
// sphere, fields in the B_max ball); Neutral starts from the undeformed
// reference design (axial magnetization everywhere, zero applied field).
enum class InitMode { Random, Neutral };

struct OptimizerConfig {
    int population = 12;
    int parent_count = 0;          // 0: population / 2
    double sigma0 = 0.5;           // step size in block-scaled coordinates
    double angle_scale = 1.0;      // radians per unit coordinate
    double field_scale = 0.0;      // Tesla per unit coordinate; 0: b_max / 2
    int max_iterations = 200;
    double target_error_mm = 2.0;
    std::uint64_t rng_seed = 1;
    double b_max_tesla = 0.010;
    double penalty_mm = 1e3;
    int threads = 1;
    InitMode init = InitMode::Random;
    // Optional progress hook, called once per generation with the trace
    // record just appended. Useful for streaming long campaigns.
    std::function<void(const struct TraceRecord&)> on_iteration;

    void validate() const {
        if (population < 4) throw ConfigError("population must be >= 4");
        if (target_error_mm <= 0) throw ConfigError("target_error_mm must be > 0");
        if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    }
};

struct TraceRecord {
    int iteration = 0;
    double best_mm = 0.0;   // best-ever (elitist)
    double mean_mm = 0.0;   // generation mean
    DesignVector best;      // best-ever design
    long evaluations = 0;
    double wall_seconds = 0.0;
};

using OptimizationTrace = std::vector<TraceRecord>;

enum class OptStatus { Converged, IterationBudget, DiagnosticFailure };

struct OptResult {
    DesignVector best;
    double best_error_mm = std::numeric_limits<double>::infinity();
    OptimizationTrace trace;
    OptStatus status = OptStatus::IterationBudget;
};

// (mu/mu_w, lambda) CMA evolution strategy (Hansen's standard update) over
// the packed design vector. Block scaling enters through the initial
// diagonal covariance. The best-ever candidate is tracked across the run.
class CmaEs {
  public:
    CmaEs(int dimension, const Eigen::VectorXd& mean0, const Eigen::VectorXd& scales,
          const OptimizerConfig& config)
        : n_(dimension), lambda_(config.population),
          mu_(config.parent_count > 0 ? config.parent_count : config.population / 2),
          sigma_(config.sigma0), mean_(mean0), rng_(config.rng_seed) {
        weights_.resize(mu_);
        for (int i = 0; i < mu_; ++i) weights_[i] = std::log(mu_ + 0.5) - std::log(i + 1.0);
        weights_ /= weights_.sum();
        mu_eff_ = 1.0 / weights_.squaredNorm();

        c_sigma_ = (mu_eff_ + 2.0) / (n_ + mu_eff_ + 5.0);
        d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (n_ + 1.0)) - 1.0) +
                   c_sigma_;
        c_c_ = (4.0 + mu_eff_ / n_) / (n_ + 4.0 + 2.0 * mu_eff_ / n_);
        c_1_ = 2.0 / ((n_ + 1.3) * (n_ + 1.3) + mu_eff_);
        c_mu_ = std::min(1.0 - c_1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) /
                                         ((n_ + 2.0) * (n_ + 2.0) + mu_eff_));
        chi_n_ = std::sqrt(static_cast<double>(n_)) *
                 (1.0 - 1.0 / (4.0 * n_) + 1.0 / (21.0 * n_ * n_));

        cov_ = scales.array().square().matrix().asDiagonal();
        p_sigma_ = Eigen::VectorXd::Zero(n_);
        p_c_ = Eigen::VectorXd::Zero(n_);
        decompose();
    }

    std::vector<Eigen::VectorXd> sample() {
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<Eigen::VectorXd> xs;
        zs_.clear();
        for (int i = 0; i < lambda_; ++i) {
            Eigen::VectorXd z(n_);
            for (int d = 0; d < n_; ++d) z[d] = normal(rng_);
            zs_.push_back(z);
            xs.push_back(mean_ + sigma_ * (bd_ * z));
        }
        return xs;
    }

    // ranks: candidate indices sorted best-first.
    void update(const std::vector<Eigen::VectorXd>& xs, const std::vector<int>& ranks) {
        const Eigen::VectorXd old_mean = mean_;
        Eigen::VectorXd new_mean = Eigen::VectorXd::Zero(n_);
        for (int i = 0; i < mu_; ++i) new_mean += weights_[i] * xs[ranks[i]];
        mean_ = new_mean;

        const Eigen::VectorXd y = (mean_ - old_mean) / sigma_;
        const Eigen::VectorXd c_inv_sqrt_y = b_ * d_.cwiseInverse().asDiagonal() *
                                             (b_.transpose() * y);
        p_sigma_ = (1.0 - c_sigma_) * p_sigma_ +
                   std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_) * c_inv_sqrt_y;

        ++generation_;
        const double ps_norm = p_sigma_.norm();
        const bool h_sigma =
            ps_norm / std::sqrt(1.0 - std::pow(1.0 - c_sigma_, 2.0 * generation_)) <
            (1.4 + 2.0 / (n_ + 1.0)) * chi_n_;
        p_c_ = (1.0 - c_c_) * p_c_ +
               (h_sigma ? std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_) : 0.0) * y;

        Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n_, n_);
        for (int i = 0; i < mu_; ++i) {
            const Eigen::VectorXd yi = (xs[ranks[i]] - old_mean) / sigma_;
            rank_mu += weights_[i] * yi * yi.transpose();
        }
        const double delta_h = h_sigma ? 0.0 : c_c_ * (2.0 - c_c_);
        cov_ = (1.0 - c_1_ - c_mu_) * cov_ + c_1_ * (p_c_ * p_c_.transpose() + delta_h * cov_) +
               c_mu_ * rank_mu;

        sigma_ *= std::exp((c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));
        decompose();
    }

    const Eigen::VectorXd& mean() const { return mean_; }
    std::mt19937_64& rng() { return rng_; }

  private:
    void decompose() {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_);
        b_ = eig.eigenvectors();
        d_ = eig.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
        bd_ = b_ * d_.asDiagonal();
    }

    int n_, lambda_, mu_;
    double sigma_, mu_eff_, c_sigma_, d_sigma_, c_c_, c_1_, c_mu_, chi_n_;
    Eigen::VectorXd mean_, weights_, p_sigma_, p_c_, d_;
    Eigen::MatrixXd cov_, b_, bd_;
    std::vector<Eigen::VectorXd> zs_;
    std::mt19937_64 rng_;
    long generation_ = 0;
};

// Objective over a decoded design; returns the scalar error in mm.
using DesignObjective = std::function<double(const MagnetizationProfile&,
                                             const std::vector<AppliedField>&)>;

namespace detail {

inline Eigen::VectorXd block_scales(int segment_count, int field_count,
                                    const OptimizerConfig& config) {
    Eigen::VectorXd s(2 * segment_count + 3 * field_count);
    const double fs = config.field_scale > 0.0 ? config.field_scale : 0.5 * config.b_max_tesla;
    int i = 0;
    for (int k = 0; k < 2 * segment_count; ++k) s[i++] = config.angle_scale;
    for (int k = 0; k < 3 * field_count; ++k) s[i++] = fs;
    return s;
}

inline Eigen::VectorXd random_initial_mean(int segment_count, int field_count,
                                           const OptimizerConfig& config,
                                           std::mt19937_64& rng) {
    Eigen::VectorXd m(2 * segment_count + 3 * field_count);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    int i = 0;
    for (int s = 0; s < segment_count; ++s) {
        m[i++] = std::acos(1.0 - 2.0 * u01(rng));          // uniform on the sphere
        m[i++] = (2.0 * u01(rng) - 1.0) * M_PI;
    }
    for (int f = 0; f < field_count; ++f) {
        // Uniform draw in the B_max ball.
        Vec3 b;
        do {
            b = Vec3(2.0 * u01(rng) - 1.0, 2.0 * u01(rng) - 1.0, 2.0 * u01(rng) - 1.0);
        } while (b.squaredNorm() > 1.0);
        b *= config.b_max_tesla;
        m[i++] = b.x();
        m[i++] = b.y();
        m[i++] = b.z();
    }
    return m;
}

}  // namespace detail

// Rank-based search over magnetization angles (and fields, per mode).
// Stops at target_error_mm or the iteration budget; five consecutive
// all-penalized generations abort with a diagnostic failure.
inline OptResult optimize(const DesignObjective& objective, int segment_count, int field_count,
                          const OptimizerConfig& config_in) {
    OptimizerConfig config = config_in;
    config.validate();

    std::mt19937_64 seed_rng(config.rng_seed);
    const Eigen::VectorXd mean0 =
        config.init == InitMode::Neutral
            ? Eigen::VectorXd::Zero(2 * segment_count + 3 * field_count)
            : detail::random_initial_mean(segment_count, field_count, config, seed_rng);
    const Eigen::VectorXd scales = detail::block_scales(segment_count, field_count, config);

    OptimizerConfig inner = config;
    inner.rng_seed = seed_rng();  // sampling stream decoupled from the init draw
    CmaEs es(static_cast<int>(mean0.size()), mean0, scales, inner);

    OptResult result;
    long evals = 0;
    int penalized_streak = 0;
    const auto t0 = std::chrono::steady_clock::now();

    for (int iter = 0; iter < config.max_iterations; ++iter) {
        std::vector<Eigen::VectorXd> xs = es.sample();
        // Repair field blocks onto the feasible ball before evaluation and
        // feed the repaired coordinates back to the strategy update; raw
        // projection at decode time alone leaves the fitness flat along the
        // radius outside the ball, which stalls step-size adaptation there.
        for (Eigen::VectorXd& x : xs) {
            for (int f = 0; f < field_count; ++f) {
                const int off = 2 * segment_count + 3 * f;
                const Vec3 b = project_to_ball(Vec3(x[off], x[off + 1], x[off + 2]),
                                               config.b_max_tesla);
                x[off] = b.x();
                x[off + 1] = b.y();
                x[off + 2] = b.z();
            }
        }
        std::vector<double> errs(xs.size());

        const auto eval_one = [&](int i) {
            const DesignVector v = DesignVector::unpack(xs[i], segment_count, field_count);
            const auto [profile, fields] = decode(v, config.b_max_tesla);
            return objective(profile, fields);
        };
        if (config.threads > 1) {
            std::vector<std::future<double>> futures;
            for (size_t i = 0; i < xs.size(); ++i)
                futures.push_back(std::async(std::launch::async, eval_one, static_cast<int>(i)));
            for (size_t i = 0; i < xs.size(); ++i) errs[i] = futures[i].get();
        } else {
            for (size_t i = 0; i < xs.size(); ++i) errs[i] = eval_one(static_cast<int>(i));
        }
        evals += static_cast<long>(xs.size());

        std::vector<int> ranks(xs.size());
        std::iota(ranks.begin(), ranks.end(), 0);
        std::stable_sort(ranks.begin(), ranks.end(),
                         [&](int a, int b) { return errs[a] < errs[b]; });

        const double gen_best = errs[ranks.front()];
        if (gen_best < result.best_error_mm) {
            result.best_error_mm = gen_best;
            result.best = DesignVector::unpack(xs[ranks.front()], segment_count, field_count);
        }

        const double mean_err = std::accumulate(errs.begin(), errs.end(), 0.0) / errs.size();
        penalized_streak = gen_best >= config.penalty_mm ? penalized_streak + 1 : 0;

        TraceRecord rec;
        rec.iteration = iter;
        rec.best_mm = result.best_error_mm;
        rec.mean_mm = mean_err;
        rec.best = result.best;
        rec.evaluations = evals;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.trace.push_back(rec);
        if (config.on_iteration) config.on_iteration(rec);

        if (result.best_error_mm < config.target_error_mm) {
            result.status = OptStatus::Converged;
            return result;
        }
        if (penalized_streak >= 5) {
            result.status = OptStatus::DiagnosticFailure;
            return result;
        }
        es.update(xs, ranks);
    }
    result.status = OptStatus::IterationBudget;
    return result;
}

// Static design: fixed field optimizes angles only; FreeSingle adds one
// field block to the vector.
inline OptResult optimize_static(const DesignProblem& problem, FieldMode mode,
                                 const AppliedField& fixed_field, const OptimizerConfig& config) {
    const int field_count = mode == FieldMode::Fixed ? 0 : 1;
    const DesignObjective objective = [&problem, mode, fixed_field](
                                          const MagnetizationProfile& profile,
                                          const std::vector<AppliedField>& fields) {
        const AppliedField& f = mode == FieldMode::Fixed ? fixed_field : fields.front();
        return evaluate_static(profile, f, problem).error_mm;
    };
    return optimize(objective, problem.spec.segment_count, field_count, config);
}

// Insertion design: one field 3-vector per stage rides in the vector, each
// projected onto the B_max ball at decode time.
inline OptResult optimize_insertion(const DesignProblem& problem, const OptimizerConfig& config_in) {
    if (!problem.schedule) throw ConfigError("insertion optimization requires a schedule");
    OptimizerConfig config = config_in;
    const int stages = static_cast<int>(problem.schedule->depths_m.size());
    const DesignObjective objective = [&problem](const MagnetizationProfile& profile,
                                                 const std::vector<AppliedField>& fields) {
        return evaluate_insertion(profile, fields, problem).error_mm;
    };
    return optimize(objective, problem.spec.segment_count, stages, config);
}

}  // namespace magcath
