#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "magcath/catheter.hpp"
#include "magcath/engine.hpp"

namespace magcath {

// Deformed centerline samples tagged with their reference arc-length
// coordinate s in [0, L].
struct Centerline {
    Polyline3 samples;
    std::vector<double> ref_coords;
};

// Staged follow-the-leader insertion: at depth d_k the exposed sub-catheter
// of length d_k hangs from entry_pose and must match the first d_k of
// target_path arc length.
struct InsertionSchedule {
    RigidTransform entry_pose;
    std::vector<double> depths_m;
    Polyline3 target_path;

    void validate(const CatheterSpec& spec) const {
        if (depths_m.empty()) throw ConfigError("insertion schedule has no depths");
        double prev = 0.0;
        for (double d : depths_m) {
            if (d <= prev) throw ConfigError("insertion depths must be positive and increasing");
            if (d > spec.length_m + 1e-12)
                throw ConfigError("insertion depth exceeds catheter length");
            prev = d;
        }
        target_path.validate();
    }
};

// Bins particles by reference axial coordinate and takes the mass-weighted
// mean deformed position per bin.
inline Centerline extract_centerline(const EquilibriumState& state, const CatheterSpec& spec,
                                     int sample_count) {
    if (sample_count < 2) throw ConfigError("centerline sample_count must be >= 2");
    std::vector<Vec3> sums(sample_count, Vec3::Zero());
    std::vector<double> weights(sample_count, 0.0);
    for (const Particle& p : state.particles) {
        int bin = static_cast<int>(std::floor(sample_count * p.ref_axial / spec.length_m));
        bin = std::clamp(bin, 0, sample_count - 1);
        sums[bin] += p.mass * p.x;
        weights[bin] += p.mass;
    }
    Centerline line;
    for (int b = 0; b < sample_count; ++b) {
        if (weights[b] <= 0.0)
            throw ConfigError("centerline bin " + std::to_string(b) +
                              " is empty; lower sample_count or raise particle density");
        line.samples.points.push_back(sums[b] / weights[b]);
        line.ref_coords.push_back((b + 0.5) * spec.length_m / sample_count);
    }
    return line;
}

// RMS distance between two curves after resampling both to a common count
// equally in arc length, paired by normalized arc length from the base end.
// Returns millimeters.
inline double rms_error(const Polyline3& sim, const Polyline3& target, int common_count = 50) {
    const Polyline3 a = resample_polyline(sim, common_count);
    const Polyline3 b = resample_polyline(target, common_count);
    double acc = 0.0;
    for (int k = 0; k < common_count; ++k) acc += (a.points[k] - b.points[k]).squaredNorm();
    return std::sqrt(acc / common_count) * 1000.0;
}

inline double rms_error(const Centerline& sim, const Polyline3& target, int common_count = 50) {
    return rms_error(sim.samples, target, common_count);
}

// Truncates a polyline to its first `length` of arc length, interpolating
// the final point.
inline Polyline3 truncate_polyline(const Polyline3& line, double length) {
    line.validate();
    Polyline3 out;
    out.points.push_back(line.points.front());
    double acc = 0.0;
    for (size_t i = 1; i < line.points.size(); ++i) {
        const double seg = (line.points[i] - line.points[i - 1]).norm();
        if (acc + seg >= length) {
            const double t = (length - acc) / seg;
            out.points.push_back(line.points[i - 1] + t * (line.points[i] - line.points[i - 1]));
            return out;
        }
        acc += seg;
        out.points.push_back(line.points[i]);
    }
    return out;  // requested length >= total: whole line
}

struct StagedProblem {
    CatheterSpec sub_spec;
    PiecewiseMagnetization sub_profile;
    Polyline3 sub_target;
};

// Builds the exposed sub-catheter at depth d_k: length d_k, base at the
// entry pose, carrying the distal d_k of the full magnetization profile
// (partial segments preserved), against the first d_k of the target path.
inline StagedProblem stage_insertion(const CatheterSpec& spec, const MagnetizationProfile& profile,
                                     const InsertionSchedule& schedule, int depth_index) {
    profile.validate(spec);
    schedule.validate(spec);
    if (depth_index < 0 || depth_index >= static_cast<int>(schedule.depths_m.size()))
        throw ConfigError("depth_index out of range");
    const double d = schedule.depths_m[depth_index];
    const double L = spec.length_m;
    const double hidden = L - d;  // proximal length still inside the introducer

    StagedProblem staged;
    staged.sub_spec = spec;
    staged.sub_spec.length_m = d;
    staged.sub_spec.base_pose = schedule.entry_pose;

    // Distal portion of the profile, shifted so the exposed base is z = 0.
    const double seg_len = spec.segment_length();
    staged.sub_profile.breakpoints.push_back(0.0);
    for (int s = 0; s < spec.segment_count; ++s) {
        const double lo = std::max(s * seg_len, hidden);
        const double hi = (s + 1) * seg_len;
        if (hi <= hidden + 1e-15) continue;
        staged.sub_profile.directions.push_back(profile.directions[s]);
        staged.sub_profile.breakpoints.push_back(hi - hidden);
        (void)lo;
    }
    staged.sub_profile.breakpoints.back() = d;

    staged.sub_target = truncate_polyline(schedule.target_path, d);
    return staged;
}

struct DesignProblem {
    CatheterSpec spec;
    SimConfig sim;
    int particles_per_cell = 4;
    std::uint64_t discretization_seed = 0;
    int centerline_samples = 20;
    Polyline3 target;                         // static mode
    std::optional<InsertionSchedule> schedule;  // insertion mode
    double blowup_penalty_mm = 1e3;
};

struct EvalResult {
    double error_mm = 0.0;
    bool blew_up = false;
    bool converged = true;
    std::vector<double> stage_errors_mm;
    double mean_stage_error_mm = 0.0;
};

inline double problem_grid_spacing(const DesignProblem& problem) {
    return problem.sim.grid_spacing > 0.0 ? problem.sim.grid_spacing
                                          : problem.spec.diameter_m / 4.0;
}

// Settles the full catheter once and scores it against the static target.
inline EvalResult evaluate_static(const MagnetizationProfile& profile, const AppliedField& field,
                                  const DesignProblem& problem) {
    EvalResult result;
    try {
        const double h = problem_grid_spacing(problem);
        ParticleCloud cloud = discretize(problem.spec, problem.particles_per_cell, h,
                                         problem.discretization_seed);
        cloud = assign_magnetization(std::move(cloud), profile, problem.spec);
        const ClampRegion clamp = ClampRegion::for_catheter(problem.spec, h);
        EquilibriumState state = settle(cloud, field, problem.sim, clamp);
        result.converged = state.converged;
        const Centerline line = extract_centerline(state, problem.spec, problem.centerline_samples);
        result.error_mm = rms_error(line, problem.target);
        result.stage_errors_mm = {result.error_mm};
        result.mean_stage_error_mm = result.error_mm;
    } catch (const SimulationError&) {
        result.error_mm = problem.blowup_penalty_mm;
        result.blew_up = true;
    }
    return result;
}

// Settles each staged sub-catheter under its stage field and aggregates the
// per-stage RMS errors (max; mean also reported).
inline EvalResult evaluate_insertion(const MagnetizationProfile& profile,
                                     const std::vector<AppliedField>& field_schedule,
                                     const DesignProblem& problem) {
    if (!problem.schedule) throw ConfigError("insertion evaluation requires a schedule");
    const InsertionSchedule& schedule = *problem.schedule;
    if (field_schedule.size() != schedule.depths_m.size())
        throw ConfigError("field schedule size must match depth count");

    EvalResult result;
    double worst = 0.0, sum = 0.0;
    for (size_t k = 0; k < schedule.depths_m.size(); ++k) {
        double err;
        try {
            const StagedProblem staged = stage_insertion(problem.spec, profile, schedule,
                                                         static_cast<int>(k));
            const double h = problem_grid_spacing(problem);
            ParticleCloud cloud = discretize(staged.sub_spec, problem.particles_per_cell, h,
                                             problem.discretization_seed);
            cloud = assign_magnetization(std::move(cloud), staged.sub_profile, staged.sub_spec);
            const ClampRegion clamp = ClampRegion::for_catheter(staged.sub_spec, h);
            EquilibriumState state = settle(cloud, field_schedule[k], problem.sim, clamp);
            result.converged = result.converged && state.converged;
            // Few bins at shallow depths: scale sample count with exposed length.
            const int samples = std::max(
                4, static_cast<int>(std::round(problem.centerline_samples * staged.sub_spec.length_m /
                                               problem.spec.length_m)));
            const Centerline line = extract_centerline(state, staged.sub_spec, samples);
            err = rms_error(line, staged.sub_target);
        } catch (const SimulationError&) {
            err = problem.blowup_penalty_mm;
            result.blew_up = true;
        }
        result.stage_errors_mm.push_back(err);
        worst = std::max(worst, err);
        sum += err;
    }
    result.error_mm = worst;
    result.mean_stage_error_mm = sum / static_cast<double>(schedule.depths_m.size());
    return result;
}

}  // namespace magcath
