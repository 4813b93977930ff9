#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "magcath/catheter.hpp"
#include "magcath/engine.hpp"
#include "magcath/optimizer.hpp"
#include "magcath/shape.hpp"

namespace magcath::io {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config file: ini-style sections of `key = value` lines, # comments.
// Lengths are mm, fields mT; converted to SI on load.
// ---------------------------------------------------------------------------

class IniFile {
  public:
    static IniFile parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str(), path);
    }

    static IniFile parse_string(const std::string& text, const std::string& name = "<string>") {
        IniFile ini;
        ini.source_ = text;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto strip = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                const auto e = s.find_last_not_of(" \t\r");
                return s.substr(b, e - b + 1);
            };
            line = strip(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(name + ":" + std::to_string(lineno) + ": malformed section");
                section = strip(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(name + ":" + std::to_string(lineno) + ": expected key = value");
            ini.values_[section + "." + strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
        }
        return ini;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required config key: " + key);
        return it->second;
    }
    std::string get_or(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    double get_double(const std::string& key) const { return to_double(key, get(key)); }
    double get_double_or(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }
    long get_long_or(const std::string& key, long fallback) const {
        return has(key) ? static_cast<long>(get_double(key)) : fallback;
    }
    Vec3 get_vec3(const std::string& key) const {
        std::istringstream in(get(key));
        Vec3 v;
        if (!(in >> v.x() >> v.y() >> v.z()))
            throw ConfigError("config key " + key + " needs 3 numbers");
        return v;
    }
    Vec3 get_vec3_or(const std::string& key, const Vec3& fallback) const {
        return has(key) ? get_vec3(key) : fallback;
    }
    std::vector<double> get_list(const std::string& key) const {
        std::istringstream in(get(key));
        std::vector<double> out;
        double x;
        while (in >> x) out.push_back(x);
        return out;
    }

    const std::string& source() const { return source_; }
    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    static double to_double(const std::string& key, const std::string& s) {
        try {
            size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + " is not a number: '" + s + "'");
        }
    }

    std::map<std::string, std::string> values_;
    std::string source_;
};

inline RigidTransform pose_from_axis(const Vec3& position_m, const Vec3& axis) {
    const Vec3 a = axis.normalized();
    RigidTransform t;
    t.rotation = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), a).toRotationMatrix();
    t.translation = position_m;
    return t;
}

// ---------------------------------------------------------------------------
// Polyline CSV: header x_mm,y_mm,z_mm (extra leading columns ignored).
// ---------------------------------------------------------------------------

inline Polyline3 read_polyline_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open polyline file: " + path);
    Polyline3 line;
    std::string row;
    std::getline(in, row);  // header
    while (std::getline(in, row)) {
        if (row.empty()) continue;
        std::replace(row.begin(), row.end(), ',', ' ');
        std::istringstream fields(row);
        std::vector<double> vals;
        double x;
        while (fields >> x) vals.push_back(x);
        if (vals.size() < 3) throw ConfigError("polyline row needs >= 3 numbers: " + path);
        const size_t o = vals.size() - 3;
        line.points.emplace_back(vals[o] * 1e-3, vals[o + 1] * 1e-3, vals[o + 2] * 1e-3);
    }
    line.validate();
    return line;
}

inline void write_polyline_csv(const std::string& path, const Polyline3& line,
                               const std::vector<double>* ref_coords = nullptr) {
    std::ofstream out(path);
    out << "s_ref_mm,x_mm,y_mm,z_mm\n";
    double s = 0.0;
    char buf[160];
    for (size_t i = 0; i < line.points.size(); ++i) {
        if (ref_coords) {
            s = (*ref_coords)[i] * 1e3;
        } else if (i > 0) {
            s += (line.points[i] - line.points[i - 1]).norm() * 1e3;
        }
        const Vec3& p = line.points[i];
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g\n", s, p.x() * 1e3, p.y() * 1e3,
                      p.z() * 1e3);
        out << buf;
    }
}

inline void write_centerline_csv(const std::string& path, const Centerline& line) {
    write_polyline_csv(path, line.samples, &line.ref_coords);
}

// ASCII snapshot: `x y z segment` per particle, header with count and time.
inline void write_snapshot(const std::string& path, const std::vector<Particle>& particles,
                           double time_s) {
    std::ofstream out(path);
    char buf[200];
    std::snprintf(buf, sizeof buf, "%zu %.9g\n", particles.size(), time_s);
    out << buf;
    for (const Particle& p : particles) {
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %d\n", p.x.x(), p.x.y(), p.x.z(),
                      p.segment);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// RunConfig: full parsed configuration for the CLI.
// ---------------------------------------------------------------------------

enum class ProblemMode { Static, Insertion };

struct RunConfig {
    CatheterSpec spec;
    SimConfig sim;
    int particles_per_cell = 4;
    std::uint64_t seed = 1;

    ProblemMode mode = ProblemMode::Static;
    FieldMode field_mode = FieldMode::Fixed;
    AppliedField fixed_field;
    double b_max_tesla = 0.010;
    Polyline3 target;            // static target or insertion path
    bool has_target = false;
    std::vector<double> depths_m;
    RigidTransform entry_pose;

    std::optional<MagnetizationProfile> profile;  // for simulate

    OptimizerConfig opt;
    std::string output_dir = "run";
    int centerline_samples = 20;
    int threads = 1;

    static RunConfig load(const std::string& path) {
        const IniFile ini = IniFile::parse_file(path);
        RunConfig rc;

        rc.spec.length_m = ini.get_double("catheter.length_mm") * 1e-3;
        rc.spec.diameter_m = ini.get_double("catheter.diameter_mm") * 1e-3;
        rc.spec.segment_count = static_cast<int>(ini.get_double_or("catheter.segments", 5));
        rc.spec.remanent_magnitude_A_per_m =
            ini.get_double_or("catheter.remanence_kA_per_m", 100.0) * 1e3;
        rc.spec.density_kg_m3 = ini.get_double_or("catheter.density_kg_m3", 1100.0);
        rc.spec.shear_modulus_Pa = ini.get_double_or("catheter.shear_modulus_kPa", 100.0) * 1e3;
        rc.spec.poisson_ratio = ini.get_double_or("catheter.poisson_ratio", 0.45);
        rc.spec.base_pose = pose_from_axis(
            ini.get_vec3_or("catheter.base_position_mm", Vec3::Zero()) * 1e-3,
            ini.get_vec3_or("catheter.base_axis", Vec3::UnitZ()));
        rc.spec.validate();

        rc.sim.grid_spacing = ini.get_double_or("simulation.grid_spacing_mm",
                                                rc.spec.diameter_m * 1e3 / 4.0) * 1e-3;
        if (ini.get_or("simulation.dt", "auto") != "auto")
            rc.sim.dt = ini.get_double("simulation.dt");
        rc.sim.cfl_safety = ini.get_double_or("simulation.cfl_safety", 0.3);
        if (ini.get_or("simulation.damping", "auto") != "auto")
            rc.sim.damping_coefficient = ini.get_double("simulation.damping");
        rc.sim.settle_tolerance = ini.get_double_or("simulation.settle_tolerance", 1e-4);
        rc.sim.settle_window =
            static_cast<int>(ini.get_double_or("simulation.settle_window", 10));
        rc.sim.max_settle_steps = ini.get_long_or("simulation.max_settle_steps", 400000);
        rc.sim.gravity = ini.get_vec3_or("simulation.gravity", Vec3::Zero());
        rc.particles_per_cell =
            static_cast<int>(ini.get_double_or("simulation.particles_per_cell", 4));
        rc.sim.validate();

        const std::string mode = ini.get_or("problem.mode", "static");
        if (mode == "static") {
            rc.mode = ProblemMode::Static;
        } else if (mode == "insertion") {
            rc.mode = ProblemMode::Insertion;
        } else {
            throw ConfigError("problem.mode must be 'static' or 'insertion', got '" + mode + "'");
        }

        const std::string fm = ini.get_or("problem.field_mode",
                                          rc.mode == ProblemMode::Static ? "fixed" : "per_stage");
        if (fm == "fixed") rc.field_mode = FieldMode::Fixed;
        else if (fm == "free") rc.field_mode = FieldMode::FreeSingle;
        else if (fm == "per_stage") rc.field_mode = FieldMode::PerStage;
        else throw ConfigError("problem.field_mode must be fixed | free | per_stage");

        rc.b_max_tesla = ini.get_double_or("problem.b_max_mT", 10.0) * 1e-3;
        if (ini.has("problem.field_mT")) {
            rc.fixed_field.b_tesla = ini.get_vec3("problem.field_mT") * 1e-3;
            rc.fixed_field.max_norm_tesla = -1.0;
        }

        if (ini.has("problem.target_csv")) {
            rc.target = read_polyline_csv(ini.get("problem.target_csv"));
            rc.has_target = true;
        }

        if (rc.mode == ProblemMode::Insertion) {
            for (double d : ini.get_list("problem.depths_mm")) rc.depths_m.push_back(d * 1e-3);
            rc.entry_pose = pose_from_axis(
                ini.get_vec3_or("problem.entry_position_mm", Vec3::Zero()) * 1e-3,
                ini.get_vec3_or("problem.entry_axis", Vec3::UnitZ()));
        }

        if (ini.has("magnetization.m0")) {
            MagnetizationProfile p;
            for (int s = 0; s < rc.spec.segment_count; ++s)
                p.directions.push_back(
                    ini.get_vec3("magnetization.m" + std::to_string(s)).normalized());
            rc.profile = p;
        }

        rc.seed = static_cast<std::uint64_t>(ini.get_double_or("optimizer.seed", 1));
        rc.opt.rng_seed = rc.seed;
        rc.opt.population = static_cast<int>(ini.get_double_or("optimizer.population", 12));
        rc.opt.parent_count = static_cast<int>(ini.get_double_or("optimizer.parents", 0));
        rc.opt.sigma0 = ini.get_double_or("optimizer.sigma0", 0.5);
        rc.opt.field_scale = ini.get_double_or("optimizer.field_scale_mT", 0.0) * 1e-3;
        rc.opt.max_iterations =
            static_cast<int>(ini.get_double_or("optimizer.max_iterations", 200));
        rc.opt.target_error_mm = ini.get_double_or(
            "optimizer.target_error_mm", rc.mode == ProblemMode::Insertion ? 3.0 : 2.0);
        rc.opt.b_max_tesla = rc.b_max_tesla;
        const std::string init = ini.get_or("optimizer.init", "random");
        if (init == "neutral")
            rc.opt.init = InitMode::Neutral;
        else if (init != "random")
            throw ConfigError("optimizer.init must be 'random' or 'neutral'");

        rc.output_dir = ini.get_or("output.dir", "run");
        rc.centerline_samples =
            static_cast<int>(ini.get_double_or("output.centerline_samples", 20));
        return rc;
    }

    DesignProblem problem() const {
        DesignProblem p;
        p.spec = spec;
        p.sim = sim;
        p.particles_per_cell = particles_per_cell;
        p.discretization_seed = seed;
        p.centerline_samples = centerline_samples;
        p.target = target;
        if (mode == ProblemMode::Insertion) {
            InsertionSchedule s;
            s.entry_pose = entry_pose;
            s.depths_m = depths_m;
            s.target_path = target;
            p.schedule = s;
        }
        return p;
    }
};

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

inline json design_to_json(const DesignVector& v, double b_max_tesla) {
    json angles = json::array();
    for (const auto& [theta, phi] : v.angles) angles.push_back({theta, phi});
    json fields = json::array();
    for (const Vec3& b : v.fields_tesla) {
        const Vec3 p = project_to_ball(b, b_max_tesla) * 1e3;  // mT
        fields.push_back({p.x(), p.y(), p.z()});
    }
    return json{{"angles", angles}, {"fields_mT", fields}};
}

inline void write_trace_jsonl(const std::string& path, const OptimizationTrace& trace,
                              double b_max_tesla) {
    std::ofstream out(path);
    for (const TraceRecord& r : trace) {
        json rec{{"iter", r.iteration},
                 {"best_mm", r.best_mm},
                 {"mean_mm", r.mean_mm},
                 {"evals", r.evaluations},
                 {"design", design_to_json(r.best, b_max_tesla)}};
        out << rec.dump() << "\n";
    }
}

inline void copy_config(const std::string& config_path, const std::string& outdir) {
    std::filesystem::copy_file(config_path, outdir + "/config.copy",
                               std::filesystem::copy_options::overwrite_existing);
}

// Exit codes shared by the CLI commands.
enum ExitCode : int {
    kOk = 0,
    kConfigError = 1,
    kNonConvergence = 2,
    kBlowUp = 3,
    kIterationBudget = 4,
};

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> outdir;
};

inline void apply_overrides(RunConfig& rc, const CliOverrides& ov) {
    if (ov.seed) {
        rc.seed = *ov.seed;
        rc.opt.rng_seed = *ov.seed;
    }
    if (ov.threads) {
        rc.threads = *ov.threads;
        rc.opt.threads = *ov.threads;
    }
    if (ov.outdir) rc.output_dir = *ov.outdir;
    else if (const char* root = std::getenv("MAGCATH_OUT_ROOT"))
        rc.output_dir = std::string(root) + "/" + rc.output_dir;
}

// Settles an explicitly specified design and writes centerline, snapshot
// and summary.
inline int cmd_simulate(const std::string& config_path, const CliOverrides& ov = {}) {
    RunConfig rc;
    try {
        rc = RunConfig::load(config_path);
        apply_overrides(rc, ov);
        if (!rc.profile)
            throw ConfigError("simulate needs a [magnetization] section (m0..m<N-1>)");
        rc.profile->validate(rc.spec);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    }

    std::filesystem::create_directories(rc.output_dir);
    copy_config(config_path, rc.output_dir);

    json summary;
    try {
        const double h = rc.sim.grid_spacing;
        ParticleCloud cloud = discretize(rc.spec, rc.particles_per_cell, h, rc.seed);
        cloud = assign_magnetization(cloud, *rc.profile, rc.spec);
        const EquilibriumState state =
            settle(cloud, rc.fixed_field, rc.sim, ClampRegion::for_catheter(rc.spec, h));
        const Centerline line = extract_centerline(state, rc.spec, rc.centerline_samples);

        write_centerline_csv(rc.output_dir + "/centerline_stage_0.csv", line);
        write_snapshot(rc.output_dir + "/snapshot.xyz", state.particles,
                       state.steps * state.dt);

        summary["steps"] = state.steps;
        summary["residual_speed_m_per_s"] = state.residual_speed;
        summary["converged"] = state.converged;
        summary["particles"] = state.particles.size();
        if (rc.has_target) summary["rms_mm"] = rms_error(line, rc.target);
        std::ofstream(rc.output_dir + "/summary.json") << summary.dump(2) << "\n";

        if (!state.converged) {
            std::cerr << "non-convergence: residual " << state.residual_speed << " m/s after "
                      << state.steps << " steps\n";
            return kNonConvergence;
        }
    } catch (const BlowUpError& e) {
        std::cerr << "blow-up at step " << e.step << ": " << e.what() << "\n";
        summary["blow_up_step"] = e.step;
        std::ofstream(rc.output_dir + "/summary.json") << summary.dump(2) << "\n";
        return kBlowUp;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
    return kOk;
}

// Runs the design optimizer and persists trace, best design and final
// centerlines per stage.
inline int cmd_optimize(const std::string& config_path, const CliOverrides& ov = {}) {
    RunConfig rc;
    try {
        rc = RunConfig::load(config_path);
        apply_overrides(rc, ov);
        if (!rc.has_target) throw ConfigError("optimize needs problem.target_csv");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    }

    std::filesystem::create_directories(rc.output_dir);
    copy_config(config_path, rc.output_dir);

    try {
        const DesignProblem problem = rc.problem();
        OptResult result;
        if (rc.mode == ProblemMode::Static) {
            result = optimize_static(problem, rc.field_mode, rc.fixed_field, rc.opt);
        } else {
            result = optimize_insertion(problem, rc.opt);
        }

        write_trace_jsonl(rc.output_dir + "/trace.jsonl", result.trace, rc.b_max_tesla);
        {
            std::ofstream out(rc.output_dir + "/convergence.csv");
            out << "iter,best_mm\n";
            for (const TraceRecord& r : result.trace)
                out << r.iteration << "," << r.best_mm << "\n";
        }

        json best{{"error_mm", result.best_error_mm},
                  {"iterations", result.trace.size()},
                  {"status", result.status == OptStatus::Converged ? "converged"
                             : result.status == OptStatus::IterationBudget ? "iteration_budget"
                                                                           : "diagnostic_failure"},
                  {"design", design_to_json(result.best, rc.b_max_tesla)}};
        std::ofstream(rc.output_dir + "/best.json") << best.dump(2) << "\n";

        // Final centerline(s) of the best design.
        const auto [profile, fields] = decode(result.best, rc.b_max_tesla);
        if (rc.mode == ProblemMode::Static) {
            const double h = rc.sim.grid_spacing;
            ParticleCloud cloud = discretize(rc.spec, rc.particles_per_cell, h, rc.seed);
            cloud = assign_magnetization(cloud, profile, rc.spec);
            const AppliedField f =
                rc.field_mode == FieldMode::Fixed ? rc.fixed_field : fields.front();
            const EquilibriumState state =
                settle(cloud, f, rc.sim, ClampRegion::for_catheter(rc.spec, h));
            const Centerline line = extract_centerline(state, rc.spec, rc.centerline_samples);
            write_centerline_csv(rc.output_dir + "/centerline_stage_0.csv", line);
            write_snapshot(rc.output_dir + "/snapshot.xyz", state.particles,
                           state.steps * state.dt);
        } else {
            const InsertionSchedule& schedule = *problem.schedule;
            for (size_t k = 0; k < schedule.depths_m.size(); ++k) {
                const StagedProblem staged =
                    stage_insertion(rc.spec, profile, schedule, static_cast<int>(k));
                const double h = rc.sim.grid_spacing;
                ParticleCloud cloud =
                    discretize(staged.sub_spec, rc.particles_per_cell, h, rc.seed);
                cloud = assign_magnetization(cloud, staged.sub_profile, staged.sub_spec);
                const EquilibriumState state = settle(cloud, fields[k], rc.sim,
                                                      ClampRegion::for_catheter(staged.sub_spec, h));
                const Centerline line = extract_centerline(
                    state, staged.sub_spec,
                    std::max(4, static_cast<int>(std::round(rc.centerline_samples *
                                                            staged.sub_spec.length_m /
                                                            rc.spec.length_m))));
                write_centerline_csv(
                    rc.output_dir + "/centerline_stage_" + std::to_string(k) + ".csv", line);
                if (k + 1 == schedule.depths_m.size())
                    write_snapshot(rc.output_dir + "/snapshot.xyz", state.particles,
                                   state.steps * state.dt);
            }
        }

        return result.status == OptStatus::Converged ? kOk : kIterationBudget;
    } catch (const BlowUpError& e) {
        std::cerr << "blow-up at step " << e.step << ": " << e.what() << "\n";
        return kBlowUp;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
}

// Re-emits stored artifacts from a run directory to stdout.
inline int cmd_export(const std::string& run_dir, const std::string& what,
                      std::ostream& out = std::cout) {
    namespace fs = std::filesystem;
    std::vector<std::string> paths;
    if (what == "trace") {
        paths.push_back(run_dir + "/trace.jsonl");
    } else if (what == "snapshot") {
        paths.push_back(run_dir + "/snapshot.xyz");
    } else if (what == "centerlines") {
        for (int k = 0;; ++k) {
            const std::string p = run_dir + "/centerline_stage_" + std::to_string(k) + ".csv";
            if (!fs::exists(p)) break;
            paths.push_back(p);
        }
    } else {
        std::cerr << "unknown export kind: " << what << "\n";
        return kConfigError;
    }
    if (paths.empty() || !fs::exists(paths.front())) {
        std::cerr << "no stored artifacts of kind '" << what << "' in " << run_dir << "\n";
        return kConfigError;
    }
    for (const std::string& p : paths) {
        std::ifstream in(p);
        out << in.rdbuf();
    }
    return kOk;
}

}  // namespace magcath::io
