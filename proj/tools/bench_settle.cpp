// Settle timing probe: reports steps, wall time, and tip deflection for a
// cantilever under a perpendicular field, against the beam oracle.
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "magcath/engine.hpp"
#include "magcath/oracles.hpp"
#include "magcath/shape.hpp"

using namespace magcath;

int main(int argc, char** argv) {
    CatheterSpec spec;
    spec.length_m = argc > 1 ? std::atof(argv[1]) * 1e-3 : 0.040;
    spec.diameter_m = argc > 2 ? std::atof(argv[2]) * 1e-3 : 0.004;
    spec.poisson_ratio = argc > 3 ? std::atof(argv[3]) : 0.45;
    const double b_perp = (argc > 4 ? std::atof(argv[4]) : 0.2) * 1e-3;  // mT
    const double safety = argc > 5 ? std::atof(argv[5]) : 0.3;
    const double h = argc > 6 ? std::atof(argv[6]) * 1e-3 : 0.001;
    const double damp_factor = argc > 7 ? std::atof(argv[7]) : 1.0;
    spec.segment_count = 1;

    SimConfig sim;
    sim.grid_spacing = h;
    sim.cfl_safety = safety;
    sim.damping_coefficient = damp_factor * auto_damping(spec);
    if (argc > 8) sim.settle_tolerance = std::atof(argv[8]);

    ParticleCloud cloud = discretize(spec, 4, h, 42);
    MagnetizationProfile profile{{Vec3::UnitZ()}};
    cloud = assign_magnetization(cloud, profile, spec);
    AppliedField field{Vec3(b_perp, 0, 0), -1.0};

    std::printf("particles=%zu dt=%.3e damping=%.1f\n", cloud.particles.size(),
                stable_dt(h, spec, safety), auto_damping(spec));

    const auto t0 = std::chrono::steady_clock::now();
    EquilibriumState state = settle(cloud, field, sim, ClampRegion::for_catheter(spec, h));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const Centerline line = extract_centerline(state, spec, 20);
    const Vec3 tip = line.samples.points.back();

    const double E = youngs_modulus(spec.shear_modulus_Pa, spec.poisson_ratio);
    const double I = oracles::circular_area_moment(spec.diameter_m);
    const double c = spec.cross_section_area() * spec.remanent_magnitude_A_per_m * b_perp;
    const Polyline3 beam = oracles::beam_cantilever_deflection(spec.length_m, E, I, c, 200);
    const double w_tip = beam.points.back().x();

    std::printf("steps=%ld converged=%d wall=%.2fs us_per_particle_step=%.3f\n", state.steps,
                state.converged, secs,
                1e6 * secs / (double)(state.steps * cloud.particles.size()));
    std::printf("tip_x=%.4f mm beam_oracle=%.4f mm ratio=%.3f (deflection %.1f%% of L)\n",
                tip.x() * 1e3, w_tip * 1e3, tip.x() / w_tip, 100.0 * w_tip / spec.length_m);
    return 0;
}
