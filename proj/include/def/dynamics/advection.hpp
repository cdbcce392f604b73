#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "def/grid/field_state.hpp"

namespace def::dynamics {

/// Doubly periodic advection-diffusion system with several scalar fields,
/// weak inter-channel coupling and a time-modulated, zero-mean source driven
/// by the forcing clock. Units: one step = one 6-hour analog, one cell = dx.
struct DynamicsConfig {
    int height = 32;
    int width = 16;
    int vars = 4;
    /// 0, 2 (day clock) or 4 (day and year clocks).
    int forcings = 4;

    /// Uniform background drift, cells per step; u moves along the width axis.
    double velocity_u = 0.25;
    double velocity_v = 0.15;
    /// Amplitude of a row-dependent shear added to u (divergence free).
    double shear = 0.10;
    /// Base diffusivity; channel c uses kappa * (0.5 + c / (vars - 1)).
    double kappa = 0.06;
    /// Relaxation of each channel's anomaly towards its neighbours' anomalies.
    double coupling = 0.02;
    /// Source strength relative to each channel's natural scale.
    double forcing_amplitude = 0.04;
    /// Amplitude (relative to channel scale) of one zero-mean Gaussian bump
    /// injected per channel and step at a location drawn from (seed, t).
    /// Keeps the system statistically stationary; 0 turns it off.
    double injection = 0.3;

    double day_period = 4.0;
    double year_period = 1460.0;

    std::uint64_t seed = 1;

    GridShape shape() const { return {vars, forcings, height, width}; }

    double channel_kappa(int c) const;
    /// Throws std::invalid_argument on a violated stability or shape bound.
    void validate() const;

    nlohmann::json to_json() const;
    static DynamicsConfig from_json(const nlohmann::json& j);
};

/// Time-of-day and year-progress circular encodings broadcast over the grid:
/// [sin day, cos day, sin year, cos year] (first `forcings` of them).
std::vector<double> forcing_channels(int time_index, const DynamicsConfig& cfg);

/// Overwrites the forcing slab of `state` for its own time index.
void fill_forcings(FieldState& state, const DynamicsConfig& cfg);

/// Random smooth initial state (bumps on top of per-channel offsets).
FieldState initial_state(const DynamicsConfig& cfg);

/// Advances one step with first-order upwind advection (flux form) and FTCS
/// diffusion. Domain means of the physical channels are conserved.
FieldState advance(const FieldState& state, const DynamicsConfig& cfg);

/// n_steps states starting at time index 0 with the initial condition.
std::vector<FieldState> generate_trajectory(const DynamicsConfig& cfg, int n_steps);

/// Natural offset and scale of physical channel c (mimics variables whose
/// magnitudes differ by orders of magnitude).
double channel_offset(int c);
double channel_scale(int c);

}  // namespace def::dynamics
