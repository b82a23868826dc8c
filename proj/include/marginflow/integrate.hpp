#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "marginflow/dynamics.hpp"

namespace mf {

enum class Scheme { Euler, RK4 };
Scheme scheme_from_string(const std::string& s);
std::string to_string(Scheme s);

// Why a run ended. Singular states (blow-up, kinks, oversized constrained
// steps, time-scale overflow) are recorded outcomes, not exceptions: the
// trajectory keeps the last valid state.
enum class StopReason {
    Horizon,            // flow time reached stop_time
    LossThreshold,      // loss dropped below stop_loss
    RhoThreshold,       // scale product exceeded stop_rho
    MaxSteps,           // step budget exhausted
    BlowUp,             // non-finite state or singular flow evaluation
    StepTooLarge,       // norm-preserving correction undefined at this step
    Kink,               // constraint-surface corner reached
    TimeScaleOverflow,  // dt/dtau no longer representable
};
std::string to_string(StopReason r);

enum class EventKind {
    SeparabilityOnset,  // all margins first became positive
    SupportSetChange,   // active-sample set changed
    MarginRecord,       // margin started a new all-time-record streak
};
std::string to_string(EventKind k);

struct Event {
    EventKind kind;
    long step = 0;
    double t = 0.0;  // flow time
    double margin = 0.0;
    std::vector<int> support;  // populated for SupportSetChange
};

struct StepPolicy {
    Scheme scheme = Scheme::Euler;
    double h = 1e-3;     // integrator step (in the integrator's own time)
    long max_steps = 1000000;
    double t0 = 0.0;     // initial flow time

    // Stop rules; at least one of the three must be set.
    std::optional<double> stop_time;  // flow-time horizon
    std::optional<double> stop_loss;  // stop once loss < stop_loss
    std::optional<double> stop_rho;   // stop once scale product > stop_rho

    bool renormalize = true;       // pull unit blocks back each step
    long record_every = 100;       // scalar-series cadence, in steps
    long record_states_every = 0;  // full-state cadence; 0 keeps only ends

    double tol_sv = 1e-3;          // support band width
    double dominance_tol = 1e-3;   // support terms dominate when
                                   // rho * gap > log(1/dominance_tol)

    void validate() const;  // ConfigError on bad fields
};

struct Trajectory {
    // Scalar series at record points.
    std::vector<long> step_index;
    std::vector<double> t;  // flow time
    std::vector<double> log_loss;
    std::vector<double> margin;
    std::vector<Vector> rho;
    std::vector<Vector> drho2dt;
    std::vector<double> stationarity;
    std::vector<std::vector<int>> support;

    // Sparse full states (always includes the initial state).
    std::vector<std::pair<long, Vector>> states;

    std::vector<Event> events;
    StopReason stop_reason = StopReason::MaxSteps;
    std::string stop_detail;
    long steps_taken = 0;
    double t_final = 0.0;
    Vector final_state;

    // First flow time with every margin positive.
    std::optional<double> t_onset;
    // First flow time with rho * gap beyond the dominance threshold.
    std::optional<double> t_dominance;
    // Smallest per-step margin increment seen after t_dominance.
    std::optional<double> worst_margin_step_after_dominance;

    size_t records() const { return t.size(); }
};

Trajectory integrate(const Flow& flow, const Vector& s0, const StepPolicy& policy);

// (t, support) pairs: the first record plus every record where the set
// changed.
std::vector<std::pair<double, std::vector<int>>> support_timeline(const Trajectory& tr);

// Record series as CSV with header
//   t,loss,margin,rho_1..rho_K,drho2dt_1..drho2dt_K,stationarity,support_set
// support_set joins sample indices with ';'. All numbers use 17 significant
// digits; no timestamps or environment data, so reruns are byte-identical.
void write_series_csv(const Trajectory& tr, int depth, std::ostream& os);

}  // namespace mf
