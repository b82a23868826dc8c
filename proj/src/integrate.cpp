#include "marginflow/integrate.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace mf {

Scheme scheme_from_string(const std::string& s) {
    if (s == "euler") return Scheme::Euler;
    if (s == "rk4") return Scheme::RK4;
    throw ConfigError("unknown scheme: " + s);
}

std::string to_string(Scheme s) { return s == Scheme::Euler ? "euler" : "rk4"; }

std::string to_string(StopReason r) {
    switch (r) {
        case StopReason::Horizon: return "horizon";
        case StopReason::LossThreshold: return "loss_threshold";
        case StopReason::RhoThreshold: return "rho_threshold";
        case StopReason::MaxSteps: return "max_steps";
        case StopReason::BlowUp: return "blow_up";
        case StopReason::StepTooLarge: return "step_too_large";
        case StopReason::Kink: return "kink";
        case StopReason::TimeScaleOverflow: return "time_scale_overflow";
    }
    return "unknown";
}

std::string to_string(EventKind k) {
    switch (k) {
        case EventKind::SeparabilityOnset: return "separability_onset";
        case EventKind::SupportSetChange: return "support_set_change";
        case EventKind::MarginRecord: return "margin_record";
    }
    return "unknown";
}

void StepPolicy::validate() const {
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("step h must be positive and finite");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (!std::isfinite(t0)) throw ConfigError("t0 must be finite");
    if (!stop_time && !stop_loss && !stop_rho)
        throw ConfigError("set at least one stop rule: stop_time, stop_loss, or stop_rho");
    if (stop_time && !(*stop_time > t0)) throw ConfigError("stop_time must exceed t0");
    if (stop_loss && !(*stop_loss > 0.0)) throw ConfigError("stop_loss must be positive");
    if (stop_rho && !(*stop_rho > 0.0)) throw ConfigError("stop_rho must be positive");
    if (record_every < 1) throw ConfigError("record_every must be >= 1");
    if (record_states_every < 0) throw ConfigError("record_states_every must be >= 0");
    if (!(tol_sv >= 0.0)) throw ConfigError("tol_sv must be nonnegative");
    if (!(dominance_tol > 0.0 && dominance_tol < 1.0))
        throw ConfigError("dominance_tol must lie in (0, 1)");
}

namespace {

double log_sum_exp(const Vector& e) {
    const double m = e.maxCoeff();
    double s = 0.0;
    for (Eigen::Index i = 0; i < e.size(); ++i) s += std::exp(e(i) - m);
    return m + std::log(s);
}

// Cheap per-step quantities (no full Observables pass).
struct StepObs {
    Vector yf;
    double margin = 0.0;
    std::vector<int> support;
    double gap2 = 0.0;
    double dom_gap = 0.0;  // tie set to the rest, see dominance_gap()
    double rho_prod = 0.0;
    double log_loss = 0.0;
};

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Trajectory integrate(const Flow& flow, const Vector& s0, const StepPolicy& policy) {
    policy.validate();
    const Eigen::Index n = flow.dim();
    if (s0.size() != n) throw ShapeError("initial state does not match the flow dimension");

    Trajectory tr;
    const double dominance_level = std::log(1.0 / policy.dominance_tol);

    // Extended state: flow time rides along as one more integrated slot,
    // t' = exp(log_dt_dtau), so both schemes advance it consistently.
    Vector es(n + 1);
    es.head(n) = s0;
    es(n) = policy.t0;

    Vector ds(n);
    bool scale_overflow = false;

    auto ext_deriv = [&](double tau, const Vector& e_state, Vector& out) {
        double log_scale = 0.0;
        const Vector sv = e_state.head(n);
        flow.derivative(tau, e_state(n), sv, ds, &log_scale);
        out.resize(n + 1);
        out.head(n) = ds;
        if (log_scale > 709.0) {
            scale_overflow = true;
            log_scale = 709.0;
        }
        out(n) = std::exp(log_scale);
    };

    auto step_obs = [&](const Vector& e_state) {
        StepObs o;
        const Vector sv = e_state.head(n);
        o.yf = flow.margins(sv);
        MarginInfo mi = margin_and_support(o.yf, policy.tol_sv);
        o.margin = mi.margin;
        o.support = std::move(mi.support);
        o.gap2 = mi.gap2;
        o.rho_prod = flow.rho_product(sv);
        o.dom_gap = dominance_gap(o.yf, o.rho_prod);
        const double scale = flow.exponent_scale(e_state(n), sv);
        const Vector e = -scale * o.yf;
        o.log_loss = log_sum_exp(e);
        return o;
    };

    auto record = [&](long step, double tau, const Vector& e_state) {
        const Vector sv = e_state.head(n);
        const Observables obs = flow.observe(tau, e_state(n), sv);
        const MarginInfo mi = margin_and_support(obs.yf, policy.tol_sv);
        tr.step_index.push_back(step);
        tr.t.push_back(e_state(n));
        tr.log_loss.push_back(obs.log_loss);
        tr.margin.push_back(mi.margin);
        tr.rho.push_back(obs.rho);
        tr.drho2dt.push_back(obs.drho2dt);
        tr.stationarity.push_back(obs.stationarity);
        tr.support.push_back(mi.support);
    };

    auto stop_now = [&](const StepObs& o, double t_flow) -> std::optional<StopReason> {
        if (policy.stop_loss && o.log_loss < std::log(*policy.stop_loss))
            return StopReason::LossThreshold;
        if (policy.stop_rho && o.rho_prod > *policy.stop_rho) return StopReason::RhoThreshold;
        if (policy.stop_time && t_flow >= *policy.stop_time) return StopReason::Horizon;
        return std::nullopt;
    };

    // Step-0 baselines.
    StepObs o0 = step_obs(es);
    std::vector<int> cur_support = o0.support;
    double best_margin = o0.margin;
    double prev_margin = o0.margin;
    bool seen_separable = false;
    bool in_record_streak = false;
    bool have_dominance = false;
    if (o0.margin > 0.0) {
        seen_separable = true;
        tr.t_onset = es(n);
        tr.events.push_back({EventKind::SeparabilityOnset, 0, es(n), o0.margin, {}});
    }
    if (o0.rho_prod * o0.dom_gap > dominance_level) {
        have_dominance = true;
        tr.t_dominance = es(n);
    }
    tr.states.push_back({0, Vector(es.head(n))});
    record(0, 0.0, es);
    long last_recorded = 0;

    std::optional<StopReason> stop = stop_now(o0, es(n));
    std::string detail;
    long step = 0;
    Vector k1, k2, k3, k4, tmp, prev;

    while (!stop && step < policy.max_steps) {
        const double tau = policy.h * static_cast<double>(step);
        prev = es;
        ++step;
        scale_overflow = false;
        bool rolled_back = false;
        try {
            if (policy.scheme == Scheme::Euler) {
                ext_deriv(tau, es, k1);
                es += policy.h * k1;
            } else {
                ext_deriv(tau, es, k1);
                tmp = es + (policy.h / 2.0) * k1;
                ext_deriv(tau + policy.h / 2.0, tmp, k2);
                tmp = es + (policy.h / 2.0) * k2;
                ext_deriv(tau + policy.h / 2.0, tmp, k3);
                tmp = es + policy.h * k3;
                ext_deriv(tau + policy.h, tmp, k4);
                es += (policy.h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        } catch (const KinkError& e) {
            stop = StopReason::Kink;
            detail = e.what();
            rolled_back = true;
        } catch (const StepTooLargeError& e) {
            stop = StopReason::StepTooLarge;
            detail = e.what();
            rolled_back = true;
        } catch (const DegenerateError& e) {
            stop = StopReason::BlowUp;
            detail = e.what();
            rolled_back = true;
        }

        if (!rolled_back) {
            if (scale_overflow || es(n) > 1e300) {
                stop = StopReason::TimeScaleOverflow;
                detail = "dt/dtau left the representable range";
                rolled_back = true;
            } else if (!es.allFinite()) {
                stop = StopReason::BlowUp;
                detail = "state left the representable range";
                rolled_back = true;
            }
        }

        if (rolled_back) {
            es = prev;
            --step;
            break;
        }

        if (policy.renormalize) {
            Vector sv = es.head(n);
            flow.renormalize(sv);
            es.head(n) = sv;
        }

        StepObs o;
        try {
            o = step_obs(es);
        } catch (const DegenerateError& e) {
            stop = StopReason::BlowUp;
            detail = e.what();
            es = prev;
            --step;
            break;
        }

        const double t_now = es(n);
        if (!seen_separable && o.margin > 0.0) {
            seen_separable = true;
            tr.t_onset = t_now;
            tr.events.push_back({EventKind::SeparabilityOnset, step, t_now, o.margin, {}});
        }
        if (o.support != cur_support) {
            cur_support = o.support;
            tr.events.push_back({EventKind::SupportSetChange, step, t_now, o.margin, o.support});
        }
        if (o.margin > best_margin) {
            if (!in_record_streak) {
                tr.events.push_back({EventKind::MarginRecord, step, t_now, o.margin, {}});
                in_record_streak = true;
            }
            best_margin = o.margin;
        } else {
            in_record_streak = false;
        }
        if (!have_dominance) {
            if (o.rho_prod * o.dom_gap > dominance_level) {
                have_dominance = true;
                tr.t_dominance = t_now;
            }
        } else {
            const double delta = o.margin - prev_margin;
            if (!tr.worst_margin_step_after_dominance ||
                delta < *tr.worst_margin_step_after_dominance)
                tr.worst_margin_step_after_dominance = delta;
        }
        prev_margin = o.margin;

        if (step % policy.record_every == 0) {
            // observe() can hit the same singularities as the field (a state
            // can drift into a constraint corner between derivative calls).
            try {
                record(step, policy.h * static_cast<double>(step), es);
                last_recorded = step;
            } catch (const KinkError& e) {
                stop = StopReason::Kink;
                detail = e.what();
            } catch (const StepTooLargeError& e) {
                stop = StopReason::StepTooLarge;
                detail = e.what();
            } catch (const DegenerateError& e) {
                stop = StopReason::BlowUp;
                detail = e.what();
            }
        }
        if (policy.record_states_every > 0 && step % policy.record_states_every == 0)
            tr.states.push_back({step, Vector(es.head(n))});

        stop = stop_now(o, t_now);
    }

    if (!stop) stop = StopReason::MaxSteps;
    tr.stop_reason = *stop;
    tr.stop_detail = detail;
    tr.steps_taken = step;
    tr.t_final = es(n);
    tr.final_state = es.head(n);

    if (last_recorded != step) {
        try {
            record(step, policy.h * static_cast<double>(step), es);
        } catch (const Error&) {
            // The final state may sit exactly on the singularity that stopped
            // the run; the series then ends at the last clean record.
        }
    }
    if (tr.states.back().first != step) tr.states.push_back({step, Vector(es.head(n))});
    return tr;
}

std::vector<std::pair<double, std::vector<int>>> support_timeline(const Trajectory& tr) {
    std::vector<std::pair<double, std::vector<int>>> out;
    for (size_t i = 0; i < tr.support.size(); ++i)
        if (i == 0 || tr.support[i] != tr.support[i - 1])
            out.push_back({tr.t[i], tr.support[i]});
    return out;
}

void write_series_csv(const Trajectory& tr, int depth, std::ostream& os) {
    os << "t,loss,margin";
    for (int k = 1; k <= depth; ++k) os << ",rho_" << k;
    for (int k = 1; k <= depth; ++k) os << ",drho2dt_" << k;
    os << ",stationarity,support_set\n";
    for (size_t i = 0; i < tr.t.size(); ++i) {
        os << g17(tr.t[i]) << ',' << g17(std::exp(tr.log_loss[i])) << ',' << g17(tr.margin[i]);
        for (int k = 0; k < depth; ++k) os << ',' << g17(tr.rho[i](k));
        for (int k = 0; k < depth; ++k) os << ',' << g17(tr.drho2dt[i](k));
        os << ',' << g17(tr.stationarity[i]) << ',';
        for (size_t j = 0; j < tr.support[i].size(); ++j) {
            if (j) os << ';';
            os << tr.support[i][j];
        }
        os << '\n';
    }
}

}  // namespace mf
