//! Receding-horizon execution of the open-loop game strategies with a
//! per-window confidence-bound graph refresh.
//!
//! Each window re-filters the neighbor sets against the bounds at the
//! window-start opinions, rebuilds the game on the filtered structure, plays
//! the equilibrium trajectory for `sigma` time units, and hands the end state
//! to the next window. Within a window the *recorded* control is frozen at
//! its window-start value while the opinion samples follow the window's
//! equilibrium trajectory; a single window spanning the whole horizon
//! therefore reproduces the open-loop opinion trajectory exactly.

use nalgebra::{DMatrix, DVector};

use crate::graph::{confidence_filter, FilterMode, NeighborSets, SocialGraph};
use crate::matfun::{expm, solve_linear};
use crate::openloop::{
    flow_trajectory, sample_equilibrium_segment, GameParams, GameSetup, Trajectory,
};
use crate::{Error, Result};

/// Receding-horizon execution settings.
#[derive(Debug, Clone)]
pub struct HorizonConfig {
    /// Execution window length; must exceed the delay and not exceed `t_f`.
    pub sigma: f64,
    /// Candidate set used by the per-window confidence refresh.
    pub mode: FilterMode,
    /// Overall simulated duration.
    pub total_time: f64,
    /// Output sampling step.
    pub dt: f64,
    /// Per-agent confidence bounds.
    pub eps: DVector<f64>,
    /// Grow the bounds by 1.5 within a window until no agent is isolated,
    /// instead of aborting. Off by default; each window starts again from the
    /// configured bounds.
    pub eps_autogrow: bool,
}

impl HorizonConfig {
    pub fn validate(&self, p: &GameParams) -> Result<()> {
        if !(self.sigma > p.tau && self.sigma <= p.t_f) {
            return Err(Error::InvalidParam {
                name: "sigma",
                reason: format!(
                    "window must satisfy tau < sigma <= t_f, got sigma = {}, tau = {}, t_f = {}",
                    self.sigma, p.tau, p.t_f
                ),
            });
        }
        if !(self.dt > 0.0 && self.dt <= self.sigma) {
            return Err(Error::InvalidParam {
                name: "dt",
                reason: format!("sampling step must lie in (0, sigma], got {}", self.dt),
            });
        }
        if self.total_time < self.sigma {
            return Err(Error::InvalidParam {
                name: "total_time",
                reason: format!(
                    "total time {} is shorter than one window {}",
                    self.total_time, self.sigma
                ),
            });
        }
        if self.eps.len() != p.n() {
            return Err(Error::InvalidParam {
                name: "eps",
                reason: format!("{} bounds for {} agents", self.eps.len(), p.n()),
            });
        }
        if self.eps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidParam {
                name: "eps",
                reason: "confidence bounds must be positive".into(),
            });
        }
        Ok(())
    }
}

/// The per-agent feedback gain `P_i(t) = (1/|N_i|) e^{(T-t)Λᵀ} L̂_i H^{-1}`
/// at delay-free time `t`; the receding control freezes it at `t = 0`.
pub fn feedback_gain(s: &GameSetup, i: usize, t: f64) -> Result<DMatrix<f64>> {
    let horizon = s.horizon();
    if !(0.0..=horizon + 1e-12).contains(&t) {
        return Err(Error::Domain {
            value: t,
            min: 0.0,
            max: horizon,
        });
    }
    // L̂_i H^{-1} = (H^{-T} L̂_i)ᵀ, via a factored solve against Hᵀ
    let lh_inv = solve_linear(&s.coupling().transpose(), s.terminal_laplacian(i))?.transpose();
    let back = expm(&s.drift().transpose(), horizon - t)?;
    Ok(back * lh_inv / s.degree(i) as f64)
}

/// Receding control vector: the window-start equilibrium control, held
/// constant over the window.
///
/// `xbar0_tau` is the delayed window state `x̄_0(τ)`; `t` is the in-window
/// time and is only range-checked, the gain being frozen.
pub fn rh_control(s: &GameSetup, xbar0_tau: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    assert!(!s.stubborn(), "receding horizon covers the non-stubborn game");
    let horizon = s.horizon();
    if !(0.0..=horizon + 1e-12).contains(&t) {
        return Err(Error::Domain {
            value: t,
            min: 0.0,
            max: horizon,
        });
    }
    let zs = s.costate_terminal(xbar0_tau, &s.params().x0);
    let back = expm(&s.drift().transpose(), horizon)?;
    Ok(DVector::from_fn(s.n(), |i, _| {
        -(1.0 / s.params().r[i]) * s.input_dir(i).dot(&(&back * &zs[i]))
    }))
}

/// One executed window: samples on `[0, sigma)` relative to the window start,
/// the exact state at `sigma` for the hand-off, and the refreshed neighbor
/// structure that was played on.
pub struct WindowResult {
    pub times: Vec<f64>,
    pub opinions: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub end_state: DVector<f64>,
    pub filtered: NeighborSets,
}

/// Runs a single receding-horizon window from state `x_t`.
pub fn rh_window(
    g: &SocialGraph,
    x_t: &DVector<f64>,
    p: &GameParams,
    h: &HorizonConfig,
) -> Result<WindowResult> {
    h.validate(p)?;
    window_with_span(g, x_t, p, h, h.sigma)
}

fn filter_with_policy(
    g: &SocialGraph,
    x: &[f64],
    h: &HorizonConfig,
) -> Result<NeighborSets> {
    let mut eps: Vec<f64> = h.eps.iter().copied().collect();
    let mut attempts = 0;
    loop {
        match confidence_filter(g, x, &eps, h.mode) {
            Err(Error::EmptyNeighborhood { agent }) if h.eps_autogrow && attempts < 64 => {
                let _ = agent;
                for e in &mut eps {
                    *e *= 1.5;
                }
                attempts += 1;
            }
            other => return other,
        }
    }
}

fn window_with_span(
    g: &SocialGraph,
    x_t: &DVector<f64>,
    p: &GameParams,
    h: &HorizonConfig,
    span: f64,
) -> Result<WindowResult> {
    let x_slice: Vec<f64> = x_t.iter().copied().collect();
    let filtered = filter_with_policy(g, &x_slice, h)?;

    let window_params = GameParams {
        t_f: p.t_f,
        tau: p.tau,
        r: p.r.clone(),
        gain: p.gain.clone(),
        stubbornness: DVector::from_element(p.n(), 0.0),
        x0: x_t.clone(),
    };
    let setup = GameSetup::build(&filtered, &window_params, false)?;
    let seg = sample_equilibrium_segment(&setup, x_t, span, h.dt, false)?;

    // recorded controls: zero through the delay, then frozen at the
    // window-start value
    let frozen = if span > p.tau {
        rh_control(&setup, &setup.delayed_state(x_t), 0.0)?
    } else {
        DVector::zeros(p.n())
    };
    let controls = seg
        .times
        .iter()
        .map(|&t| {
            if t < p.tau - 1e-12 {
                DVector::zeros(p.n())
            } else {
                frozen.clone()
            }
        })
        .collect();

    Ok(WindowResult {
        times: seg.times,
        opinions: seg.opinions,
        controls,
        end_state: seg.end_state,
        filtered,
    })
}

/// A failed receding run, carrying whatever was simulated before the abort.
#[derive(Debug)]
pub struct RhFailure {
    pub error: Error,
    pub partial: Trajectory,
}

impl std::fmt::Display for RhFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "receding run aborted after {} samples: {}",
            self.partial.len(),
            self.error
        )
    }
}

impl std::error::Error for RhFailure {}

/// Chains receding-horizon windows over `total_time`, refreshing the graph
/// from the latest state at every window start, and closes with a final
/// sample at `total_time`.
pub fn rh_run(
    g: &SocialGraph,
    x0: &DVector<f64>,
    p: &GameParams,
    h: &HorizonConfig,
) -> std::result::Result<Trajectory, Box<RhFailure>> {
    run_windows(g, x0, p, h, false)
}

/// The uncontrolled receding baseline: same window loop and graph refresh,
/// but the opinions follow the plain averaging flow and all controls are
/// zero.
pub fn baseline_run(
    g: &SocialGraph,
    x0: &DVector<f64>,
    p: &GameParams,
    h: &HorizonConfig,
) -> std::result::Result<Trajectory, Box<RhFailure>> {
    run_windows(g, x0, p, h, true)
}

fn run_windows(
    g: &SocialGraph,
    x0: &DVector<f64>,
    p: &GameParams,
    h: &HorizonConfig,
    zero_control: bool,
) -> std::result::Result<Trajectory, Box<RhFailure>> {
    let mut traj = Trajectory {
        times: Vec::new(),
        opinions: Vec::new(),
        controls: Vec::new(),
    };
    let fail = |error: Error, partial: Trajectory| Box::new(RhFailure { error, partial });

    if let Err(e) = h.validate(p) {
        return Err(fail(e, traj));
    }

    let mut x = x0.clone();
    let mut t0 = 0.0;
    while t0 < h.total_time - 1e-9 {
        let span = h.sigma.min(h.total_time - t0);
        let window = if zero_control {
            baseline_window(g, &x, h, span)
        } else {
            window_with_span(g, &x, p, h, span)
        };
        match window {
            Ok(w) => {
                for ((t, xk), uk) in w.times.iter().zip(w.opinions).zip(w.controls) {
                    traj.times.push(t0 + t);
                    traj.opinions.push(xk);
                    traj.controls.push(uk);
                }
                x = w.end_state;
                t0 += span;
            }
            Err(error) => return Err(fail(error, traj)),
        }
    }

    traj.times.push(h.total_time);
    traj.opinions.push(x);
    traj.controls.push(DVector::zeros(p.n()));
    Ok(traj)
}

fn baseline_window(
    g: &SocialGraph,
    x_t: &DVector<f64>,
    h: &HorizonConfig,
    span: f64,
) -> Result<WindowResult> {
    let x_slice: Vec<f64> = x_t.iter().copied().collect();
    let filtered = filter_with_policy(g, &x_slice, h)?;
    let drift = crate::graph::dynamics_matrix(&filtered);
    let flow = flow_trajectory(&drift, x_t, span, h.dt, false)?;
    let end_state = expm(&drift, span)? * x_t;
    Ok(WindowResult {
        times: flow.times,
        opinions: flow.opinions,
        controls: flow.controls,
        end_state,
        filtered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SocialGraph;
    use crate::openloop::{nash_control_nonstubborn, sample_trajectory};
    use approx::assert_abs_diff_eq;

    fn two_node() -> SocialGraph {
        SocialGraph::load_edge_list("0 1").unwrap()
    }

    fn pair_params() -> GameParams {
        GameParams::uniform(DVector::from_vec(vec![-1.0, 1.0]), 1.0, 0.0)
    }

    fn config(n: usize, sigma: f64, total: f64, dt: f64) -> HorizonConfig {
        HorizonConfig {
            sigma,
            mode: FilterMode::Fixed,
            total_time: total,
            dt,
            eps: DVector::from_element(n, f64::INFINITY),
            eps_autogrow: false,
        }
    }

    #[test]
    fn consensus_window_state_draws_zero_control() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_element(2, 0.5), 1.0, 0.0);
        let s = GameSetup::build(g.neighbor_sets(), &p, false).unwrap();
        let u = rh_control(&s, &DVector::from_element(2, 0.5), 0.0).unwrap();
        assert!(u.amax() <= 1e-14);
    }

    #[test]
    fn frozen_control_matches_open_loop_start() {
        let g = two_node();
        let p = pair_params();
        let s = GameSetup::build(g.neighbor_sets(), &p, false).unwrap();
        let u = rh_control(&s, &p.x0, 0.0).unwrap();
        for i in 0..2 {
            let open = nash_control_nonstubborn(&s, &p.x0, 0.0, i).unwrap();
            assert_abs_diff_eq!(u[i], open, epsilon = 1e-13);
        }
    }

    #[test]
    fn frozen_control_is_linear_in_the_state() {
        let g = two_node();
        let p = pair_params();
        let s = GameSetup::build(g.neighbor_sets(), &p, false).unwrap();
        let x = DVector::from_vec(vec![-0.4, 0.7]);
        let u1 = rh_control(&s, &x, 0.0).unwrap();
        let u2 = rh_control(&s, &(&x * 3.0), 0.0).unwrap();
        assert_abs_diff_eq!(&u1 * 3.0, u2, epsilon = 1e-13);
    }

    #[test]
    fn gain_consistent_with_frozen_control() {
        let g = SocialGraph::load_edge_list("0 1\n1 2").unwrap();
        let x0 = DVector::from_vec(vec![-1.0, 0.0, 1.0]);
        let p = GameParams::uniform(x0.clone(), 1.5, 0.2);
        let s = GameSetup::build(g.neighbor_sets(), &p, false).unwrap();
        let x_tau = s.delayed_state(&x0);
        let u = rh_control(&s, &x_tau, 0.0).unwrap();
        let flow_full = expm(s.drift(), p.t_f - 2.0 * p.tau).unwrap();
        for i in 0..3 {
            let gain = feedback_gain(&s, i, 0.0).unwrap();
            let via_gain =
                -(1.0 / p.r[i]) * s.input_dir(i).dot(&(&gain * (&flow_full * &x_tau)));
            assert_abs_diff_eq!(u[i], via_gain, epsilon = 1e-12);
        }
    }

    #[test]
    fn gain_at_end_of_horizon_drops_the_propagator() {
        let g = two_node();
        let p = pair_params();
        let s = GameSetup::build(g.neighbor_sets(), &p, false).unwrap();
        let gain = feedback_gain(&s, 0, s.horizon()).unwrap();
        let direct = solve_linear(&s.coupling().transpose(), s.terminal_laplacian(0))
            .unwrap()
            .transpose();
        assert_abs_diff_eq!(gain, direct, epsilon = 1e-12);
    }

    #[test]
    fn single_window_equals_open_loop_trajectory() {
        let g = SocialGraph::load_edge_list("0 1\n1 2\n0 2\n2 3").unwrap();
        let x0 = DVector::from_vec(vec![-1.0, -0.3, 0.5, 1.0]);
        let p = GameParams::uniform(x0.clone(), 2.0, 0.3);
        let h = config(4, 2.0, 2.0, 0.1);
        let run = rh_run(&g, &x0, &p, &h).unwrap();
        let s = GameSetup::build(g.neighbor_sets(), &p, false).unwrap();
        let open = sample_trajectory(&s, 0.1).unwrap();
        assert_eq!(run.times.len(), open.times.len());
        for ((tr, xr), (to, xo)) in run
            .times
            .iter()
            .zip(&run.opinions)
            .zip(open.times.iter().zip(&open.opinions))
        {
            assert_abs_diff_eq!(tr, to, epsilon = 1e-12);
            assert!((xr - xo).amax() <= 1e-10, "mismatch at t = {tr}");
        }
    }

    #[test]
    fn window_boundary_hands_off_exactly() {
        let g = two_node();
        let p = pair_params();
        let h = config(2, 0.5, 1.0, 0.25);
        let w1 = rh_window(&g, &p.x0, &p, &h).unwrap();
        let w2 = rh_window(&g, &w1.end_state, &p, &h).unwrap();
        // second window's first sample is the handed-off state, bit for bit
        assert_eq!(w2.opinions[0], w1.end_state);
    }

    #[test]
    fn delay_prefix_controls_are_exactly_zero() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![-1.0, 1.0]), 2.0, 0.4);
        let mut h = config(2, 1.0, 2.0, 0.1);
        h.eps = DVector::from_element(2, 5.0);
        let run = rh_run(&g, &p.x0, &p, &h).unwrap();
        for (t, u) in run.times.iter().zip(&run.controls) {
            let in_window = t % 1.0;
            if in_window < 0.4 - 1e-9 && *t < 2.0 - 1e-9 {
                assert_eq!(u.amax(), 0.0, "nonzero control at t = {t}");
            }
        }
    }

    #[test]
    fn consensus_spread_keeps_shrinking() {
        let g = SocialGraph::load_edge_list("0 1\n1 2\n0 2").unwrap();
        let x0 = DVector::from_vec(vec![0.50, 0.51, 0.52]);
        let p = GameParams::uniform(x0.clone(), 1.0, 0.0);
        let mut h = config(3, 0.5, 3.0, 0.05);
        h.eps = DVector::from_element(3, 0.1);
        let run = rh_run(&g, &x0, &p, &h).unwrap();
        let mut prev = f64::INFINITY;
        for x in &run.opinions {
            let spread = x.max() - x.min();
            assert!(spread <= prev + 1e-9, "spread grew: {spread} > {prev}");
            prev = spread;
        }
    }

    #[test]
    fn empty_neighborhood_aborts_with_partial_trajectory() {
        let g = SocialGraph::load_edge_list("0 1\n1 2").unwrap();
        let x0 = DVector::from_vec(vec![0.0, 0.1, 5.0]);
        let p = GameParams::uniform(x0.clone(), 1.0, 0.0);
        let mut h = config(3, 0.5, 2.0, 0.1);
        h.eps = DVector::from_element(3, 0.2);
        let err = rh_run(&g, &x0, &p, &h).unwrap_err();
        assert!(matches!(err.error, Error::EmptyNeighborhood { agent: 2 }));
        assert!(err.partial.is_empty()); // failed in the very first window
    }

    #[test]
    fn autogrow_recovers_from_isolation() {
        let g = SocialGraph::load_edge_list("0 1\n1 2").unwrap();
        let x0 = DVector::from_vec(vec![0.0, 0.1, 5.0]);
        let p = GameParams::uniform(x0.clone(), 1.0, 0.0);
        let mut h = config(3, 0.5, 1.0, 0.1);
        h.eps = DVector::from_element(3, 0.2);
        h.eps_autogrow = true;
        let run = rh_run(&g, &x0, &p, &h).unwrap();
        assert_abs_diff_eq!(*run.times.last().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn baseline_matches_free_flow_when_nothing_is_filtered() {
        let g = SocialGraph::load_edge_list("0 1\n1 2").unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let p = GameParams::uniform(x0.clone(), 1.0, 0.0);
        let h = config(3, 1.0, 3.0, 0.5);
        let run = baseline_run(&g, &x0, &p, &h).unwrap();
        let drift = crate::graph::dynamics_matrix(g.neighbor_sets());
        for (t, x) in run.times.iter().zip(&run.opinions) {
            let direct = expm(&drift, *t).unwrap() * &x0;
            assert!((x - direct).amax() <= 1e-11);
        }
        for u in &run.controls {
            assert_eq!(u.amax(), 0.0);
        }
    }

    #[test]
    fn rejects_window_not_exceeding_delay() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![-1.0, 1.0]), 2.0, 0.5);
        let h = config(2, 0.5, 2.0, 0.1);
        assert!(rh_window(&g, &p.x0, &p, &h).is_err());
    }
}
