//! Independent oracles and metrics: cost evaluation, forward ODE simulation,
//! unilateral-deviation Nash tests, a discretized-game cross-check, and
//! final-opinion classification.
//!
//! Nothing in here reuses the closed-form solver path: the forward simulator
//! integrates the delayed dynamics with classical RK4, and the discrete
//! oracle solves the Euler-discretized game from its own first-order
//! conditions. Agreement between these routes and the closed forms is the
//! crate's central correctness argument.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::graph::NeighborSets;
use crate::matfun::solve_linear;
use crate::openloop::{GameParams, GameSetup, SampledControls, Trajectory};
use crate::{Error, Result};

/// Per-agent cost breakdown.
///
/// `total = prejudice + disagreement + effort`; the prejudice term is zero
/// for the non-stubborn cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub agent: usize,
    pub disagreement: f64,
    pub effort: f64,
    pub prejudice: f64,
    pub total: f64,
}

/// Evaluates agent `i`'s cost on a recorded trajectory.
///
/// The disagreement term reads the final sample; the effort term integrates
/// `r_i u_i²` over the recorded (already delay-shifted) control samples with
/// the composite trapezoidal rule.
pub fn evaluate_cost(
    traj: &Trajectory,
    i: usize,
    p: &GameParams,
    nbrs: &NeighborSets,
    stubborn: bool,
) -> Result<CostReport> {
    let n = nbrs.n();
    if i >= n {
        return Err(Error::IndexOutOfRange { agent: i, n });
    }
    let limit = p.t_f / 10.0;
    let step = traj.max_step();
    if step > limit + 1e-12 {
        return Err(Error::GridTooCoarse { step, limit });
    }

    let x_f = traj.final_opinions();
    let mut disagreement = 0.0;
    for &j in nbrs.set(i) {
        disagreement += (x_f[i] - x_f[j]).powi(2);
    }
    disagreement /= nbrs.degree(i) as f64;

    let omega = p.stubbornness[i];
    let prejudice = if stubborn {
        disagreement *= 1.0 - omega;
        omega * (x_f[i] - p.x0[i]).powi(2)
    } else {
        0.0
    };

    let mut effort = 0.0;
    for w in 0..traj.len().saturating_sub(1) {
        let dt = traj.times[w + 1] - traj.times[w];
        let a = traj.controls[w][i].powi(2);
        let b = traj.controls[w + 1][i].powi(2);
        effort += 0.5 * (a + b) * dt;
    }
    effort *= p.r[i];

    Ok(CostReport {
        agent: i,
        disagreement,
        effort,
        prejudice,
        total: prejudice + disagreement + effort,
    })
}

/// Integrates the delayed-input dynamics `ẋ = Λx + Σ_i B_i u_i(t-τ)` with
/// fixed-step classical RK4.
///
/// `controls(i, s)` is agent `i`'s control signal at its own time `s`; the
/// simulator performs the delay shift and treats `s < 0` as zero. Recorded
/// control samples follow the same convention as [`crate::sample_trajectory`]
/// (shifted, zero before `τ`).
pub fn simulate_forward(
    nbrs: &NeighborSets,
    p: &GameParams,
    controls: &dyn Fn(usize, f64) -> f64,
    dt: f64,
) -> Result<Trajectory> {
    p.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParam {
            name: "dt",
            reason: format!("integration step must be positive, got {dt}"),
        });
    }
    let n = nbrs.n();
    let drift = crate::graph::dynamics_matrix(nbrs);
    let tau = p.tau;

    let input_at = |t: f64| -> DVector<f64> {
        let s = t - tau;
        if s < 0.0 {
            return DVector::zeros(n);
        }
        DVector::from_fn(n, |i, _| p.gain[i] * controls(i, s))
    };
    let recorded_at = |t: f64| -> DVector<f64> {
        let s = t - tau;
        if s < 0.0 {
            return DVector::zeros(n);
        }
        DVector::from_fn(n, |i, _| controls(i, s))
    };

    let mut times = Vec::new();
    let mut opinions = Vec::new();
    let mut recorded = Vec::new();
    let mut x = p.x0.clone();
    let mut t = 0.0;

    times.push(0.0);
    opinions.push(x.clone());
    recorded.push(recorded_at(0.0));

    let f = |t: f64, x: &DVector<f64>| -> DVector<f64> { &drift * x + input_at(t) };

    while t < p.t_f - 1e-12 {
        let h = dt.min(p.t_f - t);
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = f(t + h, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t += h;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::StateDiverged { t });
        }
        times.push(t);
        opinions.push(x.clone());
        recorded.push(recorded_at(t));
    }

    Ok(Trajectory {
        times,
        opinions,
        controls: recorded,
    })
}

/// Result of a unilateral-deviation probe for one agent.
#[derive(Debug, Clone)]
pub struct DeviationReport {
    pub agent: usize,
    pub equilibrium_cost: f64,
    /// `J_i(deviation) - J_i(equilibrium)` per perturbation.
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub pass: bool,
}

const DEVIATION_KNOTS: usize = 16;

/// Perturbs agent `i`'s equilibrium control with seeded piecewise-linear
/// deviations (others held at equilibrium) and reports the cost margins.
///
/// A negative margin beyond `1e-8 (1 + |J_i|)` would witness a profitable
/// unilateral deviation, contradicting the Nash property.
pub fn deviation_test(
    nbrs: &NeighborSets,
    p: &GameParams,
    i: usize,
    n_perturbations: usize,
    seed: u64,
    stubborn: bool,
) -> Result<DeviationReport> {
    let setup = GameSetup::build(nbrs, p, stubborn)?;
    let horizon = setup.horizon();
    let sim_dt = (p.t_f / 1000.0).min(0.01);
    let table = SampledControls::build(&setup, &p.x0, sim_dt / 2.0)?;

    let base = |j: usize, s: f64| table.eval(j, s);
    let eq_traj = simulate_forward(nbrs, p, &base, sim_dt)?;
    let eq_cost = evaluate_cost(&eq_traj, i, p, nbrs, stubborn)?.total;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margins = Vec::with_capacity(n_perturbations);
    for _ in 0..n_perturbations {
        let knots: Vec<f64> = (0..DEVIATION_KNOTS)
            .map(|_| rng.gen_range(-0.5..=0.5))
            .collect();
        let delta = move |s: f64| -> f64 {
            if !(0.0..=horizon).contains(&s) {
                return 0.0;
            }
            let pos = s / horizon * (DEVIATION_KNOTS - 1) as f64;
            let k = (pos.floor() as usize).min(DEVIATION_KNOTS - 2);
            let frac = pos - k as f64;
            knots[k] * (1.0 - frac) + knots[k + 1] * frac
        };
        let deviated = |j: usize, s: f64| -> f64 {
            let u = table.eval(j, s);
            if j == i {
                u + delta(s)
            } else {
                u
            }
        };
        let traj = simulate_forward(nbrs, p, &deviated, sim_dt)?;
        let cost = evaluate_cost(&traj, i, p, nbrs, stubborn)?.total;
        margins.push(cost - eq_cost);
    }

    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = min_margin >= -1e-8 * (1.0 + eq_cost.abs());
    Ok(DeviationReport {
        agent: i,
        equilibrium_cost: eq_cost,
        margins,
        min_margin,
        pass,
    })
}

/// Open-loop Nash solution of the Euler-discretized, delay-free game.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    /// Discretization step `t_f / steps`.
    pub step: f64,
    /// `controls[(i, k)]` is agent `i`'s control on `[k h, (k+1) h)`.
    pub controls: DMatrix<f64>,
    /// States `x_0, ..., x_N` under those controls.
    pub states: Vec<DVector<f64>>,
}

/// Solves the Euler-discretized game exactly from the stacked first-order
/// conditions of all agents.
///
/// The discrete dynamics are `x_{k+1} = (I + hΛ) x_k + h Σ_i B_i u_{i,k}`
/// and each agent minimizes her terminal disagreement plus `h r_i Σ_k
/// u_{i,k}²`. Differentiating in every `u_{i,k}` simultaneously yields one
/// dense linear system in the `n·N` stacked controls; no matrix exponentials
/// or Gramians are involved, which keeps this an independent check of the
/// continuous solver as `N` grows.
pub fn discrete_game_oracle(nbrs: &NeighborSets, p: &GameParams, steps: usize) -> Result<DiscreteSolution> {
    p.validate()?;
    if p.tau != 0.0 {
        return Err(Error::InvalidParam {
            name: "tau",
            reason: "discrete oracle covers the delay-free game only".into(),
        });
    }
    if steps == 0 {
        return Err(Error::InvalidParam {
            name: "steps",
            reason: "need at least one step".into(),
        });
    }
    let n = nbrs.n();
    let h = p.t_f / steps as f64;
    let drift = crate::graph::dynamics_matrix(nbrs);
    let a = DMatrix::identity(n, n) + &drift * h;

    // powers[m] = A^m
    let mut powers = Vec::with_capacity(steps + 1);
    powers.push(DMatrix::identity(n, n));
    for m in 1..=steps {
        let next = &powers[m - 1] * &a;
        powers.push(next);
    }

    // per (agent, step): a_{i,k} = A^{N-1-k} B_i, c_{i,k} = L_i a_{i,k} / |N_i|
    let mut reach = vec![DVector::zeros(n); n * steps];
    let mut grad_dir = vec![DVector::zeros(n); n * steps];
    for i in 0..n {
        let star = crate::graph::agent_laplacian(nbrs, i)?;
        let b_i = DVector::from_fn(n, |r, _| if r == i { p.gain[i] } else { 0.0 });
        for k in 0..steps {
            let a_ik = &powers[steps - 1 - k] * &b_i;
            let c_ik = (&star.laplacian * &a_ik) / star.degree as f64;
            reach[i * steps + k] = a_ik;
            grad_dir[i * steps + k] = c_ik;
        }
    }

    let x_free = &powers[steps] * &p.x0;
    let dim = n * steps;
    let mut system = DMatrix::zeros(dim, dim);
    let mut rhs = DMatrix::zeros(dim, 1);
    for i in 0..n {
        for k in 0..steps {
            let row = i * steps + k;
            system[(row, row)] += p.r[i];
            for j in 0..n {
                for l in 0..steps {
                    system[(row, j * steps + l)] +=
                        h * grad_dir[i * steps + k].dot(&reach[j * steps + l]);
                }
            }
            rhs[(row, 0)] = -grad_dir[i * steps + k].dot(&x_free);
        }
    }
    let solution = solve_linear(&system, &rhs)?;

    let mut controls = DMatrix::zeros(n, steps);
    for i in 0..n {
        for k in 0..steps {
            controls[(i, k)] = solution[(i * steps + k, 0)];
        }
    }

    let mut states = Vec::with_capacity(steps + 1);
    let mut x = p.x0.clone();
    states.push(x.clone());
    for k in 0..steps {
        let mut forced = DVector::zeros(n);
        for i in 0..n {
            forced[i] = p.gain[i] * controls[(i, k)];
        }
        x = &a * &x + forced * h;
        states.push(x.clone());
    }

    Ok(DiscreteSolution {
        step: h,
        controls,
        states,
    })
}

/// Final-opinion pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Consensus,
    /// `k >= 2` tight groups separated by gaps above the cluster tolerance.
    Clustered(usize),
    Disagreement,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Consensus => write!(f, "Consensus"),
            Outcome::Clustered(k) => write!(f, "Clustered({k})"),
            Outcome::Disagreement => write!(f, "Disagreement"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeClass {
    pub kind: Outcome,
    pub cluster_centers: Vec<f64>,
    pub max_spread: f64,
}

/// Classifies final opinions as consensus, `k` clusters, or disagreement.
///
/// Consensus: overall spread within `consensus_tol`. Clusters: sorting and
/// splitting at gaps above `cluster_tol` yields `2 <= k <= n/2` groups, each
/// of diameter at most `cluster_tol` (the `n/2` cap keeps a cloud of
/// singletons from counting as clustering). Anything else is disagreement.
pub fn classify_outcome(x: &DVector<f64>, consensus_tol: f64, cluster_tol: f64) -> OutcomeClass {
    assert!(consensus_tol > 0.0 && cluster_tol > 0.0, "tolerances must be positive");
    let n = x.len();
    let mut sorted: Vec<f64> = x.iter().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite opinions"));
    let max_spread = sorted.last().unwrap() - sorted.first().unwrap();

    if max_spread <= consensus_tol {
        let center = sorted.iter().sum::<f64>() / n as f64;
        return OutcomeClass {
            kind: Outcome::Consensus,
            cluster_centers: vec![center],
            max_spread,
        };
    }

    let mut groups: Vec<Vec<f64>> = vec![vec![sorted[0]]];
    for &v in &sorted[1..] {
        let last = groups.last_mut().unwrap();
        if v - *last.last().unwrap() > cluster_tol {
            groups.push(vec![v]);
        } else {
            last.push(v);
        }
    }
    let centers: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let tight = groups
        .iter()
        .all(|g| g.last().unwrap() - g.first().unwrap() <= cluster_tol);
    let k = groups.len();
    let kind = if tight && k >= 2 && k <= n / 2 {
        Outcome::Clustered(k)
    } else {
        Outcome::Disagreement
    };
    OutcomeClass {
        kind,
        cluster_centers: centers,
        max_spread,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SocialGraph;
    use crate::openloop::sample_trajectory;
    use approx::assert_abs_diff_eq;

    fn two_node() -> SocialGraph {
        SocialGraph::load_edge_list("0 1").unwrap()
    }

    #[test]
    fn zero_control_consensus_costs_nothing() {
        let g = SocialGraph::load_edge_list("0 1\n1 2").unwrap();
        let p = GameParams::uniform(DVector::from_element(3, 0.4), 1.0, 0.0);
        let traj = simulate_forward(g.neighbor_sets(), &p, &|_, _| 0.0, 0.01).unwrap();
        for i in 0..3 {
            let c = evaluate_cost(&traj, i, &p, g.neighbor_sets(), false).unwrap();
            assert_abs_diff_eq!(c.total, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_gap_disagreement_term() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![0.0, 1.0]), 1.0, 0.0);
        // hand-built static trajectory: opinions frozen at (0, 1), no control
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let opinions = vec![DVector::from_vec(vec![0.0, 1.0]); 11];
        let controls = vec![DVector::zeros(2); 11];
        let traj = Trajectory {
            times,
            opinions,
            controls,
        };
        for i in 0..2 {
            let c = evaluate_cost(&traj, i, &p, g.neighbor_sets(), false).unwrap();
            assert_abs_diff_eq!(c.disagreement, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(c.effort, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn symmetric_two_node_equilibrium_costs_match() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![-1.0, 1.0]), 1.0, 0.0);
        let s = GameSetup::build(g.neighbor_sets(), &p, false).unwrap();
        let traj = sample_trajectory(&s, 0.001).unwrap();
        let c0 = evaluate_cost(&traj, 0, &p, g.neighbor_sets(), false).unwrap();
        let c1 = evaluate_cost(&traj, 1, &p, g.neighbor_sets(), false).unwrap();
        assert_abs_diff_eq!(c0.total, c1.total, epsilon = 1e-10);
        let gap = -0.18155548_f64;
        assert_abs_diff_eq!(c0.disagreement, gap * gap, epsilon = 1e-5);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![0.0, 1.0]), 1.0, 0.0);
        let traj = Trajectory {
            times: vec![0.0, 0.5, 1.0],
            opinions: vec![DVector::zeros(2); 3],
            controls: vec![DVector::zeros(2); 3],
        };
        assert!(matches!(
            evaluate_cost(&traj, 0, &p, g.neighbor_sets(), false),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn forward_simulation_matches_flow_without_controls() {
        let g = SocialGraph::zachary();
        let x0 = DVector::from_fn(34, |i, _| -1.0 + 0.06 * i as f64);
        let p = GameParams::uniform(x0.clone(), 10.0, 0.0);
        let traj = simulate_forward(g.neighbor_sets(), &p, &|_, _| 0.0, 0.001).unwrap();
        let drift = crate::graph::dynamics_matrix(g.neighbor_sets());
        let expected = crate::matfun::expm(&drift, 10.0).unwrap() * &x0;
        assert!((traj.final_opinions() - expected).amax() <= 1e-8);
    }

    #[test]
    fn forward_simulation_constant_control_closed_form() {
        // pair graph, u_0 = c, u_1 = 0: difference d = x_0 - x_1 obeys
        // d' = -2 d + c, so d(t) = e^{-2t} d_0 + c (1 - e^{-2t}) / 2
        let g = two_node();
        let x0 = DVector::from_vec(vec![0.5, -0.5]);
        let p = GameParams::uniform(x0, 1.0, 0.0);
        let c = 0.3;
        let traj = simulate_forward(
            g.neighbor_sets(),
            &p,
            &|i, _| if i == 0 { c } else { 0.0 },
            0.0005,
        )
        .unwrap();
        let x = traj.final_opinions();
        let d = x[0] - x[1];
        let expected = (-2.0_f64).exp() * 1.0 + c * (1.0 - (-2.0_f64).exp()) / 2.0;
        assert_abs_diff_eq!(d, expected, epsilon = 1e-9);
        // the mean moves by c t / 2
        assert_abs_diff_eq!((x[0] + x[1]) / 2.0, c * 1.0 / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn equilibrium_controls_reproduce_closed_form_trajectory() {
        let g = SocialGraph::load_edge_list("0 1\n1 2\n0 2\n2 3").unwrap();
        let x0 = DVector::from_vec(vec![-1.0, -0.2, 0.6, 1.0]);
        let p = GameParams::uniform(x0.clone(), 2.0, 0.0);
        let s = GameSetup::build(g.neighbor_sets(), &p, false).unwrap();
        let dt = 0.001;
        let table = SampledControls::build(&s, &x0, dt / 2.0).unwrap();
        let sim = simulate_forward(g.neighbor_sets(), &p, &|i, t| table.eval(i, t), dt).unwrap();
        let closed = crate::openloop::opinion_trajectory_nonstubborn(&s, &x0, 2.0).unwrap();
        assert!((sim.final_opinions() - closed).amax() <= 1e-6);
    }

    #[test]
    fn deviation_zero_perturbation_has_zero_margin() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![-1.0, 1.0]), 1.0, 0.0);
        let report = deviation_test(g.neighbor_sets(), &p, 0, 0, 7, false).unwrap();
        assert!(report.margins.is_empty());
        assert!(report.pass);
        // n_perturbations = 0 exercises only the equilibrium path; a real
        // zero perturbation is the k=0 knot draw being exactly zero, which
        // the seeded generator never produces, so check determinism instead
        let again = deviation_test(g.neighbor_sets(), &p, 0, 0, 7, false).unwrap();
        assert_eq!(report.equilibrium_cost, again.equilibrium_cost);
    }

    #[test]
    fn deviations_never_beat_the_equilibrium() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![-1.0, 1.0]), 1.0, 0.0);
        for agent in 0..2 {
            let report = deviation_test(g.neighbor_sets(), &p, agent, 20, 42, false).unwrap();
            assert!(
                report.pass,
                "agent {agent} margin {}",
                report.min_margin
            );
        }
    }

    #[test]
    fn discrete_oracle_consensus_start_is_all_zero() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_element(2, 0.3), 1.0, 0.0);
        let sol = discrete_game_oracle(g.neighbor_sets(), &p, 50).unwrap();
        assert!(sol.controls.amax() <= 1e-14);
    }

    #[test]
    fn discrete_oracle_converges_to_closed_form() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![-1.0, 1.0]), 1.0, 0.0);
        let exact = 2.0 * (-2.0f64).exp() * (-2.0f64).exp() / (1.0 + (1.0 - (-4.0f64).exp()) / 2.0);
        let coarse = discrete_game_oracle(g.neighbor_sets(), &p, 100).unwrap();
        assert!((coarse.controls[(0, 0)] - exact).abs() <= 5e-2);
        let fine = discrete_game_oracle(g.neighbor_sets(), &p, 1000).unwrap();
        assert!((fine.controls[(0, 0)] - exact).abs() <= 5e-3);
        // first order: tenfold refinement buys roughly a tenfold error drop
        let ratio = (coarse.controls[(0, 0)] - exact).abs() / (fine.controls[(0, 0)] - exact).abs();
        assert!(ratio > 5.0 && ratio < 20.0, "convergence ratio {ratio}");
    }

    #[test]
    fn discrete_oracle_requires_zero_delay() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![-1.0, 1.0]), 1.0, 0.1);
        assert!(discrete_game_oracle(g.neighbor_sets(), &p, 10).is_err());
    }

    #[test]
    fn classify_degenerate_and_clustered_cases() {
        let all_equal = DVector::from_element(5, 0.3);
        assert_eq!(
            classify_outcome(&all_equal, 0.05, 0.1).kind,
            Outcome::Consensus
        );

        let two_groups = DVector::from_vec(vec![-0.5, -0.49, 0.5, 0.51]);
        let c = classify_outcome(&two_groups, 0.05, 0.1);
        assert_eq!(c.kind, Outcome::Clustered(2));
        assert_eq!(c.cluster_centers.len(), 2);
        assert_abs_diff_eq!(c.cluster_centers[0], -0.495, epsilon = 1e-12);

        let spread = DVector::from_fn(34, |i, _| -1.0 + 0.06 * i as f64);
        assert_eq!(
            classify_outcome(&spread, 0.05, 0.01).kind,
            Outcome::Disagreement
        );
    }

    #[test]
    fn classification_invariances() {
        let x = DVector::from_vec(vec![0.9, -0.8, 0.88, -0.79, 0.91]);
        let base = classify_outcome(&x, 0.05, 0.1);
        let shifted = classify_outcome(&x.add_scalar(3.7), 0.05, 0.1);
        assert_eq!(base.kind, shifted.kind);
        let permuted = DVector::from_vec(vec![-0.8, 0.91, 0.9, 0.88, -0.79]);
        assert_eq!(base.kind, classify_outcome(&permuted, 0.05, 0.1).kind);
        assert_abs_diff_eq!(
            base.max_spread,
            classify_outcome(&permuted, 0.05, 0.1).max_spread,
            epsilon = 1e-15
        );
    }

    #[test]
    fn effort_term_converges_quadratically_under_refinement() {
        let g = two_node();
        let p = GameParams::uniform(DVector::from_vec(vec![-1.0, 1.0]), 1.0, 0.0);
        let s = GameSetup::build(g.neighbor_sets(), &p, false).unwrap();
        // exact effort of the closed-form control: c² (1 - e^{-4}) / 4
        let c = 2.0 * (-2.0f64).exp() / (1.0 + (1.0 - (-4.0f64).exp()) / 2.0);
        let exact = c * c * (1.0 - (-4.0f64).exp()) / 4.0;
        let mut errs = Vec::new();
        for &dt in &[0.02, 0.01, 0.005] {
            let traj = sample_trajectory(&s, dt).unwrap();
            let cost = evaluate_cost(&traj, 0, &p, g.neighbor_sets(), false).unwrap();
            errs.push((cost.effort - exact).abs());
        }
        assert!(errs[1] <= errs[0] / 3.2, "halving dt: {errs:?}");
        assert!(errs[2] <= errs[1] / 3.2, "halving dt again: {errs:?}");
    }
}
