//! Closed-form open-loop Nash equilibrium controls and opinion trajectories
//! for the delayed opinion game, in the non-stubborn and stubborn variants.
//!
//! The input delay is removed by the change of variables
//! `y(t) = e^{-τΛ} x(t+τ)`, which turns the delayed game on `[0, t_f]` into a
//! delay-free game on `[0, T]`, `T = t_f - τ`, with transformed input
//! directions `B̂_i = e^{-τΛ} B_i` and terminal matrices
//! `L̂_i = e^{τΛᵀ} L_i e^{τΛ}`. Pontryagin's conditions then give linear
//! co-state dynamics; stacking the terminal co-states couples all agents
//! through a single n×n system `H y(T) = e^{(t_f-2τ)Λ} x(τ) (+ prejudice
//! feed)`, whose solvability is exactly the existence of the unique
//! equilibrium.
//!
//! With the terminal co-states `z_i` in hand, everything is explicit:
//!
//! ```text
//! u_i(t)   = -(1/r_i) B̂_iᵀ e^{(T-t)Λᵀ} z_i
//! x(t+τ)   = e^{tΛ} x(τ) - e^{τΛ} Σ_i Ψ_i(t) e^{(T-t)Λᵀ} z_i
//! ```
//!
//! where `Ψ_i` is the Gramian block of agent `i`'s control channel. The
//! co-state propagation factor `e^{(T-t)Λᵀ}` inside the trajectory sum is
//! what makes the closed form agree with forward integration of the dynamics
//! under the equilibrium controls; the `verify` module cross-checks this.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::graph::{dynamics_matrix, NeighborSets};
use crate::matfun::{expm, gramian_block, Factorized};
use crate::{Error, Result};

/// Game data: horizon, delay, per-agent weights, and initial opinions.
#[derive(Debug, Clone)]
pub struct GameParams {
    /// Terminal time of the game.
    pub t_f: f64,
    /// Input delay, `0 <= tau < t_f`.
    pub tau: f64,
    /// Control effort weights, `r_i > 0`.
    pub r: DVector<f64>,
    /// Input gains `b_i != 0`.
    pub gain: DVector<f64>,
    /// Stubbornness coefficients `ω_i` in `[0, 1]`.
    pub stubbornness: DVector<f64>,
    /// Initial opinions; these double as the prejudices of stubborn agents.
    pub x0: DVector<f64>,
}

impl GameParams {
    /// Unit weights and gains, no stubbornness.
    pub fn uniform(x0: DVector<f64>, t_f: f64, tau: f64) -> Self {
        let n = x0.len();
        Self {
            t_f,
            tau,
            r: DVector::from_element(n, 1.0),
            gain: DVector::from_element(n, 1.0),
            stubbornness: DVector::from_element(n, 0.0),
            x0,
        }
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let check_len = |name: &'static str, len: usize| {
            if len != n {
                Err(Error::InvalidParam {
                    name,
                    reason: format!("length {len} does not match {n} agents"),
                })
            } else {
                Ok(())
            }
        };
        check_len("r", self.r.len())?;
        check_len("gain", self.gain.len())?;
        check_len("stubbornness", self.stubbornness.len())?;
        if !(self.t_f > 0.0 && self.t_f.is_finite()) {
            return Err(Error::InvalidParam {
                name: "t_f",
                reason: format!("horizon must be positive, got {}", self.t_f),
            });
        }
        if !(0.0..self.t_f).contains(&self.tau) {
            return Err(Error::InvalidParam {
                name: "tau",
                reason: format!("delay must satisfy 0 <= tau < t_f, got {}", self.tau),
            });
        }
        if let Some(i) = self.r.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParam {
                name: "r",
                reason: format!("r[{i}] must be positive and finite"),
            });
        }
        if let Some(i) = self.gain.iter().position(|&v| v == 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParam {
                name: "gain",
                reason: format!("gain[{i}] must be nonzero and finite"),
            });
        }
        if let Some(i) = self
            .stubbornness
            .iter()
            .position(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(Error::InvalidParam {
                name: "stubbornness",
                reason: format!("stubbornness[{i}] must lie in [0, 1]"),
            });
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam {
                name: "x0",
                reason: "initial opinions must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Precomputed solver state for one game instance on one (possibly filtered)
/// neighbor structure. Immutable once built; evaluations are pure.
pub struct GameSetup {
    stubborn: bool,
    params: GameParams,
    degrees: Vec<usize>,
    drift: DMatrix<f64>,
    shift: DMatrix<f64>,
    flow_full: DMatrix<f64>,
    terminal_laplacians: Vec<DMatrix<f64>>,
    input_dirs: Vec<DVector<f64>>,
    effort_kernels: Vec<DMatrix<f64>>,
    horizon_gramians: Vec<DMatrix<f64>>,
    coupling: DMatrix<f64>,
    coupling_fact: Factorized,
    prejudice_dirs: Vec<DVector<f64>>,
    prejudice_gram: DMatrix<f64>,
}

/// Builds the full solver state; see [`GameSetup::build`].
pub fn build_setup(nbrs: &NeighborSets, params: &GameParams, stubborn: bool) -> Result<GameSetup> {
    GameSetup::build(nbrs, params, stubborn)
}

impl GameSetup {
    /// Precomputes the drift, the delay-transformed per-agent matrices, the
    /// horizon Gramians, and the factorized coupling matrix. Fails with
    /// [`Error::SingularMatrix`] when the game has no unique open-loop Nash
    /// equilibrium for these parameters.
    pub fn build(nbrs: &NeighborSets, params: &GameParams, stubborn: bool) -> Result<Self> {
        params.validate()?;
        let n = nbrs.n();
        if params.n() != n {
            return Err(Error::InvalidParam {
                name: "x0",
                reason: format!("{} opinions for {} agents", params.n(), n),
            });
        }

        let tau = params.tau;
        let horizon = params.t_f - tau;
        let drift = dynamics_matrix(nbrs);
        let shift = expm(&drift, tau)?;
        let unshift = expm(&drift, -tau)?;
        let flow_full = expm(&drift, params.t_f - 2.0 * tau)?;
        let shift_t = shift.transpose();

        let degrees: Vec<usize> = (0..n).map(|i| nbrs.degree(i)).collect();

        let mut terminal_laplacians = Vec::with_capacity(n);
        let mut input_dirs = Vec::with_capacity(n);
        let mut effort_kernels = Vec::with_capacity(n);
        let mut horizon_gramians = Vec::with_capacity(n);
        let mut prejudice_dirs = Vec::with_capacity(n);
        let mut coupling = DMatrix::<f64>::identity(n, n);
        let mut prejudice_gram = DMatrix::<f64>::zeros(n, n);

        for i in 0..n {
            let star = crate::graph::agent_laplacian(nbrs, i)?;
            let l_hat = &shift_t * &star.laplacian * &shift;

            let b_hat: DVector<f64> = params.gain[i] * unshift.column(i).clone_owned();
            let s_i = DMatrix::from_fn(n, n, |a, b| b_hat[a] * b_hat[b] / params.r[i]);
            let psi_i = gramian_block(&drift, &s_i, horizon)?;

            let omega = params.stubbornness[i];
            // terminal weight Δ̃_i + Γ_i acting on y(T)
            let mut weight = &l_hat * ((1.0 - omega) / degrees[i] as f64);
            let v_i: DVector<f64> = shift_t.column(i).clone_owned();
            if stubborn && omega != 0.0 {
                weight += omega * &v_i * v_i.transpose();
                prejudice_gram.set_column(i, &(omega * (&psi_i * &v_i)));
            }
            if !stubborn {
                weight = &l_hat * (1.0 / degrees[i] as f64);
            }
            coupling += &psi_i * &weight;

            terminal_laplacians.push(l_hat);
            input_dirs.push(b_hat);
            effort_kernels.push(s_i);
            horizon_gramians.push(psi_i);
            prejudice_dirs.push(v_i);
        }

        let coupling_fact = Factorized::new(coupling.clone())?;

        Ok(Self {
            stubborn,
            params: params.clone(),
            degrees,
            drift,
            shift,
            flow_full,
            terminal_laplacians,
            input_dirs,
            effort_kernels,
            horizon_gramians,
            coupling,
            coupling_fact,
            prejudice_dirs,
            prejudice_gram,
        })
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn stubborn(&self) -> bool {
        self.stubborn
    }

    pub fn params(&self) -> &GameParams {
        &self.params
    }

    /// Delay-free horizon `T = t_f - tau`.
    pub fn horizon(&self) -> f64 {
        self.params.t_f - self.params.tau
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    /// The coupling matrix whose invertibility certifies uniqueness.
    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    /// Terminal disagreement matrix of agent `i` in delay-free coordinates.
    pub fn terminal_laplacian(&self, i: usize) -> &DMatrix<f64> {
        &self.terminal_laplacians[i]
    }

    pub fn input_dir(&self, i: usize) -> &DVector<f64> {
        &self.input_dirs[i]
    }

    pub fn effort_kernel(&self, i: usize) -> &DMatrix<f64> {
        &self.effort_kernels[i]
    }

    /// `Ψ_i` evaluated at the delay-free horizon.
    pub fn horizon_gramian(&self, i: usize) -> &DMatrix<f64> {
        &self.horizon_gramians[i]
    }

    /// Applies the factorized coupling matrix: solves `H X = rhs`.
    pub fn solve_coupling(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.coupling_fact.solve_matrix(rhs)
    }

    /// State after the uncontrolled prefix: `x(τ) = e^{τΛ} x_start`.
    pub fn delayed_state(&self, x_start: &DVector<f64>) -> DVector<f64> {
        &self.shift * x_start
    }

    /// Terminal state of the delay-free transform, `y(T)`.
    ///
    /// `x0` feeds the prejudice terms and is ignored for non-stubborn setups.
    pub fn terminal_state(&self, x_tau: &DVector<f64>, x0: &DVector<f64>) -> DVector<f64> {
        let mut rhs = &self.flow_full * x_tau;
        if self.stubborn {
            rhs += &self.prejudice_gram * x0;
        }
        self.coupling_fact.solve_vector(&rhs)
    }

    /// Terminal co-states `z_i`; the controls and the trajectory are both
    /// linear images of these vectors.
    pub fn costate_terminal(&self, x_tau: &DVector<f64>, x0: &DVector<f64>) -> Vec<DVector<f64>> {
        let y = self.terminal_state(x_tau, x0);
        (0..self.n())
            .map(|i| {
                let omega = self.params.stubbornness[i];
                if self.stubborn {
                    let mut z = (&self.terminal_laplacians[i] * &y)
                        * ((1.0 - omega) / self.degrees[i] as f64);
                    if omega != 0.0 {
                        let v = &self.prejudice_dirs[i];
                        z += v * (omega * (v.dot(&y) - x0[i]));
                    }
                    z
                } else {
                    (&self.terminal_laplacians[i] * &y) * (1.0 / self.degrees[i] as f64)
                }
            })
            .collect()
    }

    fn check_game_time(&self, t: f64) -> Result<()> {
        let horizon = self.horizon();
        if !(0.0..=horizon + 1e-12).contains(&t) {
            return Err(Error::Domain {
                value: t,
                min: 0.0,
                max: horizon,
            });
        }
        Ok(())
    }

    fn control_from_costate(&self, i: usize, t: f64, z: &DVector<f64>) -> Result<f64> {
        let back = expm(&self.drift.transpose(), self.horizon() - t)?;
        Ok(-(1.0 / self.params.r[i]) * self.input_dirs[i].dot(&(back * z)))
    }

    fn opinion_from_costates(
        &self,
        x_tau: &DVector<f64>,
        zs: &[DVector<f64>],
        t: f64,
    ) -> Result<DVector<f64>> {
        let back = expm(&self.drift.transpose(), self.horizon() - t)?;
        let mut sum = DVector::zeros(self.n());
        for (i, z) in zs.iter().enumerate() {
            let psi_t = gramian_block(&self.drift, &self.effort_kernels[i], t)?;
            sum += psi_t * (&back * z);
        }
        Ok(expm(&self.drift, t)? * x_tau - &self.shift * sum)
    }
}

/// Equilibrium control of agent `i` at delay-free time `t`, non-stubborn game.
pub fn nash_control_nonstubborn(s: &GameSetup, x_tau: &DVector<f64>, t: f64, i: usize) -> Result<f64> {
    assert!(!s.stubborn(), "setup was built for the stubborn game");
    s.check_game_time(t)?;
    let zs = s.costate_terminal(x_tau, &s.params.x0);
    s.control_from_costate(i, t, &zs[i])
}

/// Equilibrium control of agent `i` at delay-free time `t`, stubborn game.
pub fn nash_control_stubborn(
    s: &GameSetup,
    x_tau: &DVector<f64>,
    x0: &DVector<f64>,
    t: f64,
    i: usize,
) -> Result<f64> {
    assert!(s.stubborn(), "setup was built for the non-stubborn game");
    s.check_game_time(t)?;
    let zs = s.costate_terminal(x_tau, x0);
    s.control_from_costate(i, t, &zs[i])
}

/// Equilibrium opinion vector `x(t+τ)`, non-stubborn game.
pub fn opinion_trajectory_nonstubborn(
    s: &GameSetup,
    x_tau: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    assert!(!s.stubborn(), "setup was built for the stubborn game");
    s.check_game_time(t)?;
    let zs = s.costate_terminal(x_tau, &s.params.x0);
    s.opinion_from_costates(x_tau, &zs, t)
}

/// Equilibrium opinion vector `x(t+τ)`, stubborn game.
pub fn opinion_trajectory_stubborn(
    s: &GameSetup,
    x_tau: &DVector<f64>,
    x0: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    assert!(s.stubborn(), "setup was built for the non-stubborn game");
    s.check_game_time(t)?;
    let zs = s.costate_terminal(x_tau, x0);
    s.opinion_from_costates(x_tau, &zs, t)
}

/// Time grid with per-instant opinion and control samples.
///
/// Controls are recorded as received by the dynamics: zero on `[0, τ)` and
/// the equilibrium control evaluated at `t - τ` from `τ` on.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub opinions: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.opinions.first().map_or(0, |x| x.len())
    }

    pub fn final_opinions(&self) -> &DVector<f64> {
        self.opinions.last().expect("trajectory has samples")
    }

    /// Largest gap between consecutive sample instants.
    pub fn max_step(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// Samples the equilibrium trajectory of the whole game on a uniform grid
/// of step `dt` that also contains `0`, the delay breakpoint `τ`, and `t_f`.
pub fn sample_trajectory(s: &GameSetup, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && dt <= s.params.t_f) {
        return Err(Error::InvalidParam {
            name: "dt",
            reason: format!("sampling step must lie in (0, t_f], got {dt}"),
        });
    }
    let seg = sample_equilibrium_segment(s, &s.params.x0, s.params.t_f, dt, true)?;
    Ok(Trajectory {
        times: seg.times,
        opinions: seg.opinions,
        controls: seg.controls,
    })
}

/// One sampled stretch of equilibrium play, relative to the segment start.
pub(crate) struct SegmentSample {
    pub times: Vec<f64>,
    pub opinions: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// State at `span` (not necessarily included in the samples).
    pub end_state: DVector<f64>,
}

struct StepKernels {
    flow: DMatrix<f64>,
    back: Option<DMatrix<f64>>,
    gramians: Option<Vec<DMatrix<f64>>>,
}

struct KernelCache<'a> {
    setup: &'a GameSetup,
    map: HashMap<u64, StepKernels>,
}

impl<'a> KernelCache<'a> {
    fn new(setup: &'a GameSetup) -> Self {
        Self {
            setup,
            map: HashMap::new(),
        }
    }

    fn flow(&mut self, delta: f64) -> Result<&DMatrix<f64>> {
        let entry = self.entry(delta, false)?;
        Ok(&entry.flow)
    }

    fn full(&mut self, delta: f64) -> Result<&StepKernels> {
        self.entry(delta, true)
    }

    fn entry(&mut self, delta: f64, with_theorem: bool) -> Result<&StepKernels> {
        let key = delta.to_bits();
        let need_fill = match self.map.get(&key) {
            None => true,
            Some(e) => with_theorem && e.back.is_none(),
        };
        if need_fill {
            let flow = expm(&self.setup.drift, delta)?;
            let (back, gramians) = if with_theorem {
                let back = expm(&self.setup.drift.transpose(), -delta)?;
                let gramians = (0..self.setup.n())
                    .map(|i| gramian_block(&self.setup.drift, &self.setup.effort_kernels[i], delta))
                    .collect::<Result<Vec<_>>>()?;
                (Some(back), Some(gramians))
            } else {
                (None, None)
            };
            self.map.insert(
                key,
                StepKernels {
                    flow,
                    back,
                    gramians,
                },
            );
        }
        Ok(self.map.get(&key).expect("just inserted"))
    }
}

/// Core sampler shared by [`sample_trajectory`] and the receding-horizon
/// window loop.
///
/// Walks the grid with one-step recurrences instead of evaluating each sample
/// from scratch: the uncontrolled prefix and the flow part advance by
/// `e^{δΛ}`, the backward co-state factors `q_i = e^{(T-t)Λᵀ} z_i` advance by
/// `e^{-δΛᵀ}`, and the Gramian contributions satisfy
/// `p_i(t+δ) = e^{δΛ} p_i(t) + Ψ_i(δ) q_i(t+δ)`.
pub(crate) fn sample_equilibrium_segment(
    s: &GameSetup,
    x_start: &DVector<f64>,
    span: f64,
    dt: f64,
    include_end_sample: bool,
) -> Result<SegmentSample> {
    const TIME_EPS: f64 = 1e-12;
    let tau = s.params.tau;
    let n = s.n();

    // grid: multiples of dt below span, the breakpoint, optionally the end
    let mut grid: Vec<f64> = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        if t >= span - TIME_EPS {
            break;
        }
        grid.push(t);
        k += 1;
    }
    if tau > TIME_EPS && tau < span - TIME_EPS && !grid.iter().any(|&t| (t - tau).abs() <= TIME_EPS)
    {
        grid.push(tau);
        grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    }
    // the end state is always walked to; whether it is emitted is a flag
    grid.push(span);

    let mut cache = KernelCache::new(s);
    let mut times = Vec::with_capacity(grid.len());
    let mut opinions = Vec::with_capacity(grid.len());
    let mut controls = Vec::with_capacity(grid.len());

    // uncontrolled prefix on [0, min(tau, span))
    let mut x_prefix = x_start.clone();
    let mut t_prev = 0.0;
    let mut idx = 0;
    while idx < grid.len() && grid[idx] < tau.min(span) - TIME_EPS {
        let t = grid[idx];
        if t > t_prev {
            x_prefix = cache.flow(t - t_prev)? * &x_prefix;
            t_prev = t;
        }
        if !x_prefix.iter().all(|v| v.is_finite()) {
            return Err(Error::StateDiverged { t });
        }
        times.push(t);
        opinions.push(x_prefix.clone());
        controls.push(DVector::zeros(n));
        idx += 1;
    }

    if span <= tau + TIME_EPS {
        // window shorter than the delay: pure flow throughout
        let end_state = cache.flow(span - t_prev)? * &x_prefix;
        if include_end_sample {
            times.push(span);
            opinions.push(end_state.clone());
            controls.push(DVector::zeros(n));
        }
        return Ok(SegmentSample {
            times,
            opinions,
            controls,
            end_state,
        });
    }

    // equilibrium part: game time g = t - tau over the remaining grid
    let x_tau = s.delayed_state(x_start);
    let zs = s.costate_terminal(&x_tau, &s.params.x0);
    let horizon = s.horizon();

    let g0 = grid[idx] - tau;
    let mut flow_part = expm(&s.drift, g0)? * &x_tau;
    let back0 = expm(&s.drift.transpose(), horizon - g0)?;
    // column i holds q_i; column i of `gram_part` holds p_i
    let mut costate_cols = DMatrix::zeros(n, n);
    let mut gram_cols = DMatrix::zeros(n, n);
    for (i, z) in zs.iter().enumerate() {
        costate_cols.set_column(i, &(&back0 * z));
    }
    if g0 > TIME_EPS {
        for i in 0..n {
            let psi = gramian_block(&s.drift, &s.effort_kernels[i], g0)?;
            gram_cols.set_column(i, &(psi * costate_cols.column(i).clone_owned()));
        }
    }

    let mut g_prev = g0;
    let emit = |g: f64,
                    flow_part: &DVector<f64>,
                    costate_cols: &DMatrix<f64>,
                    gram_cols: &DMatrix<f64>,
                    times: &mut Vec<f64>,
                    opinions: &mut Vec<DVector<f64>>,
                    controls: &mut Vec<DVector<f64>>|
     -> Result<()> {
        let mut summed = DVector::zeros(n);
        for i in 0..n {
            summed += gram_cols.column(i);
        }
        let x = flow_part - &s.shift * summed;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::StateDiverged { t: g + tau });
        }
        let u = DVector::from_fn(n, |i, _| {
            -(1.0 / s.params.r[i]) * s.input_dirs[i].dot(&costate_cols.column(i).clone_owned())
        });
        times.push(g + tau);
        opinions.push(x);
        controls.push(u);
        Ok(())
    };

    for (pos, &t) in grid.iter().enumerate().skip(idx) {
        let g = t - tau;
        if g > g_prev + TIME_EPS {
            let delta = g - g_prev;
            let kernels = cache.full(delta)?;
            flow_part = &kernels.flow * &flow_part;
            costate_cols = kernels.back.as_ref().expect("theorem kernels") * &costate_cols;
            gram_cols = &kernels.flow * &gram_cols;
            let gramians = kernels.gramians.as_ref().expect("theorem kernels");
            for i in 0..n {
                let inc = &gramians[i] * costate_cols.column(i).clone_owned();
                let mut col = gram_cols.column_mut(i);
                col += inc;
            }
            g_prev = g;
        }
        let is_end = pos == grid.len() - 1;
        if !is_end || include_end_sample {
            emit(
                g,
                &flow_part,
                &costate_cols,
                &gram_cols,
                &mut times,
                &mut opinions,
                &mut controls,
            )?;
        }
    }

    let mut summed = DVector::zeros(n);
    for i in 0..n {
        summed += gram_cols.column(i);
    }
    let end_state = &flow_part - &s.shift * summed;

    Ok(SegmentSample {
        times,
        opinions,
        controls,
        end_state,
    })
}

/// Uncontrolled flow `x(t) = e^{tΛ} x_0` sampled like [`sample_trajectory`].
pub fn flow_trajectory(
    drift: &DMatrix<f64>,
    x0: &DVector<f64>,
    span: f64,
    dt: f64,
    include_end_sample: bool,
) -> Result<Trajectory> {
    const TIME_EPS: f64 = 1e-12;
    let n = x0.len();
    let mut times = Vec::new();
    let mut opinions = Vec::new();
    let mut x = x0.clone();
    let mut t_prev = 0.0;
    let step = expm(drift, dt)?;
    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        if t >= span - TIME_EPS {
            break;
        }
        if t > t_prev {
            x = &step * x;
            t_prev = t;
        }
        times.push(t);
        opinions.push(x.clone());
        k += 1;
    }
    let end = expm(drift, span - t_prev)? * &x;
    if include_end_sample {
        times.push(span);
        opinions.push(end);
    }
    let controls = vec![DVector::zeros(n); times.len()];
    Ok(Trajectory {
        times,
        opinions,
        controls,
    })
}

/// Equilibrium controls tabulated on a uniform grid over the delay-free
/// horizon, with linear interpolation between samples. Query times outside
/// `[0, T]` return zero.
pub struct SampledControls {
    spacing: f64,
    horizon: f64,
    /// row i = agent i, column k = control at `k * spacing`
    table: DMatrix<f64>,
}

impl SampledControls {
    pub fn build(s: &GameSetup, x_start: &DVector<f64>, spacing: f64) -> Result<Self> {
        assert!(spacing > 0.0, "table spacing must be positive");
        let n = s.n();
        let horizon = s.horizon();
        let x_tau = s.delayed_state(x_start);
        let zs = s.costate_terminal(&x_tau, &s.params.x0);
        let steps = (horizon / spacing).round() as usize;
        let steps = steps.max(1);
        let mut table = DMatrix::zeros(n, steps + 1);

        // start from the last table column and walk backward to t = 0 so each
        // step multiplies by e^{+δΛᵀ}; q_i(t) = e^{(T-t)Λᵀ} z_i.
        let back_last = expm(&s.drift.transpose(), horizon - steps as f64 * spacing)?;
        let mut costate_cols = DMatrix::zeros(n, n);
        for (i, z) in zs.iter().enumerate() {
            costate_cols.set_column(i, &(&back_last * z));
        }
        let fwd = expm(&s.drift.transpose(), spacing)?;
        for k in (0..=steps).rev() {
            for i in 0..n {
                table[(i, k)] = -(1.0 / s.params.r[i])
                    * s.input_dirs[i].dot(&costate_cols.column(i).clone_owned());
            }
            if k > 0 {
                costate_cols = &fwd * costate_cols;
            }
        }
        Ok(Self {
            spacing,
            horizon,
            table,
        })
    }

    /// `u_i` at delay-free time `t`, linearly interpolated.
    pub fn eval(&self, i: usize, t: f64) -> f64 {
        if t < 0.0 || t > self.horizon + 1e-9 {
            return 0.0;
        }
        let pos = t / self.spacing;
        let k = (pos.floor() as usize).min(self.table.ncols() - 1);
        let k1 = (k + 1).min(self.table.ncols() - 1);
        let frac = (pos - k as f64).clamp(0.0, 1.0);
        self.table[(i, k)] * (1.0 - frac) + self.table[(i, k1)] * frac
    }
}
