//! The multiscale time integrator Fourier pseudospectral (MTI-FP) stepper.
//!
//! On each interval `[t_n, t_n + tau]` the solution is split as
//!
//! ```text
//! u(t_n + s) = e^{is/eps^2} v(s) + c.c. + r(s)
//! ```
//!
//! with `v(0) = (u^n - i eps^2 udot^n) / 2`, `v'(0) = 0` and `r(0) = r'(0) = 0`.
//! `v` follows the NLSW with the cubic term frozen at `s = 0`, `r` collects
//! the `e^{3is/eps^2}` harmonic and the coupling `f(v, r, s)`; both are
//! advanced to `s = tau` with the per-mode coefficients of [`CoeffTable`] and
//! recombined. Products are taken at the collocation nodes (no dealiasing).

use std::collections::VecDeque;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coeffs::{cis_product, CoeffTable};
use crate::error::{Result, SolverError};
use crate::grid::SpectralGrid;

/// Sup-norm above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;
const HISTORY_LEN: usize = 8;

/// Real field `u` and its time derivative at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub u: Vec<f64>,
    pub udot: Vec<f64>,
    pub t: f64,
}

impl FieldState {
    pub fn zeros(len: usize) -> Self {
        Self {
            u: vec![0.0; len],
            udot: vec![0.0; len],
            t: 0.0,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.u.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Micro variables of one interval, all at collocation nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroStep {
    /// Interval start `t_n`.
    pub t0: f64,
    /// Interval length (shorter than the nominal step for a final partial step).
    pub tau: f64,
    pub v0: Vec<Complex64>,
    pub v1: Vec<Complex64>,
    pub v1dot: Vec<Complex64>,
    pub r1: Vec<f64>,
    pub r1dot: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolverParams {
    pub eps: f64,
    pub lambda: f64,
    pub tau: f64,
    pub grid: SpectralGrid,
    pub t_end: f64,
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            problems.push(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        if !self.lambda.is_finite() {
            problems.push(format!("lambda must be finite, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            problems.push(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            problems.push(format!("t_end must be non-negative, got {}", self.t_end));
        } else if self.tau > 0.0 && self.t_end / self.tau > u32::MAX as f64 {
            problems.push(format!(
                "t_end / tau = {} exceeds the step limit",
                self.t_end / self.tau
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SolverError::Config(problems))
        }
    }

    /// Number of full steps and the length of a trailing partial step (0 if none).
    pub fn step_plan(&self) -> (usize, f64) {
        let ratio = self.t_end / self.tau;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            return (nearest as usize, 0.0);
        }
        let full = ratio.floor();
        (full as usize, self.t_end - full * self.tau)
    }
}

/// `v = (u - i eps^2 udot) / 2` pointwise.
pub fn decompose(state: &FieldState, eps: f64) -> Vec<Complex64> {
    let eps2 = eps * eps;
    state
        .u
        .iter()
        .zip(&state.udot)
        .map(|(&u, &ud)| 0.5 * Complex64::new(u, -eps2 * ud))
        .collect()
}

/// `g(v) = 3 lambda |v|^2 v`.
pub fn g_term(v: &[Complex64], lambda: f64) -> Vec<Complex64> {
    v.iter().map(|&z| g_point(z, lambda)).collect()
}

/// `h(v) = lambda v^3`.
pub fn h_term(v: &[Complex64], lambda: f64) -> Vec<Complex64> {
    v.iter().map(|&z| h_point(z, lambda)).collect()
}

/// `f(v, r, s) = lambda r [r^2 + 3 r w + 3 w^2]` with `w = e^{is/eps^2} v + c.c.`
pub fn f_term(v: &[Complex64], r: &[f64], s: f64, eps: f64, lambda: f64) -> Vec<f64> {
    let e = cis_product(s, 1.0 / (eps * eps));
    v.iter()
        .zip(r)
        .map(|(&z, &ri)| f_point(z, ri, e, lambda))
        .collect()
}

#[inline]
fn g_point(z: Complex64, lambda: f64) -> Complex64 {
    (3.0 * lambda * z.norm_sqr()) * z
}

#[inline]
fn h_point(z: Complex64, lambda: f64) -> Complex64 {
    lambda * z * z * z
}

#[inline]
fn f_point(z: Complex64, r: f64, phase: Complex64, lambda: f64) -> f64 {
    let w = 2.0 * (phase * z).re;
    lambda * r * (r * r + 3.0 * r * w + 3.0 * w * w)
}

/// Reusable stepper holding transform buffers for one grid.
pub struct MtiStepper<'g> {
    grid: &'g SpectralGrid,
    eps: f64,
    lambda: f64,
    v0: Vec<Complex64>,
    g: Vec<Complex64>,
    h: Vec<Complex64>,
    v1: Vec<Complex64>,
    v1dot: Vec<Complex64>,
    r1: Vec<Complex64>,
    r1dot: Vec<Complex64>,
    f: Vec<Complex64>,
    imag_residue: f64,
}

impl<'g> MtiStepper<'g> {
    pub fn new(grid: &'g SpectralGrid, eps: f64, lambda: f64) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); grid.len()];
        Self {
            grid,
            eps,
            lambda,
            v0: z.clone(),
            g: z.clone(),
            h: z.clone(),
            v1: z.clone(),
            v1dot: z.clone(),
            r1: z.clone(),
            r1dot: z.clone(),
            f: z,
            imag_residue: 0.0,
        }
    }

    /// Largest `|Im r^{n,1}_j|` seen in the last step, relative to `max |u^{n+1}|`.
    pub fn last_imag_residue(&self) -> f64 {
        self.imag_residue
    }

    /// Advance `state` in place by `table.tau()`.
    pub fn step(&mut self, state: &mut FieldState, table: &CoeffTable) -> Result<()> {
        let grid = self.grid;
        table.check(table.tau(), self.eps, grid)?;
        let len = grid.len();
        if state.u.len() != len || state.udot.len() != len {
            return Err(SolverError::Shape {
                expected: len,
                got: state.u.len().min(state.udot.len()),
            });
        }
        let tau = table.tau();
        let eps2 = self.eps * self.eps;
        let inv_eps2 = 1.0 / eps2;
        let lambda = self.lambda;
        let phase = cis_product(tau, inv_eps2);

        for j in 0..len {
            let v = 0.5 * Complex64::new(state.u[j], -eps2 * state.udot[j]);
            self.v0[j] = v;
            self.g[j] = g_point(v, lambda);
            self.h[j] = h_point(v, lambda);
        }
        grid.forward_in_place(&mut self.v0)?;
        grid.forward_in_place(&mut self.g)?;
        grid.forward_in_place(&mut self.h)?;

        let partner = grid.partners();
        for (k, m) in table.modes().iter().enumerate() {
            let (v, g) = (self.v0[k], self.g[k]);
            let h = self.h[k];
            let hbar = self.h[partner[k]].conj();
            self.v1[k] = m.a * v - m.c * g;
            self.v1dot[k] = m.a_prime * v - m.c_prime * g;
            self.r1[k] = -m.p * h - m.p.conj() * hbar;
            self.r1dot[k] = -m.p_prime * h - m.p_prime.conj() * hbar;
        }
        for buf in [&mut self.v1, &mut self.v1dot, &mut self.r1] {
            grid.zero_nyquist(buf);
        }
        grid.inverse_in_place(&mut self.v1)?;
        grid.inverse_in_place(&mut self.r1)?;

        let mut imag = 0.0f64;
        for j in 0..len {
            imag = imag.max(self.r1[j].im.abs());
            self.f[j] = Complex64::new(f_point(self.v1[j], self.r1[j].re, phase, lambda), 0.0);
        }
        grid.forward_in_place(&mut self.f)?;
        let corr = 0.5 * tau * inv_eps2;
        for (r, f) in self.r1dot.iter_mut().zip(&self.f) {
            *r -= corr * f;
        }
        grid.zero_nyquist(&mut self.r1dot);
        grid.inverse_in_place(&mut self.v1dot)?;
        grid.inverse_in_place(&mut self.r1dot)?;

        let i_over = Complex64::new(0.0, inv_eps2);
        let mut sup = 0.0f64;
        let mut finite = true;
        for j in 0..len {
            let v1 = self.v1[j];
            let u = 2.0 * (phase * v1).re + self.r1[j].re;
            let ud = 2.0 * (phase * (self.v1dot[j] + i_over * v1)).re + self.r1dot[j].re;
            finite &= u.is_finite() && ud.is_finite();
            sup = sup.max(u.abs());
            state.u[j] = u;
            state.udot[j] = ud;
        }
        state.t += tau;
        self.imag_residue = if sup > 0.0 { imag / sup } else { imag };
        if !finite {
            return Err(SolverError::Divergence {
                step: 0,
                t: state.t,
                reason: "non-finite field values".into(),
                history: vec![sup],
            });
        }
        Ok(())
    }

    /// Micro variables of the step just taken; `v0` is recomputed from `prev`.
    pub fn micro(&self, prev: &FieldState, tau: f64) -> MicroStep {
        MicroStep {
            t0: prev.t,
            tau,
            v0: decompose(prev, self.eps),
            v1: self.v1.clone(),
            v1dot: self.v1dot.clone(),
            r1: self.r1.iter().map(|c| c.re).collect(),
            r1dot: self.r1dot.iter().map(|c| c.re).collect(),
        }
    }
}

/// One MTI-FP step from `state`; returns the new state and the interval's micro variables.
pub fn mti_step(
    state: &FieldState,
    params: &SolverParams,
    coeffs: &CoeffTable,
) -> Result<(FieldState, MicroStep)> {
    coeffs.check(params.tau, params.eps, &params.grid)?;
    let mut stepper = MtiStepper::new(&params.grid, params.eps, params.lambda);
    let mut next = state.clone();
    stepper.step(&mut next, coeffs)?;
    let micro = stepper.micro(state, params.tau);
    Ok((next, micro))
}

/// Which states a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Record {
    /// Initial and final state.
    #[default]
    Final,
    /// Every `k`-th step plus the final state.
    Every(usize),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub record: Record,
    /// Keep the micro variables of every interval (needed for interpolation).
    pub keep_micro: bool,
    /// Record `u` at this flat node index after every step.
    pub probe: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub states: Vec<FieldState>,
    pub micro: Vec<MicroStep>,
    /// `(t, u(probe, t))` for every time level when a probe was requested.
    pub probe: Vec<(f64, f64)>,
    pub steps: usize,
    pub wall_time: f64,
    /// Largest relative imaginary residue seen before re-symmetrization.
    pub max_imag_residue: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &FieldState {
        self.states
            .last()
            .expect("trajectory always holds the initial state")
    }
}

/// Integrate from `initial` to `params.t_end`.
pub fn run(
    params: &SolverParams,
    initial: &FieldState,
    options: &RunOptions,
) -> Result<Trajectory> {
    params.validate()?;
    let table = CoeffTable::build(params.tau, params.eps, &params.grid)?;
    run_with_table(params, &table, initial, options)
}

/// As [`run`] with a prebuilt coefficient table for `params.tau`.
pub fn run_with_table(
    params: &SolverParams,
    table: &CoeffTable,
    initial: &FieldState,
    options: &RunOptions,
) -> Result<Trajectory> {
    params.validate()?;
    table.check(params.tau, params.eps, &params.grid)?;
    let grid = &params.grid;
    if initial.u.len() != grid.len() || initial.udot.len() != grid.len() {
        return Err(SolverError::Shape {
            expected: grid.len(),
            got: initial.u.len(),
        });
    }
    if let Some(p) = options.probe {
        if p >= grid.len() {
            return Err(SolverError::Parameter(format!(
                "probe index {p} out of range"
            )));
        }
    }
    let start = Instant::now();
    let (full, partial) = params.step_plan();
    let tail_table = if partial > 0.0 {
        Some(CoeffTable::build(partial, params.eps, grid)?)
    } else {
        None
    };
    let total = full + usize::from(tail_table.is_some());

    let mut traj = Trajectory {
        states: vec![initial.clone()],
        ..Default::default()
    };
    if let Some(p) = options.probe {
        traj.probe.push((initial.t, initial.u[p]));
    }
    let mut stepper = MtiStepper::new(grid, params.eps, params.lambda);
    let mut state = initial.clone();
    let mut history: VecDeque<f64> = VecDeque::with_capacity(HISTORY_LEN);
    let t0 = initial.t;

    for n in 0..total {
        let tab = if n < full {
            table
        } else {
            tail_table.as_ref().unwrap()
        };
        let prev = options.keep_micro.then(|| state.clone());
        if let Err(e) = stepper.step(&mut state, tab) {
            return Err(match e {
                SolverError::Divergence { reason, .. } => SolverError::Divergence {
                    step: n,
                    t: state.t,
                    reason,
                    history: history.iter().copied().collect(),
                },
                other => other,
            });
        }
        // keep grid times exact multiples of tau
        state.t = if n < full {
            t0 + (n + 1) as f64 * params.tau
        } else {
            t0 + params.t_end
        };
        let sup = state.sup_norm();
        if history.len() == HISTORY_LEN {
            history.pop_front();
        }
        history.push_back(sup);
        if sup > DIVERGENCE_THRESHOLD {
            return Err(SolverError::Divergence {
                step: n,
                t: state.t,
                reason: format!("sup-norm {sup:e} exceeds {DIVERGENCE_THRESHOLD:e}"),
                history: history.iter().copied().collect(),
            });
        }
        traj.max_imag_residue = traj.max_imag_residue.max(stepper.last_imag_residue());
        if let Some(prev) = prev {
            traj.micro.push(stepper.micro(&prev, tab.tau()));
        }
        if let Some(p) = options.probe {
            traj.probe.push((state.t, state.u[p]));
        }
        let last = n + 1 == total;
        let keep = match options.record {
            Record::Final => last,
            Record::Every(k) => last || (k > 0 && (n + 1) % k == 0),
        };
        if keep {
            traj.states.push(state.clone());
        }
    }
    traj.steps = total;
    traj.wall_time = start.elapsed().as_secs_f64();
    Ok(traj)
}

fn locate(micro: &[MicroStep], t: f64) -> Result<(usize, f64)> {
    let (first, last) = match (micro.first(), micro.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(SolverError::Empty("no micro steps recorded".into())),
    };
    let end = last.t0 + last.tau;
    if !(t >= first.t0 && t <= end * (1.0 + 1e-14)) {
        return Err(SolverError::OutOfRange {
            t,
            start: first.t0,
            end,
        });
    }
    let n = micro.partition_point(|m| m.t0 <= t).saturating_sub(1);
    let m = &micro[n];
    let mut s = (t - m.t0).max(0.0);
    if (s - m.tau).abs() <= 1e-12 * m.tau || s > m.tau {
        s = m.tau;
    }
    Ok((n, s))
}

#[inline]
fn interpolate_point(m: &MicroStep, j: usize, s: f64, phase: Complex64) -> f64 {
    let w = (s / m.tau, (m.tau - s) / m.tau);
    let v = m.v0[j] * w.1 + m.v1[j] * w.0;
    2.0 * (phase * v).re + m.r1[j] * w.0
}

/// Multiscale interpolant `U(t)` at every node:
/// `e^{is/eps^2}[(tau-s)/tau v^{n,0} + s/tau v^{n,1}] + c.c. + (s/tau) r^{n,1}`.
pub fn interpolate(micro: &[MicroStep], t: f64, eps: f64) -> Result<Vec<f64>> {
    let (n, s) = locate(micro, t)?;
    let m = &micro[n];
    let phase = cis_product(s, 1.0 / (eps * eps));
    Ok((0..m.v0.len())
        .map(|j| interpolate_point(m, j, s, phase))
        .collect())
}

/// Interpolant at a single node.
pub fn interpolate_at(micro: &[MicroStep], node: usize, t: f64, eps: f64) -> Result<f64> {
    let (n, s) = locate(micro, t)?;
    let m = &micro[n];
    if node >= m.v0.len() {
        return Err(SolverError::Parameter(format!("node {node} out of range")));
    }
    Ok(interpolate_point(
        m,
        node,
        s,
        cis_product(s, 1.0 / (eps * eps)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::InitialData;

    fn params(eps: f64, lambda: f64, tau: f64, n: usize, t_end: f64) -> SolverParams {
        SolverParams {
            eps,
            lambda,
            tau,
            grid: SpectralGrid::new(-16.0, 16.0, n, 1).unwrap(),
            t_end,
        }
    }

    #[test]
    fn decompose_examples() {
        let s = FieldState {
            u: vec![1.0; 4],
            udot: vec![0.0; 4],
            t: 0.0,
        };
        assert!(decompose(&s, 0.3)
            .iter()
            .all(|&v| v == Complex64::new(0.5, 0.0)));
        let s = FieldState {
            u: vec![0.0; 4],
            udot: vec![1.0; 4],
            t: 0.0,
        };
        assert!(decompose(&s, 1.0)
            .iter()
            .all(|&v| v == Complex64::new(0.0, -0.5)));
    }

    #[test]
    fn decompose_initial_data() {
        let g = SpectralGrid::new(-16.0, 16.0, 64, 1).unwrap();
        let eps = 0.1;
        let v = decompose(&InitialData::SechGauss.state(&g, eps).unwrap(), eps);
        for (k, vk) in v.iter().enumerate() {
            let (x, _) = g.node(k);
            let want = 0.5 * Complex64::new(0.5 / (x * x).cosh(), -0.5 * (-x * x).exp());
            assert!((vk - want).norm() < 1e-15);
        }
    }

    #[test]
    fn cubic_terms() {
        let one = [Complex64::new(1.0, 0.0)];
        assert_eq!(g_term(&one, 1.0)[0], Complex64::new(3.0, 0.0));
        assert_eq!(h_term(&one, 1.0)[0], Complex64::new(1.0, 0.0));
        let i = [Complex64::i()];
        assert_eq!(g_term(&i, 2.0)[0], Complex64::new(0.0, 6.0));
        assert_eq!(h_term(&i, 2.0)[0], Complex64::new(0.0, -2.0));
        let zero = [Complex64::new(0.0, 0.0)];
        assert_eq!(g_term(&zero, 5.0)[0].norm(), 0.0);
        assert_eq!(h_term(&zero, 5.0)[0].norm(), 0.0);
    }

    #[test]
    fn coupling_term() {
        assert_eq!(
            f_term(&[Complex64::new(0.7, 0.2)], &[0.0], 0.3, 0.5, 1.0),
            vec![0.0]
        );
        assert_eq!(
            f_term(&[Complex64::new(0.0, 0.0)], &[1.0], 0.3, 0.5, 1.0),
            vec![1.0]
        );
        assert_eq!(
            f_term(&[Complex64::new(1.0, 0.0)], &[1.0], 0.0, 0.5, 1.0),
            vec![19.0]
        );
    }

    #[test]
    fn zero_state_stays_zero() {
        let p = params(0.5, 1.0, 0.1, 32, 0.1);
        let table = CoeffTable::build(p.tau, p.eps, &p.grid).unwrap();
        let (next, micro) = mti_step(&FieldState::zeros(32), &p, &table).unwrap();
        assert!(next.u.iter().chain(&next.udot).all(|&x| x == 0.0));
        assert!(micro.r1.iter().all(|&x| x == 0.0));
        assert!((next.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn table_mismatch_is_a_configuration_error() {
        let p = params(0.5, 1.0, 0.1, 32, 0.1);
        let table = CoeffTable::build(0.05, p.eps, &p.grid).unwrap();
        assert!(matches!(
            mti_step(&FieldState::zeros(32), &p, &table),
            Err(SolverError::Configuration(_))
        ));
    }

    #[test]
    fn zero_end_time_returns_initial_state() {
        let p = params(0.5, 1.0, 0.1, 32, 0.0);
        let s0 = InitialData::SechGauss.state(&p.grid, p.eps).unwrap();
        let traj = run(&p, &s0, &RunOptions::default()).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.steps, 0);
        assert_eq!(traj.final_state(), &s0);
    }

    #[test]
    fn step_plan_handles_partial_steps() {
        assert_eq!(params(0.5, 1.0, 0.1, 8, 1.0).step_plan(), (10, 0.0));
        let (n, rest) = params(0.5, 1.0, 0.3, 8, 1.0).step_plan();
        assert_eq!(n, 3);
        assert!((rest - 0.1).abs() < 1e-12);
        let p = params(0.5, 1.0, 0.3, 32, 1.0);
        let s0 = InitialData::SechGauss.state(&p.grid, p.eps).unwrap();
        let traj = run(
            &p,
            &s0,
            &RunOptions {
                keep_micro: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(traj.steps, 4);
        assert_eq!(traj.final_state().t, 1.0);
        assert!((traj.micro[3].tau - 0.1).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_are_listed() {
        let mut p = params(0.0, f64::NAN, -1.0, 8, -1.0);
        match p.validate() {
            Err(SolverError::Config(list)) => assert_eq!(list.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
        p = params(0.5, 1.0, 0.1, 8, 1.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        // strongly focusing with huge data blows up
        let p = params(1.0, -1.0, 0.05, 32, 5.0);
        let mut s0 = InitialData::SechGauss.state(&p.grid, p.eps).unwrap();
        s0.u.iter_mut().for_each(|x| *x *= 200.0);
        match run(&p, &s0, &RunOptions::default()) {
            Err(SolverError::Divergence { step, history, .. }) => {
                assert!(step < 100);
                assert!(!history.is_empty() || step == 0);
            }
            other => panic!("expected divergence, got {:?}", other.map(|t| t.steps)),
        }
    }

    #[test]
    fn interpolation_endpoints_are_exact() {
        let p = params(0.2, 1.0, 0.05, 64, 0.5);
        let s0 = InitialData::SechGauss.state(&p.grid, p.eps).unwrap();
        let traj = run(
            &p,
            &s0,
            &RunOptions {
                record: Record::Every(1),
                keep_micro: true,
                probe: None,
            },
        )
        .unwrap();
        for (n, st) in traj.states.iter().enumerate() {
            let u = interpolate(&traj.micro, st.t, p.eps).unwrap();
            assert_eq!(u, st.u, "level {n}");
        }
        assert!(matches!(
            interpolate(&traj.micro, 0.6, p.eps),
            Err(SolverError::OutOfRange { .. })
        ));
        assert!(interpolate(&traj.micro, -0.1, p.eps).is_err());
        let mid = interpolate(&traj.micro, 0.125, p.eps).unwrap();
        assert_eq!(
            mid[10],
            interpolate_at(&traj.micro, 10, 0.125, p.eps).unwrap()
        );
    }
}
