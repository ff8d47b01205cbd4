//! Limiting models of the nonrelativistic regime and the distances to them.
//!
//! The NLSW `eps^2 v_tt + 2i v_t - Delta v + 3 lambda |v|^2 v = 0` is advanced
//! by a first-order Gautschi-type exponential integrator that reuses the
//! per-mode propagators of [`CoeffTable`]; the NLSE
//! `2i v_t - Delta v + 3 lambda |v|^2 v = 0` by Strang time splitting.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coeffs::{cis_product, CoeffTable};
use crate::error::{Result, SolverError};
use crate::grid::SpectralGrid;
use crate::initial::InitialData;
use crate::mti::{run_with_table, Record, RunOptions, SolverParams, DIVERGENCE_THRESHOLD};

/// Initial velocity `d_t v(0)` of the NLSW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    /// `gamma = 0`.
    Zero,
    /// `gamma = (i/2) [-Delta v0 + 3 lambda |v0|^2 v0]`.
    WellPrepared,
    /// `gamma = (3/2) lambda i |v0|^2 v0`.
    CubicOnly,
}

impl GammaChoice {
    pub const ALL: [GammaChoice; 3] = [
        GammaChoice::Zero,
        GammaChoice::WellPrepared,
        GammaChoice::CubicOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GammaChoice::Zero => "zero",
            GammaChoice::WellPrepared => "well_prepared",
            GammaChoice::CubicOnly => "cubic_only",
        }
    }
}

impl std::str::FromStr for GammaChoice {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self> {
        GammaChoice::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| SolverError::Parameter(format!("unknown gamma choice {s:?}")))
    }
}

pub fn make_gamma(
    choice: GammaChoice,
    v0: &[Complex64],
    lambda: f64,
    grid: &SpectralGrid,
) -> Result<Vec<Complex64>> {
    if v0.len() != grid.len() {
        return Err(SolverError::Shape {
            expected: grid.len(),
            got: v0.len(),
        });
    }
    let cubic = |v: Complex64| 3.0 * lambda * v.norm_sqr() * v;
    Ok(match choice {
        GammaChoice::Zero => vec![Complex64::new(0.0, 0.0); v0.len()],
        GammaChoice::WellPrepared => {
            let lap = grid.laplacian(v0)?;
            let half_i = Complex64::new(0.0, 0.5);
            v0.iter()
                .zip(&lap)
                .map(|(&v, &l)| half_i * (cubic(v) - l))
                .collect()
        }
        GammaChoice::CubicOnly => v0
            .iter()
            .map(|&v| Complex64::new(0.0, 0.5) * cubic(v))
            .collect(),
    })
}

/// `v0 = (phi1 - i phi2) / 2` at the nodes.
pub fn limit_initial_value(data: InitialData, grid: &SpectralGrid) -> Vec<Complex64> {
    grid.sample(|x, y| 0.5 * Complex64::new(data.phi1(x, y), -data.phi2(x, y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlswState {
    pub v: Vec<Complex64>,
    pub vdot: Vec<Complex64>,
    pub t: f64,
}

impl NlswState {
    pub fn new(v0: Vec<Complex64>, gamma: Vec<Complex64>) -> Result<Self> {
        if v0.len() != gamma.len() {
            return Err(SolverError::Shape {
                expected: v0.len(),
                got: gamma.len(),
            });
        }
        Ok(Self {
            v: v0,
            vdot: gamma,
            t: 0.0,
        })
    }

    pub fn mass(&self, grid: &SpectralGrid) -> Result<f64> {
        grid.l2_norm(&self.v)
    }
}

fn check_finite(v: &[Complex64], t: f64) -> Result<()> {
    let sup = v.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if sup.is_finite() && sup <= DIVERGENCE_THRESHOLD {
        Ok(())
    } else {
        Err(SolverError::Divergence {
            step: 0,
            t,
            reason: format!("sup-norm {sup:e}"),
            history: vec![sup],
        })
    }
}

/// Exponential-integrator stepper for the NLSW with `3 lambda |v|^2 v`
/// frozen at the step start.
#[derive(Debug, Clone)]
pub struct EwiStepper {
    lambda: f64,
    v: Vec<Complex64>,
    w: Vec<Complex64>,
    g: Vec<Complex64>,
}

impl EwiStepper {
    pub fn new(grid: &SpectralGrid, lambda: f64) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); grid.len()];
        Self {
            lambda,
            v: z.clone(),
            w: z.clone(),
            g: z,
        }
    }

    pub fn step(
        &mut self,
        state: &mut NlswState,
        table: &CoeffTable,
        grid: &SpectralGrid,
    ) -> Result<()> {
        table.check(table.tau(), table.eps(), grid)?;
        if state.v.len() != grid.len() || state.vdot.len() != grid.len() {
            return Err(SolverError::Shape {
                expected: grid.len(),
                got: state.v.len().min(state.vdot.len()),
            });
        }
        let eps2 = table.eps() * table.eps();
        let lambda = self.lambda;
        self.v.copy_from_slice(&state.v);
        self.w.copy_from_slice(&state.vdot);
        for (g, &z) in self.g.iter_mut().zip(&state.v) {
            *g = 3.0 * lambda * z.norm_sqr() * z;
        }
        grid.forward_in_place(&mut self.v)?;
        grid.forward_in_place(&mut self.w)?;
        grid.forward_in_place(&mut self.g)?;
        for (k, m) in table.modes().iter().enumerate() {
            let (v0, w0, g) = (self.v[k], self.w[k], self.g[k]);
            state.v[k] = m.a * v0 + eps2 * m.b * w0 - m.c * g;
            state.vdot[k] = m.a_prime * v0 + eps2 * m.b_prime * w0 - m.c_prime * g;
        }
        grid.inverse_in_place(&mut state.v)?;
        grid.inverse_in_place(&mut state.vdot)?;
        state.t += table.tau();
        check_finite(&state.v, state.t)
    }
}

/// One exponential-integrator step of the NLSW.
pub fn nlsw_step(
    state: &NlswState,
    lambda: f64,
    table: &CoeffTable,
    grid: &SpectralGrid,
) -> Result<NlswState> {
    let mut next = state.clone();
    EwiStepper::new(grid, lambda).step(&mut next, table, grid)?;
    Ok(next)
}

/// Strang splitting for the NLSE: half nonlinear rotation, exact linear
/// flow, half nonlinear rotation.
#[derive(Debug, Clone)]
pub struct TsspStepper {
    tau: f64,
    lambda: f64,
    linear: Vec<Complex64>,
}

impl TsspStepper {
    pub fn new(tau: f64, lambda: f64, grid: &SpectralGrid) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SolverError::Parameter(format!(
                "tau must be positive, got {tau}"
            )));
        }
        // 2i v_t = Delta v  =>  v_l(t) = exp(+i mu^2 t / 2) v_l(0)
        let linear = grid
            .mu_squared()
            .iter()
            .map(|&m2| cis_product(0.5 * tau, m2))
            .collect();
        Ok(Self {
            tau,
            lambda,
            linear,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn rotate(&self, v: &mut [Complex64], dt: f64) {
        // 2i v_t = -3 lambda |v|^2 v keeps |v| fixed
        let k = 1.5 * self.lambda * dt;
        for z in v.iter_mut() {
            *z *= cis_product(k, z.norm_sqr());
        }
    }

    pub fn step(&self, v: &mut [Complex64], grid: &SpectralGrid) -> Result<()> {
        if v.len() != self.linear.len() {
            return Err(SolverError::Shape {
                expected: self.linear.len(),
                got: v.len(),
            });
        }
        self.rotate(v, 0.5 * self.tau);
        grid.forward_in_place(v)?;
        v.iter_mut().zip(&self.linear).for_each(|(z, p)| *z *= p);
        grid.inverse_in_place(v)?;
        self.rotate(v, 0.5 * self.tau);
        check_finite(v, f64::NAN)
    }
}

pub fn nlse_step(
    v: &[Complex64],
    tau: f64,
    lambda: f64,
    grid: &SpectralGrid,
) -> Result<Vec<Complex64>> {
    let mut out = v.to_vec();
    TsspStepper::new(tau, lambda, grid)?.step(&mut out, grid)?;
    Ok(out)
}

fn check_pair(grid: &SpectralGrid, a: usize, b: usize) -> Result<()> {
    if a != grid.len() || b != grid.len() {
        return Err(SolverError::GridMismatch(format!(
            "fields of length {a} and {b} on a grid of {} nodes",
            grid.len()
        )));
    }
    Ok(())
}

/// `|| u(t) - [e^{it/eps^2} v_sw(t) + c.c.] ||_{H1}`.
pub fn e_sw(grid: &SpectralGrid, u: &[f64], v_sw: &[Complex64], eps: f64, t: f64) -> Result<f64> {
    check_pair(grid, u.len(), v_sw.len())?;
    let phase = cis_product(t, 1.0 / (eps * eps));
    let d: Vec<f64> = u
        .iter()
        .zip(v_sw)
        .map(|(&u, &v)| u - 2.0 * (phase * v).re)
        .collect();
    grid.h1_norm_real(&d)
}

/// `|| v_sw(t) - v_se(t) ||_{H1}`.
pub fn e_we(grid: &SpectralGrid, v_sw: &[Complex64], v_se: &[Complex64]) -> Result<f64> {
    check_pair(grid, v_sw.len(), v_se.len())?;
    let d: Vec<Complex64> = v_sw.iter().zip(v_se).map(|(a, b)| a - b).collect();
    grid.h1_norm(&d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSample {
    pub t: f64,
    pub e_sw: f64,
    pub e_we: f64,
}

/// Inputs of one limit study at fixed `eps`.
#[derive(Debug, Clone)]
pub struct LimitParams {
    pub eps: f64,
    pub lambda: f64,
    pub grid: SpectralGrid,
    pub tau: f64,
    pub t_end: f64,
    /// Spacing of the output samples; a multiple of `tau`.
    pub sample_dt: f64,
    pub data: InitialData,
}

impl LimitParams {
    fn steps_per_sample(&self) -> Result<(usize, usize)> {
        let per = (self.sample_dt / self.tau).round();
        let total = (self.t_end / self.tau).round();
        if per < 1.0 || (per * self.tau - self.sample_dt).abs() > 1e-9 * self.sample_dt {
            return Err(SolverError::Parameter(format!(
                "sample spacing {} is not a multiple of tau {}",
                self.sample_dt, self.tau
            )));
        }
        if (total * self.tau - self.t_end).abs() > 1e-9 * self.t_end.max(1.0)
            || !(total as usize).is_multiple_of(per as usize)
        {
            return Err(SolverError::Parameter(format!(
                "t_end {} must be a multiple of the sample spacing {}",
                self.t_end, self.sample_dt
            )));
        }
        Ok((per as usize, total as usize))
    }
}

/// `(t, e_SW, e_WE)` for every choice in `gammas`, sampled every `sample_dt`.
/// The NKGE and NLSE runs are shared between the choices.
pub fn limit_study(
    params: &LimitParams,
    gammas: &[GammaChoice],
) -> Result<Vec<(GammaChoice, Vec<LimitSample>)>> {
    let (per, total) = params.steps_per_sample()?;
    let grid = &params.grid;
    let solver = SolverParams {
        eps: params.eps,
        lambda: params.lambda,
        tau: params.tau,
        grid: grid.clone(),
        t_end: params.t_end,
    };
    let table = CoeffTable::build(params.tau, params.eps, grid)?;
    let init = params.data.state(grid, params.eps)?;
    let traj = run_with_table(
        &solver,
        &table,
        &init,
        &RunOptions {
            record: Record::Every(per),
            ..Default::default()
        },
    )?;

    let v0 = limit_initial_value(params.data, grid);
    let samples = total / per;
    let tssp = TsspStepper::new(params.tau, params.lambda, grid)?;
    let mut se = Vec::with_capacity(samples + 1);
    let mut v = v0.clone();
    se.push(v.clone());
    for n in 1..=total {
        tssp.step(&mut v, grid)?;
        if n % per == 0 {
            se.push(v.clone());
        }
    }

    let mut out = Vec::with_capacity(gammas.len());
    for &choice in gammas {
        let mut state = NlswState::new(v0.clone(), make_gamma(choice, &v0, params.lambda, grid)?)?;
        let mut ewi = EwiStepper::new(grid, params.lambda);
        let mut rows = Vec::with_capacity(samples + 1);
        for (k, (fine, slow)) in traj.states.iter().zip(&se).enumerate().take(samples + 1) {
            if k > 0 {
                for _ in 0..per {
                    ewi.step(&mut state, &table, grid)?;
                }
            }
            let t = (k * per) as f64 * params.tau;
            rows.push(LimitSample {
                t,
                e_sw: e_sw(grid, &fine.u, &state.v, params.eps, t)?,
                e_we: e_we(grid, &state.v, slow)?,
            });
        }
        out.push((choice, rows));
    }
    Ok(out)
}

pub fn write_samples_csv<W: Write>(samples: &[LimitSample], mut out: W) -> Result<()> {
    writeln!(out, "t,e_sw,e_we")?;
    for s in samples {
        writeln!(out, "{:e},{:e},{:e}", s.t, s.e_sw, s.e_we)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpectralGrid {
        SpectralGrid::new(-16.0, 16.0, 128, 1).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let g = grid();
        let one = vec![Complex64::new(1.0, 0.0); g.len()];
        assert!(make_gamma(GammaChoice::Zero, &one, 1.0, &g)
            .unwrap()
            .iter()
            .all(|z| *z == Complex64::new(0.0, 0.0)));
        for z in make_gamma(GammaChoice::WellPrepared, &one, 1.0, &g).unwrap() {
            assert!((z - Complex64::new(0.0, 1.5)).norm() < 1e-13);
        }
        for z in make_gamma(GammaChoice::CubicOnly, &one, 1.0, &g).unwrap() {
            assert!((z - Complex64::new(0.0, 1.5)).norm() < 1e-15);
        }
        assert_eq!(
            "cubic_only".parse::<GammaChoice>().unwrap(),
            GammaChoice::CubicOnly
        );
        assert!("other".parse::<GammaChoice>().is_err());
    }

    #[test]
    fn zero_stays_zero() {
        let g = grid();
        let table = CoeffTable::build(0.01, 0.1, &g).unwrap();
        let z = vec![Complex64::new(0.0, 0.0); g.len()];
        let s = NlswState::new(z.clone(), z.clone()).unwrap();
        let n = nlsw_step(&s, 1.0, &table, &g).unwrap();
        assert!(n.v.iter().chain(&n.vdot).all(|c| c.norm() == 0.0));
        assert!((n.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn nlse_linear_flow_and_modulus() {
        let g = grid();
        let mu1 = g.axis_frequencies()[1];
        let plane: Vec<Complex64> = g.sample(|x, _| 0.7 * cis_product(mu1, x - g.a()));
        let out = nlse_step(&plane, 0.1, 1.0, &g).unwrap();
        for (a, b) in plane.iter().zip(&out) {
            assert!((a.norm() - b.norm()).abs() < 1e-14);
        }
        let v0 = limit_initial_value(InitialData::SechGauss, &g);
        let out = nlse_step(&v0, 0.1, 0.0, &g).unwrap();
        let (a, b) = (g.forward(&v0).unwrap(), g.forward(&out).unwrap());
        for ((x, y), &m2) in a.iter().zip(&b).zip(g.mu_squared()) {
            assert!((y - x * cis_product(0.05, m2)).norm() < 1e-15);
        }
    }

    #[test]
    fn error_functionals_vanish_on_matching_fields() {
        let g = grid();
        let eps = 0.1;
        let t = 0.37;
        let v = limit_initial_value(InitialData::SechGauss, &g);
        let phase = cis_product(t, 1.0 / (eps * eps));
        let u: Vec<f64> = v.iter().map(|z| 2.0 * (phase * z).re).collect();
        assert!(e_sw(&g, &u, &v, eps, t).unwrap() < 1e-14);
        assert_eq!(e_we(&g, &v, &v).unwrap(), 0.0);
        assert!(e_we(&g, &v, &v[1..]).is_err());
    }

    #[test]
    fn study_rejects_misaligned_sampling() {
        let p = LimitParams {
            eps: 0.1,
            lambda: 1.0,
            grid: grid(),
            tau: 0.01,
            t_end: 0.1,
            sample_dt: 0.015,
            data: InitialData::SechGauss,
        };
        assert!(limit_study(&p, &[GammaChoice::Zero]).is_err());
    }

    #[test]
    fn study_shapes() {
        let p = LimitParams {
            eps: 0.1,
            lambda: 1.0,
            grid: grid(),
            tau: 0.01,
            t_end: 0.2,
            sample_dt: 0.05,
            data: InitialData::SechGauss,
        };
        let out = limit_study(&p, &GammaChoice::ALL).unwrap();
        assert_eq!(out.len(), 3);
        for (_, rows) in &out {
            assert_eq!(rows.len(), 5);
            assert!(rows[0].e_sw < 1e-14 && rows[0].e_we == 0.0);
            assert!((rows[4].t - 0.2).abs() < 1e-12);
        }
    }
}
