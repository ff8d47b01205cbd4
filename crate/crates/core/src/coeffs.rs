//! Per-mode coefficients of the exponential integrator.
//!
//! For a mode with frequency `mu` the homogeneous NLSW symbol
//! `eps^2 v'' + 2i v' + mu^2 v = 0` has the characteristic roots
//!
//! ```text
//! lambda_pm = -(1 pm sqrt(1 + eps^2 mu^2)) / eps^2
//! ```
//!
//! and the propagators `a(s)`, `b(s)` are combinations of `exp(i s lambda_pm)`.
//! The remainder equation oscillates at `omega = sqrt(1 + eps^2 mu^2) / eps^2`
//! and is forced at `3 / eps^2`. Every integral needed by the scheme reduces to
//! `int_0^t exp(i k theta) d theta = t * phi(i k t)` with `phi(z) = (e^z - 1)/z`,
//! which stays finite at `k = 0` (the zero mode for `lambda_-`) and at the
//! resonance `omega = 3/eps^2` (`eps^2 mu^2 = 8`).
//!
//! Differences such as `sqrt(1+x) - 1` and `3 - sqrt(1+x)` are rewritten in
//! rationalized form so that no branch loses digits to cancellation.

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::grid::{GridSpec, SpectralGrid};
use crate::parallel::Execution;

/// Below this `|z|` the kernel `phi` is evaluated by its Taylor series.
pub const PHI_SERIES_THRESHOLD: f64 = 1e-4;

const TAU_HI: f64 = TAU;
// TAU - TAU_HI, the next 53 bits of 2*pi.
const TAU_LO: f64 = 2.449_293_598_294_706_4e-16;

/// `exp(i * x * y)` with the product's rounding error carried through a
/// two-term reduction modulo `2 pi`. Phases `tau / eps^2` routinely reach 1e8.
pub fn cis_product(x: f64, y: f64) -> Complex64 {
    let p = x * y;
    let err = x.mul_add(y, -p);
    let k = (p / TAU).round();
    let r = (-k).mul_add(TAU_HI, p);
    let r = (-k).mul_add(TAU_LO, r) + err;
    Complex64::new(r.cos(), r.sin())
}

/// `phi(i y) = (exp(i y) - 1) / (i y)` for real `y`.
pub fn phi_imag(y: f64) -> Complex64 {
    if y.abs() < PHI_SERIES_THRESHOLD {
        // 1 + z/2 + z^2/6 + z^3/24 + z^4/120, z = i y
        let y2 = y * y;
        Complex64::new(1.0 - y2 / 6.0 + y2 * y2 / 120.0, y / 2.0 - y * y2 / 24.0)
    } else {
        let s = (0.5 * y).sin();
        // exp(i y) - 1 = -2 sin^2(y/2) + i sin y
        let num = Complex64::new(-2.0 * s * s, y.sin());
        num / Complex64::new(0.0, y)
    }
}

/// `int_0^t exp(i k theta) d theta`.
pub fn exp_integral(t: f64, k: f64) -> Complex64 {
    let y = t * k;
    if y.abs() < PHI_SERIES_THRESHOLD || !y.is_finite() {
        return t * phi_imag(y);
    }
    // Reduced-phase numerator keeps large t*k accurate.
    let num = cis_product(t, k) - 1.0;
    num / Complex64::new(0.0, k)
}

/// Every scalar the scheme needs for one mode at step size `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCoeffs {
    pub mu2: f64,
    pub omega: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub a: Complex64,
    pub a_prime: Complex64,
    /// `b(tau)`; only the NLSW reference solver uses `b` and `b'`.
    pub b: Complex64,
    pub b_prime: Complex64,
    pub c: Complex64,
    pub c_prime: Complex64,
    pub p: Complex64,
    pub p_prime: Complex64,
}

/// Coefficients for a single mode with frequency `mu`.
pub fn eval_mode_coeffs(tau: f64, eps: f64, mu: f64) -> Result<ModeCoeffs> {
    check_params(tau, eps)?;
    if !mu.is_finite() {
        return Err(SolverError::Parameter(format!(
            "frequency must be finite, got {mu}"
        )));
    }
    Ok(mode_coeffs_mu2(tau, eps, mu * mu))
}

fn check_params(tau: f64, eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(SolverError::Parameter(format!(
            "eps must lie in (0, 1], got {eps}"
        )));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(SolverError::Parameter(format!(
            "tau must be non-negative, got {tau}"
        )));
    }
    Ok(())
}

pub(crate) fn mode_coeffs_mu2(tau: f64, eps: f64, mu2: f64) -> ModeCoeffs {
    let eps2 = eps * eps;
    let x = eps2 * mu2;
    let s = (1.0 + x).sqrt();
    let omega = s / eps2;
    let lambda_plus = -(1.0 + s) / eps2;
    // (s - 1) / eps^2 without cancellation
    let lambda_minus = mu2 / (1.0 + s);
    let i = Complex64::i();

    let e_plus = cis_product(tau, lambda_plus);
    let e_minus = cis_product(tau, lambda_minus);
    let two_s = 2.0 * s;

    // (lambda+ e- - lambda- e+) / (lambda+ - lambda-), lambda+ - lambda- = -2s/eps^2
    let a = (lambda_plus * e_minus - lambda_minus * e_plus) / (-two_s / eps2);
    // lambda+ lambda- / (lambda+ - lambda-) = mu^2 / (2s)
    let a_prime = i * (mu2 / two_s) * (e_minus - e_plus);
    let b = i * (e_plus - e_minus) / two_s;
    let b_prime = (lambda_plus * e_plus - lambda_minus * e_minus) / (-two_s);
    let c = i * (exp_integral(tau, lambda_plus) - exp_integral(tau, lambda_minus)) / two_s;
    // c' = int_0^tau b'(theta) d theta = b(tau) - b(0)
    let c_prime = b;

    // 3/eps^2 -+ omega
    let detune = (8.0 - x) / (eps2 * (3.0 + s));
    let sum_rate = (3.0 + s) / eps2;
    let near = cis_product(tau, omega) * exp_integral(tau, detune);
    let far = cis_product(tau, -omega) * exp_integral(tau, sum_rate);
    let p = (near - far) / Complex64::new(0.0, two_s);
    let p_prime = (near + far) / (2.0 * eps2);

    ModeCoeffs {
        mu2,
        omega,
        lambda_plus,
        lambda_minus,
        a,
        a_prime,
        b,
        b_prime,
        c,
        c_prime,
        p,
        p_prime,
    }
}

/// Coefficients for every mode of a grid, built once per `(tau, eps, grid)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffTable {
    tau: f64,
    eps: f64,
    grid: GridSpec,
    modes: Vec<ModeCoeffs>,
}

impl CoeffTable {
    pub fn build(tau: f64, eps: f64, grid: &SpectralGrid) -> Result<Self> {
        Self::build_with(tau, eps, grid, Execution::Sequential)
    }

    pub fn build_with(tau: f64, eps: f64, grid: &SpectralGrid, exec: Execution) -> Result<Self> {
        check_params(tau, eps)?;
        let mu2 = grid.mu_squared();
        let modes = exec.map(mu2.len(), |k| mode_coeffs_mu2(tau, eps, mu2[k]));
        Ok(Self {
            tau,
            eps,
            grid: grid.spec(),
            modes,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn grid(&self) -> GridSpec {
        self.grid
    }
    pub fn modes(&self) -> &[ModeCoeffs] {
        &self.modes
    }

    /// Fails unless the table was built for exactly this configuration.
    pub fn check(&self, tau: f64, eps: f64, grid: &SpectralGrid) -> Result<()> {
        let mut problems = Vec::new();
        if self.tau != tau {
            problems.push(format!("tau {} != {}", self.tau, tau));
        }
        if self.eps != eps {
            problems.push(format!("eps {} != {}", self.eps, eps));
        }
        if self.grid != grid.spec() {
            problems.push(format!("grid {:?} != {:?}", self.grid, grid.spec()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SolverError::Configuration(problems.join(", ")))
        }
    }

    /// Debug dump: one CSV row per mode.
    pub fn write_csv<W: Write>(&self, grid: &SpectralGrid, mut out: W) -> Result<()> {
        self.check(self.tau, self.eps, grid)?;
        let names = ["a", "a_prime", "c", "c_prime", "p", "p_prime"];
        let cols: Vec<String> = names
            .iter()
            .flat_map(|n| [format!("re_{n}"), format!("im_{n}")])
            .collect();
        if grid.dim() == 1 {
            write!(out, "l,mu")?;
        } else {
            write!(out, "lx,ly,mu_abs")?;
        }
        writeln!(out, ",omega,lambda_plus,lambda_minus,{}", cols.join(","))?;
        for (k, m) in self.modes.iter().enumerate() {
            let (lx, ly) = grid.mode_index(k);
            if grid.dim() == 1 {
                write!(out, "{lx},{:e}", grid.axis_frequencies()[k])?;
            } else {
                write!(out, "{lx},{ly},{:e}", m.mu2.sqrt())?;
            }
            write!(
                out,
                ",{:e},{:e},{:e}",
                m.omega, m.lambda_plus, m.lambda_minus
            )?;
            for z in [m.a, m.a_prime, m.c, m.c_prime, m.p, m.p_prime] {
                write!(out, ",{:e},{:e}", z.re, z.im)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
