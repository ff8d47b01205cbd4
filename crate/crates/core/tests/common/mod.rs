//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod oracle;

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use mtifp::{FieldState, SpectralGrid};
use num_complex::Complex64;

const GL_DEGREE: usize = 20;

/// Composite Gauss-Legendre for a complex integrand whose fastest phase
/// velocity is `max_freq`; the panel count doubles until two passes agree.
pub fn quad(f: impl Fn(f64) -> Complex64, a: f64, b: f64, max_freq: f64) -> Complex64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(GL_DEGREE).unwrap());
    let nodes = rule.as_node_weight_pairs();
    let pass = |panels: usize| {
        let w = (b - a) / panels as f64;
        let (mut acc, mut mass) = (Complex64::new(0.0, 0.0), 0.0);
        for k in 0..panels {
            let mid = a + (k as f64 + 0.5) * w;
            let mut panel = Complex64::new(0.0, 0.0);
            for &(x, wt) in nodes {
                let v = wt * f(mid + 0.5 * w * x);
                panel += v;
                mass += 0.5 * w * v.norm();
            }
            acc += 0.5 * w * panel;
        }
        (acc, mass)
    };
    // about one radian per panel to start; degree 20 is then far past convergence
    let mut panels = ((b - a) * max_freq).ceil().max(1.0) as usize;
    let (mut prev, _) = pass(panels);
    for _ in 0..4 {
        panels *= 2;
        let (next, mass) = pass(panels);
        // agreement down to the rounding level of the summed terms
        if (next - prev).norm() <= 1e-13 * next.norm().max(mass) {
            return next;
        }
        prev = next;
    }
    panic!("quadrature did not settle on [{a}, {b}] with {panels} panels");
}

/// Real-valued composite Gauss-Legendre on a fixed number of panels.
pub fn quad_real(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(GL_DEGREE).unwrap());
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|k| rule.integrate(a + k as f64 * w, a + (k + 1) as f64 * w, &f))
        .sum()
}

pub fn cis(x: f64) -> Complex64 {
    Complex64::new(x.cos(), x.sin())
}

/// Linear Klein-Gordon flow per mode:
/// `u_l(t) = u_l cos(w t) + udot_l sin(w t) / w`, `w = sqrt(1 + eps^2 mu^2) / eps^2`.
/// Nyquist modes are dropped, matching the scheme's even-symmetric truncation.
pub fn linear_kg_exact(grid: &SpectralGrid, init: &FieldState, eps: f64, t: f64) -> FieldState {
    let u = grid.forward_real(&init.u).unwrap();
    let ud = grid.forward_real(&init.udot).unwrap();
    let mut out_u = vec![Complex64::new(0.0, 0.0); u.len()];
    let mut out_ud = out_u.clone();
    let eps2 = eps * eps;
    for (k, &m2) in grid.mu_squared().iter().enumerate() {
        let w = (1.0 + eps2 * m2).sqrt() / eps2;
        let (s, c) = (w * t).sin_cos();
        out_u[k] = u[k] * c + ud[k] * s / w;
        out_ud[k] = -u[k] * w * s + ud[k] * c;
    }
    for &k in grid.nyquist_indices() {
        out_u[k] = Complex64::new(0.0, 0.0);
        out_ud[k] = Complex64::new(0.0, 0.0);
    }
    FieldState {
        u: grid.inverse_real(&out_u).unwrap(),
        udot: grid.inverse_real(&out_ud).unwrap(),
        t: init.t + t,
    }
}

/// Linear NLSW `eps^2 y'' + 2i y' + mu^2 y = 0` per mode from its roots
/// `rho = i(-1 +- sqrt(1 + eps^2 mu^2)) / eps^2`.
pub fn linear_nlsw_exact(
    grid: &SpectralGrid,
    v: &[Complex64],
    w: &[Complex64],
    eps: f64,
    t: f64,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let vh = grid.forward(v).unwrap();
    let wh = grid.forward(w).unwrap();
    let eps2 = eps * eps;
    let mut ov = vh.clone();
    let mut ow = wh.clone();
    for (k, &m2) in grid.mu_squared().iter().enumerate() {
        let s = (1.0 + eps2 * m2).sqrt();
        let r1 = Complex64::new(0.0, (-1.0 + s) / eps2);
        let r2 = Complex64::new(0.0, (-1.0 - s) / eps2);
        // y = A e^{r1 t} + B e^{r2 t}; A + B = v, r1 A + r2 B = w
        let b = (r1 * vh[k] - wh[k]) / (r1 - r2);
        let a = vh[k] - b;
        let (e1, e2) = ((r1 * t).exp(), (r2 * t).exp());
        ov[k] = a * e1 + b * e2;
        ow[k] = a * r1 * e1 + b * r2 * e2;
    }
    (grid.inverse(&ov).unwrap(), grid.inverse(&ow).unwrap())
}

/// Relative H1 distance between two real fields on one grid.
pub fn rel_h1(grid: &SpectralGrid, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    grid.h1_norm_real(&d).unwrap() / grid.h1_norm_real(b).unwrap()
}

pub fn h1_diff(grid: &SpectralGrid, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    grid.h1_norm_real(&d).unwrap()
}

pub fn h1_diff_c(grid: &SpectralGrid, a: &[Complex64], b: &[Complex64]) -> f64 {
    let d: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    grid.h1_norm(&d).unwrap()
}

/// `log(e_prev / e_cur) / log(factor)`.
pub fn rate(prev: f64, cur: f64, factor: f64) -> f64 {
    (prev / cur).ln() / factor.ln()
}
