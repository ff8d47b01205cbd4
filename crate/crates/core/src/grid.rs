//! Periodic collocation grids and the discrete Fourier machinery on them.
//!
//! Fields are stored as flat vectors of node values. In two dimensions the
//! layout is row-major with `x` as the slow axis: node `(jx, jy)` lives at
//! `jx * n + jy`. Spectral coefficients use the same layout in FFT order, so
//! flat index `k` along an axis carries the mode `l = k` for `k < n/2` and
//! `l = k - n` otherwise. The transform pair is
//!
//! ```text
//! f~_l = (1/N) sum_j f_j exp(-i mu_l (x_j - a)),   f_j = sum_l f~_l exp(i mu_l (x_j - a))
//! ```
//!
//! with `mu_l = 2 pi l / (b - a)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// Grid descriptor without the transform plans; cheap to serialize and compare.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub dim: usize,
}

impl GridSpec {
    pub fn h(&self) -> f64 {
        (self.b - self.a) / self.n as f64
    }
}

/// Uniform periodic grid on `(a, b)^dim` with `n` nodes per axis.
#[derive(Clone)]
pub struct SpectralGrid {
    spec: GridSpec,
    /// Axis frequencies in FFT order.
    axis_mu: Vec<f64>,
    mu2: Vec<f64>,
    partner: Vec<usize>,
    nyquist: Vec<usize>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("a", &self.spec.a)
            .field("b", &self.spec.b)
            .field("n", &self.spec.n)
            .field("dim", &self.spec.dim)
            .finish()
    }
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl SpectralGrid {
    pub fn new(a: f64, b: f64, n: usize, dim: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(SolverError::Parameter(format!(
                "domain endpoints must satisfy a < b, got ({a}, {b})"
            )));
        }
        if n < 2 || !n.is_multiple_of(2) {
            return Err(SolverError::Parameter(format!(
                "mode count must be even and positive, got {n}"
            )));
        }
        if dim != 1 && dim != 2 {
            return Err(SolverError::Parameter(format!(
                "only 1D and 2D grids are supported, got dim = {dim}"
            )));
        }
        let len = b - a;
        let axis_mu: Vec<f64> = (0..n)
            .map(|k| 2.0 * PI * signed_mode(k, n) as f64 / len)
            .collect();
        let axis_partner = |k: usize| (n - k) % n;
        let total = n.pow(dim as u32);
        let mut mu2 = Vec::with_capacity(total);
        let mut partner = Vec::with_capacity(total);
        let mut nyquist = Vec::new();
        let half = n / 2;
        if dim == 1 {
            for (k, &m) in axis_mu.iter().enumerate() {
                mu2.push(m * m);
                partner.push(axis_partner(k));
                if k == half {
                    nyquist.push(k);
                }
            }
        } else {
            for kx in 0..n {
                for ky in 0..n {
                    mu2.push(axis_mu[kx] * axis_mu[kx] + axis_mu[ky] * axis_mu[ky]);
                    partner.push(axis_partner(kx) * n + axis_partner(ky));
                    if kx == half || ky == half {
                        nyquist.push(kx * n + ky);
                    }
                }
            }
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        Ok(Self {
            spec: GridSpec { a, b, n, dim },
            axis_mu,
            mu2,
            partner,
            nyquist,
            fft,
            ifft,
        })
    }

    /// One-dimensional grid with mesh size `h`; `(b - a) / h` must be an even integer.
    pub fn with_mesh_size(a: f64, b: f64, h: f64, dim: usize) -> Result<Self> {
        let ratio = (b - a) / h;
        let n = ratio.round();
        if !(h > 0.0) || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(SolverError::Parameter(format!(
                "mesh size {h} does not divide the domain length {}",
                b - a
            )));
        }
        Self::new(a, b, n as usize, dim)
    }

    pub fn from_spec(spec: GridSpec) -> Result<Self> {
        Self::new(spec.a, spec.b, spec.n, spec.dim)
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }
    pub fn a(&self) -> f64 {
        self.spec.a
    }
    pub fn b(&self) -> f64 {
        self.spec.b
    }
    /// Nodes (and modes) per axis.
    pub fn n(&self) -> usize {
        self.spec.n
    }
    pub fn dim(&self) -> usize {
        self.spec.dim
    }
    pub fn h(&self) -> f64 {
        self.spec.h()
    }
    /// Total number of stored values.
    pub fn len(&self) -> usize {
        self.mu2.len()
    }
    pub fn is_empty(&self) -> bool {
        self.mu2.is_empty()
    }
    /// Measure of the domain, `(b - a)^dim`.
    pub fn volume(&self) -> f64 {
        (self.spec.b - self.spec.a).powi(self.spec.dim as i32)
    }
    /// Volume of one grid cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.spec.dim as i32)
    }

    /// Node coordinates along one axis, `x_j = a + j h` for `j = 0..n`.
    pub fn axis_nodes(&self) -> Vec<f64> {
        (0..self.spec.n)
            .map(|j| self.spec.a + j as f64 * self.h())
            .collect()
    }

    /// Coordinates of flat node `k`; the second entry is 0 in 1D.
    pub fn node(&self, k: usize) -> (f64, f64) {
        let h = self.h();
        if self.spec.dim == 1 {
            (self.spec.a + k as f64 * h, 0.0)
        } else {
            let (jx, jy) = (k / self.spec.n, k % self.spec.n);
            (self.spec.a + jx as f64 * h, self.spec.a + jy as f64 * h)
        }
    }

    /// Evaluate a function at every node.
    pub fn sample<T, F: Fn(f64, f64) -> T>(&self, f: F) -> Vec<T> {
        (0..self.len())
            .map(|k| {
                let (x, y) = self.node(k);
                f(x, y)
            })
            .collect()
    }

    /// Axis frequencies `mu_l` in FFT order.
    pub fn axis_frequencies(&self) -> &[f64] {
        &self.axis_mu
    }

    /// Signed mode index of flat spectral index `k` (second entry 0 in 1D).
    pub fn mode_index(&self, k: usize) -> (i64, i64) {
        let n = self.spec.n;
        if self.spec.dim == 1 {
            (signed_mode(k, n), 0)
        } else {
            (signed_mode(k / n, n), signed_mode(k % n, n))
        }
    }

    /// Flat spectral index of the signed mode, if it lies in this grid's index set.
    pub fn flat_index(&self, mode: (i64, i64)) -> Option<usize> {
        let n = self.spec.n as i64;
        let wrap = |l: i64| -> Option<usize> {
            if (-n / 2..n / 2).contains(&l) {
                Some(l.rem_euclid(n) as usize)
            } else {
                None
            }
        };
        if self.spec.dim == 1 {
            if mode.1 != 0 {
                return None;
            }
            wrap(mode.0)
        } else {
            Some(wrap(mode.0)? * self.spec.n + wrap(mode.1)?)
        }
    }

    /// `|mu_l|^2` per flat spectral index.
    pub fn mu_squared(&self) -> &[f64] {
        &self.mu2
    }

    /// Flat index of the mode `-l` for each flat index `l`.
    pub fn partners(&self) -> &[usize] {
        &self.partner
    }

    /// Flat indices touching the unpaired mode `l = -n/2` on some axis.
    pub fn nyquist_indices(&self) -> &[usize] {
        &self.nyquist
    }

    pub fn zero_nyquist(&self, coeffs: &mut [Complex64]) {
        for &k in &self.nyquist {
            coeffs[k] = Complex64::new(0.0, 0.0);
        }
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(SolverError::Shape {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }

    /// In-place forward transform with the `1/N^dim` normalization.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) -> Result<()> {
        self.check_len(buf.len())?;
        self.transform(buf, &self.fft);
        let scale = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        Ok(())
    }

    /// In-place inverse transform (synthesis from coefficients, no scaling).
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) -> Result<()> {
        self.check_len(buf.len())?;
        self.transform(buf, &self.ifft);
        Ok(())
    }

    pub fn forward(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut buf = f.to_vec();
        self.forward_in_place(&mut buf)?;
        Ok(buf)
    }

    pub fn forward_real(&self, f: &[f64]) -> Result<Vec<Complex64>> {
        let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward_in_place(&mut buf)?;
        Ok(buf)
    }

    pub fn inverse(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut buf = coeffs.to_vec();
        self.inverse_in_place(&mut buf)?;
        Ok(buf)
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, coeffs: &[Complex64]) -> Result<Vec<f64>> {
        Ok(self.inverse(coeffs)?.into_iter().map(|c| c.re).collect())
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.spec.n;
        // rustfft processes every contiguous length-n chunk, which covers the rows.
        plan.process(buf);
        if self.spec.dim == 2 {
            let mut t = vec![Complex64::new(0.0, 0.0); buf.len()];
            transpose(buf, &mut t, n);
            plan.process(&mut t);
            transpose(&t, buf, n);
        }
    }

    /// Spectral derivative along `axis` (0 = x, 1 = y); Nyquist mode dropped.
    pub fn derivative(&self, f: &[Complex64], axis: usize) -> Result<Vec<Complex64>> {
        if axis >= self.spec.dim {
            return Err(SolverError::Parameter(format!("axis {axis} out of range")));
        }
        let mut c = self.forward(f)?;
        let n = self.spec.n;
        for (k, ck) in c.iter_mut().enumerate() {
            let ak = if self.spec.dim == 1 {
                k
            } else if axis == 0 {
                k / n
            } else {
                k % n
            };
            *ck *= Complex64::new(0.0, self.axis_mu[ak]);
        }
        self.zero_nyquist(&mut c);
        self.inverse_in_place(&mut c)?;
        Ok(c)
    }

    pub fn derivative_real(&self, f: &[f64], axis: usize) -> Result<Vec<f64>> {
        let fc: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Ok(self
            .derivative(&fc, axis)?
            .into_iter()
            .map(|c| c.re)
            .collect())
    }

    /// Spectral Laplacian, `-|mu|^2 f~_l`.
    pub fn laplacian(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut c = self.forward(f)?;
        for (ck, &m2) in c.iter_mut().zip(&self.mu2) {
            *ck *= -m2;
        }
        self.inverse_in_place(&mut c)?;
        Ok(c)
    }

    /// Discrete L2 norm `sqrt(h^d sum_j |f_j|^2)`.
    pub fn l2_norm(&self, f: &[Complex64]) -> Result<f64> {
        self.check_len(f.len())?;
        Ok((self.cell_volume() * f.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt())
    }

    pub fn l2_norm_real(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f.len())?;
        Ok((self.cell_volume() * f.iter().map(|x| x * x).sum::<f64>()).sqrt())
    }

    /// H1 norm from spectral coefficients: `sqrt(|Omega| sum_l (1 + |mu_l|^2) |c_l|^2)`.
    pub fn h1_norm_coeffs(&self, coeffs: &[Complex64]) -> Result<f64> {
        self.check_len(coeffs.len())?;
        Ok(self.h1_sq_coeffs(coeffs, |_| 1.0).sqrt())
    }

    /// `|Omega| sum_l w(mu2) (1 + |mu_l|^2) |c_l|^2`.
    pub(crate) fn h1_sq_coeffs(&self, coeffs: &[Complex64], weight: impl Fn(f64) -> f64) -> f64 {
        self.volume()
            * coeffs
                .iter()
                .zip(&self.mu2)
                .map(|(c, &m2)| weight(m2) * (1.0 + m2) * c.norm_sqr())
                .sum::<f64>()
    }

    pub fn h1_norm(&self, f: &[Complex64]) -> Result<f64> {
        self.h1_norm_coeffs(&self.forward(f)?)
    }

    pub fn h1_norm_real(&self, f: &[f64]) -> Result<f64> {
        self.h1_norm_coeffs(&self.forward_real(f)?)
    }

    /// Discrete energy of a real state:
    /// `h^d sum_j [eps^2 udot^2 + |grad u|^2 + u^2 / eps^2 + (lambda/2) u^4]`.
    pub fn energy(&self, u: &[f64], udot: &[f64], eps: f64, lambda: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(SolverError::Parameter(format!(
                "eps must be positive, got {eps}"
            )));
        }
        self.check_len(u.len())?;
        self.check_len(udot.len())?;
        let mut grad2 = vec![0.0; u.len()];
        for axis in 0..self.spec.dim {
            let d = self.derivative_real(u, axis)?;
            grad2.iter_mut().zip(&d).for_each(|(g, di)| *g += di * di);
        }
        let eps2 = eps * eps;
        let sum: f64 = u
            .iter()
            .zip(udot)
            .zip(&grad2)
            .map(|((&ui, &vi), &gi)| {
                let u2 = ui * ui;
                eps2 * vi * vi + gi + u2 / eps2 + 0.5 * lambda * u2 * u2
            })
            .sum();
        Ok(self.cell_volume() * sum)
    }

    /// Map coefficients of this grid onto `target`'s index set over the same
    /// domain: shared modes are copied, missing ones are zero.
    pub fn transfer_coeffs(
        &self,
        coeffs: &[Complex64],
        target: &SpectralGrid,
    ) -> Result<Vec<Complex64>> {
        self.check_len(coeffs.len())?;
        self.check_same_domain(target)?;
        let mut out = vec![Complex64::new(0.0, 0.0); target.len()];
        for (k, &c) in coeffs.iter().enumerate() {
            if let Some(kt) = target.flat_index(self.mode_index(k)) {
                out[kt] = c;
            }
        }
        Ok(out)
    }

    pub fn check_same_domain(&self, other: &SpectralGrid) -> Result<()> {
        let same = self.spec.dim == other.spec.dim
            && (self.spec.a - other.spec.a).abs() <= 1e-12 * self.spec.a.abs().max(1.0)
            && (self.spec.b - other.spec.b).abs() <= 1e-12 * self.spec.b.abs().max(1.0);
        if same {
            Ok(())
        } else {
            Err(SolverError::GridMismatch(format!(
                "domains differ: {:?} vs {:?}",
                self.spec, other.spec
            )))
        }
    }
}

fn signed_mode(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            dst[j * n + i] = src[i * n + j];
        }
    }
}
