//! Error functionals, observed convergence rates and error tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::grid::SpectralGrid;
use crate::mti::FieldState;

/// Norm convention recorded in every output file.
pub const NORM_CONVENTION: &str =
    "spectral H1: sqrt(|Omega| sum_l (1+|mu_l|^2) |c_l|^2); coarse solutions zero-padded onto the reference index set";

/// H1 norms of `e = u_ref - I_N u` and `edot = udot_ref - I_N udot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H1Error {
    pub e: f64,
    pub edot: f64,
}

impl H1Error {
    /// `||e||_{H1} + eps^2 ||edot||_{H1}`.
    pub fn combined(&self, eps: f64) -> f64 {
        self.e + eps * eps * self.edot
    }
}

/// Spectral coefficients of `numeric - reference` on the finer of the two
/// grids, the coarser field's coefficients zero-padded.
pub fn difference_coeffs(
    grid: &SpectralGrid,
    numeric: &[f64],
    ref_grid: &SpectralGrid,
    reference: &[f64],
) -> Result<(SpectralGrid, Vec<Complex64>)> {
    grid.check_same_domain(ref_grid)?;
    let fine = if grid.n() >= ref_grid.n() {
        grid
    } else {
        ref_grid
    };
    let num = grid.transfer_coeffs(&grid.forward_real(numeric)?, fine)?;
    let reff = ref_grid.transfer_coeffs(&ref_grid.forward_real(reference)?, fine)?;
    let diff = num.iter().zip(&reff).map(|(a, b)| a - b).collect();
    Ok((fine.clone(), diff))
}

/// H1 errors of a numerical state against a reference, possibly on a finer grid.
pub fn h1_error(
    grid: &SpectralGrid,
    numeric: &FieldState,
    ref_grid: &SpectralGrid,
    reference: &FieldState,
) -> Result<H1Error> {
    let (fine, de) = difference_coeffs(grid, &numeric.u, ref_grid, &reference.u)?;
    let (_, dd) = difference_coeffs(grid, &numeric.udot, ref_grid, &reference.udot)?;
    Ok(H1Error {
        e: fine.h1_norm_coeffs(&de)?,
        edot: fine.h1_norm_coeffs(&dd)?,
    })
}

/// Discrete L2 error of `u` on the finer grid.
pub fn l2_error(
    grid: &SpectralGrid,
    numeric: &FieldState,
    ref_grid: &SpectralGrid,
    reference: &FieldState,
) -> Result<f64> {
    let (fine, de) = difference_coeffs(grid, &numeric.u, ref_grid, &reference.u)?;
    // Parseval: h^d sum |f_j|^2 = |Omega| sum |c_l|^2
    Ok((fine.volume() * de.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt())
}

/// Error energy `eps^2 ||edot||_{H1}^2 + ||grad e||_{H1}^2 + ||e||_{H1}^2 / eps^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnergy {
    pub value: f64,
}

impl ErrorEnergy {
    /// From spectral coefficients of `e` and `edot` on `grid`.
    pub fn from_coeffs(
        grid: &SpectralGrid,
        e: &[Complex64],
        edot: &[Complex64],
        eps: f64,
    ) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(SolverError::Parameter(format!(
                "eps must be positive, got {eps}"
            )));
        }
        if e.len() != grid.len() || edot.len() != grid.len() {
            return Err(SolverError::Shape {
                expected: grid.len(),
                got: e.len().min(edot.len()),
            });
        }
        let eps2 = eps * eps;
        let edot_sq = grid.h1_sq_coeffs(edot, |_| 1.0);
        // ||grad e||_{H1}^2 carries an extra |mu|^2 per mode
        let grad_sq = grid.h1_sq_coeffs(e, |m2| m2);
        let e_sq = grid.h1_sq_coeffs(e, |_| 1.0);
        Ok(Self {
            value: eps2 * edot_sq + grad_sq + e_sq / eps2,
        })
    }

    pub fn between(
        grid: &SpectralGrid,
        numeric: &FieldState,
        ref_grid: &SpectralGrid,
        reference: &FieldState,
        eps: f64,
    ) -> Result<Self> {
        let (fine, de) = difference_coeffs(grid, &numeric.u, ref_grid, &reference.u)?;
        let (_, dd) = difference_coeffs(grid, &numeric.udot, ref_grid, &reference.udot)?;
        Self::from_coeffs(&fine, &de, &dd, eps)
    }
}

/// `r_k = log(e_{k-1}/e_k) / log(refinement)`; `None` where either error is not positive.
pub fn observed_rates(errors: &[f64], refinement: f64) -> Result<Vec<Option<f64>>> {
    if errors.len() < 2 {
        return Err(SolverError::Empty(
            "need at least two errors for a rate".into(),
        ));
    }
    if !(refinement > 1.0) {
        return Err(SolverError::Parameter(format!(
            "refinement factor must exceed 1, got {refinement}"
        )));
    }
    let lf = refinement.ln();
    Ok(errors
        .windows(2)
        .map(|w| {
            let (prev, cur) = (w[0], w[1]);
            (prev > 0.0 && cur > 0.0 && prev.is_finite() && cur.is_finite())
                .then(|| (prev / cur).ln() / lf)
        })
        .collect())
}

/// `max_eps e^eps` over the supplied parameter grid.
pub fn uniform_error(per_eps: &[(f64, f64)]) -> Result<f64> {
    per_eps
        .iter()
        .map(|&(_, e)| e)
        .reduce(f64::max)
        .ok_or_else(|| SolverError::Empty("no per-eps errors".into()))
}

/// Least-squares slope of `log e` against `log x`.
pub fn fitted_slope(x: &[f64], e: &[f64]) -> Result<f64> {
    if x.len() != e.len() || x.len() < 2 {
        return Err(SolverError::Empty(
            "need at least two matching points to fit a slope".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Which parameter a table refines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    H,
    Tau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCell {
    pub eps: f64,
    pub h: f64,
    pub tau: f64,
    pub e_h1: f64,
    pub edot_h1: f64,
    pub l2: f64,
    pub energy_err: f64,
    /// Rate against the previous cell of the same row.
    pub rate: Option<f64>,
}

/// One entry of the `max over eps` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformCell {
    pub h: f64,
    pub tau: f64,
    pub e_max: f64,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub config_hash: String,
    pub norm: String,
    pub reference: String,
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub axis: SweepAxis,
    pub refinement: f64,
    pub eps: Vec<f64>,
    pub h: Vec<f64>,
    pub tau: Vec<f64>,
    /// Row-major over `eps`, then the sweep axis.
    pub cells: Vec<ErrorCell>,
    pub uniform: Vec<UniformCell>,
    pub metadata: TableMetadata,
}

impl ErrorTable {
    /// Assemble from cells ordered by `eps` then sweep value; fills in rates
    /// and the uniform row.
    pub fn assemble(
        axis: SweepAxis,
        refinement: f64,
        eps: Vec<f64>,
        h: Vec<f64>,
        tau: Vec<f64>,
        mut cells: Vec<ErrorCell>,
        metadata: TableMetadata,
    ) -> Result<Self> {
        let width = match axis {
            SweepAxis::H => h.len(),
            SweepAxis::Tau => tau.len(),
        };
        if width == 0 || cells.len() != eps.len() * width {
            return Err(SolverError::Shape {
                expected: eps.len() * width,
                got: cells.len(),
            });
        }
        for row in cells.chunks_mut(width) {
            row[0].rate = None;
            if width > 1 {
                let errs: Vec<f64> = row.iter().map(|c| c.e_h1).collect();
                for (c, r) in row[1..].iter_mut().zip(observed_rates(&errs, refinement)?) {
                    c.rate = r;
                }
            }
        }
        let mut uniform = Vec::with_capacity(width);
        for col in 0..width {
            let per: Vec<(f64, f64)> = (0..eps.len())
                .map(|r| (eps[r], cells[r * width + col].e_h1))
                .collect();
            let c = &cells[col];
            uniform.push(UniformCell {
                h: c.h,
                tau: c.tau,
                e_max: uniform_error(&per)?,
                rate: None,
            });
        }
        if width > 1 {
            let errs: Vec<f64> = uniform.iter().map(|u| u.e_max).collect();
            for (u, r) in uniform[1..]
                .iter_mut()
                .zip(observed_rates(&errs, refinement)?)
            {
                u.rate = r;
            }
        }
        Ok(Self {
            axis,
            refinement,
            eps,
            h,
            tau,
            cells,
            uniform,
            metadata,
        })
    }

    pub fn width(&self) -> usize {
        match self.axis {
            SweepAxis::H => self.h.len(),
            SweepAxis::Tau => self.tau.len(),
        }
    }

    pub fn row(&self, eps_index: usize) -> &[ErrorCell] {
        let w = self.width();
        &self.cells[eps_index * w..(eps_index + 1) * w]
    }

    pub fn cell(&self, eps_index: usize, col: usize) -> &ErrorCell {
        &self.row(eps_index)[col]
    }

    fn write_metadata<W: Write>(&self, out: &mut W) -> Result<()> {
        let m = &self.metadata;
        writeln!(out, "# config_hash={}", m.config_hash)?;
        writeln!(out, "# norm={}", m.norm)?;
        writeln!(out, "# reference={}", m.reference)?;
        for (k, v) in &m.extra {
            writeln!(out, "# {k}={v}")?;
        }
        Ok(())
    }

    /// CSV with a `#` metadata preamble; the uniform row uses `eps=max`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        self.write_metadata(&mut out)?;
        writeln!(out, "eps,h,tau,e_h1,edot_h1,rate")?;
        let rate = |r: Option<f64>| r.map(|x| format!("{x:.2}")).unwrap_or_default();
        for c in &self.cells {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{}",
                c.eps,
                c.h,
                c.tau,
                c.e_h1,
                c.edot_h1,
                rate(c.rate)
            )?;
        }
        for u in &self.uniform {
            writeln!(
                out,
                "max,{:e},{:e},{:e},,{}",
                u.h,
                u.tau,
                u.e_max,
                rate(u.rate)
            )?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Human-readable layout: one row of errors and one row of rates per eps.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let cols: Vec<f64> = match self.axis {
            SweepAxis::H => self.h.clone(),
            SweepAxis::Tau => self.tau.clone(),
        };
        let label = match self.axis {
            SweepAxis::H => "h",
            SweepAxis::Tau => "tau",
        };
        let _ = write!(s, "{:>12}", format!("eps \\ {label}"));
        for c in &cols {
            let _ = write!(s, " {c:>10.3e}");
        }
        s.push('\n');
        let rate_line = |s: &mut String, rates: Vec<Option<f64>>| {
            let _ = write!(s, "{:>12}", "rate");
            for r in rates {
                match r {
                    Some(r) => {
                        let _ = write!(s, " {r:>10.2}");
                    }
                    None => {
                        let _ = write!(s, " {:>10}", "---");
                    }
                }
            }
            s.push('\n');
        };
        for (i, eps) in self.eps.iter().enumerate() {
            let _ = write!(s, "{eps:>12.4e}");
            for c in self.row(i) {
                let _ = write!(s, " {:>10.2e}", c.e_h1);
            }
            s.push('\n');
            rate_line(&mut s, self.row(i).iter().map(|c| c.rate).collect());
        }
        let _ = write!(s, "{:>12}", "max");
        for u in &self.uniform {
            let _ = write!(s, " {:>10.2e}", u.e_max);
        }
        s.push('\n');
        rate_line(&mut s, self.uniform.iter().map(|u| u.rate).collect());
        s
    }
}
