//! Coefficient oracles: closed-form propagators and quadrature of the integral terms.

use super::{cis, quad};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest phase velocity seen by the integrands, and the roots.
pub struct Roots {
    pub lp: f64,
    pub lm: f64,
    pub omega: f64,
    pub eps2: f64,
}

pub fn roots(eps: f64, mu: f64) -> Roots {
    let eps2 = eps * eps;
    let s = (1.0 + eps2 * mu * mu).sqrt();
    Roots {
        lp: -(1.0 + s) / eps2,
        lm: -(1.0 - s) / eps2,
        omega: s / eps2,
        eps2,
    }
}

impl Roots {
    pub fn max_freq(&self) -> f64 {
        self.lp.abs().max(3.0 / self.eps2 + self.omega)
    }

    pub fn b(&self, t: f64) -> Complex64 {
        Complex64::i() * (cis(t * self.lp) - cis(t * self.lm)) / (self.eps2 * (self.lm - self.lp))
    }

    pub fn b_prime(&self, t: f64) -> Complex64 {
        (self.lp * cis(t * self.lp) - self.lm * cis(t * self.lm))
            / (self.eps2 * (self.lp - self.lm))
    }

    pub fn a(&self, t: f64) -> Complex64 {
        (self.lp * cis(t * self.lm) - self.lm * cis(t * self.lp)) / (self.lp - self.lm)
    }

    pub fn a_prime(&self, t: f64) -> Complex64 {
        Complex64::i() * self.lp * self.lm * (cis(t * self.lm) - cis(t * self.lp))
            / (self.lp - self.lm)
    }
}

/// `(c, c', p, p')` by quadrature of their integral definitions.
pub fn oracle(tau: f64, eps: f64, mu: f64) -> [Complex64; 4] {
    let r = roots(eps, mu);
    let f = r.max_freq();
    let e3 = |th: f64| cis(3.0 * th / r.eps2);
    [
        quad(|th| r.b(tau - th), 0.0, tau, f),
        quad(|th| r.b_prime(tau - th), 0.0, tau, f),
        quad(
            |th| (r.omega * (tau - th)).sin() / (r.eps2 * r.omega) * e3(th),
            0.0,
            tau,
            f,
        ),
        quad(
            |th| (r.omega * (tau - th)).cos() / r.eps2 * e3(th),
            0.0,
            tau,
            f,
        ),
    ]
}

pub fn sample_triples(n: usize) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4b47);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let eps = 10f64.powf(rng.gen_range(-2.0..0.0));
        let mu = match k % 10 {
            0 => 0.0,
            1 => 8f64.sqrt() / eps,
            _ => rng.gen_range(0.0..(10.0 / eps).min(100.0)),
        };
        // spread the largest phase over [1e-3, 5e3] radians, both sides of the series switch
        let phase = 10f64.powf(rng.gen_range(-3.0..3.7));
        let tau = phase / roots(eps, mu).max_freq();
        out.push((tau, eps, mu));
    }
    out
}
