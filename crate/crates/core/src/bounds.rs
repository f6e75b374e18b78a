//! Explicit-constant bound calculators.
//!
//! Every calculator uses a constant step `eta` over `T` iterations, so sums
//! such as `sum_j eta_j` collapse to `T eta`.

use serde::{Deserialize, Serialize};

use crate::chain::{k_schedule, k_schedule_sgda, MixingProfile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub g: f64,
    pub l: Option<f64>,
    pub rho: f64,
    pub n: usize,
    pub t: usize,
    pub eta: f64,
    pub mixing: MixingProfile,
    /// `||w*||`
    pub d0: f64,
    /// `sup_z f(0; z)`
    pub f0_sup: f64,
    pub d_w: f64,
    pub d_v: f64,
    /// `F_S(w_0)`, used by the non-convex bound.
    pub f_s_w0: f64,
}

impl BoundInputs {
    fn sum_eta(&self) -> f64 {
        self.t as f64 * self.eta
    }

    fn sum_eta_sq(&self) -> f64 {
        self.t as f64 * self.eta * self.eta
    }

    fn check_common(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfiguration("n must be positive".into()));
        }
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return Err(Error::InvalidConfiguration(format!(
                "G must be finite and nonnegative, got {}",
                self.g
            )));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfiguration(format!(
                "eta must be nonnegative, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    fn smoothness(&self) -> Result<f64> {
        self.l
            .filter(|l| *l > 0.0)
            .ok_or_else(|| Error::InvalidConfiguration("smoothness constant L required".into()))
    }

    fn check_positive_steps(&self) -> Result<()> {
        if self.t == 0 || !(self.eta > 0.0) {
            return Err(Error::InvalidConfiguration(
                "optimization bounds need T >= 1 and eta > 0".into(),
            ));
        }
        Ok(())
    }
}

/// `(2G/n) sum eta` (smooth, `eta <= 2/L`) or `2G sqrt(sum eta^2) + (4G/n) sum eta`.
pub fn sgd_stability_bound(inp: &BoundInputs, smooth: bool) -> Result<f64> {
    inp.check_common()?;
    let n = inp.n as f64;
    if smooth {
        let l = inp.smoothness()?;
        if inp.eta > 2.0 / l {
            return Err(Error::InvalidConfiguration(format!(
                "eta = {} exceeds 2/L = {}",
                inp.eta,
                2.0 / l
            )));
        }
        Ok(2.0 * inp.g / n * inp.sum_eta())
    } else {
        Ok(2.0 * inp.g * inp.sum_eta_sq().sqrt() + 4.0 * inp.g / n * inp.sum_eta())
    }
}

/// `2 G^2 T eta / n` (smooth) or `G` times the non-smooth stability bound.
pub fn sgd_gen_bound(inp: &BoundInputs, smooth: bool) -> Result<f64> {
    let stab = sgd_stability_bound(inp, smooth)?;
    if smooth {
        Ok(2.0 * inp.g * inp.g * inp.sum_eta() / inp.n as f64)
    } else {
        Ok(inp.g * stab)
    }
}

/// Smooth (`T eta^2 <= 1/(2L^2)`): `4G (sum eta^2 / n)^(1/2) + (8 sqrt2 G / n) sum eta`;
/// otherwise `2G sqrt(2 sum eta^2) + (4 sqrt2 G / n) sum eta`.
pub fn sgda_stability_bound(inp: &BoundInputs, smooth: bool) -> Result<f64> {
    inp.check_common()?;
    let n = inp.n as f64;
    let s2 = std::f64::consts::SQRT_2;
    if smooth {
        let l = inp.smoothness()?;
        if inp.sum_eta_sq() > 1.0 / (2.0 * l * l) {
            return Err(Error::InvalidConfiguration(format!(
                "T eta^2 = {} exceeds 1/(2L^2) = {}",
                inp.sum_eta_sq(),
                1.0 / (2.0 * l * l)
            )));
        }
        Ok(4.0 * inp.g * (inp.sum_eta_sq() / n).sqrt() + 8.0 * s2 * inp.g / n * inp.sum_eta())
    } else {
        Ok(2.0 * inp.g * (2.0 * inp.sum_eta_sq()).sqrt() + 4.0 * s2 * inp.g / n * inp.sum_eta())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdaGenBounds {
    pub weak_pd: f64,
    /// Present only for `rho > 0`.
    pub primal: Option<f64>,
}

/// Weak-PD: `G * eps`; primal: `(1 + L/rho) G * eps`, with `eps` the
/// matching SGDA stability bound.
pub fn sgda_gen_bounds(inp: &BoundInputs, smooth: bool) -> Result<SgdaGenBounds> {
    let eps = sgda_stability_bound(inp, smooth)?;
    let weak_pd = inp.g * eps;
    let primal = if inp.rho > 0.0 {
        let l = inp.smoothness()?;
        Some((1.0 + l / inp.rho) * weak_pd)
    } else {
        None
    };
    Ok(SgdaGenBounds { weak_pd, primal })
}

/// `D = ((G^2 + 2 sup f(0;z)) sum eta)^(1/2) + D_0`.
pub fn sgd_opt_radius(inp: &BoundInputs) -> f64 {
    ((inp.g * inp.g + 2.0 * inp.f0_sup) * inp.sum_eta()).sqrt() + inp.d0
}

/// Convex MC-SGD optimization bound, with the `||w*||^2 = D_0^2` numerator:
///
/// ```text
/// [D_0^2 + 4GD sum_{j<K_P} eta + G^2 sum_j (4 eta_j sum_{k=j-k_j+1}^j eta_k + eta_j^2)
///  + G sum_{j>=K_P} eta_j / j] / (2 sum eta)
/// ```
pub fn sgd_opt_bound(inp: &BoundInputs) -> Result<f64> {
    inp.check_common()?;
    inp.check_positive_steps()?;
    if let Some(l) = inp.l {
        if inp.eta > 2.0 / l {
            return Err(Error::InvalidConfiguration(format!(
                "eta = {} exceeds 2/L = {}",
                inp.eta,
                2.0 / l
            )));
        }
    }
    let (g, eta, t) = (inp.g, inp.eta, inp.t);
    let d = sgd_opt_radius(inp);
    let k = k_schedule(&inp.mixing, d, inp.n, t)?;
    let k_p = inp.mixing.k_p;

    let burn_in = 4.0 * g * d * eta * k_p.saturating_sub(1).min(t) as f64;
    let lookback: f64 = k.iter().map(|&kj| 4.0 * eta * eta * kj as f64 + eta * eta).sum();
    let bias: f64 = (k_p.max(1)..=t).map(|j| eta / j as f64).sum();
    let numerator = inp.d0 * inp.d0 + burn_in + g * g * lookback + g * bias;
    Ok(numerator / (2.0 * inp.sum_eta()))
}

/// MC-SGDA primal-dual gap bound with `D = D_w + D_v`:
/// `G^2 eta + D^2/(2T eta) + (2 G K_P D + 12 G^2 eta sum k_j + G sum_{j>=K_P} 1/j^2) / T`.
pub fn sgda_opt_bound(inp: &BoundInputs) -> Result<f64> {
    inp.check_common()?;
    inp.check_positive_steps()?;
    let (g, eta, t) = (inp.g, inp.eta, inp.t);
    let d = inp.d_w + inp.d_v;
    let k = k_schedule_sgda(&inp.mixing, d, inp.n, t)?;
    let k_p = inp.mixing.k_p;
    let tf = t as f64;
    let sum_k: f64 = k.iter().map(|&kj| kj as f64).sum();
    let tail: f64 = (k_p.max(1)..=t).map(|j| 1.0 / (j as f64 * j as f64)).sum();
    Ok(
        g * g * eta
            + d * d / (2.0 * tf * eta)
            + (2.0 * g * k_p as f64 * d + 12.0 * g * g * eta * sum_k + g * tail) / tf,
    )
}

/// Non-convex gradient-norm bound, with `D = D_w` the diameter of `W`:
///
/// ```text
/// (C + sum_{j>=K_P} eta/j) / (2 sum eta)
///   + G^2 L sum_j (eta^2 + k_j sum_{k=j-k_j}^j eta^2 + 6 eta sum_{k=j-k_j}^j eta) / (2 sum eta),
/// C = 2 (F_S(w_0) + 2 G^2 sum_{j<K_P} eta).
/// ```
pub fn nonconvex_opt_bound(inp: &BoundInputs) -> Result<f64> {
    inp.check_common()?;
    inp.check_positive_steps()?;
    let l = inp.smoothness()?;
    let (g, eta, t) = (inp.g, inp.eta, inp.t);
    let k = k_schedule(&inp.mixing, inp.d_w, inp.n, t)?;
    let k_p = inp.mixing.k_p;
    let c = 2.0 * (inp.f_s_w0 + 2.0 * g * g * eta * k_p.saturating_sub(1).min(t) as f64);
    let bias: f64 = (k_p.max(1)..=t).map(|j| eta / j as f64).sum();
    let drift: f64 = k
        .iter()
        .map(|&kj| {
            let terms = (kj + 1) as f64;
            eta * eta + kj as f64 * terms * eta * eta + 6.0 * eta * terms * eta
        })
        .sum();
    let denom = 2.0 * inp.sum_eta();
    Ok((c + bias) / denom + g * g * l * drift / denom)
}
