//! Orthonormal Hermite functions and the localized kernel built from them.
//!
//! The normalized Hermite polynomials `h_k` are generated by the upward
//! three-term recurrence
//!
//! ```text
//! h_0(x) = π^{-1/4},  h_1(x) = √2 π^{-1/4} x,
//! h_k(x) = √(2/k) x h_{k-1}(x) − √((k−1)/k) h_{k-2}(x),
//! ```
//!
//! and `ψ_k(x) = h_k(x) exp(−x²/2)` form an orthonormal system on the real
//! line. The localized kernel `Φ̃_{N,q}` is a smoothly truncated even
//! expansion `Σ_ℓ c_ℓ ψ_{2ℓ}(x)` whose coefficients depend on the bandwidth
//! `N` and the manifold dimension `q`. Coefficients are computed once per
//! `(N, q)` and the expansion is summed with Clenshaw's algorithm.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};

/// Values `h_0(x), …, h_k(x)` of the normalized Hermite polynomials at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteEval {
    pub x: f64,
    pub values: Vec<f64>,
}

impl HermiteEval {
    pub fn max_degree(&self) -> usize {
        self.values.len() - 1
    }
}

#[inline]
fn pi_quarter_inv() -> f64 {
    PI.powf(-0.25)
}

/// Evaluates `h_0(x)..h_{k_max}(x)` by upward recurrence.
pub fn hermite_batch(k_max: usize, x: f64) -> Result<HermiteEval> {
    if !x.is_finite() {
        return Err(invalid(format!("hermite_batch: non-finite argument {x}")));
    }
    let mut values = Vec::with_capacity(k_max + 1);
    values.push(pi_quarter_inv());
    if k_max >= 1 {
        values.push(std::f64::consts::SQRT_2 * pi_quarter_inv() * x);
    }
    for k in 2..=k_max {
        let kf = k as f64;
        let next = (2.0 / kf).sqrt() * x * values[k - 1] - ((kf - 1.0) / kf).sqrt() * values[k - 2];
        values.push(next);
    }
    Ok(HermiteEval { x, values })
}

/// Hermite function `ψ_k(x) = h_k(x) exp(−x²/2)`.
pub fn psi(k: usize, x: f64) -> Result<f64> {
    let h = hermite_batch(k, x)?;
    Ok(h.values[k] * (-0.5 * x * x).exp())
}

/// `ln(√((2ℓ)!) / (2^ℓ ℓ!))`, the magnitude of `π^{1/4} h_{2ℓ}(0)`.
fn ln_even_weight(l: usize) -> f64 {
    let lf = l as f64;
    0.5 * ln_gamma(2.0 * lf + 1.0) - lf * std::f64::consts::LN_2 - ln_gamma(lf + 1.0)
}

/// `Γ(a + n) / n!` computed in log space.
fn gamma_ratio(a: f64, n: usize) -> f64 {
    (ln_gamma(a + n as f64) - ln_gamma(n as f64 + 1.0)).exp()
}

/// The projection kernel `P_{m,q}(x)`.
///
/// For `q = 1` this is a single even Hermite function; for `q ≥ 2` it is a
/// weighted sum of `ψ_0 … ψ_{2m}` with Gamma-ratio weights.
pub fn proj_kernel_value(m: usize, q: u32, x: f64) -> Result<f64> {
    if q == 0 {
        return Err(invalid("proj_kernel_value: q must be at least 1"));
    }
    let h = hermite_batch(2 * m, x)?;
    let gauss = (-0.5 * x * x).exp();
    let sign = |l: usize| if l % 2 == 0 { 1.0 } else { -1.0 };
    let value = if q == 1 {
        pi_quarter_inv() * sign(m) * ln_even_weight(m).exp() * h.values[2 * m] * gauss
    } else {
        let a = (q as f64 - 1.0) / 2.0;
        let ln_norm = -((2.0 * q as f64 - 1.0) / 4.0) * PI.ln() - ln_gamma(a);
        let mut acc = 0.0;
        for l in 0..=m {
            let ln_w = ln_norm + ln_gamma(a + (m - l) as f64) - ln_gamma((m - l) as f64 + 1.0)
                + ln_even_weight(l);
            acc += sign(l) * ln_w.exp() * h.values[2 * l];
        }
        acc * gauss
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("P_{{{m},{q}}}({x}) is not finite")))
    }
}

/// Smooth cutoff: 1 on `[0, 1/2]`, 0 on `[1, ∞)`, C^∞ and nonincreasing in between.
pub fn cutoff(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid(format!("cutoff: argument must be nonnegative, got {t}")));
    }
    Ok(cutoff_unchecked(t))
}

fn cutoff_unchecked(t: f64) -> f64 {
    if t <= 0.5 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let g = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let up = g(2.0 - 2.0 * t);
    let down = g(2.0 * t - 1.0);
    up / (up + down)
}

/// Precomputed coefficients of `Φ̃_{N,q}` together with the distance scale `γ`.
///
/// `coeffs[ℓ]` multiplies `ψ_{2ℓ}`; there are `⌊N²/2⌋ + 1` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedKernelSpec {
    n: f64,
    q: u32,
    gamma: f64,
    coeffs: Vec<f64>,
}

impl LocalizedKernelSpec {
    /// Builds the coefficient table for `Φ̃_{N,q}`.
    pub fn new(n: f64, q: u32, gamma: f64) -> Result<Self> {
        if !(n >= 1.0) || !n.is_finite() {
            return Err(invalid(format!("localized kernel: N must be >= 1, got {n}")));
        }
        if q < 1 {
            return Err(invalid("localized kernel: q must be >= 1"));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(invalid(format!("localized kernel: gamma must be positive, got {gamma}")));
        }
        let top = (n * n / 2.0).floor() as usize;
        let at_zero = hermite_batch(2 * top, 0.0)?;
        let weights: Vec<f64> = (0..=top)
            .map(|m| cutoff_unchecked((2.0 * m as f64).sqrt() / n))
            .collect();

        let coeffs: Vec<f64> = if q == 1 {
            (0..=top).map(|l| weights[l] * at_zero.values[2 * l]).collect()
        } else {
            let a = (q as f64 - 1.0) / 2.0;
            // π^{-(q-1)/2}/Γ((q-1)/2) is the prefactor that makes this sum equal
            // Σ_m H(√(2m)/N) P_{m,q}; see `expansion_matches_projection_sum`.
            let norm = (-((q as f64 - 1.0) / 2.0) * PI.ln() - ln_gamma(a)).exp();
            (0..=top)
                .map(|l| {
                    let inner: f64 = (l..=top)
                        .filter(|&m| weights[m] > 0.0)
                        .map(|m| weights[m] * gamma_ratio(a, m - l))
                        .sum();
                    norm * inner * at_zero.values[2 * l]
                })
                .collect()
        };
        if let Some(bad) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!(
                "localized kernel coefficient {bad} overflowed for N={n}, q={q}"
            )));
        }
        Ok(Self { n, q, gamma, coeffs })
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Polynomial degree `2⌊N²/2⌋` of the expansion.
    pub fn degree(&self) -> usize {
        2 * (self.coeffs.len() - 1)
    }

    /// Same kernel with a different manifold dimension.
    pub fn with_q(&self, q: u32) -> Result<Self> {
        Self::new(self.n, q, self.gamma)
    }

    /// `Φ̃_{N,q}(x)` by Clenshaw summation over the Hermite recurrence.
    ///
    /// The odd-index coefficients are zero, so the backward sweep runs over
    /// every degree up to `2⌊N²/2⌋` with `b_{2ℓ} = c_ℓ` and `b_{2ℓ+1} = 0`.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.abs();
        let gauss_exp = 0.5 * x * x;
        if gauss_exp > 745.0 {
            return 0.0;
        }
        let degree = self.degree();
        let b = |k: usize| if k % 2 == 0 { self.coeffs[k / 2] } else { 0.0 };
        if degree == 0 {
            return self.coeffs[0] * pi_quarter_inv() * (-gauss_exp).exp();
        }
        // h_{k+1} = alpha_k h_k + beta_k h_{k-1}
        let alpha = |k: usize| (2.0 / (k as f64 + 1.0)).sqrt() * x;
        let beta = |k: usize| -((k as f64) / (k as f64 + 1.0)).sqrt();

        let mut y1 = 0.0; // y_{k+1}
        let mut y2 = 0.0; // y_{k+2}
        for k in (1..=degree).rev() {
            let y = b(k) + alpha(k) * y1 + beta(k + 1) * y2;
            y2 = y1;
            y1 = y;
        }
        let h0 = pi_quarter_inv();
        let h1 = std::f64::consts::SQRT_2 * h0 * x;
        let sum = h0 * (b(0) + beta(1) * y2) + h1 * y1;
        sum * (-gauss_exp).exp()
    }

    /// `Φ̃_{N,q}(γ·d)` for a distance `d`.
    pub fn eval_scaled(&self, distance: f64) -> f64 {
        self.eval(self.gamma * distance)
    }

    /// Term-by-term `Σ c_ℓ ψ_{2ℓ}(x)`; slower than [`eval`](Self::eval), used for cross-checking.
    pub fn eval_direct(&self, x: f64) -> f64 {
        let h = match hermite_batch(self.degree(), x) {
            Ok(h) => h,
            Err(_) => return f64::NAN,
        };
        let gauss = (-0.5 * x * x).exp();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(l, c)| c * h.values[2 * l] * gauss)
            .sum()
    }
}
