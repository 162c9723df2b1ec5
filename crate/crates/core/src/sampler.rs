//! Random-variate generation for every law and operator, plus Monte Carlo
//! moment estimation with standard errors.
//!
//! The generator is a caller-owned ChaCha stream (counter-based, 256-bit
//! state): identical seeds reproduce identical draw sequences on the same
//! build. All samplers are exact in distribution — no normal approximations.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

pub use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::laws::{MultivariateLaw, ProbVector, UnivariateLaw};
use crate::marking::SubstochasticMatrix;
use crate::num::{format_sig, ln_factorial};

/// Monte Carlo estimates stay within this many standard errors of the
/// prediction in the consistency batteries.
pub const MC_SIGMA_FACTOR: f64 = 4.0;

/// Significance level for goodness-of-fit checks of the samplers.
pub const GOF_SIGNIFICANCE: f64 = 1e-3;

/// Poisson draws switch from inversion to transformed rejection here.
const POISSON_INVERSION_CUTOFF: f64 = 10.0;

/// Monte Carlo moment report: streaming means, dispersion-covariance
/// estimates (sample variance minus sample mean on the diagonal), and
/// standard errors of the means. Reproducible from the recorded seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n_samples: u64,
    pub mean: Vec<f64>,
    pub disp: Vec<Vec<f64>>,
    pub std_err_mean: Vec<f64>,
    pub seed: u64,
}

/// One draw from a univariate law.
pub fn sample_univariate<R: Rng + ?Sized>(law: &UnivariateLaw, rng: &mut R) -> Result<u64> {
    law.validate()?;
    Ok(sample_univariate_unchecked(law, rng))
}

fn sample_univariate_unchecked<R: Rng + ?Sized>(law: &UnivariateLaw, rng: &mut R) -> u64 {
    match law {
        UnivariateLaw::Binomial { n, p } => binomial_draw(*n, *p, rng),
        UnivariateLaw::Poisson { lambda } => poisson_draw(*lambda, rng),
        UnivariateLaw::NegativeBinomial { n, q } => {
            (0..*n).map(|_| geometric_failures(*q, rng)).sum()
        }
        UnivariateLaw::Hermite { mu, sigma2 } => {
            poisson_draw(mu - sigma2, rng) + 2 * poisson_draw(sigma2 / 2.0, rng)
        }
        UnivariateLaw::Finite { pmf } => {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut last = 0;
            for (&x, &w) in pmf.weights() {
                cum += w;
                last = x;
                if u < cum {
                    return x;
                }
            }
            last
        }
    }
}

/// One draw from a multivariate law.
pub fn sample_multivariate<R: Rng + ?Sized>(
    law: &MultivariateLaw,
    rng: &mut R,
) -> Result<Vec<u64>> {
    law.validate()?;
    Ok(sample_multivariate_unchecked(law, rng))
}

fn sample_multivariate_unchecked<R: Rng + ?Sized>(
    law: &MultivariateLaw,
    rng: &mut R,
) -> Vec<u64> {
    match law {
        MultivariateLaw::Multinomial { n, p } => multinomial_draw(*n, p.as_slice(), rng),
        MultivariateLaw::ProductPoisson { lambda } => {
            lambda.iter().map(|&l| poisson_draw(l, rng)).collect()
        }
        MultivariateLaw::NegativeMultinomial { n, q } => {
            // The law splits as a total count (negative binomial with
            // failure probability |q|) marked by q / |q|.
            let total_q: f64 = q.iter().sum();
            if total_q == 0.0 {
                return vec![0; q.len()];
            }
            let total: u64 = (0..*n).map(|_| geometric_failures(total_q, rng)).sum();
            let normalized: Vec<f64> = q.iter().map(|&qi| qi / total_q).collect();
            multinomial_draw(total, &normalized, rng)
        }
        MultivariateLaw::MultivariateHermite { alpha, beta } => {
            let c = alpha.len();
            let u: Vec<u64> = alpha.iter().map(|&a| poisson_draw(a, rng)).collect();
            let mut v = vec![vec![0u64; c]; c];
            for (i, row) in beta.iter().enumerate() {
                for (j, &b) in row.iter().enumerate() {
                    v[i][j] = poisson_draw(b, rng);
                }
            }
            (0..c)
                .map(|i| {
                    u[i] + v[i].iter().sum::<u64>() + (0..c).map(|k| v[k][i]).sum::<u64>()
                })
                .collect()
        }
        MultivariateLaw::JointFinite { pmf } => {
            let u: f64 = rng.random::<f64>() * pmf.total_mass();
            let mut cum = 0.0;
            let mut last: Option<&Vec<u64>> = None;
            for (y, p) in pmf.iter() {
                cum += p;
                last = Some(y);
                if u < cum {
                    return y.clone();
                }
            }
            last.map(|y| y.clone()).unwrap_or_default()
        }
    }
}

/// One Multi(n, a) draw via sequential conditional binomials:
/// y_1 ~ Bin(n, a_1), y_2 ~ Bin(n - y_1, a_2 / (1 - a_1)), and so on, with
/// the discard category absorbing the remainder.
pub fn sample_multinomial<R: Rng + ?Sized>(
    n: u64,
    a: &ProbVector,
    rng: &mut R,
) -> Vec<u64> {
    multinomial_draw(n, a.as_slice(), rng)
}

fn multinomial_draw<R: Rng + ?Sized>(n: u64, a: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0u64; a.len()];
    let mut remaining = n;
    let mut mass_left = 1.0;
    for (i, &ai) in a.iter().enumerate() {
        if remaining == 0 || mass_left <= 0.0 {
            break;
        }
        let p = (ai / mass_left).min(1.0);
        let y = binomial_draw(remaining, p, rng);
        out[i] = y;
        remaining -= y;
        mass_left -= ai;
    }
    out
}

/// One draw of the marking `a ∘ X`: draw X, then Multi(X, a).
pub fn sample_marking<R: Rng + ?Sized>(
    x: &UnivariateLaw,
    a: &ProbVector,
    rng: &mut R,
) -> Result<Vec<u64>> {
    x.validate()?;
    let draw = sample_univariate_unchecked(x, rng);
    Ok(multinomial_draw(draw, a.as_slice(), rng))
}

/// One draw of the re-marking `A ∘ X`: draw X, re-mark each original colour
/// through its column independently, and sum.
pub fn sample_remarking<R: Rng + ?Sized>(
    x: &MultivariateLaw,
    a: &SubstochasticMatrix,
    rng: &mut R,
) -> Result<Vec<u64>> {
    x.validate()?;
    if a.ncols() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: a.ncols(),
        });
    }
    let draw = sample_multivariate_unchecked(x, rng);
    let mut out = vec![0u64; a.nrows()];
    for (j, &xj) in draw.iter().enumerate() {
        let z = multinomial_draw(xj, &a.column(j), rng);
        for (o, zi) in out.iter_mut().zip(z) {
            *o += zi;
        }
    }
    Ok(out)
}

/// Streaming Monte Carlo moment estimation. `draw` is called `n_samples`
/// times against a fresh ChaCha stream seeded with `seed`; accumulation
/// order is fixed, so reports are bit-identical across runs.
pub fn mc_report<F>(mut draw: F, dim: usize, n_samples: u64, seed: u64) -> McReport
where
    F: FnMut(&mut ChaCha12Rng) -> Vec<u64>,
{
    assert!(n_samples >= 2, "need at least two samples");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut sum = vec![0.0f64; dim];
    let mut prod = vec![vec![0.0f64; dim]; dim];
    for _ in 0..n_samples {
        let y = draw(&mut rng);
        assert_eq!(y.len(), dim, "draw dimension must match");
        for i in 0..dim {
            let yi = y[i] as f64;
            sum[i] += yi;
            for j in i..dim {
                prod[i][j] += yi * y[j] as f64;
            }
        }
    }
    let n = n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut disp = vec![vec![0.0f64; dim]; dim];
    for i in 0..dim {
        for j in i..dim {
            // Unbiased sample covariance; the diagonal converts to a
            // dispersion by subtracting the sample mean.
            let cov = (prod[i][j] - n * mean[i] * mean[j]) / (n - 1.0);
            disp[i][j] = if i == j { cov - mean[i] } else { cov };
            disp[j][i] = disp[i][j];
        }
    }
    let std_err_mean = (0..dim)
        .map(|i| {
            let var = (prod[i][i] - n * mean[i] * mean[i]) / (n - 1.0);
            (var.max(0.0) / n).sqrt()
        })
        .collect();
    McReport {
        n_samples,
        mean,
        disp,
        std_err_mean,
        seed,
    }
}

/// Monte Carlo report for the marking `a ∘ X`.
pub fn mc_marking_report(
    x: &UnivariateLaw,
    a: &ProbVector,
    n_samples: u64,
    seed: u64,
) -> Result<McReport> {
    x.validate()?;
    let dim = a.len();
    let x = x.clone();
    let a = a.clone();
    Ok(mc_report(
        move |rng| {
            let draw = sample_univariate_unchecked(&x, rng);
            multinomial_draw(draw, a.as_slice(), rng)
        },
        dim,
        n_samples,
        seed,
    ))
}

/// Monte Carlo report for the re-marking `A ∘ X`.
pub fn mc_remarking_report(
    x: &MultivariateLaw,
    a: &SubstochasticMatrix,
    n_samples: u64,
    seed: u64,
) -> Result<McReport> {
    x.validate()?;
    if a.ncols() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: a.ncols(),
        });
    }
    let x = x.clone();
    let a = a.clone();
    let dim = a.nrows();
    Ok(mc_report(
        move |rng| {
            let draw = sample_multivariate_unchecked(&x, rng);
            let mut out = vec![0u64; a.nrows()];
            for (j, &xj) in draw.iter().enumerate() {
                let z = multinomial_draw(xj, &a.column(j), rng);
                for (o, zi) in out.iter_mut().zip(z) {
                    *o += zi;
                }
            }
            out
        },
        dim,
        n_samples,
        seed,
    ))
}

/// Monte Carlo report for a multivariate law itself.
pub fn mc_law_report(law: &MultivariateLaw, n_samples: u64, seed: u64) -> Result<McReport> {
    law.validate()?;
    let law = law.clone();
    let dim = law.dim();
    Ok(mc_report(
        move |rng| sample_multivariate_unchecked(&law, rng),
        dim,
        n_samples,
        seed,
    ))
}

// ---------------------------------------------------------------------------
// Primitive samplers
// ---------------------------------------------------------------------------

/// Exact Bin(n, p) draw by geometric waiting times between successes;
/// expected cost O(np + 1).
fn binomial_draw<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if p > 0.5 {
        return n - binomial_draw(n, 1.0 - p, rng);
    }
    let ln_q = (-p).ln_1p();
    let mut successes = 0u64;
    let mut trial = 0u64;
    loop {
        let u: f64 = rng.random();
        let gap = if u > 0.0 {
            (u.ln() / ln_q).floor()
        } else {
            f64::INFINITY
        };
        if gap >= (n - trial) as f64 {
            return successes;
        }
        trial += gap as u64 + 1;
        if trial > n {
            return successes;
        }
        successes += 1;
        if trial == n {
            return successes;
        }
    }
}

/// Number of failures before the first success when each trial fails with
/// probability q; exact inversion.
fn geometric_failures<R: Rng + ?Sized>(q: f64, rng: &mut R) -> u64 {
    if q <= 0.0 {
        return 0;
    }
    let u: f64 = rng.random();
    if u <= 0.0 {
        return 0;
    }
    let g = (u.ln() / q.ln()).floor();
    if g.is_finite() {
        g as u64
    } else {
        0
    }
}

/// Exact Poisson draw: product-of-uniforms inversion below the cutoff,
/// transformed rejection with squeeze above it.
fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < POISSON_INVERSION_CUTOFF {
        let limit = (-lambda).exp();
        let mut k = 0u64;
        let mut prod: f64 = rng.random();
        while prod > limit {
            k += 1;
            prod *= rng.random::<f64>();
        }
        k
    } else {
        poisson_ptrs(lambda, rng)
    }
}

/// Transformed rejection with squeeze for lambda >= 10.
fn poisson_ptrs<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= k * loglam - lambda - ln_factorial(k as u64)
        {
            return k as u64;
        }
    }
}

impl McReport {
    /// Render the report as an aligned human-readable block.
    pub fn human(&self) -> String {
        let fmt_vec = |v: &[f64]| {
            let parts: Vec<String> = v.iter().map(|&x| format_sig(x, 6)).collect();
            format!("[{}]", parts.join(", "))
        };
        let disp_rows: Vec<String> = self.disp.iter().map(|r| fmt_vec(r)).collect();
        format!(
            "samples: {}\nseed:    {}\nmean:    {}\ndisp:    [{}]\nse_mean: {}",
            self.n_samples,
            self.seed,
            fmt_vec(&self.mean),
            disp_rows.join(", "),
            fmt_vec(&self.std_err_mean)
        )
    }
}
