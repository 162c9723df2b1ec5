//! Count-distribution families: pmfs, factorial-moment generating functions,
//! closed-form moment summaries, and certified finite truncations.
//!
//! All pmf evaluation runs in log space (log-gamma for the combinatorial
//! coefficients) and is exponentiated at the end. Every value is immutable
//! after construction and every operation is a pure function of its inputs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{falling_factorial, format_sig, ln_binomial, ln_factorial, KahanSum};

/// Slack for probability-sum invariants (|a| <= 1, finite pmf sums to 1).
pub const PROB_SLACK: f64 = 1e-12;

/// Slack for the stored-mass + tail-bound accounting of a [`JointPmf`].
pub const MASS_SLACK: f64 = 1e-9;

/// Truncations certify not just the plain mass tail but the tail weighted by
/// `GROWTH^x`. FMGF sums over a truncated support with arguments in
/// [-0.5, 0.5] are then accurate to the truncation eps, since each support
/// point contributes at most `pmf * 1.5^|y|`.
pub(crate) const TRUNCATION_GROWTH: f64 = 1.5;

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(
            "eps",
            format!("{} outside (0, 1)", format_sig(eps, 6)),
        ));
    }
    Ok(())
}

fn check_prob(field: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::invalid(
            field,
            format!("{} outside [0, 1]", format_sig(p, 6)),
        ));
    }
    Ok(())
}

fn check_nonneg(field: &'static str, x: f64) -> Result<()> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::invalid(
            field,
            format!("{} must be a finite nonnegative real", format_sig(x, 6)),
        ));
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// ln Poisson(lambda) pmf at k, with lambda = 0 handled as a point mass at 0.
fn ln_poisson_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    ln_poisson_pmf(lambda, k).exp()
}

// ---------------------------------------------------------------------------
// Marking probabilities
// ---------------------------------------------------------------------------

/// Colour probabilities of a marking: entries in [0, 1] with |a| <= 1.
/// Mass 1 - |a| is the implicit discard category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("a", "needs at least one entry"));
        }
        for (i, &ai) in entries.iter().enumerate() {
            if !(0.0..=1.0).contains(&ai) || !ai.is_finite() {
                return Err(Error::invalid(
                    "a",
                    format!("a[{i}] = {} outside [0, 1]", format_sig(ai, 6)),
                ));
            }
        }
        let total: f64 = entries.iter().sum();
        if total > 1.0 + PROB_SLACK {
            return Err(Error::invalid(
                "a",
                format!("|a| = {} exceeds 1", format_sig(total, 6)),
            ));
        }
        Ok(ProbVector(entries))
    }

    pub fn scalar(a: f64) -> Result<Self> {
        Self::new(vec![a])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// |a| = sum of the entries.
    pub fn weight(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn dot(&self, t: &[f64]) -> f64 {
        self.0.iter().zip(t).map(|(a, t)| a * t).sum()
    }

    /// Entrywise scaling by s in [0, 1]; |s a| <= |a| <= 1 stays valid.
    pub(crate) fn scaled(&self, s: f64) -> Vec<f64> {
        self.0.iter().map(|a| a * s).collect()
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVector::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(a: ProbVector) -> Vec<f64> {
        a.0
    }
}

// ---------------------------------------------------------------------------
// Finite pmfs
// ---------------------------------------------------------------------------

/// A finite pmf on the nonnegative integers; weights sum to 1 within 1e-12.
/// Serializes as ordered `[count, probability]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u64, f64)>", into = "Vec<(u64, f64)>")]
pub struct FinitePmf {
    weights: BTreeMap<u64, f64>,
}

impl FinitePmf {
    pub fn new(weights: BTreeMap<u64, f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("pmf", "needs at least one support point"));
        }
        let mut total = KahanSum::new();
        for (&x, &w) in &weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(
                    "pmf",
                    format!("weight at {x} is {}", format_sig(w, 6)),
                ));
            }
            total.add(w);
        }
        if (total.value() - 1.0).abs() > PROB_SLACK {
            return Err(Error::invalid(
                "pmf",
                format!("weights sum to {}, not 1", format_sig(total.value(), 9)),
            ));
        }
        Ok(FinitePmf { weights })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let mut weights = BTreeMap::new();
        for (x, w) in pairs {
            *weights.entry(x).or_insert(0.0) += w;
        }
        Self::new(weights)
    }

    pub fn pmf(&self, x: u64) -> f64 {
        self.weights.get(&x).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &BTreeMap<u64, f64> {
        &self.weights
    }

    pub fn max_support(&self) -> u64 {
        *self.weights.keys().next_back().expect("nonempty")
    }
}

impl TryFrom<Vec<(u64, f64)>> for FinitePmf {
    type Error = Error;
    fn try_from(pairs: Vec<(u64, f64)>) -> Result<Self> {
        FinitePmf::from_pairs(pairs)
    }
}

impl From<FinitePmf> for Vec<(u64, f64)> {
    fn from(pmf: FinitePmf) -> Self {
        pmf.weights.into_iter().collect()
    }
}

// ---------------------------------------------------------------------------
// Univariate laws
// ---------------------------------------------------------------------------

/// Univariate count-distribution families.
///
/// `NegativeBinomial` uses the failure-probability convention: the pmf is
/// `C(n+x-1, x) q^x (1-q)^n` with integer index `n >= 1`. `Hermite` is the
/// law of `U + 2V` with independent `U ~ Poisson(mu - sigma2)` and
/// `V ~ Poisson(sigma2 / 2)`, parametrised by mean and dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UnivariateLaw {
    Binomial { n: u64, p: f64 },
    Poisson { lambda: f64 },
    NegativeBinomial { n: u64, q: f64 },
    Hermite { mu: f64, sigma2: f64 },
    Finite { pmf: FinitePmf },
}

impl UnivariateLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            UnivariateLaw::Binomial { p, .. } => check_prob("p", *p),
            UnivariateLaw::Poisson { lambda } => check_nonneg("lambda", *lambda),
            UnivariateLaw::NegativeBinomial { n, q } => {
                if *n == 0 {
                    return Err(Error::invalid("n", "index must be a positive integer"));
                }
                if !(0.0..1.0).contains(q) || !q.is_finite() {
                    return Err(Error::invalid(
                        "q",
                        format!("{} outside [0, 1)", format_sig(*q, 6)),
                    ));
                }
                Ok(())
            }
            UnivariateLaw::Hermite { mu, sigma2 } => {
                check_nonneg("mu", *mu)?;
                check_nonneg("sigma2", *sigma2)?;
                if sigma2 > mu {
                    return Err(Error::invalid(
                        "sigma2",
                        format!(
                            "dispersion {} exceeds mean {}",
                            format_sig(*sigma2, 6),
                            format_sig(*mu, 6)
                        ),
                    ));
                }
                Ok(())
            }
            // FinitePmf enforces its invariants at construction.
            UnivariateLaw::Finite { .. } => Ok(()),
        }
    }

    /// P(X = x).
    pub fn pmf(&self, x: u64) -> Result<f64> {
        self.validate()?;
        Ok(self.ln_pmf_unchecked(x).exp())
    }

    /// ln P(X = x), assuming the law is already valid.
    fn ln_pmf_unchecked(&self, x: u64) -> f64 {
        match self {
            UnivariateLaw::Binomial { n, p } => {
                if x > *n {
                    return f64::NEG_INFINITY;
                }
                if *p == 0.0 {
                    return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                if *p == 1.0 {
                    return if x == *n { 0.0 } else { f64::NEG_INFINITY };
                }
                ln_binomial(*n, x) + x as f64 * p.ln() + (*n - x) as f64 * (-p).ln_1p()
            }
            UnivariateLaw::Poisson { lambda } => ln_poisson_pmf(*lambda, x),
            UnivariateLaw::NegativeBinomial { n, q } => {
                if *q == 0.0 {
                    return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                ln_binomial(*n + x - 1, x) + x as f64 * q.ln() + *n as f64 * (-q).ln_1p()
            }
            UnivariateLaw::Hermite { mu, sigma2 } => {
                let alpha = mu - sigma2;
                let beta = sigma2 / 2.0;
                // Convolution of Poisson(alpha) with twice a Poisson(beta),
                // accumulated by log-sum-exp for far-tail stability.
                let terms: Vec<f64> = (0..=x / 2)
                    .map(|v| ln_poisson_pmf(alpha, x - 2 * v) + ln_poisson_pmf(beta, v))
                    .collect();
                log_sum_exp(&terms)
            }
            UnivariateLaw::Finite { pmf } => {
                let w = pmf.pmf(x);
                if w == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    w.ln()
                }
            }
        }
    }

    /// Factorial moment generating function Phi(t) = E (1+t)^X.
    pub fn fmgf(&self, t: f64) -> Result<f64> {
        self.validate()?;
        match self {
            UnivariateLaw::Binomial { n, p } => Ok(powi_checked(1.0 + p * t, *n)),
            UnivariateLaw::Poisson { lambda } => Ok((lambda * t).exp()),
            UnivariateLaw::NegativeBinomial { n, q } => {
                // E (1+t)^X converges iff q|1+t| < 1 and equals
                // (1 - (q/(1-q)) t)^(-n) there.
                if q * (1.0 + t).abs() >= 1.0 {
                    return Err(Error::OutsideFmgfDomain(format!(
                        "q|1+t| = {} not below 1",
                        format_sig(q * (1.0 + t).abs(), 6)
                    )));
                }
                let odds = q / (1.0 - q);
                Ok((1.0 - odds * t).powf(-(*n as f64)))
            }
            UnivariateLaw::Hermite { mu, sigma2 } => Ok((mu * t + 0.5 * sigma2 * t * t).exp()),
            UnivariateLaw::Finite { pmf } => {
                let mut acc = KahanSum::new();
                for (&x, &w) in pmf.weights() {
                    acc.add(w * powi_checked(1.0 + t, x));
                }
                Ok(acc.value())
            }
        }
    }

    /// Closed-form mean and dispersion Disp(X) = Var(X) - E X.
    pub fn moment_summary(&self) -> Result<MomentSummary> {
        self.validate()?;
        let (mean, disp) = match self {
            UnivariateLaw::Binomial { n, p } => (*n as f64 * p, -(*n as f64) * p * p),
            UnivariateLaw::Poisson { lambda } => (*lambda, 0.0),
            UnivariateLaw::NegativeBinomial { n, q } => {
                let odds = q / (1.0 - q);
                (*n as f64 * odds, *n as f64 * odds * odds)
            }
            UnivariateLaw::Hermite { mu, sigma2 } => (*mu, *sigma2),
            UnivariateLaw::Finite { pmf } => {
                let mut mean = KahanSum::new();
                let mut e_ff2 = KahanSum::new();
                for (&x, &w) in pmf.weights() {
                    mean.add(x as f64 * w);
                    e_ff2.add(falling_factorial(x, 2) * w);
                }
                let m = mean.value();
                (m, e_ff2.value() - m * m)
            }
        };
        Ok(MomentSummary {
            mean: vec![mean],
            disp: vec![vec![disp]],
        })
    }

    /// Factorial moment E X(X-1)...(X-m+1); closed form for the named
    /// families, truncated summation for Hermite.
    pub fn factorial_moment(&self, m: u32) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            UnivariateLaw::Binomial { n, p } => falling_factorial(*n, m) * p.powi(m as i32),
            UnivariateLaw::Poisson { lambda } => lambda.powi(m as i32),
            UnivariateLaw::NegativeBinomial { n, q } => {
                let odds = q / (1.0 - q);
                let mut rising = 1.0;
                for i in 0..u64::from(m) {
                    rising *= (*n + i) as f64;
                }
                rising * odds.powi(m as i32)
            }
            UnivariateLaw::Hermite { .. } => {
                let (pairs, _) = self.truncated_support(1e-15)?;
                let mut acc = KahanSum::new();
                for (x, px) in pairs {
                    acc.add(falling_factorial(x, m) * px);
                }
                acc.value()
            }
            UnivariateLaw::Finite { pmf } => {
                let mut acc = KahanSum::new();
                for (&x, &w) in pmf.weights() {
                    acc.add(falling_factorial(x, m) * w);
                }
                acc.value()
            }
        })
    }

    /// Finite support whose stored mass is at least 1 - eps, returned as a
    /// 1-dimensional [`JointPmf`] with the tail bound recorded.
    pub fn truncate(&self, eps: f64) -> Result<JointPmf> {
        let (pairs, tail) = self.truncated_support(eps)?;
        let mass = pairs
            .into_iter()
            .map(|(x, px)| (vec![x], px))
            .collect::<BTreeMap<_, _>>();
        JointPmf::new(1, mass, tail)
    }

    /// Support points with positive pmf covering mass >= 1 - eps, plus the
    /// mass tail bound. The cut honours the `TRUNCATION_GROWTH`-weighted tail
    /// so FMGF and low-order moment sums over the support inherit the eps
    /// budget.
    pub(crate) fn truncated_support(&self, eps: f64) -> Result<(Vec<(u64, f64)>, f64)> {
        self.validate()?;
        check_eps(eps)?;
        match self {
            UnivariateLaw::Binomial { n, .. } => {
                let pairs = (0..=*n)
                    .map(|x| (x, self.ln_pmf_unchecked(x).exp()))
                    .filter(|&(_, p)| p > 0.0)
                    .collect();
                Ok((pairs, 0.0))
            }
            UnivariateLaw::Finite { pmf } => {
                let pairs = pmf
                    .weights()
                    .iter()
                    .map(|(&x, &w)| (x, w))
                    .filter(|&(_, w)| w > 0.0)
                    .collect();
                Ok((pairs, 0.0))
            }
            _ => self.unbounded_support(eps),
        }
    }

    /// Growth factor used by the weighted truncation criterion; reduced for
    /// negative binomials whose tilted tail would not converge at 1.5.
    fn truncation_growth(&self) -> f64 {
        match self {
            UnivariateLaw::NegativeBinomial { q, .. } if *q > 0.0 => {
                (0.99 / q).min(TRUNCATION_GROWTH).max(1.0)
            }
            _ => TRUNCATION_GROWTH,
        }
    }

    fn unbounded_support(&self, eps: f64) -> Result<(Vec<(u64, f64)>, f64)> {
        let growth = self.truncation_growth();
        let ln_growth = growth.ln();
        let summary = self.moment_summary()?;
        let mean = summary.mean[0];
        let var = summary.disp[0][0] + mean;

        // Upper scan bound: far enough out that the weighted term is dwarfed
        // by eps, found by doubling.
        let mut upper = (mean + 10.0 * var.max(0.0).sqrt() + 30.0).ceil() as u64;
        let cut = eps.ln() + (1e-8f64).ln();
        while self.ln_pmf_unchecked(upper) + upper as f64 * ln_growth > cut && upper < (1 << 24) {
            upper *= 2;
        }

        let pmfs: Vec<f64> = (0..=upper)
            .map(|x| self.ln_pmf_unchecked(x).exp())
            .collect();

        // Suffix-accumulate the weighted tail from the far end; the first K
        // whose weighted tail clears eps is the cut. Summing downward avoids
        // the cancellation of 1 - cumulative near machine precision.
        let mut weighted_tail = vec![0.0; pmfs.len()];
        let mut acc = KahanSum::new();
        for x in (1..pmfs.len()).rev() {
            let ln_term = self.ln_pmf_unchecked(x as u64) + x as f64 * ln_growth;
            acc.add(ln_term.exp());
            weighted_tail[x - 1] = acc.value();
        }
        let cutoff = weighted_tail
            .iter()
            .position(|&w| w <= eps)
            .unwrap_or(pmfs.len() - 1);

        let mut tail = KahanSum::new();
        for &p in &pmfs[cutoff + 1..] {
            tail.add(p);
        }
        let pairs = pmfs[..=cutoff]
            .iter()
            .enumerate()
            .map(|(x, &p)| (x as u64, p))
            .filter(|&(_, p)| p > 0.0)
            .collect();
        Ok((pairs, tail.value().max(0.0)))
    }

    /// The same law viewed as a 1-dimensional multivariate law.
    pub fn to_multivariate(&self) -> Result<MultivariateLaw> {
        self.validate()?;
        Ok(match self {
            UnivariateLaw::Binomial { n, p } => MultivariateLaw::Multinomial {
                n: *n,
                p: ProbVector::new(vec![*p])?,
            },
            UnivariateLaw::Poisson { lambda } => MultivariateLaw::ProductPoisson {
                lambda: vec![*lambda],
            },
            UnivariateLaw::NegativeBinomial { n, q } => MultivariateLaw::NegativeMultinomial {
                n: *n,
                q: vec![*q],
            },
            UnivariateLaw::Hermite { mu, sigma2 } => MultivariateLaw::MultivariateHermite {
                alpha: vec![mu - sigma2],
                beta: vec![vec![sigma2 / 2.0]],
            },
            UnivariateLaw::Finite { pmf } => {
                let mass = pmf
                    .weights()
                    .iter()
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(&x, &w)| (vec![x], w))
                    .collect();
                MultivariateLaw::JointFinite {
                    pmf: JointPmf::new(1, mass, 0.0)?,
                }
            }
        })
    }
}

impl fmt::Display for UnivariateLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnivariateLaw::Binomial { n, p } => {
                write!(f, "Binomial(n = {n}, p = {})", format_sig(*p, 6))
            }
            UnivariateLaw::Poisson { lambda } => {
                write!(f, "Poisson(lambda = {})", format_sig(*lambda, 6))
            }
            UnivariateLaw::NegativeBinomial { n, q } => {
                write!(f, "NegativeBinomial(n = {n}, q = {})", format_sig(*q, 6))
            }
            UnivariateLaw::Hermite { mu, sigma2 } => write!(
                f,
                "Hermite(mu = {}, sigma2 = {})",
                format_sig(*mu, 6),
                format_sig(*sigma2, 6)
            ),
            UnivariateLaw::Finite { pmf } => {
                write!(f, "FinitePmf({} support points)", pmf.weights().len())
            }
        }
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// (1+x)^n for integer n, tolerating negative bases.
fn powi_checked(base: f64, n: u64) -> f64 {
    match i32::try_from(n) {
        Ok(n) => base.powi(n),
        Err(_) => base.powf(n as f64),
    }
}

// ---------------------------------------------------------------------------
// Joint pmfs
// ---------------------------------------------------------------------------

/// A finite joint pmf on count vectors with an explicit bound on the mass
/// possibly lying outside the stored support. Every oracle comparison reads
/// its certified error budget from `tail_bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    dim: usize,
    mass: BTreeMap<Vec<u64>, f64>,
    tail_bound: f64,
}

impl JointPmf {
    pub fn new(dim: usize, mass: BTreeMap<Vec<u64>, f64>, tail_bound: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if !(tail_bound >= 0.0) || !tail_bound.is_finite() {
            return Err(Error::invalid(
                "tail_bound",
                format!("{} must be a finite nonnegative real", format_sig(tail_bound, 6)),
            ));
        }
        let mut total = KahanSum::new();
        for (y, &p) in &mass {
            check_dim(dim, y.len())?;
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::invalid(
                    "mass",
                    format!("probability at {y:?} is {}", format_sig(p, 6)),
                ));
            }
            total.add(p);
        }
        let accounted = total.value() + tail_bound;
        if (accounted - 1.0).abs() > MASS_SLACK {
            return Err(Error::invalid(
                "mass",
                format!(
                    "stored mass + tail bound = {}, not 1",
                    format_sig(accounted, 9)
                ),
            ));
        }
        Ok(JointPmf {
            dim,
            mass,
            tail_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u64>, f64)> {
        self.mass.iter().map(|(y, &p)| (y, p))
    }

    pub fn prob(&self, y: &[u64]) -> f64 {
        self.mass.get(y).copied().unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        let mut acc = KahanSum::new();
        for &p in self.mass.values() {
            acc.add(p);
        }
        acc.value()
    }

    /// Marginal pmf of one coordinate over the stored support.
    pub fn marginal(&self, coord: usize) -> BTreeMap<u64, f64> {
        let mut out = BTreeMap::new();
        for (y, &p) in &self.mass {
            *out.entry(y[coord]).or_insert(0.0) += p;
        }
        out
    }

    /// Reinterpret a 1-dimensional joint pmf as a univariate finite pmf.
    /// Requires an effectively zero tail so the finite-pmf sum invariant holds.
    pub fn to_finite(&self) -> Result<FinitePmf> {
        check_dim(1, self.dim)?;
        FinitePmf::from_pairs(self.mass.iter().map(|(y, &p)| (y[0], p)))
    }
}

#[derive(Serialize, Deserialize)]
struct JointPmfRepr {
    dim: usize,
    mass: Vec<MassEntry>,
    #[serde(default)]
    tail_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct MassEntry {
    y: Vec<u64>,
    p: f64,
}

impl Serialize for JointPmf {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = JointPmfRepr {
            dim: self.dim,
            mass: self
                .mass
                .iter()
                .map(|(y, &p)| MassEntry { y: y.clone(), p })
                .collect(),
            tail_bound: self.tail_bound,
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for JointPmf {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = JointPmfRepr::deserialize(deserializer)?;
        let mut mass = BTreeMap::new();
        for entry in repr.mass {
            *mass.entry(entry.y).or_insert(0.0) += entry.p;
        }
        JointPmf::new(repr.dim, mass, repr.tail_bound).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Moment summaries
// ---------------------------------------------------------------------------

/// Mean vector plus dispersion-covariance matrix: dispersions
/// Var(Y_i) - E Y_i on the diagonal, covariances off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    pub disp: Vec<Vec<f64>>,
}

impl MomentSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean of a 1-dimensional summary.
    pub fn mean_scalar(&self) -> f64 {
        self.mean[0]
    }

    /// Dispersion of a 1-dimensional summary.
    pub fn disp_scalar(&self) -> f64 {
        self.disp[0][0]
    }

    /// Largest absolute entrywise difference across mean and dispersion.
    pub fn max_abs_diff(&self, other: &MomentSummary) -> f64 {
        let mut worst = f64::INFINITY;
        if self.dim() == other.dim() {
            worst = 0.0;
            for (a, b) in self.mean.iter().zip(&other.mean) {
                worst = worst.max((a - b).abs());
            }
            for (ra, rb) in self.disp.iter().zip(&other.disp) {
                for (a, b) in ra.iter().zip(rb) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Multivariate laws
// ---------------------------------------------------------------------------

/// Multivariate count-distribution families.
///
/// `NegativeMultinomial` has pmf `C(n+|y|-1, y) prod q_i^{y_i} (1-|q|)^n`
/// with `|q| < 1`. `MultivariateHermite` is built from independent Poissons:
/// `Y_i = U_i + sum_j V_ij + sum_k V_ki` with `U_i ~ Poisson(alpha_i)` and
/// `V_ij ~ Poisson(beta_ij)`; its mean is `mu_i = alpha_i + rowsum + colsum`
/// and its dispersion-covariance is `sigma_ii = 2 beta_ii`,
/// `sigma_ij = beta_ij + beta_ji`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MultivariateLaw {
    Multinomial { n: u64, p: ProbVector },
    ProductPoisson { lambda: Vec<f64> },
    NegativeMultinomial { n: u64, q: Vec<f64> },
    MultivariateHermite { alpha: Vec<f64>, beta: Vec<Vec<f64>> },
    JointFinite { pmf: JointPmf },
}

impl MultivariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            MultivariateLaw::Multinomial { p, .. } => p.len(),
            MultivariateLaw::ProductPoisson { lambda } => lambda.len(),
            MultivariateLaw::NegativeMultinomial { q, .. } => q.len(),
            MultivariateLaw::MultivariateHermite { alpha, .. } => alpha.len(),
            MultivariateLaw::JointFinite { pmf } => pmf.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MultivariateLaw::Multinomial { .. } => Ok(()),
            MultivariateLaw::ProductPoisson { lambda } => {
                if lambda.is_empty() {
                    return Err(Error::invalid("lambda", "needs at least one entry"));
                }
                for &l in lambda {
                    check_nonneg("lambda", l)?;
                }
                Ok(())
            }
            MultivariateLaw::NegativeMultinomial { n, q } => {
                if *n == 0 {
                    return Err(Error::invalid("n", "index must be a positive integer"));
                }
                if q.is_empty() {
                    return Err(Error::invalid("q", "needs at least one entry"));
                }
                for &qi in q {
                    check_prob("q", qi)?;
                }
                let total: f64 = q.iter().sum();
                if total >= 1.0 {
                    return Err(Error::invalid(
                        "q",
                        format!("|q| = {} not below 1", format_sig(total, 6)),
                    ));
                }
                Ok(())
            }
            MultivariateLaw::MultivariateHermite { alpha, beta } => {
                if alpha.is_empty() {
                    return Err(Error::invalid("alpha", "needs at least one entry"));
                }
                for &a in alpha {
                    check_nonneg("alpha", a)?;
                }
                if beta.len() != alpha.len() {
                    return Err(Error::DimensionMismatch {
                        expected: alpha.len(),
                        got: beta.len(),
                    });
                }
                for row in beta {
                    check_dim(alpha.len(), row.len())?;
                    for &b in row {
                        check_nonneg("beta", b)?;
                    }
                }
                Ok(())
            }
            MultivariateLaw::JointFinite { .. } => Ok(()),
        }
    }

    /// P(Y = y).
    pub fn pmf(&self, y: &[u64]) -> Result<f64> {
        self.validate()?;
        check_dim(self.dim(), y.len())?;
        Ok(match self {
            MultivariateLaw::Multinomial { n, p } => {
                multinomial_pmf(*n, p.as_slice(), y)
            }
            MultivariateLaw::ProductPoisson { lambda } => {
                let ln: f64 = lambda
                    .iter()
                    .zip(y)
                    .map(|(&l, &yi)| ln_poisson_pmf(l, yi))
                    .sum();
                ln.exp()
            }
            MultivariateLaw::NegativeMultinomial { n, q } => {
                negative_multinomial_pmf(*n, q, y)
            }
            MultivariateLaw::MultivariateHermite { alpha, beta } => {
                let grid = hermite_box(alpha, beta, y);
                *grid.last().expect("nonempty grid")
            }
            MultivariateLaw::JointFinite { pmf } => pmf.prob(y),
        })
    }

    /// Multivariate FMGF Phi(t) = E prod (1+t_i)^{Y_i}.
    pub fn fmgf(&self, t: &[f64]) -> Result<f64> {
        self.validate()?;
        check_dim(self.dim(), t.len())?;
        match self {
            MultivariateLaw::Multinomial { n, p } => Ok(powi_checked(1.0 + p.dot(t), *n)),
            MultivariateLaw::ProductPoisson { lambda } => {
                Ok(lambda.iter().zip(t).map(|(&l, &ti)| l * ti).sum::<f64>().exp())
            }
            MultivariateLaw::NegativeMultinomial { n, q } => {
                let tilted: f64 = q.iter().zip(t).map(|(&qi, &ti)| qi * (1.0 + ti).abs()).sum();
                if tilted >= 1.0 {
                    return Err(Error::OutsideFmgfDomain(format!(
                        "sum q_i |1+t_i| = {} not below 1",
                        format_sig(tilted, 6)
                    )));
                }
                let rest = 1.0 - q.iter().sum::<f64>();
                let arg = 1.0 - q.iter().zip(t).map(|(&qi, &ti)| qi / rest * ti).sum::<f64>();
                Ok(arg.powf(-(*n as f64)))
            }
            MultivariateLaw::MultivariateHermite { .. } => {
                let summary = self.moment_summary()?;
                let linear: f64 = summary.mean.iter().zip(t).map(|(&m, &ti)| m * ti).sum();
                let mut quad = 0.0;
                for (i, row) in summary.disp.iter().enumerate() {
                    for (j, &s) in row.iter().enumerate() {
                        quad += s * t[i] * t[j];
                    }
                }
                Ok((linear + 0.5 * quad).exp())
            }
            MultivariateLaw::JointFinite { pmf } => {
                let mut acc = KahanSum::new();
                for (y, p) in pmf.iter() {
                    let prod: f64 = y
                        .iter()
                        .zip(t)
                        .map(|(&yi, &ti)| powi_checked(1.0 + ti, yi))
                        .product();
                    acc.add(p * prod);
                }
                Ok(acc.value())
            }
        }
    }

    /// Closed-form mean vector and dispersion-covariance matrix.
    pub fn moment_summary(&self) -> Result<MomentSummary> {
        self.validate()?;
        let c = self.dim();
        Ok(match self {
            MultivariateLaw::Multinomial { n, p } => {
                let nf = *n as f64;
                let mean = p.as_slice().iter().map(|&pi| nf * pi).collect();
                let disp = (0..c)
                    .map(|i| (0..c).map(|j| -nf * p.get(i) * p.get(j)).collect())
                    .collect();
                MomentSummary { mean, disp }
            }
            MultivariateLaw::ProductPoisson { lambda } => MomentSummary {
                mean: lambda.clone(),
                disp: vec![vec![0.0; c]; c],
            },
            MultivariateLaw::NegativeMultinomial { n, q } => {
                let nf = *n as f64;
                let rest = 1.0 - q.iter().sum::<f64>();
                let odds: Vec<f64> = q.iter().map(|&qi| qi / rest).collect();
                let mean = odds.iter().map(|&r| nf * r).collect();
                let disp = (0..c)
                    .map(|i| (0..c).map(|j| nf * odds[i] * odds[j]).collect())
                    .collect();
                MomentSummary { mean, disp }
            }
            MultivariateLaw::MultivariateHermite { alpha, beta } => {
                let mean = (0..c)
                    .map(|i| {
                        alpha[i]
                            + beta[i].iter().sum::<f64>()
                            + beta.iter().map(|row| row[i]).sum::<f64>()
                    })
                    .collect();
                let disp = (0..c)
                    .map(|i| {
                        (0..c)
                            .map(|j| {
                                if i == j {
                                    2.0 * beta[i][i]
                                } else {
                                    beta[i][j] + beta[j][i]
                                }
                            })
                            .collect()
                    })
                    .collect();
                MomentSummary { mean, disp }
            }
            MultivariateLaw::JointFinite { pmf } => summarize_joint(pmf),
        })
    }

    /// Hypercube truncation [0, K]^dim with stored mass >= 1 - eps. K comes
    /// from the law of the total count |Y|, which dominates every coordinate.
    pub fn truncate(&self, eps: f64) -> Result<JointPmf> {
        self.validate()?;
        check_eps(eps)?;
        if let MultivariateLaw::JointFinite { pmf } = self {
            return Ok(pmf.clone());
        }
        let c = self.dim();
        let total_law = self.total_count_law()?;
        let (total_pairs, _) = total_law.truncated_support(eps)?;
        let k = total_pairs.last().map(|&(x, _)| x).unwrap_or(0);

        let mut mass = BTreeMap::new();
        let mut total = KahanSum::new();
        match self {
            MultivariateLaw::MultivariateHermite { alpha, beta } => {
                let kmax = vec![k; c];
                let grid = hermite_box(alpha, beta, &kmax);
                let dims = vec![k as usize + 1; c];
                for_each_index(&dims, &mut |idx, flat| {
                    let p = grid[flat];
                    if p > 0.0 {
                        total.add(p);
                        mass.insert(idx.iter().map(|&v| v as u64).collect(), p);
                    }
                });
            }
            _ => {
                let dims = vec![k as usize + 1; c];
                let mut y = vec![0u64; c];
                for_each_index(&dims, &mut |idx, _| {
                    for (yi, &v) in y.iter_mut().zip(idx) {
                        *yi = v as u64;
                    }
                    let p = self.pmf_unchecked(&y);
                    if p > 0.0 {
                        total.add(p);
                        mass.insert(y.clone(), p);
                    }
                });
            }
        }
        let tail = (1.0 - total.value()).max(0.0);
        JointPmf::new(c, mass, tail)
    }

    /// pmf without re-validation, for tight truncation loops.
    fn pmf_unchecked(&self, y: &[u64]) -> f64 {
        match self {
            MultivariateLaw::Multinomial { n, p } => multinomial_pmf(*n, p.as_slice(), y),
            MultivariateLaw::ProductPoisson { lambda } => lambda
                .iter()
                .zip(y)
                .map(|(&l, &yi)| ln_poisson_pmf(l, yi))
                .sum::<f64>()
                .exp(),
            MultivariateLaw::NegativeMultinomial { n, q } => negative_multinomial_pmf(*n, q, y),
            MultivariateLaw::MultivariateHermite { alpha, beta } => {
                *hermite_box(alpha, beta, y).last().expect("nonempty grid")
            }
            MultivariateLaw::JointFinite { pmf } => pmf.prob(y),
        }
    }

    /// Law of |Y|, the total count across coordinates.
    pub(crate) fn total_count_law(&self) -> Result<UnivariateLaw> {
        Ok(match self {
            MultivariateLaw::Multinomial { n, p } => UnivariateLaw::Binomial {
                n: *n,
                p: p.weight().min(1.0),
            },
            MultivariateLaw::ProductPoisson { lambda } => UnivariateLaw::Poisson {
                lambda: lambda.iter().sum(),
            },
            MultivariateLaw::NegativeMultinomial { n, q } => UnivariateLaw::NegativeBinomial {
                n: *n,
                q: q.iter().sum(),
            },
            MultivariateLaw::MultivariateHermite { alpha, beta } => {
                let a: f64 = alpha.iter().sum();
                let b: f64 = beta.iter().flatten().sum();
                UnivariateLaw::Hermite {
                    mu: a + 2.0 * b,
                    sigma2: 2.0 * b,
                }
            }
            MultivariateLaw::JointFinite { pmf } => {
                let mut weights = BTreeMap::new();
                for (y, p) in pmf.iter() {
                    *weights.entry(y.iter().sum::<u64>()).or_insert(0.0) += p;
                }
                // A truncation tail folds into the top weight so the sum
                // invariant holds; finite inputs normally carry no tail.
                if pmf.tail_bound() > 0.0 {
                    *weights.entry(u64::MAX).or_insert(0.0) += pmf.tail_bound();
                }
                UnivariateLaw::Finite {
                    pmf: FinitePmf::new(weights)?,
                }
            }
        })
    }
}

impl fmt::Display for MultivariateLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vec_fmt = |v: &[f64]| {
            let inner: Vec<String> = v.iter().map(|&x| format_sig(x, 6)).collect();
            format!("[{}]", inner.join(", "))
        };
        match self {
            MultivariateLaw::Multinomial { n, p } => {
                write!(f, "Multinomial(n = {n}, p = {})", vec_fmt(p.as_slice()))
            }
            MultivariateLaw::ProductPoisson { lambda } => {
                write!(f, "ProductPoisson(lambda = {})", vec_fmt(lambda))
            }
            MultivariateLaw::NegativeMultinomial { n, q } => {
                write!(f, "NegativeMultinomial(n = {n}, q = {})", vec_fmt(q))
            }
            MultivariateLaw::MultivariateHermite { alpha, beta } => {
                let rows: Vec<String> = beta.iter().map(|r| vec_fmt(r)).collect();
                write!(
                    f,
                    "MultivariateHermite(alpha = {}, beta = [{}])",
                    vec_fmt(alpha),
                    rows.join(", ")
                )
            }
            MultivariateLaw::JointFinite { pmf } => write!(
                f,
                "JointFinitePmf(dim {}, {} support points, tail <= {})",
                pmf.dim(),
                pmf.len(),
                format_sig(pmf.tail_bound(), 3)
            ),
        }
    }
}

/// Mean/dispersion summary of a stored joint pmf by direct summation.
pub(crate) fn summarize_joint(pmf: &JointPmf) -> MomentSummary {
    let c = pmf.dim();
    let mut mean_acc = vec![KahanSum::new(); c];
    let mut prod_acc = vec![vec![KahanSum::new(); c]; c];
    for (y, p) in pmf.iter() {
        for i in 0..c {
            mean_acc[i].add(y[i] as f64 * p);
            for j in 0..c {
                let term = if i == j {
                    falling_factorial(y[i], 2)
                } else {
                    (y[i] * y[j]) as f64
                };
                prod_acc[i][j].add(term * p);
            }
        }
    }
    let mean: Vec<f64> = mean_acc.iter().map(|a| a.value()).collect();
    let disp = (0..c)
        .map(|i| {
            (0..c)
                .map(|j| prod_acc[i][j].value() - mean[i] * mean[j])
                .collect()
        })
        .collect();
    MomentSummary { mean, disp }
}

/// Multinomial pmf C(n, y) prod p_i^{y_i} (1 - |p|)^{n - |y|} in log space.
pub(crate) fn multinomial_pmf(n: u64, p: &[f64], y: &[u64]) -> f64 {
    let total: u64 = y.iter().sum();
    if total > n {
        return 0.0;
    }
    let rest = (1.0 - p.iter().sum::<f64>()).max(0.0);
    let mut ln = ln_factorial(n) - ln_factorial(n - total);
    for (&pi, &yi) in p.iter().zip(y) {
        if yi > 0 {
            if pi == 0.0 {
                return 0.0;
            }
            ln += yi as f64 * pi.ln() - ln_factorial(yi);
        }
    }
    if n > total {
        if rest == 0.0 {
            return 0.0;
        }
        ln += (n - total) as f64 * rest.ln();
    }
    ln.exp()
}

/// Negative multinomial pmf C(n+|y|-1, y) prod q_i^{y_i} (1-|q|)^n.
fn negative_multinomial_pmf(n: u64, q: &[f64], y: &[u64]) -> f64 {
    let total: u64 = y.iter().sum();
    let rest = 1.0 - q.iter().sum::<f64>();
    let mut ln = ln_factorial(n + total - 1) - ln_factorial(n - 1) + n as f64 * rest.ln();
    for (&qi, &yi) in q.iter().zip(y) {
        if yi > 0 {
            if qi == 0.0 {
                return 0.0;
            }
            ln += yi as f64 * qi.ln() - ln_factorial(yi);
        }
    }
    ln.exp()
}

/// Joint pmf of the independent-Poisson construction on the box [0, kmax]:
/// start from the product of the Poisson(alpha_i) coordinates and fold in
/// each Poisson(beta_ij) along direction e_i + e_j (2 e_i on the diagonal).
/// Exact on the box: pair components only ever add counts, so nothing
/// outside [0, y] can reach y. Returns the dense row-major grid.
fn hermite_box(alpha: &[f64], beta: &[Vec<f64>], kmax: &[u64]) -> Vec<f64> {
    let c = alpha.len();
    let dims: Vec<usize> = kmax.iter().map(|&k| k as usize + 1).collect();
    let total: usize = dims.iter().product();
    let mut strides = vec![1usize; c];
    for i in (0..c.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }

    let coord_pmfs: Vec<Vec<f64>> = alpha
        .iter()
        .zip(&dims)
        .map(|(&a, &d)| (0..d).map(|k| poisson_pmf(a, k as u64)).collect())
        .collect();
    let mut dist = vec![0.0; total];
    for_each_index(&dims, &mut |idx, flat| {
        let mut p = 1.0;
        for (i, &v) in idx.iter().enumerate() {
            p *= coord_pmfs[i][v];
        }
        dist[flat] = p;
    });

    for i in 0..c {
        for j in 0..c {
            let b = beta[i][j];
            if b == 0.0 {
                continue;
            }
            let m_cap = if i == j {
                (dims[i] - 1) / 2
            } else {
                (dims[i] - 1).min(dims[j] - 1)
            };
            let pair_pmf: Vec<f64> = (0..=m_cap).map(|m| poisson_pmf(b, m as u64)).collect();
            let step = if i == j {
                2 * strides[i]
            } else {
                strides[i] + strides[j]
            };
            let mut next = vec![0.0; total];
            for_each_index(&dims, &mut |idx, flat| {
                let reach = if i == j {
                    idx[i] / 2
                } else {
                    idx[i].min(idx[j])
                };
                let mut acc = 0.0;
                for m in 0..=reach.min(m_cap) {
                    acc += pair_pmf[m] * dist[flat - m * step];
                }
                next[flat] = acc;
            });
            dist = next;
        }
    }
    dist
}

/// Visit every index of the box `[0, dims_i)`, row-major, with its flat
/// offset.
pub(crate) fn for_each_index(dims: &[usize], f: &mut impl FnMut(&[usize], usize)) {
    let mut idx = vec![0usize; dims.len()];
    let total: usize = dims.iter().product();
    for flat in 0..total {
        f(&idx, flat);
        for pos in (0..dims.len()).rev() {
            idx[pos] += 1;
            if idx[pos] < dims[pos] {
                break;
            }
            idx[pos] = 0;
        }
    }
}
