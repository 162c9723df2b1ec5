//! The marking operator `a ∘ X` and the re-marking operator `A ∘ X`.
//!
//! Families with a known closed-form image dispatch to that closure rule;
//! everything else falls back to the enumeration oracle. Each result records
//! which rule fired.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{MultivariateLaw, ProbVector, UnivariateLaw};
use crate::num::format_sig;
use crate::oracle;

/// Truncation tail used when an operator falls back to the oracle.
pub const DEFAULT_ORACLE_EPS: f64 = 1e-10;

/// Re-marking probabilities: a c x d matrix whose columns lie in [0,1]^c and
/// sum to at most 1. Column j re-marks an item of original colour j.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstochasticMatrix {
    rows: Vec<Vec<f64>>,
}

impl SubstochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::invalid("A", "matrix must be nonempty"));
        }
        let d = rows[0].len();
        for row in &rows {
            if row.len() != d {
                return Err(Error::invalid("A", "rows must have equal length"));
            }
            for &x in row {
                if !(0.0..=1.0).contains(&x) || !x.is_finite() {
                    return Err(Error::invalid(
                        "A",
                        format!("entry {} outside [0, 1]", format_sig(x, 6)),
                    ));
                }
            }
        }
        for j in 0..d {
            let col_sum: f64 = rows.iter().map(|r| r[j]).sum();
            if col_sum > 1.0 + crate::laws::PROB_SLACK {
                return Err(Error::invalid(
                    "A",
                    format!(
                        "column {} sums to {}, exceeds 1",
                        j + 1,
                        format_sig(col_sum, 6)
                    ),
                ));
            }
        }
        Ok(SubstochasticMatrix { rows })
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        SubstochasticMatrix { rows }
    }

    /// Embed marking probabilities as the single column of a c x 1 matrix.
    pub fn from_prob_vector(a: &ProbVector) -> Self {
        SubstochasticMatrix {
            rows: a.as_slice().iter().map(|&ai| vec![ai]).collect(),
        }
    }

    /// Number of new colours c.
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    /// Number of original colours d.
    pub fn ncols(&self) -> usize {
        self.rows[0].len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Column j as marking probabilities; valid by the matrix invariants.
    pub fn column_prob_vector(&self, j: usize) -> ProbVector {
        ProbVector::new(self.column(j)).expect("substochastic column is a valid ProbVector")
    }

    /// A x for a length-d vector x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(x).map(|(a, v)| a * v).sum())
            .collect()
    }

    /// Aᵀ t for a length-c vector t.
    pub fn transpose_matvec(&self, t: &[f64]) -> Vec<f64> {
        (0..self.ncols())
            .map(|j| self.rows.iter().zip(t).map(|(r, ti)| r[j] * ti).sum())
            .collect()
    }

    /// A S Aᵀ for a symmetric d x d matrix S.
    pub fn sandwich(&self, s: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let c = self.nrows();
        let d = self.ncols();
        // S Aᵀ first: d x c.
        let mut sat = vec![vec![0.0; c]; d];
        for k in 0..d {
            for i in 0..c {
                sat[k][i] = (0..d).map(|l| s[k][l] * self.rows[i][l]).sum();
            }
        }
        (0..c)
            .map(|i| {
                (0..c)
                    .map(|j| (0..d).map(|k| self.rows[i][k] * sat[k][j]).sum())
                    .collect()
            })
            .collect()
    }
}

/// Which computation produced a marking or re-marking result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureRule {
    BinomialToMultinomial,
    PoissonToProductPoisson,
    NegativeBinomialToNegativeMultinomial,
    HermiteToMultivariateHermite,
    ProductPoissonLinear,
    MultivariateHermiteLinear,
    Oracle,
}

impl fmt::Display for ClosureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClosureRule::BinomialToMultinomial => "binomial->multinomial",
            ClosureRule::PoissonToProductPoisson => "poisson->product-poisson",
            ClosureRule::NegativeBinomialToNegativeMultinomial => {
                "negative-binomial->negative-multinomial"
            }
            ClosureRule::HermiteToMultivariateHermite => "hermite->multivariate-hermite",
            ClosureRule::ProductPoissonLinear => "product-poisson->product-poisson",
            ClosureRule::MultivariateHermiteLinear => {
                "multivariate-hermite->multivariate-hermite"
            }
            ClosureRule::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

/// The law of a marking or re-marking together with the rule that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkResult {
    pub law: MultivariateLaw,
    pub rule: ClosureRule,
}

/// Law of the marking `a ∘ X`.
pub fn mark(x: &UnivariateLaw, a: &ProbVector) -> Result<MarkResult> {
    mark_with_eps(x, a, DEFAULT_ORACLE_EPS)
}

/// As [`mark`], with an explicit truncation tail for the oracle fallback.
pub fn mark_with_eps(x: &UnivariateLaw, a: &ProbVector, eps: f64) -> Result<MarkResult> {
    x.validate()?;
    let law = match x {
        UnivariateLaw::Binomial { n, p } => MarkResult {
            law: MultivariateLaw::Multinomial {
                n: *n,
                p: ProbVector::new(a.scaled(*p))?,
            },
            rule: ClosureRule::BinomialToMultinomial,
        },
        UnivariateLaw::Poisson { lambda } => MarkResult {
            law: MultivariateLaw::ProductPoisson {
                lambda: a.scaled(*lambda),
            },
            rule: ClosureRule::PoissonToProductPoisson,
        },
        UnivariateLaw::NegativeBinomial { n, q } => MarkResult {
            law: MultivariateLaw::NegativeMultinomial {
                n: *n,
                q: marked_failure_probabilities(*q, a),
            },
            rule: ClosureRule::NegativeBinomialToNegativeMultinomial,
        },
        UnivariateLaw::Hermite { mu, sigma2 } => MarkResult {
            law: marked_hermite(*mu, *sigma2, a)?,
            rule: ClosureRule::HermiteToMultivariateHermite,
        },
        UnivariateLaw::Finite { .. } => MarkResult {
            law: MultivariateLaw::JointFinite {
                pmf: oracle::mark_exact(x, a, eps)?,
            },
            rule: ClosureRule::Oracle,
        },
    };
    law.law.validate()?;
    Ok(law)
}

/// Image failure probabilities of marking a negative binomial: the marked law
/// satisfies q'_i / (1 - |q'|) = a_i q / (1 - q), giving
/// q'_i = a_i r / (1 + r |a|) with r the original odds.
fn marked_failure_probabilities(q: f64, a: &ProbVector) -> Vec<f64> {
    let odds = q / (1.0 - q);
    let denom = 1.0 + odds * a.weight();
    a.as_slice().iter().map(|&ai| ai * odds / denom).collect()
}

/// Image of a Hermite law: mean vector mu a and dispersion-covariance
/// sigma2 a aᵀ, stored via beta = sigma2 a aᵀ / 2 and
/// alpha_i = a_i (mu - sigma2 |a|). The alphas stay nonnegative because
/// sigma2 <= mu and |a| <= 1.
fn marked_hermite(mu: f64, sigma2: f64, a: &ProbVector) -> Result<MultivariateLaw> {
    let c = a.len();
    let weight = a.weight();
    let alpha: Vec<f64> = a
        .as_slice()
        .iter()
        .map(|&ai| ai * (mu - sigma2 * weight))
        .collect();
    let beta = (0..c)
        .map(|i| {
            (0..c)
                .map(|j| 0.5 * sigma2 * a.get(i) * a.get(j))
                .collect()
        })
        .collect();
    Ok(MultivariateLaw::MultivariateHermite { alpha, beta })
}

/// Binomial thinning `a ∘ X`: the single-colour marking, returned as a
/// univariate law.
pub fn thin(x: &UnivariateLaw, a: f64) -> Result<UnivariateLaw> {
    x.validate()?;
    if !(0.0..=1.0).contains(&a) || !a.is_finite() {
        return Err(Error::invalid(
            "a",
            format!("{} outside [0, 1]", format_sig(a, 6)),
        ));
    }
    Ok(match x {
        UnivariateLaw::Binomial { n, p } => UnivariateLaw::Binomial { n: *n, p: p * a },
        UnivariateLaw::Poisson { lambda } => UnivariateLaw::Poisson { lambda: lambda * a },
        UnivariateLaw::NegativeBinomial { n, q } => {
            let odds = a * q / (1.0 - q);
            UnivariateLaw::NegativeBinomial {
                n: *n,
                q: odds / (1.0 + odds),
            }
        }
        UnivariateLaw::Hermite { mu, sigma2 } => UnivariateLaw::Hermite {
            mu: mu * a,
            sigma2: sigma2 * a * a,
        },
        UnivariateLaw::Finite { .. } => {
            let marked = oracle::mark_exact(x, &ProbVector::scalar(a)?, DEFAULT_ORACLE_EPS)?;
            UnivariateLaw::Finite {
                pmf: marked.to_finite()?,
            }
        }
    })
}

/// Law of the re-marking `A ∘ X`.
pub fn remark(x: &MultivariateLaw, a: &SubstochasticMatrix) -> Result<MarkResult> {
    remark_with_eps(x, a, DEFAULT_ORACLE_EPS)
}

/// As [`remark`], with an explicit truncation tail for the oracle fallback.
pub fn remark_with_eps(
    x: &MultivariateLaw,
    a: &SubstochasticMatrix,
    eps: f64,
) -> Result<MarkResult> {
    x.validate()?;
    if a.ncols() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: a.ncols(),
        });
    }
    let result = match x {
        MultivariateLaw::ProductPoisson { lambda } => MarkResult {
            law: MultivariateLaw::ProductPoisson {
                lambda: a.matvec(lambda),
            },
            rule: ClosureRule::ProductPoissonLinear,
        },
        MultivariateLaw::MultivariateHermite { .. } => MarkResult {
            law: remarked_hermite(x, a)?,
            rule: ClosureRule::MultivariateHermiteLinear,
        },
        // No closed form is assumed for multinomial or negative-multinomial
        // inputs; the oracle computes the exact image.
        MultivariateLaw::Multinomial { .. }
        | MultivariateLaw::NegativeMultinomial { .. }
        | MultivariateLaw::JointFinite { .. } => MarkResult {
            law: MultivariateLaw::JointFinite {
                pmf: oracle::remark_exact(x, a, eps)?,
            },
            rule: ClosureRule::Oracle,
        },
    };
    result.law.validate()?;
    Ok(result)
}

/// Image of a multivariate Hermite law under A: mean A mu, dispersion
/// A Sigma Aᵀ, with beta' = A Sigma Aᵀ / 2 and alpha' = A mu minus the row
/// sums of A Sigma Aᵀ. With beta >= 0 and substochastic columns,
/// alpha'_i >= sum_k a_ik alpha_k >= 0; rounding at that boundary is clamped.
fn remarked_hermite(x: &MultivariateLaw, a: &SubstochasticMatrix) -> Result<MultivariateLaw> {
    let summary = x.moment_summary()?;
    let mean = a.matvec(&summary.mean);
    let sigma = a.sandwich(&summary.disp);
    let c = a.nrows();
    let scale = 1.0 + mean.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let alpha: Vec<f64> = (0..c)
        .map(|i| {
            let raw = mean[i] - sigma[i].iter().sum::<f64>();
            if raw < 0.0 && raw > -1e-9 * scale {
                0.0
            } else {
                raw
            }
        })
        .collect();
    let beta = sigma
        .into_iter()
        .map(|row| row.into_iter().map(|s| 0.5 * s).collect())
        .collect();
    Ok(MultivariateLaw::MultivariateHermite { alpha, beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    use crate::laws::FinitePmf;

    #[test]
    fn binomial_marking_is_multinomial() {
        let x = UnivariateLaw::Binomial { n: 4, p: 0.5 };
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let result = mark(&x, &a).unwrap();
        assert_eq!(result.rule, ClosureRule::BinomialToMultinomial);
        match result.law {
            MultivariateLaw::Multinomial { n, p } => {
                assert_eq!(n, 4);
                assert_eq!(p.as_slice(), &[0.25, 0.25]);
            }
            other => panic!("expected multinomial, got {other}"),
        }
    }

    #[test]
    fn poisson_marking_is_product_poisson() {
        let x = UnivariateLaw::Poisson { lambda: 6.0 };
        let a = ProbVector::new(vec![0.5, 1.0 / 3.0]).unwrap();
        let result = mark(&x, &a).unwrap();
        assert_eq!(result.rule, ClosureRule::PoissonToProductPoisson);
        match result.law {
            MultivariateLaw::ProductPoisson { lambda } => {
                assert_abs_diff_eq!(lambda[0], 3.0, epsilon = 1e-12);
                assert_abs_diff_eq!(lambda[1], 2.0, epsilon = 1e-12);
            }
            other => panic!("expected product poisson, got {other}"),
        }
    }

    #[test]
    fn negative_binomial_marking_odds_relation() {
        // The image satisfies q'_i / (1 - |q'|) = a_i q / (1 - q); with
        // q = 0.5 and a = (0.5, 0.5) that gives q' = (0.25, 0.25).
        let x = UnivariateLaw::NegativeBinomial { n: 3, q: 0.5 };
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let result = mark(&x, &a).unwrap();
        match &result.law {
            MultivariateLaw::NegativeMultinomial { n, q } => {
                assert_eq!(*n, 3);
                assert_abs_diff_eq!(q[0], 0.25, epsilon = 1e-12);
                assert_abs_diff_eq!(q[1], 0.25, epsilon = 1e-12);
                let rest = 1.0 - q.iter().sum::<f64>();
                for (&qi, &ai) in q.iter().zip(a.as_slice()) {
                    assert_abs_diff_eq!(qi / rest, ai * 0.5 / 0.5, epsilon = 1e-12);
                }
            }
            other => panic!("expected negative multinomial, got {other}"),
        }
        // The joint pmf is the definitional one.
        let exact = oracle::mark_exact(&x, &a, 1e-12).unwrap();
        for (y, p) in exact.iter() {
            assert_abs_diff_eq!(result.law.pmf(y).unwrap(), p, epsilon = 1e-10);
        }
    }

    #[test]
    fn hermite_marking_parameters() {
        let x = UnivariateLaw::Hermite { mu: 2.0, sigma2: 1.0 };
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let result = mark(&x, &a).unwrap();
        let summary = result.law.moment_summary().unwrap();
        assert_abs_diff_eq!(summary.mean[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(summary.mean[1], 1.0, epsilon = 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(summary.disp[i][j], 0.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identity_marking_preserves_the_law() {
        let x = UnivariateLaw::Binomial { n: 7, p: 0.3 };
        let a = ProbVector::new(vec![1.0]).unwrap();
        let result = mark(&x, &a).unwrap();
        for k in 0..=7u64 {
            assert_abs_diff_eq!(
                result.law.pmf(&[k]).unwrap(),
                x.pmf(k).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn thinning_examples() {
        let bin = thin(&UnivariateLaw::Binomial { n: 10, p: 0.4 }, 0.5).unwrap();
        assert_eq!(bin, UnivariateLaw::Binomial { n: 10, p: 0.2 });

        let po = thin(&UnivariateLaw::Poisson { lambda: 2.0 }, 0.25).unwrap();
        assert_eq!(po, UnivariateLaw::Poisson { lambda: 0.5 });

        let x = UnivariateLaw::NegativeBinomial { n: 2, q: 0.5 };
        let same = thin(&x, 1.0).unwrap();
        match same {
            UnivariateLaw::NegativeBinomial { n, q } => {
                assert_eq!(n, 2);
                assert_abs_diff_eq!(q, 0.5, epsilon = 1e-15);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn thinning_finite_law_is_exact() {
        let x = UnivariateLaw::Finite {
            pmf: FinitePmf::from_pairs([(0u64, 0.5), (2, 0.5)]).unwrap(),
        };
        let thinned = thin(&x, 0.5).unwrap();
        // P(Y=0) = 0.5 + 0.5 * 0.25, P(Y=1) = 0.5 * 2 * 0.25, P(Y=2) = 0.5 * 0.25
        assert_abs_diff_eq!(thinned.pmf(0).unwrap(), 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(thinned.pmf(1).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(thinned.pmf(2).unwrap(), 0.125, epsilon = 1e-12);
    }

    #[test]
    fn product_poisson_remarking_is_linear() {
        let x = MultivariateLaw::ProductPoisson { lambda: vec![1.0, 2.0] };
        let a = SubstochasticMatrix::new(vec![vec![0.5, 0.25], vec![0.5, 0.5]]).unwrap();
        let result = remark(&x, &a).unwrap();
        assert_eq!(result.rule, ClosureRule::ProductPoissonLinear);
        match result.law {
            MultivariateLaw::ProductPoisson { lambda } => {
                assert_abs_diff_eq!(lambda[0], 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(lambda[1], 1.5, epsilon = 1e-12);
            }
            other => panic!("expected product poisson, got {other}"),
        }
    }

    #[test]
    fn identity_remarking_preserves_hermite_parameters() {
        let x = mark(
            &UnivariateLaw::Hermite { mu: 2.0, sigma2: 1.0 },
            &ProbVector::new(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap()
        .law;
        let before = x.moment_summary().unwrap();
        let result = remark(&x, &SubstochasticMatrix::identity(2)).unwrap();
        let after = result.law.moment_summary().unwrap();
        assert!(before.max_abs_diff(&after) <= 1e-12);
    }

    #[test]
    fn remark_dimension_and_column_checks() {
        let x = MultivariateLaw::ProductPoisson { lambda: vec![1.0, 2.0] };
        let wrong = SubstochasticMatrix::new(vec![vec![0.5], vec![0.5]]).unwrap();
        assert!(matches!(
            remark(&x, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
        let err = SubstochasticMatrix::new(vec![vec![0.6, 0.2], vec![0.5, 0.2]]).unwrap_err();
        assert_eq!(
            err.to_string(),
            "invalid parameter A: column 1 sums to 1.1, exceeds 1"
        );
    }

    #[test]
    fn remarked_hermite_alphas_stay_nonnegative() {
        let x = mark(
            &UnivariateLaw::Hermite { mu: 2.0, sigma2: 2.0 },
            &ProbVector::new(vec![0.6, 0.4]).unwrap(),
        )
        .unwrap()
        .law;
        let a = SubstochasticMatrix::new(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let result = remark(&x, &a).unwrap();
        match result.law {
            MultivariateLaw::MultivariateHermite { alpha, .. } => {
                assert!(alpha.iter().all(|&v| v >= 0.0));
            }
            other => panic!("expected multivariate hermite, got {other}"),
        }
    }

    #[test]
    fn finite_marking_routes_through_oracle() {
        let x = UnivariateLaw::Finite {
            pmf: FinitePmf::new(BTreeMap::from([(1u64, 1.0)])).unwrap(),
        };
        let a = ProbVector::new(vec![0.3, 0.7]).unwrap();
        let result = mark(&x, &a).unwrap();
        assert_eq!(result.rule, ClosureRule::Oracle);
        assert_abs_diff_eq!(result.law.pmf(&[1, 0]).unwrap(), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(result.law.pmf(&[0, 1]).unwrap(), 0.7, epsilon = 1e-12);
    }
}
