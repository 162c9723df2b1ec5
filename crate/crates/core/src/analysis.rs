//! Predicted summaries of markings and re-markings, computed without
//! constructing the output law.
//!
//! Marking scales moments coordinatewise: E Y_i = a_i E X, the
//! dispersion-covariance is a aᵀ Disp(X), factorial moments pick up
//! prod a_i^{k_i}, and the FMGF composes as Phi_Y(t) = Phi_X(aᵀ t).
//! Re-marking behaves like the linear map A: mean A E X, dispersion
//! A Disp(X) Aᵀ, FMGF Phi_X(Aᵀ t).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{MomentSummary, MultivariateLaw, ProbVector, UnivariateLaw};
use crate::marking::SubstochasticMatrix;
use crate::num::format_sig;

/// Dispersions below this magnitude are declared zero by the sign
/// trichotomy; doubles cannot certify an exact zero.
pub const SIGN_THRESHOLD: f64 = 1e-10;

/// Factorial-moment requests are refused beyond this total order; numeric
/// cancellation grows with the order.
pub const FACTORIAL_MOMENT_CAP: u32 = 8;

/// A vector of falling-factorial exponents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(k: Vec<u32>) -> Self {
        MultiIndex(k)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// |k|, the total order.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Mean vector and dispersion-covariance matrix of `a ∘ X`:
/// mean_i = a_i E X and disp_ij = a_i a_j Disp(X).
pub fn predict_marking_moments(x: &UnivariateLaw, a: &ProbVector) -> Result<MomentSummary> {
    let summary = x.moment_summary()?;
    let mean_x = summary.mean_scalar();
    let disp_x = summary.disp_scalar();
    let c = a.len();
    let mean = a.as_slice().iter().map(|&ai| ai * mean_x).collect();
    let disp = (0..c)
        .map(|i| (0..c).map(|j| a.get(i) * a.get(j) * disp_x).collect())
        .collect();
    Ok(MomentSummary { mean, disp })
}

/// Factorial moment of `a ∘ X`: E Y^(k) = (prod a_i^{k_i}) E X^(|k|).
pub fn predict_marking_factorial_moment(
    x: &UnivariateLaw,
    a: &ProbVector,
    k: &MultiIndex,
) -> Result<f64> {
    check_len(a.len(), k.len())?;
    let order = k.order();
    if order > FACTORIAL_MOMENT_CAP {
        return Err(Error::UnsupportedOrder {
            order,
            cap: FACTORIAL_MOMENT_CAP,
        });
    }
    let scale: f64 = a
        .as_slice()
        .iter()
        .zip(k.as_slice())
        .map(|(&ai, &ki)| ai.powi(ki as i32))
        .product();
    Ok(scale * x.factorial_moment(order)?)
}

/// FMGF of `a ∘ X` at t, via the composition Phi_Y(t) = Phi_X(aᵀ t).
pub fn predict_marking_fmgf(x: &UnivariateLaw, a: &ProbVector, t: &[f64]) -> Result<f64> {
    check_len(a.len(), t.len())?;
    x.fmgf(a.dot(t))
}

/// Mean and dispersion-covariance of `A ∘ X`: A mean(X) and A Disp(X) Aᵀ.
pub fn predict_remarking_moments(
    x: &MultivariateLaw,
    a: &SubstochasticMatrix,
) -> Result<MomentSummary> {
    check_len(x.dim(), a.ncols())?;
    let summary = x.moment_summary()?;
    Ok(MomentSummary {
        mean: a.matvec(&summary.mean),
        disp: a.sandwich(&summary.disp),
    })
}

/// FMGF of `A ∘ X` at t, via the composition Phi_Y(t) = Phi_X(Aᵀ t).
pub fn predict_remarking_fmgf(
    x: &MultivariateLaw,
    a: &SubstochasticMatrix,
    t: &[f64],
) -> Result<f64> {
    check_len(a.nrows(), t.len())?;
    x.fmgf(&a.transpose_matvec(t))
}

/// Variance and dispersion forms for painting each of X items red with
/// probability r and blue otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallVarianceForms {
    pub var_r: f64,
    pub var_b: f64,
    pub cov_rb: f64,
    pub disp_r: f64,
    pub disp_b: f64,
}

/// Closed forms: Var(R) = r^2 Var(X) + r(1-r) E X, Cov(R,B) = rb Disp(X),
/// Disp(R) = r^2 Disp(X), and symmetrically in b = 1 - r.
pub fn ball_variance_forms(x: &UnivariateLaw, r: f64) -> Result<BallVarianceForms> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::invalid(
            "r",
            format!("{} outside (0, 1)", format_sig(r, 6)),
        ));
    }
    let summary = x.moment_summary()?;
    let mean = summary.mean_scalar();
    let disp = summary.disp_scalar();
    let var = disp + mean;
    let b = 1.0 - r;
    Ok(BallVarianceForms {
        var_r: r * r * var + r * b * mean,
        var_b: b * b * var + b * r * mean,
        cov_rb: r * b * var - r * b * mean,
        disp_r: r * r * disp,
        disp_b: b * b * disp,
    })
}

/// Sign of Disp(X), with zero declared below [`SIGN_THRESHOLD`]. The
/// correlation of any two colour counts of a marking carries this sign.
pub fn correlation_sign(x: &UnivariateLaw) -> Result<i8> {
    let disp = x.moment_summary()?.disp_scalar();
    Ok(if disp.abs() < SIGN_THRESHOLD {
        0
    } else if disp > 0.0 {
        1
    } else {
        -1
    })
}

/// The dispersion trichotomy of a count law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionClass {
    Underdispersed,
    Overdispersed,
    Equidispersed,
}

impl std::fmt::Display for DispersionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DispersionClass::Underdispersed => "underdispersed",
            DispersionClass::Overdispersed => "overdispersed",
            DispersionClass::Equidispersed => "equidispersed",
        })
    }
}

pub fn classify_dispersion(x: &UnivariateLaw) -> Result<DispersionClass> {
    Ok(match correlation_sign(x)? {
        -1 => DispersionClass::Underdispersed,
        1 => DispersionClass::Overdispersed,
        _ => DispersionClass::Equidispersed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    use crate::laws::FinitePmf;
    use crate::oracle;

    #[test]
    fn poisson_marking_moments_are_diagonal_free() {
        let x = UnivariateLaw::Poisson { lambda: 4.0 };
        let a = ProbVector::new(vec![0.25, 0.5]).unwrap();
        let s = predict_marking_moments(&x, &a).unwrap();
        assert_eq!(s.mean, vec![1.0, 2.0]);
        for row in &s.disp {
            for &v in row {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn negative_binomial_marking_covariance() {
        let x = UnivariateLaw::NegativeBinomial { n: 2, q: 0.5 };
        let a = ProbVector::new(vec![0.3, 0.6]).unwrap();
        let s = predict_marking_moments(&x, &a).unwrap();
        assert_abs_diff_eq!(s.disp[0][1], 0.36, epsilon = 1e-12);
    }

    #[test]
    fn binomial_marking_covariance_is_negative() {
        let x = UnivariateLaw::Binomial { n: 10, p: 0.5 };
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let s = predict_marking_moments(&x, &a).unwrap();
        assert_abs_diff_eq!(s.disp[0][1], -0.625, epsilon = 1e-12);
    }

    #[test]
    fn factorial_moment_poisson_pair() {
        let x = UnivariateLaw::Poisson { lambda: 2.0 };
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let k = MultiIndex::new(vec![1, 1]);
        assert_abs_diff_eq!(
            predict_marking_factorial_moment(&x, &a, &k).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn factorial_moment_order_zero_is_one() {
        let x = UnivariateLaw::Hermite { mu: 1.5, sigma2: 0.5 };
        let a = ProbVector::new(vec![0.2, 0.3, 0.4]).unwrap();
        let k = MultiIndex::new(vec![0, 0, 0]);
        assert_abs_diff_eq!(
            predict_marking_factorial_moment(&x, &a, &k).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn factorial_moment_binomial_example() {
        let x = UnivariateLaw::Binomial { n: 3, p: 0.5 };
        let a = ProbVector::new(vec![0.4, 0.6]).unwrap();
        let k = MultiIndex::new(vec![2, 0]);
        assert_abs_diff_eq!(
            predict_marking_factorial_moment(&x, &a, &k).unwrap(),
            0.24,
            epsilon = 1e-12
        );
    }

    #[test]
    fn factorial_moment_order_cap() {
        let x = UnivariateLaw::Poisson { lambda: 1.0 };
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let k = MultiIndex::new(vec![5, 4]);
        assert!(matches!(
            predict_marking_factorial_moment(&x, &a, &k),
            Err(Error::UnsupportedOrder { order: 9, cap: 8 })
        ));
    }

    #[test]
    fn marking_fmgf_composes() {
        let x = UnivariateLaw::Binomial { n: 2, p: 0.5 };
        let a = ProbVector::new(vec![0.4, 0.6]).unwrap();
        assert_abs_diff_eq!(
            predict_marking_fmgf(&x, &a, &[1.0, 1.0]).unwrap(),
            2.25,
            epsilon = 1e-12
        );

        let po = UnivariateLaw::Poisson { lambda: 2.0 };
        let a = ProbVector::new(vec![0.5, 0.25]).unwrap();
        assert_abs_diff_eq!(
            predict_marking_fmgf(&po, &a, &[0.2, 0.4]).unwrap(),
            (0.4f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn remarking_moments_product_poisson() {
        let x = MultivariateLaw::ProductPoisson { lambda: vec![1.0, 2.0] };
        let a = SubstochasticMatrix::new(vec![vec![0.5, 0.25], vec![0.5, 0.5]]).unwrap();
        let s = predict_remarking_moments(&x, &a).unwrap();
        assert_abs_diff_eq!(s.mean[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean[1], 1.5, epsilon = 1e-12);
        for row in &s.disp {
            for &v in row {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn remarking_identity_echoes_summary() {
        let x = MultivariateLaw::MultivariateHermite {
            alpha: vec![0.5, 0.5],
            beta: vec![vec![0.125, 0.125], vec![0.125, 0.125]],
        };
        let s = predict_remarking_moments(&x, &SubstochasticMatrix::identity(2)).unwrap();
        assert!(s.max_abs_diff(&x.moment_summary().unwrap()) <= 1e-15);
    }

    #[test]
    fn remarking_fmgf_composes() {
        let x = MultivariateLaw::ProductPoisson { lambda: vec![1.0, 2.0] };
        let a = SubstochasticMatrix::new(vec![vec![0.5, 0.25], vec![0.5, 0.5]]).unwrap();
        assert_abs_diff_eq!(
            predict_remarking_fmgf(&x, &a, &[1.0, 1.0]).unwrap(),
            (2.5f64).exp(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            predict_remarking_fmgf(&x, &a, &[0.0, 0.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn scalar_specialisation_matches_thinning_forms() {
        let x = UnivariateLaw::NegativeBinomial { n: 3, q: 0.4 };
        let a = 0.7;
        let av = ProbVector::scalar(a).unwrap();
        let s = predict_marking_moments(&x, &av).unwrap();
        let base = x.moment_summary().unwrap();
        assert_abs_diff_eq!(s.mean_scalar(), a * base.mean_scalar(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            s.disp_scalar(),
            a * a * base.disp_scalar(),
            epsilon = 1e-12
        );
        let k = MultiIndex::new(vec![3]);
        assert_abs_diff_eq!(
            predict_marking_factorial_moment(&x, &av, &k).unwrap(),
            a.powi(3) * x.factorial_moment(3).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            predict_marking_fmgf(&x, &av, &[0.3]).unwrap(),
            x.fmgf(a * 0.3).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ball_forms_poisson_is_uncorrelated() {
        let forms = ball_variance_forms(&UnivariateLaw::Poisson { lambda: 5.0 }, 0.3).unwrap();
        assert_abs_diff_eq!(forms.cov_rb, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ball_forms_binomial_example() {
        let forms =
            ball_variance_forms(&UnivariateLaw::Binomial { n: 10, p: 0.5 }, 0.5).unwrap();
        assert_abs_diff_eq!(forms.cov_rb, -0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(forms.var_r, 1.875, epsilon = 1e-12);
        assert_abs_diff_eq!(forms.disp_r, -0.625, epsilon = 1e-12);
    }

    #[test]
    fn ball_forms_equidispersed_two_point() {
        let x = UnivariateLaw::Finite {
            pmf: FinitePmf::from_pairs([(0u64, 1.0 / 3.0), (3, 2.0 / 3.0)]).unwrap(),
        };
        let forms = ball_variance_forms(&x, 0.5).unwrap();
        assert_abs_diff_eq!(forms.cov_rb, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ball_forms_reject_degenerate_r() {
        assert!(ball_variance_forms(&UnivariateLaw::Poisson { lambda: 1.0 }, 0.0).is_err());
        assert!(ball_variance_forms(&UnivariateLaw::Poisson { lambda: 1.0 }, 1.0).is_err());
    }

    #[test]
    fn correlation_sign_trichotomy() {
        assert_eq!(
            correlation_sign(&UnivariateLaw::Binomial { n: 10, p: 0.5 }).unwrap(),
            -1
        );
        assert_eq!(
            correlation_sign(&UnivariateLaw::NegativeBinomial { n: 2, q: 0.5 }).unwrap(),
            1
        );
        assert_eq!(
            correlation_sign(&UnivariateLaw::Poisson { lambda: 7.0 }).unwrap(),
            0
        );
    }

    #[test]
    fn cross_moment_identities_match_oracle() {
        // Double-differentiation identities: E Y_i(Y_i - 1) and E Y_i Y_j in
        // terms of the input's mixed moments, checked against enumeration.
        let x = MultivariateLaw::NegativeMultinomial {
            n: 2,
            q: vec![0.2, 0.15],
        };
        let a = SubstochasticMatrix::new(vec![vec![0.5, 0.3], vec![0.2, 0.4]]).unwrap();
        let d = x.dim();
        let input = x.moment_summary().unwrap();
        let e_x = &input.mean;
        // E X_k X_l for k != l and E X_k (X_k - 1) from the summary.
        let exx = |k: usize, l: usize| input.disp[k][l] + e_x[k] * e_x[l];

        let j = oracle::remark_exact(&x, &a, 1e-12).unwrap();
        let s = oracle::summarize(&j);
        let c = a.nrows();
        for i in 0..c {
            for jj in 0..c {
                let mut expected = 0.0;
                for k in 0..d {
                    for l in 0..d {
                        if k != l {
                            expected += a.entry(i, k) * a.entry(jj, l) * exx(k, l);
                        }
                    }
                }
                for k in 0..d {
                    expected += a.entry(i, k) * a.entry(jj, k) * exx(k, k);
                }
                let observed = s.disp[i][jj] + s.mean[i] * s.mean[jj];
                assert_abs_diff_eq!(observed, expected, epsilon = 1e-8);
            }
        }
    }
}
