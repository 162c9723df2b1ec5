//! Exact enumeration of marking and re-marking joint distributions.
//!
//! Everything here works from the definitions alone: a marking mixes
//! conditional multinomial kernels over the support of X, and a re-marking
//! convolves one conditional multinomial per original colour. The outputs
//! carry certified tail bounds and are the ground truth the closure rules,
//! the predicted summaries, and the samplers are tested against.

use std::collections::BTreeMap;

use crate::analysis::MultiIndex;
use crate::error::{Error, Result};
use crate::laws::{
    summarize_joint, JointPmf, MomentSummary, MultivariateLaw, ProbVector, UnivariateLaw,
};
use crate::marking::SubstochasticMatrix;
use crate::num::{falling_factorial, format_sig, ln_factorial, KahanSum};

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(
            "eps",
            format!("{} outside (0, 1)", format_sig(eps, 6)),
        ));
    }
    Ok(())
}

/// Conditional multinomial kernel in log space, straight from the defining
/// formula C(x, y) prod a_i^{y_i} (1 - |a|)^{x - |y|}.
struct MultinomialKernel {
    ln_a: Vec<f64>,
    ln_rest: f64,
    rest_is_zero: bool,
}

impl MultinomialKernel {
    fn new(a: &[f64]) -> Self {
        let rest = (1.0 - a.iter().sum::<f64>()).max(0.0);
        MultinomialKernel {
            ln_a: a.iter().map(|&ai| ai.ln()).collect(),
            ln_rest: rest.ln(),
            rest_is_zero: rest == 0.0,
        }
    }

    /// P(Multi(x, a) = y) for |y| <= x; 0 where a structural zero applies.
    fn weight(&self, x: u64, y: &[u64]) -> f64 {
        let total: u64 = y.iter().sum();
        debug_assert!(total <= x);
        let mut ln = ln_factorial(x) - ln_factorial(x - total);
        for (&yi, &ln_ai) in y.iter().zip(&self.ln_a) {
            if yi > 0 {
                if ln_ai == f64::NEG_INFINITY {
                    return 0.0;
                }
                ln += yi as f64 * ln_ai - ln_factorial(yi);
            }
        }
        if x > total {
            if self.rest_is_zero {
                return 0.0;
            }
            ln += (x - total) as f64 * self.ln_rest;
        }
        ln.exp()
    }
}

/// Visit every vector y in N^c with |y| <= max_total.
fn for_each_bounded(c: usize, max_total: u64, f: &mut impl FnMut(&[u64])) {
    fn rec(buf: &mut Vec<u64>, pos: usize, remaining: u64, f: &mut impl FnMut(&[u64])) {
        if pos + 1 == buf.len() {
            for v in 0..=remaining {
                buf[pos] = v;
                f(buf);
            }
            buf[pos] = 0;
            return;
        }
        for v in 0..=remaining {
            buf[pos] = v;
            rec(buf, pos + 1, remaining - v, f);
        }
        buf[pos] = 0;
    }
    let mut buf = vec![0u64; c];
    rec(&mut buf, 0, max_total, f);
}

/// Exact joint pmf of the marking `a ∘ X`: p(y) = sum_x P(X=x) Multi(x,a)(y)
/// over the truncated support of X. The support is every y with |y| at most
/// the largest enumerated x; the tail bound is the truncation tail of X.
pub fn mark_exact(x: &UnivariateLaw, a: &ProbVector, eps: f64) -> Result<JointPmf> {
    x.validate()?;
    check_eps(eps)?;
    let (pairs, tail) = x.truncated_support(eps)?;
    let kernel = MultinomialKernel::new(a.as_slice());
    let c = a.len();
    let mut mass: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    for &(xv, px) in &pairs {
        for_each_bounded(c, xv, &mut |y| {
            let w = kernel.weight(xv, y);
            if w > 0.0 {
                *mass.entry(y.to_vec()).or_insert(0.0) += px * w;
            }
        });
    }
    JointPmf::new(c, mass, tail)
}

/// Exact joint pmf of the re-marking `A ∘ X`: for each support point x of the
/// truncated input, convolve the d conditional multinomials Multi(x_j, a_j)
/// and accumulate weighted by P(X = x).
pub fn remark_exact(
    x: &MultivariateLaw,
    a: &SubstochasticMatrix,
    eps: f64,
) -> Result<JointPmf> {
    x.validate()?;
    check_eps(eps)?;
    if a.ncols() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: a.ncols(),
        });
    }
    let c = a.nrows();
    let d = a.ncols();
    let kernels: Vec<MultinomialKernel> = (0..d)
        .map(|j| MultinomialKernel::new(&a.column(j)))
        .collect();
    let trunc = x.truncate(eps)?;

    let mut mass: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    for (xvec, px) in trunc.iter() {
        // Conditional law of the running sum of re-marked items, column by
        // column; conditional independence given X makes this a convolution.
        let mut acc: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        acc.insert(vec![0u64; c], 1.0);
        for (j, kernel) in kernels.iter().enumerate() {
            let xj = xvec[j];
            if xj == 0 {
                continue;
            }
            let mut next: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
            for (base, &wb) in &acc {
                for_each_bounded(c, xj, &mut |z| {
                    let wz = kernel.weight(xj, z);
                    if wz > 0.0 {
                        let y: Vec<u64> = base.iter().zip(z).map(|(&b, &zi)| b + zi).collect();
                        *next.entry(y).or_insert(0.0) += wb * wz;
                    }
                });
            }
            acc = next;
        }
        for (y, w) in acc {
            *mass.entry(y).or_insert(0.0) += px * w;
        }
    }
    JointPmf::new(c, mass, trunc.tail_bound())
}

/// Mean and dispersion-covariance of a stored joint pmf by direct summation.
pub fn summarize(j: &JointPmf) -> MomentSummary {
    summarize_joint(j)
}

/// E prod_i Y_i^(k_i) over the stored support (falling-factorial powers).
pub fn factorial_moment_exact(j: &JointPmf, k: &MultiIndex) -> f64 {
    assert_eq!(j.dim(), k.len(), "multi-index length must match dimension");
    let mut acc = KahanSum::new();
    for (y, p) in j.iter() {
        let prod: f64 = y
            .iter()
            .zip(k.as_slice())
            .map(|(&yi, &ki)| falling_factorial(yi, ki))
            .product();
        acc.add(p * prod);
    }
    acc.value()
}

/// E prod_i (1+t_i)^{Y_i} over the stored support.
pub fn fmgf_exact(j: &JointPmf, t: &[f64]) -> f64 {
    assert_eq!(j.dim(), t.len(), "argument length must match dimension");
    let mut acc = KahanSum::new();
    for (y, p) in j.iter() {
        let prod: f64 = y
            .iter()
            .zip(t)
            .map(|(&yi, &ti)| (1.0 + ti).powi(yi as i32))
            .product();
        acc.add(p * prod);
    }
    acc.value()
}

/// [`fmgf_exact`] over many arguments in one support pass, caching the powers
/// (1+t_i)^y per distinct base.
pub fn fmgf_exact_grid(j: &JointPmf, ts: &[Vec<f64>]) -> Vec<f64> {
    let dim = j.dim();
    let max_y = j
        .iter()
        .flat_map(|(y, _)| y.iter().copied())
        .max()
        .unwrap_or(0) as usize;

    // Per coordinate, map each distinct base 1+t to an index in a pow table.
    let mut bases: Vec<Vec<f64>> = vec![Vec::new(); dim];
    let mut t_base_idx: Vec<Vec<usize>> = Vec::with_capacity(ts.len());
    for t in ts {
        assert_eq!(t.len(), dim, "argument length must match dimension");
        let mut idx = Vec::with_capacity(dim);
        for (i, &ti) in t.iter().enumerate() {
            let b = 1.0 + ti;
            let pos = match bases[i].iter().position(|&x| x == b) {
                Some(p) => p,
                None => {
                    bases[i].push(b);
                    bases[i].len() - 1
                }
            };
            idx.push(pos);
        }
        t_base_idx.push(idx);
    }
    let pow_tables: Vec<Vec<Vec<f64>>> = bases
        .iter()
        .map(|coord_bases| {
            coord_bases
                .iter()
                .map(|&b| {
                    let mut pows = Vec::with_capacity(max_y + 1);
                    let mut acc = 1.0;
                    for _ in 0..=max_y {
                        pows.push(acc);
                        acc *= b;
                    }
                    pows
                })
                .collect()
        })
        .collect();

    let mut sums = vec![KahanSum::new(); ts.len()];
    for (y, p) in j.iter() {
        for (ti, idx) in t_base_idx.iter().enumerate() {
            let mut prod = p;
            for (i, &bi) in idx.iter().enumerate() {
                prod *= pow_tables[i][bi][y[i] as usize];
            }
            sums[ti].add(prod);
        }
    }
    sums.iter().map(|s| s.value()).collect()
}

/// Largest pointwise gap between the joint pmf and the product of its
/// coordinate marginals over the stored support.
pub fn independence_defect(j: &JointPmf) -> f64 {
    let dim = j.dim();
    let marginals: Vec<BTreeMap<u64, f64>> = (0..dim).map(|i| j.marginal(i)).collect();
    let mut worst = 0.0f64;
    for (y, p) in j.iter() {
        let prod: f64 = y
            .iter()
            .enumerate()
            .map(|(i, v)| marginals[i].get(v).copied().unwrap_or(0.0))
            .product();
        worst = worst.max((p - prod).abs());
    }
    worst
}

/// Whether the stored coordinates are independent within `tol`. Callers
/// should keep the tail bound at or below `tol / 10` so truncation noise
/// cannot masquerade as dependence.
pub fn independence_check(j: &JointPmf, tol: f64) -> bool {
    independence_defect(j) <= tol
}

/// Largest pointwise pmf difference over the union of two stored supports,
/// treating missing points as zero.
pub fn max_joint_gap(a: &JointPmf, b: &JointPmf) -> f64 {
    let mut worst = 0.0f64;
    for (y, p) in a.iter() {
        worst = worst.max((p - b.prob(y)).abs());
    }
    for (y, p) in b.iter() {
        worst = worst.max((p - a.prob(y)).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    use crate::laws::FinitePmf;

    fn finite(pairs: &[(u64, f64)]) -> UnivariateLaw {
        UnivariateLaw::Finite {
            pmf: FinitePmf::from_pairs(pairs.iter().copied()).unwrap(),
        }
    }

    #[test]
    fn single_ball_marking() {
        let x = finite(&[(1, 1.0)]);
        let a = ProbVector::new(vec![0.3, 0.7]).unwrap();
        let j = mark_exact(&x, &a, 1e-9).unwrap();
        assert_abs_diff_eq!(j.prob(&[1, 0]), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(j.prob(&[0, 1]), 0.7, epsilon = 1e-15);
        assert_eq!(j.tail_bound(), 0.0);
    }

    #[test]
    fn two_point_marking_by_hand() {
        // With x = 2 and no discard mass: both colour one has conditional
        // probability 0.25, the mixed pair 0.5, both colour two 0.25.
        let x = finite(&[(0, 0.5), (2, 0.5)]);
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let j = mark_exact(&x, &a, 1e-9).unwrap();
        assert_abs_diff_eq!(j.prob(&[0, 0]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(j.prob(&[1, 1]), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(j.prob(&[2, 0]), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(j.prob(&[0, 2]), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(j.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn binomial_marking_matches_multinomial_closure() {
        let x = UnivariateLaw::Binomial { n: 2, p: 0.5 };
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let j = mark_exact(&x, &a, 1e-12).unwrap();
        let closure = MultivariateLaw::Multinomial {
            n: 2,
            p: ProbVector::new(vec![0.25, 0.25]).unwrap(),
        };
        for (y, p) in j.iter() {
            assert_abs_diff_eq!(closure.pmf(y).unwrap(), p, epsilon = 1e-12);
        }
    }

    #[test]
    fn remark_single_item_splits_by_column() {
        let mut mass = BTreeMap::new();
        mass.insert(vec![1u64, 0], 1.0);
        let x = MultivariateLaw::JointFinite {
            pmf: JointPmf::new(2, mass, 0.0).unwrap(),
        };
        let a = SubstochasticMatrix::new(vec![vec![0.5, 0.0], vec![0.5, 1.0]]).unwrap();
        let j = remark_exact(&x, &a, 1e-9).unwrap();
        assert_abs_diff_eq!(j.prob(&[1, 0]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(j.prob(&[0, 1]), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn remark_exchange_matrix_swaps_colours() {
        let mut mass = BTreeMap::new();
        mass.insert(vec![1u64, 1], 1.0);
        let x = MultivariateLaw::JointFinite {
            pmf: JointPmf::new(2, mass, 0.0).unwrap(),
        };
        let swap = SubstochasticMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let j = remark_exact(&x, &swap, 1e-9).unwrap();
        assert_abs_diff_eq!(j.prob(&[1, 1]), 1.0, epsilon = 1e-15);
        assert_eq!(j.len(), 1);
    }

    #[test]
    fn remark_identity_reproduces_input() {
        let x = MultivariateLaw::ProductPoisson { lambda: vec![1.0, 1.0] };
        let j = remark_exact(&x, &SubstochasticMatrix::identity(2), 1e-10).unwrap();
        for (y, p) in j.iter() {
            assert_abs_diff_eq!(x.pmf(y).unwrap(), p, epsilon = 1e-9);
        }
    }

    #[test]
    fn remark_one_column_recovers_marking() {
        let x = UnivariateLaw::Poisson { lambda: 1.5 };
        let a = ProbVector::new(vec![0.4, 0.3]).unwrap();
        let marked = mark_exact(&x, &a, 1e-10).unwrap();
        let remarked = remark_exact(
            &x.to_multivariate().unwrap(),
            &SubstochasticMatrix::from_prob_vector(&a),
            1e-10,
        )
        .unwrap();
        assert!(max_joint_gap(&marked, &remarked) <= 1e-9);
    }

    #[test]
    fn summarize_point_mass() {
        let mut mass = BTreeMap::new();
        mass.insert(vec![2u64, 3], 1.0);
        let j = JointPmf::new(2, mass, 0.0).unwrap();
        let s = summarize(&j);
        assert_eq!(s.mean, vec![2.0, 3.0]);
        assert_abs_diff_eq!(s.disp[0][0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.disp[1][1], -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.disp[0][1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn summarize_poisson_product_is_equidispersed() {
        let x = MultivariateLaw::ProductPoisson { lambda: vec![1.0, 1.0] };
        let s = summarize(&x.truncate(1e-12).unwrap());
        for row in &s.disp {
            for &v in row {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn marked_binomial_covariance() {
        let x = UnivariateLaw::Binomial { n: 10, p: 0.5 };
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let s = summarize(&mark_exact(&x, &a, 1e-12).unwrap());
        assert_abs_diff_eq!(s.disp[0][1], -0.625, epsilon = 1e-9);
    }

    #[test]
    fn factorial_moment_cases() {
        let mut mass = BTreeMap::new();
        mass.insert(vec![3u64, 2], 1.0);
        let j = JointPmf::new(2, mass, 0.0).unwrap();
        assert_abs_diff_eq!(
            factorial_moment_exact(&j, &MultiIndex::new(vec![0, 0])),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            factorial_moment_exact(&j, &MultiIndex::new(vec![2, 1])),
            12.0,
            epsilon = 1e-15
        );

        let marked = mark_exact(
            &UnivariateLaw::Poisson { lambda: 2.0 },
            &ProbVector::new(vec![0.5, 0.5]).unwrap(),
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(
            factorial_moment_exact(&marked, &MultiIndex::new(vec![1, 1])),
            1.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn fmgf_exact_cases() {
        let mut mass = BTreeMap::new();
        mass.insert(vec![1u64, 1], 1.0);
        let j = JointPmf::new(2, mass, 0.0).unwrap();
        assert_abs_diff_eq!(fmgf_exact(&j, &[1.0, 1.0]), 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fmgf_exact(&j, &[0.0, 0.0]), 1.0, epsilon = 1e-15);

        let marked = mark_exact(
            &UnivariateLaw::Binomial { n: 2, p: 0.5 },
            &ProbVector::new(vec![0.4, 0.6]).unwrap(),
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(fmgf_exact(&marked, &[1.0, 1.0]), 2.25, epsilon = 1e-9);
    }

    #[test]
    fn fmgf_grid_agrees_with_single_evaluations() {
        let marked = mark_exact(
            &UnivariateLaw::Poisson { lambda: 1.5 },
            &ProbVector::new(vec![0.4, 0.3]).unwrap(),
            1e-10,
        )
        .unwrap();
        let ts: Vec<Vec<f64>> = [-0.5, 0.0, 0.25]
            .iter()
            .flat_map(|&t0| [-0.25, 0.5].iter().map(move |&t1| vec![t0, t1]))
            .collect();
        let grid = fmgf_exact_grid(&marked, &ts);
        for (t, g) in ts.iter().zip(&grid) {
            assert_abs_diff_eq!(fmgf_exact(&marked, t), *g, epsilon = 1e-12);
        }
    }

    #[test]
    fn independence_trichotomy_cases() {
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let po = mark_exact(&UnivariateLaw::Poisson { lambda: 2.0 }, &a, 1e-12).unwrap();
        assert!(independence_check(&po, 1e-8));

        let bin = mark_exact(&UnivariateLaw::Binomial { n: 2, p: 0.5 }, &a, 1e-12).unwrap();
        assert!(!independence_check(&bin, 1e-8));

        // Equidispersed two-point law: uncorrelated but dependent.
        let two = finite(&[(0, 1.0 / 3.0), (3, 2.0 / 3.0)]);
        let j = mark_exact(&two, &a, 1e-12).unwrap();
        assert!(!independence_check(&j, 1e-8));
        let s = summarize(&j);
        assert!(s.disp[0][1].abs() <= 1e-9);
    }

    #[test]
    fn mass_accounting_holds() {
        let x = UnivariateLaw::Poisson { lambda: 2.5 };
        let a = ProbVector::new(vec![0.3, 0.5]).unwrap();
        let j = mark_exact(&x, &a, 1e-10).unwrap();
        let total = j.total_mass() + j.tail_bound();
        assert!((total - 1.0).abs() <= 1e-9);
        assert!(j.tail_bound() <= 1e-10);
    }
}
