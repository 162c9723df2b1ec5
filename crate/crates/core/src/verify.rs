//! Built-in verification batteries over randomized parameter grids:
//! closure rules against the enumeration oracle, predicted moments and
//! factorial moments against oracle summaries, FMGF composition against
//! oracle summation, the independence trichotomy, and Monte Carlo
//! consistency of the samplers.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, MultiIndex};
use crate::error::Result;
use crate::laws::{FinitePmf, JointPmf, MomentSummary, MultivariateLaw, ProbVector, UnivariateLaw};
use crate::marking::{self, ClosureRule, SubstochasticMatrix};
use crate::num::format_sig;
use crate::oracle;
use crate::sampler::{self, ChaCha12Rng, McReport, MC_SIGMA_FACTOR};

pub const DEFAULT_BATTERY_SEED: u64 = 20240817;
pub const DEFAULT_CASES_PER_FAMILY: usize = 50;

pub const CLOSURE_TOLERANCE: f64 = 1e-8;
pub const MOMENT_TOLERANCE: f64 = 1e-8;
pub const FMGF_TOLERANCE: f64 = 1e-8;
pub const INDEPENDENCE_TOLERANCE: f64 = 1e-8;
pub const UNCORRELATED_COV_BOUND: f64 = 1e-9;
pub const PINNED_TOLERANCE: f64 = 1e-12;

const CLOSURE_EPS: f64 = 1e-10;
const MOMENT_EPS: f64 = 1e-12;
const FMGF_EPS: f64 = 1e-10;
const INDEPENDENCE_EPS: f64 = 1e-12;
const FACTORIAL_ORDER_MAX: u32 = 4;

/// Outcome of one battery case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub suite: String,
    pub case: String,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CaseOutcome {
    fn measure(suite: &str, case: String, discrepancy: f64, tolerance: f64) -> Self {
        CaseOutcome {
            suite: suite.to_string(),
            case,
            discrepancy,
            tolerance,
            pass: discrepancy <= tolerance,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<12} {}: discrepancy {} (tol {})",
            if self.pass { "PASS" } else { "FAIL" },
            self.suite,
            self.case,
            format_sig(self.discrepancy, 3),
            format_sig(self.tolerance, 3)
        )
    }
}

// ---------------------------------------------------------------------------
// Randomized parameter grids
// ---------------------------------------------------------------------------

fn uniform(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn uniform_u64(rng: &mut ChaCha12Rng, lo: u64, hi: u64) -> u64 {
    rng.random_range(lo..=hi)
}

/// Strictly positive marking probabilities with |a| either saturated at 1 or
/// in [0.3, 0.95].
fn random_prob_vector(rng: &mut ChaCha12Rng, c: usize, full_mass: bool) -> ProbVector {
    let raw: Vec<f64> = (0..c).map(|_| uniform(rng, 0.1, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let target = if full_mass { 1.0 } else { uniform(rng, 0.3, 0.95) };
    ProbVector::new(raw.into_iter().map(|x| x * target / total).collect())
        .expect("scaled entries form a valid probability vector")
}

fn random_matrix(rng: &mut ChaCha12Rng, c: usize, d: usize) -> SubstochasticMatrix {
    let cols: Vec<ProbVector> = (0..d)
        .map(|j| random_prob_vector(rng, c, j % 3 == 0))
        .collect();
    let rows = (0..c)
        .map(|i| (0..d).map(|j| cols[j].get(i)).collect())
        .collect();
    SubstochasticMatrix::new(rows).expect("substochastic by construction")
}

const UNIVARIATE_FAMILIES: [&str; 4] = ["bin", "po", "negbin", "herm"];

fn random_univariate(rng: &mut ChaCha12Rng, family: &str) -> UnivariateLaw {
    match family {
        "bin" => UnivariateLaw::Binomial {
            n: uniform_u64(rng, 1, 12),
            p: uniform(rng, 0.05, 0.95),
        },
        "po" => UnivariateLaw::Poisson {
            lambda: uniform(rng, 0.2, 3.0),
        },
        "negbin" => UnivariateLaw::NegativeBinomial {
            n: uniform_u64(rng, 1, 4),
            q: uniform(rng, 0.05, 0.45),
        },
        "herm" => {
            let mu = uniform(rng, 0.3, 3.0);
            UnivariateLaw::Hermite {
                mu,
                sigma2: mu * uniform(rng, 0.05, 0.95),
            }
        }
        other => unreachable!("unknown family {other}"),
    }
}

const MULTIVARIATE_FAMILIES: [&str; 5] = ["multi", "mpo", "negmulti", "mherm", "jfinite"];

/// Random multivariate law with an enumerable support and a matching matrix.
/// Unbounded families stay at two dimensions to keep re-marking enumeration
/// at desk scale; the bounded multinomial exercises `c, d` up to 3.
fn random_remark_pair(
    rng: &mut ChaCha12Rng,
    family: &str,
) -> (MultivariateLaw, SubstochasticMatrix) {
    let (law, d) = match family {
        "multi" => {
            let d = uniform_u64(rng, 1, 3) as usize;
            (
                MultivariateLaw::Multinomial {
                    n: uniform_u64(rng, 1, 8),
                    p: random_prob_vector(rng, d, false),
                },
                d,
            )
        }
        "mpo" => {
            let d = uniform_u64(rng, 1, 2) as usize;
            (
                MultivariateLaw::ProductPoisson {
                    lambda: (0..d).map(|_| uniform(rng, 0.2, 1.2)).collect(),
                },
                d,
            )
        }
        "negmulti" => {
            let d = uniform_u64(rng, 1, 2) as usize;
            let raw: Vec<f64> = (0..d).map(|_| uniform(rng, 0.1, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            let target = uniform(rng, 0.1, 0.35);
            (
                MultivariateLaw::NegativeMultinomial {
                    n: uniform_u64(rng, 1, 2),
                    q: raw.into_iter().map(|x| x * target / total).collect(),
                },
                d,
            )
        }
        "mherm" => {
            let d = uniform_u64(rng, 1, 2) as usize;
            (
                MultivariateLaw::MultivariateHermite {
                    alpha: (0..d).map(|_| uniform(rng, 0.0, 0.6)).collect(),
                    beta: (0..d)
                        .map(|_| (0..d).map(|_| uniform(rng, 0.0, 0.3)).collect())
                        .collect(),
                },
                d,
            )
        }
        "jfinite" => {
            let d = uniform_u64(rng, 1, 2) as usize;
            let points = uniform_u64(rng, 2, 5);
            let mut mass = std::collections::BTreeMap::new();
            for _ in 0..points {
                let y: Vec<u64> = (0..d).map(|_| uniform_u64(rng, 0, 5)).collect();
                *mass.entry(y).or_insert(0.0) += uniform(rng, 0.1, 1.0);
            }
            let total: f64 = mass.values().sum();
            for v in mass.values_mut() {
                *v /= total;
            }
            (
                MultivariateLaw::JointFinite {
                    pmf: JointPmf::new(d, mass, 0.0).expect("normalized"),
                },
                d,
            )
        }
        other => unreachable!("unknown family {other}"),
    };
    let c = uniform_u64(rng, 1, if family == "multi" { 3 } else { 2 }) as usize;
    let matrix = random_matrix(rng, c, d);
    (law, matrix)
}

fn two_point_equidispersed() -> UnivariateLaw {
    UnivariateLaw::Finite {
        pmf: FinitePmf::from_pairs([(0u64, 1.0 / 3.0), (3, 2.0 / 3.0)]).expect("valid"),
    }
}

// ---------------------------------------------------------------------------
// Closure battery
// ---------------------------------------------------------------------------

/// Closed-form marked and re-marked laws against exact enumeration,
/// pointwise over truncated supports.
pub fn closure_battery(seed: u64, cases_per_family: usize) -> Vec<CaseOutcome> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for family in UNIVARIATE_FAMILIES {
        for i in 0..cases_per_family {
            let c = 1 + i % 3;
            let a = random_prob_vector(&mut rng, c, i % 5 == 0);
            let x = random_univariate(&mut rng, family);
            let marked = marking::mark_with_eps(&x, &a, CLOSURE_EPS).expect("valid inputs");
            assert_ne!(marked.rule, ClosureRule::Oracle, "named family has a rule");
            let exact = oracle::mark_exact(&x, &a, CLOSURE_EPS).expect("valid inputs");
            let closure_joint = marked.law.truncate(CLOSURE_EPS).expect("valid law");
            let disc = oracle::max_joint_gap(&exact, &closure_joint);
            out.push(CaseOutcome::measure(
                "closure",
                format!("mark {x} a={:?} [{}]", a.as_slice(), marked.rule),
                disc,
                CLOSURE_TOLERANCE,
            ));
        }
    }

    // Re-marking closures: product-Poisson and multivariate Hermite.
    let remark_cases = (cases_per_family / 4).max(3);
    for family in ["mpo", "mherm"] {
        for _ in 0..remark_cases {
            let (xlaw, matrix) = random_remark_pair(&mut rng, family);
            let remarked = marking::remark_with_eps(&xlaw, &matrix, CLOSURE_EPS).expect("valid");
            assert_ne!(remarked.rule, ClosureRule::Oracle);
            let exact = oracle::remark_exact(&xlaw, &matrix, CLOSURE_EPS).expect("valid");
            let closure_joint = remarked.law.truncate(CLOSURE_EPS).expect("valid law");
            let disc = oracle::max_joint_gap(&exact, &closure_joint);
            out.push(CaseOutcome::measure(
                "closure",
                format!("remark {xlaw} [{}]", remarked.rule),
                disc,
                CLOSURE_TOLERANCE,
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Moment battery
// ---------------------------------------------------------------------------

fn multi_indices_up_to(c: usize, max_order: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut buf = vec![0u32; c];
    fn rec(buf: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
        if pos + 1 == buf.len() {
            for v in 0..=remaining {
                buf[pos] = v;
                out.push(MultiIndex::new(buf.clone()));
            }
            buf[pos] = 0;
            return;
        }
        for v in 0..=remaining {
            buf[pos] = v;
            rec(buf, pos + 1, remaining - v, out);
        }
        buf[pos] = 0;
    }
    rec(&mut buf, 0, max_order, &mut out);
    out.retain(|k| k.order() > 0);
    out
}

/// Predicted means, dispersion-covariance matrices, and factorial moments
/// (order up to 4) against oracle summaries; includes the re-marking linear
/// transforms and two pinned covariance spot checks.
pub fn moment_battery(seed: u64, cases_per_family: usize) -> Vec<CaseOutcome> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(1));
    let mut out = Vec::new();

    for family in UNIVARIATE_FAMILIES {
        for i in 0..cases_per_family {
            let c = 1 + i % 3;
            let a = random_prob_vector(&mut rng, c, i % 5 == 0);
            let x = random_univariate(&mut rng, family);
            let joint = oracle::mark_exact(&x, &a, MOMENT_EPS).expect("valid inputs");
            let observed = oracle::summarize(&joint);
            let predicted = analysis::predict_marking_moments(&x, &a).expect("valid inputs");
            let mut disc = predicted.max_abs_diff(&observed);
            for k in multi_indices_up_to(c, FACTORIAL_ORDER_MAX) {
                let p = analysis::predict_marking_factorial_moment(&x, &a, &k)
                    .expect("order within cap");
                let o = oracle::factorial_moment_exact(&joint, &k);
                disc = disc.max((p - o).abs());
            }
            out.push(CaseOutcome::measure(
                "moments",
                format!("mark {x} a={:?}", a.as_slice()),
                disc,
                MOMENT_TOLERANCE,
            ));
        }
    }

    let remark_cases = (cases_per_family / 4).max(3);
    for family in MULTIVARIATE_FAMILIES {
        for _ in 0..remark_cases {
            let (xlaw, matrix) = random_remark_pair(&mut rng, family);
            let joint = oracle::remark_exact(&xlaw, &matrix, MOMENT_EPS).expect("valid");
            let observed = oracle::summarize(&joint);
            let predicted =
                analysis::predict_remarking_moments(&xlaw, &matrix).expect("valid inputs");
            out.push(CaseOutcome::measure(
                "moments",
                format!("remark {xlaw} ({}x{})", matrix.nrows(), matrix.ncols()),
                predicted.max_abs_diff(&observed),
                MOMENT_TOLERANCE,
            ));
        }
    }

    // Pinned covariance spot values.
    let bin = analysis::predict_marking_moments(
        &UnivariateLaw::Binomial { n: 10, p: 0.5 },
        &ProbVector::new(vec![0.5, 0.5]).expect("valid"),
    )
    .expect("valid");
    out.push(CaseOutcome::measure(
        "moments",
        "pinned cov: Binomial(10, 0.5), a = (0.5, 0.5) -> -0.625".to_string(),
        (bin.disp[0][1] - (-0.625)).abs(),
        PINNED_TOLERANCE,
    ));
    let nb = analysis::predict_marking_moments(
        &UnivariateLaw::NegativeBinomial { n: 2, q: 0.5 },
        &ProbVector::new(vec![0.3, 0.6]).expect("valid"),
    )
    .expect("valid");
    out.push(CaseOutcome::measure(
        "moments",
        "pinned cov: NegativeBinomial(2, 0.5), a = (0.3, 0.6) -> 0.36".to_string(),
        (nb.disp[0][1] - 0.36).abs(),
        PINNED_TOLERANCE,
    ));
    out
}

// ---------------------------------------------------------------------------
// FMGF battery
// ---------------------------------------------------------------------------

fn fmgf_grid(c: usize) -> Vec<Vec<f64>> {
    const TICKS: [f64; 5] = [-0.5, -0.25, 0.0, 0.25, 0.5];
    let mut out = Vec::new();
    crate::laws::for_each_index(&vec![TICKS.len(); c], &mut |idx, _| {
        out.push(idx.iter().map(|&i| TICKS[i]).collect());
    });
    out
}

/// FMGF composition against oracle summation on the 5^c grid in
/// [-0.5, 0.5]^c, for markings and re-markings.
pub fn fmgf_battery(seed: u64, cases_per_family: usize) -> Vec<CaseOutcome> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(2));
    let mut out = Vec::new();

    for family in UNIVARIATE_FAMILIES {
        for i in 0..cases_per_family {
            let c = 1 + i % 3;
            let a = random_prob_vector(&mut rng, c, i % 5 == 0);
            let x = random_univariate(&mut rng, family);
            let joint = oracle::mark_exact(&x, &a, FMGF_EPS).expect("valid inputs");
            let grid = fmgf_grid(c);
            let observed = oracle::fmgf_exact_grid(&joint, &grid);
            let mut disc = 0.0f64;
            for (t, o) in grid.iter().zip(&observed) {
                let p = analysis::predict_marking_fmgf(&x, &a, t).expect("inside domain");
                disc = disc.max((p - o).abs());
            }
            out.push(CaseOutcome::measure(
                "fmgf",
                format!("mark {x} a={:?}", a.as_slice()),
                disc,
                FMGF_TOLERANCE,
            ));
        }
    }

    let remark_cases = (cases_per_family / 4).max(3);
    for family in MULTIVARIATE_FAMILIES {
        for _ in 0..remark_cases {
            let (xlaw, matrix) = random_remark_pair(&mut rng, family);
            let joint = oracle::remark_exact(&xlaw, &matrix, FMGF_EPS).expect("valid");
            let grid = fmgf_grid(matrix.nrows());
            let observed = oracle::fmgf_exact_grid(&joint, &grid);
            let mut disc = 0.0f64;
            for (t, o) in grid.iter().zip(&observed) {
                let p = analysis::predict_remarking_fmgf(&xlaw, &matrix, t)
                    .expect("inside domain");
                disc = disc.max((p - o).abs());
            }
            out.push(CaseOutcome::measure(
                "fmgf",
                format!("remark {xlaw} ({}x{})", matrix.nrows(), matrix.ncols()),
                disc,
                FMGF_TOLERANCE,
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Independence battery
// ---------------------------------------------------------------------------

/// Independence of marking coordinates holds for Poisson inputs and fails
/// for every other tested family, including the equidispersed two-point law
/// whose coordinates are uncorrelated but dependent.
pub fn independence_battery(seed: u64) -> Vec<CaseOutcome> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(3));
    let mut out = Vec::new();

    for &lambda in &[0.5, 1.5, 3.0] {
        for c in [2usize, 3] {
            let a = random_prob_vector(&mut rng, c, false);
            let x = UnivariateLaw::Poisson { lambda };
            let joint = oracle::mark_exact(&x, &a, INDEPENDENCE_EPS).expect("valid");
            let defect = oracle::independence_defect(&joint);
            out.push(CaseOutcome::measure(
                "independence",
                format!("poisson marking independent: {x} a={:?}", a.as_slice()),
                defect,
                INDEPENDENCE_TOLERANCE,
            ));
        }
    }

    let dependent_cases: Vec<(String, UnivariateLaw)> = vec![
        ("binomial".into(), UnivariateLaw::Binomial { n: 2, p: 0.5 }),
        ("binomial".into(), UnivariateLaw::Binomial { n: 10, p: 0.5 }),
        (
            "negative binomial".into(),
            UnivariateLaw::NegativeBinomial { n: 2, q: 0.5 },
        ),
        ("hermite".into(), UnivariateLaw::Hermite { mu: 2.0, sigma2: 1.0 }),
        ("two-point equidispersed".into(), two_point_equidispersed()),
    ];
    let a = ProbVector::new(vec![0.5, 0.5]).expect("valid");
    for (label, x) in dependent_cases {
        let joint = oracle::mark_exact(&x, &a, INDEPENDENCE_EPS).expect("valid");
        let defect = oracle::independence_defect(&joint);
        // Dependence must be detected: the defect has to clear the tolerance.
        out.push(CaseOutcome {
            suite: "independence".to_string(),
            case: format!("dependence detected: {label} {x}"),
            discrepancy: defect,
            tolerance: INDEPENDENCE_TOLERANCE,
            pass: defect > INDEPENDENCE_TOLERANCE,
        });
    }

    // The two-point law is uncorrelated despite the dependence.
    let joint =
        oracle::mark_exact(&two_point_equidispersed(), &a, INDEPENDENCE_EPS).expect("valid");
    let cov = oracle::summarize(&joint).disp[0][1];
    out.push(CaseOutcome::measure(
        "independence",
        "two-point equidispersed marking is uncorrelated".to_string(),
        cov.abs(),
        UNCORRELATED_COV_BOUND,
    ));
    out
}

// ---------------------------------------------------------------------------
// Monte Carlo battery
// ---------------------------------------------------------------------------

enum McOp {
    Mark(UnivariateLaw, ProbVector),
    Remark(MultivariateLaw, SubstochasticMatrix),
    Law(MultivariateLaw),
}

impl McOp {
    fn predicted(&self) -> Result<MomentSummary> {
        match self {
            McOp::Mark(x, a) => analysis::predict_marking_moments(x, a),
            McOp::Remark(x, m) => analysis::predict_remarking_moments(x, m),
            McOp::Law(law) => law.moment_summary(),
        }
    }

    fn report(&self, n_samples: u64, seed: u64) -> Result<McReport> {
        match self {
            McOp::Mark(x, a) => sampler::mc_marking_report(x, a, n_samples, seed),
            McOp::Remark(x, m) => sampler::mc_remarking_report(x, m, n_samples, seed),
            McOp::Law(law) => sampler::mc_law_report(law, n_samples, seed),
        }
    }
}

fn mc_cases() -> Vec<(String, McOp)> {
    let pv = |v: Vec<f64>| ProbVector::new(v).expect("valid");
    let sm = |rows: Vec<Vec<f64>>| SubstochasticMatrix::new(rows).expect("valid");
    let mherm = marking::mark(
        &UnivariateLaw::Hermite { mu: 2.0, sigma2: 1.0 },
        &pv(vec![0.5, 0.5]),
    )
    .expect("valid")
    .law;
    vec![
        (
            "mark Poisson(6) a=(0.5, 1/3)".into(),
            McOp::Mark(UnivariateLaw::Poisson { lambda: 6.0 }, pv(vec![0.5, 1.0 / 3.0])),
        ),
        (
            "mark Binomial(10, 0.5) a=(0.5, 0.5)".into(),
            McOp::Mark(UnivariateLaw::Binomial { n: 10, p: 0.5 }, pv(vec![0.5, 0.5])),
        ),
        (
            "mark NegativeBinomial(2, 0.5) a=(0.3, 0.6)".into(),
            McOp::Mark(
                UnivariateLaw::NegativeBinomial { n: 2, q: 0.5 },
                pv(vec![0.3, 0.6]),
            ),
        ),
        (
            "mark Hermite(2, 1) a=(0.6, 0.3)".into(),
            McOp::Mark(UnivariateLaw::Hermite { mu: 2.0, sigma2: 1.0 }, pv(vec![0.6, 0.3])),
        ),
        (
            "mark two-point a=(0.5, 0.5)".into(),
            McOp::Mark(two_point_equidispersed(), pv(vec![0.5, 0.5])),
        ),
        (
            "remark ProductPoisson(1, 2)".into(),
            McOp::Remark(
                MultivariateLaw::ProductPoisson { lambda: vec![1.0, 2.0] },
                sm(vec![vec![0.5, 0.25], vec![0.5, 0.5]]),
            ),
        ),
        (
            "remark Multinomial(8, (0.3, 0.5))".into(),
            McOp::Remark(
                MultivariateLaw::Multinomial {
                    n: 8,
                    p: pv(vec![0.3, 0.5]),
                },
                sm(vec![vec![0.6, 0.2], vec![0.3, 0.5]]),
            ),
        ),
        (
            "remark NegativeMultinomial(2, (0.2, 0.25))".into(),
            McOp::Remark(
                MultivariateLaw::NegativeMultinomial {
                    n: 2,
                    q: vec![0.2, 0.25],
                },
                sm(vec![vec![0.5, 0.3], vec![0.2, 0.4]]),
            ),
        ),
        (
            "remark MultivariateHermite from Hermite(2, 1)".into(),
            McOp::Remark(mherm, sm(vec![vec![0.7, 0.2], vec![0.2, 0.7]])),
        ),
        (
            "law Poisson(4)".into(),
            McOp::Law(MultivariateLaw::ProductPoisson { lambda: vec![4.0] }),
        ),
        (
            "law Hermite(2, 1)".into(),
            McOp::Law(MultivariateLaw::MultivariateHermite {
                alpha: vec![1.0],
                beta: vec![vec![0.5]],
            }),
        ),
    ]
}

fn se_ratio(diff: f64, se: f64) -> f64 {
    if diff.abs() <= 1e-12 {
        0.0
    } else {
        diff.abs() / (MC_SIGMA_FACTOR * se)
    }
}

/// Monte Carlo consistency: empirical means and dispersion-covariance
/// entries within four standard errors of predictions, plus bit-identical
/// reports for a repeated seed. The reported discrepancy is the worst
/// |error| / (4 SE) ratio, so the tolerance is 1.
pub fn mc_battery(seed: u64, n_samples: u64) -> Vec<CaseOutcome> {
    let batches = 100u64;
    let batch_n = (n_samples / batches).max(2);
    let mut out = Vec::new();
    for (idx, (name, op)) in mc_cases().into_iter().enumerate() {
        let case_seed = seed.wrapping_add(idx as u64);
        let predicted = op.predicted().expect("valid case");
        let report = op.report(n_samples, case_seed).expect("valid case");
        let twin = op.report(n_samples, case_seed).expect("valid case");
        let identical = serde_json::to_string(&report).expect("serializable")
            == serde_json::to_string(&twin).expect("serializable");

        // Standard errors of the dispersion entries from batch spread.
        let dim = predicted.dim();
        let mut batch_disp: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batches as usize);
        for b in 0..batches {
            let r = op
                .report(batch_n, case_seed.wrapping_add(1000 + b))
                .expect("valid case");
            batch_disp.push(r.disp);
        }
        let disp_se = |i: usize, j: usize| -> f64 {
            let vals: Vec<f64> = batch_disp.iter().map(|d| d[i][j]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var =
                vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
            (var / vals.len() as f64).sqrt()
        };

        let mut worst = 0.0f64;
        for i in 0..dim {
            worst = worst.max(se_ratio(
                report.mean[i] - predicted.mean[i],
                report.std_err_mean[i],
            ));
            for j in i..dim {
                worst = worst.max(se_ratio(
                    report.disp[i][j] - predicted.disp[i][j],
                    disp_se(i, j),
                ));
            }
        }
        out.push(CaseOutcome {
            suite: "mc".to_string(),
            case: format!(
                "{name} ({} samples{})",
                n_samples,
                if identical { "" } else { "; reports differ across runs" }
            ),
            discrepancy: worst,
            tolerance: 1.0,
            pass: worst <= 1.0 && identical,
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Suite dispatch
// ---------------------------------------------------------------------------

/// Suites runnable from the CLI.
pub const SUITES: [&str; 5] = ["closure", "moments", "fmgf", "independence", "all"];

pub fn run_suite(name: &str, seed: u64, cases_per_family: usize) -> Option<Vec<CaseOutcome>> {
    match name {
        "closure" => Some(closure_battery(seed, cases_per_family)),
        "moments" => Some(moment_battery(seed, cases_per_family)),
        "fmgf" => Some(fmgf_battery(seed, cases_per_family)),
        "independence" => Some(independence_battery(seed)),
        "all" => {
            let mut out = closure_battery(seed, cases_per_family);
            out.extend(moment_battery(seed, cases_per_family));
            out.extend(fmgf_battery(seed, cases_per_family));
            out.extend(independence_battery(seed));
            Some(out)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_batteries_pass() {
        for outcome in closure_battery(DEFAULT_BATTERY_SEED, 3) {
            assert!(outcome.pass, "{}", outcome.line());
        }
        for outcome in moment_battery(DEFAULT_BATTERY_SEED, 3) {
            assert!(outcome.pass, "{}", outcome.line());
        }
        for outcome in fmgf_battery(DEFAULT_BATTERY_SEED, 3) {
            assert!(outcome.pass, "{}", outcome.line());
        }
        for outcome in independence_battery(DEFAULT_BATTERY_SEED) {
            assert!(outcome.pass, "{}", outcome.line());
        }
    }

    #[test]
    fn multi_index_enumeration_counts() {
        // Nonzero multi-indices with |k| <= 4 in 2 dims: C(6, 2) - 1 = 14.
        assert_eq!(multi_indices_up_to(2, 4).len(), 14);
        assert_eq!(multi_indices_up_to(1, 4).len(), 4);
    }

    #[test]
    fn suite_dispatch_knows_its_names() {
        for name in SUITES {
            if name != "all" {
                assert!(run_suite(name, 1, 1).is_some());
            }
        }
        assert!(run_suite("bogus", 1, 1).is_none());
    }
}
