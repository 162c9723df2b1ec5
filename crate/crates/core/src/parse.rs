//! The distribution mini-language shared between the library and the CLI.
//!
//! Univariate forms: `bin:n:p`, `po:lambda`, `negbin:n:q`, `herm:mu:sigma2`,
//! and `pmf:@file.json` where the file holds
//! `{"dim": d, "mass": [{"y": [..], "p": ..}, ...]}` with `dim` = 1.
//!
//! Multivariate forms for re-marking inputs: `multi:n:p1,p2`, `mpo:l1,l2`,
//! `negmulti:n:q1,q2`, `mherm:a1,a2:b11,b12;b21,b22`, `pmf:@file.json` of any
//! dimension, plus every univariate form promoted to dimension 1.
//!
//! Probability vectors are comma-separated; matrix rows are separated by
//! semicolons, row-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::laws::{JointPmf, MultivariateLaw, ProbVector, UnivariateLaw};
use crate::marking::SubstochasticMatrix;

fn parse_f64(field: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{field}: expected a real number, got '{s}'")))
}

fn parse_u64(field: &str, s: &str) -> Result<u64> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| Error::Parse(format!("{field}: expected a nonnegative integer, got '{s}'")))
}

fn parse_f64_list(field: &str, s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Err(Error::Parse(format!("{field}: empty list")));
    }
    s.split(',').map(|part| parse_f64(field, part)).collect()
}

/// Parse `0.5,0.3333` into marking probabilities.
pub fn parse_prob_vector(s: &str) -> Result<ProbVector> {
    ProbVector::new(parse_f64_list("a", s)?)
}

/// Parse `0.5,0.25;0.5,0.5` (rows separated by semicolons) into a
/// re-marking matrix.
pub fn parse_matrix(s: &str) -> Result<SubstochasticMatrix> {
    let rows: Result<Vec<Vec<f64>>> = s
        .split(';')
        .map(|row| parse_f64_list("A", row))
        .collect();
    SubstochasticMatrix::new(rows?)
}

/// Load a joint pmf from the JSON file schema.
pub fn load_joint_pmf(path: &Path) -> Result<JointPmf> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("pmf file '{}': {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("pmf file '{}': {e}", path.display())))
}

fn pmf_path(spec: &str, rest: &str) -> Result<std::path::PathBuf> {
    match rest.strip_prefix('@') {
        Some(path) if !path.is_empty() => Ok(path.into()),
        _ => Err(Error::Parse(format!(
            "'{spec}': pmf form is pmf:@file.json"
        ))),
    }
}

/// Parse a univariate distribution spec.
pub fn parse_univariate(spec: &str) -> Result<UnivariateLaw> {
    let (family, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let parts: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(':').collect()
    };
    let expect = |n: usize| -> Result<()> {
        if parts.len() != n {
            return Err(Error::Parse(format!(
                "'{spec}': {family} expects {n} parameter(s), got {}",
                parts.len()
            )));
        }
        Ok(())
    };
    let law = match family {
        "bin" => {
            expect(2)?;
            UnivariateLaw::Binomial {
                n: parse_u64("n", parts[0])?,
                p: parse_f64("p", parts[1])?,
            }
        }
        "po" => {
            expect(1)?;
            UnivariateLaw::Poisson {
                lambda: parse_f64("lambda", parts[0])?,
            }
        }
        "negbin" => {
            expect(2)?;
            UnivariateLaw::NegativeBinomial {
                n: parse_u64("n", parts[0])?,
                q: parse_f64("q", parts[1])?,
            }
        }
        "herm" => {
            expect(2)?;
            UnivariateLaw::Hermite {
                mu: parse_f64("mu", parts[0])?,
                sigma2: parse_f64("sigma2", parts[1])?,
            }
        }
        "pmf" => {
            let joint = load_joint_pmf(&pmf_path(spec, rest)?)?;
            if joint.dim() != 1 {
                return Err(Error::Parse(format!(
                    "'{spec}': univariate pmf file must have dim 1, got {}",
                    joint.dim()
                )));
            }
            UnivariateLaw::Finite {
                pmf: joint.to_finite()?,
            }
        }
        other => {
            return Err(Error::Parse(format!(
                "unknown distribution family '{other}'; expected bin|po|negbin|herm|pmf"
            )))
        }
    };
    law.validate()?;
    Ok(law)
}

/// Parse a multivariate distribution spec; univariate forms promote to
/// dimension 1.
pub fn parse_multivariate(spec: &str) -> Result<MultivariateLaw> {
    let (family, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let law = match family {
        "multi" => {
            let (n, p) = rest.split_once(':').ok_or_else(|| {
                Error::Parse(format!("'{spec}': multi expects multi:n:p1,p2,..."))
            })?;
            MultivariateLaw::Multinomial {
                n: parse_u64("n", n)?,
                p: ProbVector::new(parse_f64_list("p", p)?)?,
            }
        }
        "mpo" => MultivariateLaw::ProductPoisson {
            lambda: parse_f64_list("lambda", rest)?,
        },
        "negmulti" => {
            let (n, q) = rest.split_once(':').ok_or_else(|| {
                Error::Parse(format!("'{spec}': negmulti expects negmulti:n:q1,q2,..."))
            })?;
            MultivariateLaw::NegativeMultinomial {
                n: parse_u64("n", n)?,
                q: parse_f64_list("q", q)?,
            }
        }
        "mherm" => {
            let (alpha, beta) = rest.split_once(':').ok_or_else(|| {
                Error::Parse(format!(
                    "'{spec}': mherm expects mherm:a1,a2:b11,b12;b21,b22"
                ))
            })?;
            let beta_rows: Result<Vec<Vec<f64>>> = beta
                .split(';')
                .map(|row| parse_f64_list("beta", row))
                .collect();
            MultivariateLaw::MultivariateHermite {
                alpha: parse_f64_list("alpha", alpha)?,
                beta: beta_rows?,
            }
        }
        "pmf" => MultivariateLaw::JointFinite {
            pmf: load_joint_pmf(&pmf_path(spec, rest)?)?,
        },
        _ => parse_univariate(spec)?.to_multivariate()?,
    };
    law.validate()?;
    Ok(law)
}
