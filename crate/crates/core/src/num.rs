//! Log-space combinatorics and compensated summation.

use std::sync::OnceLock;

const LN_FACTORIAL_TABLE_SIZE: usize = 4096;

static LN_FACTORIAL_TABLE: OnceLock<Vec<f64>> = OnceLock::new();

/// ln(n!) — table lookup below 4096, log-gamma above.
pub(crate) fn ln_factorial(n: u64) -> f64 {
    let table = LN_FACTORIAL_TABLE.get_or_init(|| {
        let mut table = vec![0.0; LN_FACTORIAL_TABLE_SIZE];
        let mut acc = KahanSum::new();
        for k in 1..LN_FACTORIAL_TABLE_SIZE {
            acc.add((k as f64).ln());
            table[k] = acc.value();
        }
        table
    });
    match usize::try_from(n) {
        Ok(i) if i < LN_FACTORIAL_TABLE_SIZE => table[i],
        _ => statrs::function::gamma::ln_gamma(n as f64 + 1.0),
    }
}

/// ln C(n, k) for k <= n.
pub(crate) fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Falling factorial x(x-1)...(x-k+1) as f64; 1 for k = 0, 0 once k > x.
pub(crate) fn falling_factorial(x: u64, k: u32) -> f64 {
    if u64::from(k) > x {
        return 0.0;
    }
    let mut acc = 1.0;
    for i in 0..u64::from(k) {
        acc *= (x - i) as f64;
    }
    acc
}

/// Kahan-compensated accumulator; iteration order must stay fixed for
/// deterministic totals.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Render `x` with `sig` significant digits, trimming trailing zeros.
/// Used for human-readable CLI tables and error messages; JSON output keeps
/// full precision.
pub fn format_sig(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sig = sig.max(1);
    let mag = x.abs().log10().floor() as i32;
    if mag < -4 || mag >= sig as i32 + 2 {
        let s = format!("{:.*e}", sig - 1, x);
        trim_exp_zeros(&s)
    } else {
        let decimals = (sig as i32 - 1 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_frac_zeros(&s)
    }
}

fn trim_frac_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

fn trim_exp_zeros(s: &str) -> String {
    match s.split_once('e') {
        Some((mantissa, exp)) => format!("{}e{exp}", trim_frac_zeros(mantissa)),
        None => s.to_string(),
    }
}
