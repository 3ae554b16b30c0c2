/// Two-sided exact binomial test p-value for `k` successes in `n` trials
/// under success probability `p`.
///
/// Sums the probabilities of all outcomes no more likely than the observed
/// one (with a relative slack of 1e-7 for ties), working in log space so
/// large `n` does not underflow.
pub fn binomial_two_sided(k: u64, n: u64, p: f64) -> f64 {
    assert!(k <= n, "k must not exceed n");
    assert!((0.0..=1.0).contains(&p), "p must be a probability");
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let log_pmf = log_pmf_table(n, p);
    let threshold = log_pmf[k as usize] + (1.0 + 1e-7f64).ln();
    let selected: Vec<f64> = log_pmf.iter().copied().filter(|&lp| lp <= threshold).collect();
    log_sum_exp(&selected).exp().min(1.0)
}

/// `ln P(X = i)` for `i = 0..=n`, built with the ratio recurrence
/// `P(i+1)/P(i) = (n-i)/(i+1) * p/(1-p)`.
fn log_pmf_table(n: u64, p: f64) -> Vec<f64> {
    let log_odds = p.ln() - (-p).ln_1p();
    let mut table = Vec::with_capacity(n as usize + 1);
    let mut current = n as f64 * (-p).ln_1p();
    table.push(current);
    for i in 0..n {
        current += ((n - i) as f64).ln() - ((i + 1) as f64).ln() + log_odds;
        table.push(current);
    }
    table
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
