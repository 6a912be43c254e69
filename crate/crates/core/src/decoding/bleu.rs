use std::collections::HashMap;

use crate::error::{Error, Result};

fn ngram_counts(toks: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 (single reference, uniform weights, brevity penalty),
/// on a 0..100 scale. Any zero n-gram precision gives 0.
pub fn bleu(hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::validation("BLEU of an empty corpus is undefined"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::validation(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    if matched.iter().any(|&m| m == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / 4.0;
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * log_p.exp())
}

/// Position-wise accuracy of hypotheses against references, counted over
/// reference tokens (missing positions count as errors).
pub fn sequence_token_accuracy(hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::validation("hypothesis and reference counts differ"));
    }
    let total: usize = references.iter().map(|r| r.len()).sum();
    if total == 0 {
        return Err(Error::validation("no reference tokens"));
    }
    let correct: usize = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| h.iter().zip(r).filter(|(a, b)| a == b).count())
        .sum();
    Ok(correct as f64 / total as f64)
}
