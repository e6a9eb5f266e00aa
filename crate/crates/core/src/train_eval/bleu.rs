use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Corpus-level BLEU with clipped counts and uniform weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// `bleu[k - 1]` is BLEU-k.
    pub bleu: Vec<f64>,
    /// Clipped n-gram precision for n = 1..=max_n.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuReport {
    pub fn bleu_k(&self, k: usize) -> f64 {
        self.bleu[k - 1]
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// `BP = 1` if `c > r`, else `exp(1 - r / c)`; zero for an empty candidate.
pub fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<BleuReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("bleu", "empty candidate corpus"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(
            "bleu",
            format!("{} candidates for {} references", candidates.len(), references.len()),
        ));
    }
    if max_n == 0 {
        return Err(Error::invalid("bleu", "max_n must be at least 1"));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0, 0);
    for (cand, reference) in candidates.iter().zip(references) {
        c += cand.len();
        r += reference.len();
        for n in 1..=max_n {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(cand, n) {
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    let precisions: Vec<f64> = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let bp = brevity_penalty(c, r);
    let bleu = (1..=max_n)
        .map(|k| {
            let p = &precisions[..k];
            if c == 0 || p.contains(&0.0) {
                0.0
            } else {
                bp * (p.iter().map(|v| v.ln()).sum::<f64>() / k as f64).exp()
            }
        })
        .collect();
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty: bp,
        candidate_len: c,
        reference_len: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn examples() {
        let r = bleu(&[toks("a b c d")], &[toks("a b c d")], 4).unwrap();
        assert_eq!(r.bleu, vec![1.0; 4]);
        assert!((brevity_penalty(2, 4) - (-1f64).exp()).abs() < 1e-12);
        let r = bleu(&[toks("a b x d")], &[toks("a b c d")], 4).unwrap();
        assert_eq!(r.precisions[..3], [0.75, 1.0 / 3.0, 0.0]);
        assert_eq!((r.bleu[2], r.bleu[3]), (0.0, 0.0));
        let r = bleu(&[toks("the the the")], &[toks("the cat")], 1).unwrap();
        assert!((r.precisions[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(bleu::<&str>(&[], &[], 4).is_err());
        let r = bleu(&[vec![]], &[toks("a")], 4).unwrap();
        assert_eq!(r.bleu, vec![0.0; 4]);
    }
}
