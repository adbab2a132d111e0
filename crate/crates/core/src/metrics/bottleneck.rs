use std::collections::BTreeMap;

use super::{MetricsError, Result};
use crate::vq::{CodeSequence, RunLengthSequence};

/// One utterance as seen by the bottleneck diagnostic.
#[derive(Debug, Clone)]
pub struct BottleneckInput {
    pub codes: CodeSequence,
    pub rls: RunLengthSequence,
    pub duration_s: f64,
}

/// How much timing survives duplicate removal. Correlations are `None`
/// when one side has zero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckReport {
    pub n_utterances: usize,
    pub pre_dr_duration_corr: Option<f64>,
    pub post_dr_duration_corr: Option<f64>,
    /// Mean of `T / len(rls)`.
    pub mean_compression_ratio: f64,
    /// Entropy of frame-level codeword usage, in bits.
    pub code_entropy_bits: f64,
    pub codes_used: usize,
}

impl BottleneckReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12}")).unwrap_or_default();
        format!(
            "n_utterances,pre_dr_duration_corr,post_dr_duration_corr,mean_compression_ratio,code_entropy_bits,codes_used\n{},{},{},{:.6},{:.6},{}\n",
            self.n_utterances,
            opt(self.pre_dr_duration_corr),
            opt(self.post_dr_duration_corr),
            self.mean_compression_ratio,
            self.code_entropy_bits,
            self.codes_used
        )
    }

    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
        format!(
            "utterances              {}\n\
             pre-DR length/duration  {}\n\
             post-DR length/duration {}\n\
             compression ratio       {:.3}\n\
             code entropy (bits)     {:.3}\n\
             codes used              {}\n",
            self.n_utterances,
            opt(self.pre_dr_duration_corr),
            opt(self.post_dr_duration_corr),
            self.mean_compression_ratio,
            self.code_entropy_bits,
            self.codes_used
        )
    }
}

/// Pearson correlation, `None` if either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn bottleneck_report(items: &[BottleneckInput]) -> Result<BottleneckReport> {
    if items.len() < 3 {
        return Err(MetricsError::TooFewPoints { found: items.len(), needed: 3 });
    }
    if let Some(empty) = items.iter().position(|u| u.codes.is_empty() || u.rls.is_empty()) {
        return Err(MetricsError::DegenerateVariance(format!("utterance {empty} has no frames")));
    }
    let durations: Vec<f64> = items.iter().map(|u| u.duration_s).collect();
    if durations.iter().all(|&d| d == durations[0]) {
        return Err(MetricsError::DegenerateVariance("all durations are equal".into()));
    }
    let pre: Vec<f64> = items.iter().map(|u| u.codes.len() as f64).collect();
    let post: Vec<f64> = items.iter().map(|u| u.rls.len() as f64).collect();
    let ratio = items
        .iter()
        .map(|u| u.codes.len() as f64 / u.rls.len() as f64)
        .sum::<f64>()
        / items.len() as f64;

    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for u in items {
        for &c in &u.codes.codes {
            *counts.entry(c).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    let entropy = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0);

    Ok(BottleneckReport {
        n_utterances: items.len(),
        pre_dr_duration_corr: pearson(&pre, &durations),
        post_dr_duration_corr: pearson(&post, &durations),
        mean_compression_ratio: ratio,
        code_entropy_bits: entropy,
        codes_used: counts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vq::remove_duplicates;

    fn item(codes: Vec<u32>, duration_s: f64) -> BottleneckInput {
        let codes = CodeSequence::new(codes, 0.01);
        let rls = remove_duplicates(&codes);
        BottleneckInput { codes, rls, duration_s }
    }

    #[test]
    fn framing_is_linear_in_duration() {
        // 25 ms / 10 ms framing at 16 kHz: T = 1 + (N - 400) / 160
        let items: Vec<_> = [400usize + 160 * 20, 400 + 160 * 55, 400 + 160 * 97, 400 + 160 * 130]
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let t = 1 + (n - 400) / 160;
                item((0..t as u32).map(|f| (f / 3 + i as u32) % 7).collect(), n as f64 / 16000.0)
            })
            .collect();
        let r = bottleneck_report(&items).unwrap();
        assert!((r.pre_dr_duration_corr.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.mean_compression_ratio > 2.5);
    }

    #[test]
    fn constant_codes_have_no_post_correlation() {
        let items = vec![item(vec![4; 10], 0.1), item(vec![4; 20], 0.2), item(vec![4; 35], 0.35)];
        let r = bottleneck_report(&items).unwrap();
        assert_eq!(r.post_dr_duration_corr, None);
        assert_eq!(r.code_entropy_bits, 0.0);
        assert_eq!(r.codes_used, 1);
        assert!((r.mean_compression_ratio - (10.0 + 20.0 + 35.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_usage_entropy() {
        let items: Vec<_> = (0..4)
            .map(|u| item((0..128u32).map(|c| (c + u * 5) % 128).collect(), 1.28 + u as f64 * 0.1))
            .collect();
        let r = bottleneck_report(&items).unwrap();
        assert!((r.code_entropy_bits - 7.0).abs() < 1e-12);
        assert_eq!(r.codes_used, 128);
    }

    #[test]
    fn pearson_oracle() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y = [2.0, 1.0, 5.0, 6.0];
        // direct formula: r = cov / (sx * sy) with n - 1 denominators
        let n = 4.0;
        let mx = 3.5;
        let my = 3.5;
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0);
        let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((pearson(&x, &y).unwrap() - cov / (sx * sy)).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), None);
    }

    #[test]
    fn errors() {
        let two = vec![item(vec![1], 0.1), item(vec![1, 2], 0.2)];
        assert!(matches!(bottleneck_report(&two), Err(MetricsError::TooFewPoints { found: 2, .. })));
        let same = vec![item(vec![1], 0.1), item(vec![1, 2], 0.1), item(vec![3], 0.1)];
        assert!(matches!(bottleneck_report(&same), Err(MetricsError::DegenerateVariance(_))));
    }
}
