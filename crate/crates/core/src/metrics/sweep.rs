//! Reconstruction distortion as a function of codebook size.
//!
//! For every `(size, seed)` a codebook is trained on the training rows, each
//! evaluation utterance is quantized and mapped back to centroids, and the
//! reconstruction is scored against the original with frame-synchronous MCD.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::mcd::{mcd, McdOptions};
use super::stats::{anova_oneway, paired_t_test, AnovaResult, TTestResult, Tail};
use super::{MetricsError, Result};
use crate::dsp::FeatureMatrix;
use crate::vq::{invert, quantize, train_codebook, KMeansConfig, Standardizer};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub exclude_c0: bool,
    /// z-score features before clustering; reconstructions are mapped back.
    pub standardize: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let base = KMeansConfig::default();
        Self {
            sizes: vec![8, 16, 32, 64, 128, 256],
            seeds: vec![0, 1, 2],
            max_iters: base.max_iters,
            rel_tol: base.rel_tol,
            exclude_c0: true,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub size: usize,
    pub mean_mcd: f64,
    /// Sample standard deviation over seeds, 0 for a single seed.
    pub std_mcd: f64,
    pub seeds: Vec<u64>,
    /// Utterance-averaged MCD for each seed, in `seeds` order.
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

pub fn codebook_sweep(
    train: &[FeatureMatrix],
    eval: &[FeatureMatrix],
    config: &SweepConfig,
) -> Result<SweepReport> {
    if config.sizes.is_empty() {
        return Err(MetricsError::InvalidSweep("no codebook sizes".into()));
    }
    if config.sizes.windows(2).any(|w| w[0] >= w[1]) || config.sizes[0] == 0 {
        return Err(MetricsError::InvalidSweep(
            "sizes must be positive and strictly increasing".into(),
        ));
    }
    if config.seeds.is_empty() {
        return Err(MetricsError::InvalidSweep("no seeds".into()));
    }
    if train.is_empty() || eval.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let train_all = FeatureMatrix::concat(train)?;
    let max = *config.sizes.last().unwrap();
    if train_all.rows() < max {
        return Err(MetricsError::InvalidSweep(format!(
            "{} training rows cannot support {max} codewords",
            train_all.rows()
        )));
    }
    if let Some(bad) = eval.iter().find(|e| e.dim() != train_all.dim()) {
        return Err(MetricsError::DimensionMismatch(train_all.dim(), bad.dim()));
    }

    let scaler = config.standardize.then(|| Standardizer::fit(&train_all));
    let (train_space, eval_space) = match &scaler {
        Some(s) => (
            s.apply(&train_all)?,
            eval.iter().map(|e| s.apply(e)).collect::<std::result::Result<Vec<_>, _>>()?,
        ),
        None => (train_all.clone(), eval.to_vec()),
    };

    let options = McdOptions {
        exclude_c0: config.exclude_c0,
        use_dtw: false,
    };
    let jobs: Vec<(usize, u64)> = config
        .sizes
        .iter()
        .flat_map(|&k| config.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(k, seed)| -> Result<f64> {
            let kmeans = KMeansConfig {
                k,
                seed,
                max_iters: config.max_iters,
                rel_tol: config.rel_tol,
                restarts: 1,
            };
            let cb = train_codebook(&train_space, &kmeans)?;
            let mut total = 0.0;
            for (orig, coded) in eval.iter().zip(&eval_space) {
                let codes = quantize(coded, &cb)?;
                let mut rec = invert(&codes, &cb, orig.kind)?;
                if let Some(s) = &scaler {
                    rec = s.invert(&rec)?;
                }
                total += mcd(orig, &rec, options)?;
            }
            Ok(total / eval.len() as f64)
        })
        .collect::<Result<_>>()?;

    let n_seeds = config.seeds.len();
    let rows = config
        .sizes
        .iter()
        .zip(scores.chunks_exact(n_seeds))
        .map(|(&size, per_seed)| {
            let mean = per_seed.iter().sum::<f64>() / n_seeds as f64;
            let std = if n_seeds > 1 {
                (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_seeds - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            SweepRow {
                size,
                mean_mcd: mean,
                std_mcd: std,
                seeds: config.seeds.clone(),
                per_seed: per_seed.to_vec(),
            }
        })
        .collect();
    Ok(SweepReport { rows })
}

impl SweepReport {
    pub fn sizes(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.size).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_mcd).collect()
    }

    /// Seed-mean MCD never rises with codebook size (within `tol` dB).
    pub fn is_non_increasing(&self, tol: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_mcd <= w[0].mean_mcd + tol)
    }

    /// Drop in seed-mean MCD going from `from` to `to` codewords.
    pub fn improvement(&self, from: usize, to: usize) -> Option<f64> {
        let m = |k| self.rows.iter().find(|r| r.size == k).map(|r| r.mean_mcd);
        Some(m(from)? - m(to)?)
    }

    /// One-way ANOVA across sizes with seeds as replicates.
    pub fn anova(&self) -> Result<AnovaResult> {
        let groups: Vec<&[f64]> = self.rows.iter().map(|r| r.per_seed.as_slice()).collect();
        anova_oneway(&groups)
    }

    /// One-tailed seed-paired t-tests that each size lowers MCD relative to
    /// the previous one.
    pub fn consecutive_t_tests(&self) -> Vec<(usize, usize, Result<TTestResult>)> {
        self.rows
            .windows(2)
            .map(|w| {
                (
                    w[0].size,
                    w[1].size,
                    paired_t_test(&w[0].per_seed, &w[1].per_seed, Tail::Greater),
                )
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,mean_mcd_db,std_mcd_db,n_seeds,seeds,per_seed_mcd_db\n");
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            let per: Vec<String> = r.per_seed.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{},{},{}",
                r.size,
                r.mean_mcd,
                r.std_mcd,
                r.seeds.len(),
                seeds.join(";"),
                per.join(";")
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:>8}  {:>12}  {:>10}\n", "size", "MCD (dB)", "std");
        for r in &self.rows {
            let _ = writeln!(out, "{:>8}  {:>12.4}  {:>10.4}", r.size, r.mean_mcd, r.std_mcd);
        }
        out
    }

    /// Line plot of seed-mean MCD against log2 codebook size.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 400.0, 60.0);
        let xs: Vec<f64> = self.rows.iter().map(|r| (r.size as f64).log2()).collect();
        let ys = self.means();
        let (x0, x1) = bounds(&xs);
        let lo: Vec<f64> = self.rows.iter().map(|r| r.mean_mcd - r.std_mcd).collect();
        let hi: Vec<f64> = self.rows.iter().map(|r| r.mean_mcd + r.std_mcd).collect();
        let (y0, _) = bounds(&lo);
        let (_, y1) = bounds(&hi);
        let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);

        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"14\">codebook size</text>\n\
             <text x=\"16\" y=\"{cy}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 {cy})\">MCD (dB)</text>\n",
            b = h - pad,
            r = w - pad,
            cx = w / 2.0,
            ty = h - 15.0,
            cy = h / 2.0,
        );
        let points: Vec<String> = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        );
        for (r, &x) in self.rows.iter().zip(&xs) {
            let (cx, cy) = (px(x), py(r.mean_mcd));
            let _ = writeln!(
                svg,
                "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"#1f77b4\"/>\n\
                 <circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"#1f77b4\"/>\n\
                 <text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n\
                 <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{:.2}</text>",
                py(r.mean_mcd - r.std_mcd),
                py(r.mean_mcd + r.std_mcd),
                h - pad + 18.0,
                r.size,
                pad - 6.0,
                cy + 4.0,
                r.mean_mcd
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo).abs() < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}
