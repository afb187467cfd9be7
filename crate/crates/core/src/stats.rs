//! Rank-based discriminability analysis of AU summary features.
//!
//! Each of the 100 whole-video features (20 AUs × mean, std, slope, range,
//! zcr) is compared between A/H and non-A/H videos with a two-sided
//! Mann-Whitney U test: mid-ranks for ties, tie-corrected variance, and a
//! 0.5 continuity correction. Effect size is `|Z| / √N`; significance uses a
//! Bonferroni threshold `α / m`.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{Dataset, ACTION_UNITS, NUM_AUS};
use crate::error::{Error, Result};
use crate::window::{video_summary, Stat, VideoSummary};

/// Core Mann-Whitney quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U₁ = R₁ − n₁(n₁+1)/2` for the first sample.
    pub u1: f64,
    /// `n₁n₂ − U₁`
    pub u2: f64,
    /// `min(U₁, U₂)`
    pub u: f64,
    /// Tie-corrected null variance of `U₁`.
    pub variance: f64,
    /// Continuity-corrected standard score, positive when the first sample
    /// ranks higher.
    pub z: f64,
    pub p_two_sided: f64,
}

/// Mid-ranks (1-based, ties averaged) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        // positions i..j share ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// `Σ (t³ − t)` over tie groups of the pooled sample.
fn tie_term(pooled: &[f64]) -> f64 {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        sum += t * t * t - t;
        i = j;
    }
    sum
}

fn u1_of(ranks: &[f64], n1: usize) -> f64 {
    let r1: f64 = ranks[..n1].iter().sum();
    r1 - (n1 * (n1 + 1)) as f64 / 2.0
}

/// Standard normal two-sided tail `2Φ(−|z|)`.
pub fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    let (n1, n2) = (x.len(), y.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Degenerate(format!(
            "Mann-Whitney needs two non-empty samples, got {n1} and {n2}"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("Mann-Whitney input is not finite".into()));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let nn = (n1 * n2) as f64;
    let u1 = u1_of(&ranks, n1);
    let u2 = nn - u1;
    let n = (n1 + n2) as f64;
    let variance = if n1 + n2 > 1 {
        nn / 12.0 * ((n + 1.0) - tie_term(&pooled) / (n * (n - 1.0)))
    } else {
        0.0
    };
    let (z, p) = if variance > 0.0 {
        let dev = u1 - nn / 2.0;
        let z = dev.signum() * (dev.abs() - 0.5).max(0.0) / variance.sqrt();
        (z, two_sided_normal_p(z))
    } else {
        // every pooled value identical
        (0.0, 1.0)
    };
    Ok(MannWhitney {
        u1,
        u2,
        u: u1.min(u2),
        variance,
        z,
        p_two_sided: p,
    })
}

/// Largest pooled size [`exact_mwu_p`] will enumerate.
pub const EXACT_MAX_N: usize = 12;

/// Exact permutation p-value: over all `C(N, n₁)` assignments of the pooled
/// values to the first group, the fraction whose `U₁` is at least as far
/// into the observed tail, doubled and capped at 1.
pub fn exact_mwu_p(x: &[f64], y: &[f64]) -> Result<f64> {
    let (n1, n2) = (x.len(), y.len());
    let n = n1 + n2;
    if n > EXACT_MAX_N {
        return Err(Error::Degenerate(format!(
            "exact enumeration limited to {EXACT_MAX_N} pooled values, got {n}"
        )));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::Degenerate("exact test needs two non-empty samples".into()));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let observed = u1_of(&ranks, n1);
    let mean = (n1 * n2) as f64 / 2.0;
    let lower = observed <= mean;
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let (mut hits, mut total) = (0u64, 0u64);
    // mid-ranks are multiples of 0.5, so sums compare exactly
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let r1: f64 = (0..n).filter(|b| mask & (1 << b) != 0).map(|b| ranks[b]).sum();
        let u = r1 - offset;
        total += 1;
        if (lower && u <= observed) || (!lower && u >= observed) {
            hits += 1;
        }
    }
    Ok((2.0 * hits as f64 / total as f64).min(1.0))
}

/// `|Z| / √N`, capped at 1.
pub fn rank_biserial(z: f64, n: usize) -> f64 {
    (z.abs() / (n as f64).sqrt()).min(1.0)
}

/// `p_i < α / m` for each of the `m` p-values.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len().max(1) as f64;
    p_values.iter().map(|&p| p < alpha / m).collect()
}

/// One row of the feature ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    /// Column index into [`ACTION_UNITS`].
    pub au: usize,
    pub metric: Stat,
    /// Mean of the per-video statistic over A/H videos.
    pub mean_pos: f64,
    /// Mean over non-A/H videos.
    pub mean_neg: f64,
    pub u: f64,
    pub z: f64,
    pub p: f64,
    pub r: f64,
    pub significant: bool,
}

impl StatResult {
    pub fn au_code(&self) -> &'static str {
        ACTION_UNITS[self.au].0
    }

    pub fn name(&self) -> String {
        format!("{}_{}", self.au_code(), self.metric)
    }

    /// e.g. `AU06 (cheek raiser) & std & 0.076 vs 0.059 & 0.186`
    pub fn table_row(&self) -> String {
        let (code, desc) = ACTION_UNITS[self.au];
        format!(
            "{code} ({desc}) & {} & {:.3} vs {:.3} & {:.3}",
            self.metric, self.mean_pos, self.mean_neg, self.r
        )
    }
}

pub const BONFERRONI_ALPHA: f64 = 0.05;

/// Mann-Whitney ranking of all AU summary features between A/H and non-A/H
/// videos, sorted by effect size (descending) then feature name.
pub fn rank_features(dataset: &Dataset) -> Result<Vec<StatResult>> {
    let summaries: Vec<(bool, VideoSummary)> = dataset
        .samples
        .iter()
        .map(|s| {
            video_summary(s.visual.view())
                .map(|v| (s.label, v))
                .map_err(|e| Error::Ingest {
                    id: s.id.clone(),
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    rank_summaries(&summaries)
}

pub fn rank_summaries(summaries: &[(bool, VideoSummary)]) -> Result<Vec<StatResult>> {
    let n_pos = summaries.iter().filter(|(l, _)| *l).count();
    let n_neg = summaries.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Config(format!(
            "feature ranking needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let n = summaries.len();
    let mut rows = Vec::with_capacity(NUM_AUS * Stat::SUMMARY.len());
    for au in 0..NUM_AUS {
        for &metric in &Stat::SUMMARY {
            let (pos, neg): (Vec<_>, Vec<_>) = summaries.iter().partition(|(l, _)| *l);
            let pos: Vec<f64> = pos.iter().map(|(_, s)| s.get(au, metric)).collect();
            let neg: Vec<f64> = neg.iter().map(|(_, s)| s.get(au, metric)).collect();
            let mw = mann_whitney_u(&pos, &neg)?;
            rows.push(StatResult {
                au,
                metric,
                mean_pos: pos.iter().sum::<f64>() / pos.len() as f64,
                mean_neg: neg.iter().sum::<f64>() / neg.len() as f64,
                u: mw.u,
                z: mw.z,
                p: mw.p_two_sided,
                r: rank_biserial(mw.z, n),
                significant: false,
            });
        }
    }
    let flags = bonferroni(&rows.iter().map(|r| r.p).collect::<Vec<_>>(), BONFERRONI_ALPHA);
    for (row, f) in rows.iter_mut().zip(flags) {
        row.significant = f;
    }
    rows.sort_by(|a, b| {
        b.r.partial_cmp(&a.r)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.name().cmp(&b.name()))
    });
    Ok(rows)
}

/// CSV report: `feature,metric,mean_pos,mean_neg,U,Z,p,r,significant`.
pub fn report_csv(rows: &[StatResult]) -> String {
    let mut out = String::from("feature,metric,mean_pos,mean_neg,U,Z,p,r,significant\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.au_code(),
            r.metric,
            r.mean_pos,
            r.mean_neg,
            r.u,
            r.z,
            r.p,
            r.r,
            r.significant
        )
        .unwrap();
    }
    out
}
