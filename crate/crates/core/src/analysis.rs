//! Per-channel statistics of coefficient populations and clean-vs-adversarial
//! discrepancy measures.
//!
//! A channel's population pools every spatial location of every tensor.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Result, SaakError};
use crate::io::write_atomic;
use crate::tensor::CoefficientTensor;

/// Ranges below this are treated as degenerate when normalizing.
pub const DEGENERATE_RANGE: f64 = 1e-12;
pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelStats {
    pub channel: usize,
    pub count: u64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
}

/// Streaming min/max/mean/variance (Welford), mergeable.
#[derive(Debug, Clone, Copy)]
struct Moments {
    count: u64,
    min: f64,
    max: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn new() -> Self {
        Self {
            count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn push(&mut self, v: f64) {
        self.count += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn finish(&self, channel: usize) -> ChannelStats {
        ChannelStats {
            channel,
            count: self.count,
            min: self.min,
            max: self.max,
            mean: self.mean,
            variance: (self.m2 / self.count as f64).max(0.0),
        }
    }
}

fn check_geometry(set: &[CoefficientTensor]) -> Result<(usize, usize, usize)> {
    let first = set.first().ok_or(SaakError::Empty("no coefficient tensors"))?;
    let shape = first.shape();
    if let Some(bad) = set.iter().find(|c| c.shape() != shape) {
        return Err(SaakError::ShapeMismatch(format!(
            "coefficient tensors differ in shape: {:?} vs {:?}",
            shape,
            bad.shape()
        )));
    }
    Ok(shape)
}

/// One [`ChannelStats`] per spectral channel.
pub fn channel_stats(coeffs: &[CoefficientTensor]) -> Result<Vec<ChannelStats>> {
    let (_, _, k) = check_geometry(coeffs)?;
    let mut acc = vec![Moments::new(); k];
    for c in coeffs {
        for px in c.data().chunks_exact(k) {
            for (m, &v) in acc.iter_mut().zip(px) {
                m.push(v);
            }
        }
    }
    Ok(acc.iter().enumerate().map(|(ch, m)| m.finish(ch)).collect())
}

fn check_pairs(clean: &[CoefficientTensor], adv: &[CoefficientTensor]) -> Result<usize> {
    if clean.len() != adv.len() {
        return Err(SaakError::ShapeMismatch(format!(
            "{} clean tensors paired with {} adversarial tensors",
            clean.len(),
            adv.len()
        )));
    }
    let shape = check_geometry(clean)?;
    if check_geometry(adv)? != shape {
        return Err(SaakError::ShapeMismatch("clean and adversarial geometries differ".into()));
    }
    Ok(shape.2)
}

/// Per channel: `sqrt(mean((adv − clean)²))` over pairs and locations.
pub fn channel_rmse(clean: &[CoefficientTensor], adv: &[CoefficientTensor]) -> Result<Vec<f64>> {
    let k = check_pairs(clean, adv)?;
    let mut sq = vec![0.0; k];
    let mut n = 0u64;
    for (c, a) in clean.iter().zip(adv) {
        for (pc, pa) in c.data().chunks_exact(k).zip(a.data().chunks_exact(k)) {
            for ((s, x), y) in sq.iter_mut().zip(pc).zip(pa) {
                let d = y - x;
                *s += d * d;
            }
            n += 1;
        }
    }
    Ok(sq.into_iter().map(|s| (s / n as f64).sqrt()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRmse {
    pub values: Vec<f64>,
    /// Channels whose clean range was degenerate; their value is reported as 0.
    pub flagged: Vec<usize>,
}

/// [`channel_rmse`] divided by the clean population's per-channel range.
pub fn normalized_channel_rmse(clean: &[CoefficientTensor], adv: &[CoefficientTensor]) -> Result<NormalizedRmse> {
    let rmse = channel_rmse(clean, adv)?;
    let stats = channel_stats(clean)?;
    Ok(normalize_by_range(&rmse, &stats))
}

fn normalize_by_range(rmse: &[f64], clean: &[ChannelStats]) -> NormalizedRmse {
    let mut flagged = Vec::new();
    let values = rmse
        .iter()
        .zip(clean)
        .map(|(r, s)| {
            let range = s.max - s.min;
            if range < DEGENERATE_RANGE {
                flagged.push(s.channel);
                0.0
            } else {
                r / range
            }
        })
        .collect();
    NormalizedRmse { values, flagged }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Uniform bins over `[lo, hi]`; a degenerate span is widened by ±0.5.
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(SaakError::InvalidArgument("histogram needs at least one bin".into()));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(SaakError::InvalidArgument(format!("invalid histogram span [{lo}, {hi}]")));
        }
        let (lo, hi) = if hi - lo < DEGENERATE_RANGE { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
        edges.push(hi);
        Ok(Self {
            edges,
            counts: vec![0; bins],
        })
    }

    /// Counts `v`; values outside the span land in the end bins.
    pub fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let lo = self.edges[0];
        let hi = self.edges[bins];
        let pos = ((v - lo) / (hi - lo) * bins as f64).floor();
        let idx = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        };
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Clean and adversarial histograms of one channel on the clean span.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelHistograms {
    pub channel: usize,
    pub clean: Histogram,
    pub adversarial: Histogram,
}

pub fn channel_histograms(
    clean: &[CoefficientTensor],
    adv: &[CoefficientTensor],
    bins: usize,
) -> Result<Vec<ChannelHistograms>> {
    let k = check_pairs(clean, adv)?;
    let stats = channel_stats(clean)?;
    let mut out: Vec<ChannelHistograms> = stats
        .iter()
        .map(|s| {
            let h = Histogram::uniform(s.min, s.max, bins)?;
            Ok(ChannelHistograms {
                channel: s.channel,
                clean: h.clone(),
                adversarial: h,
            })
        })
        .collect::<Result<_>>()?;
    for (c, a) in clean.iter().zip(adv) {
        for (pc, pa) in c.data().chunks_exact(k).zip(a.data().chunks_exact(k)) {
            for (ch, h) in out.iter_mut().enumerate() {
                h.clean.add(pc[ch]);
                h.adversarial.add(pa[ch]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub channel: usize,
    pub clean_min: f64,
    pub clean_max: f64,
    pub clean_var: f64,
    pub adv_min: f64,
    pub adv_max: f64,
    pub adv_var: f64,
    pub rmse: f64,
    pub normalized_rmse: f64,
    pub range_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub channels: usize,
    pub quartile_size: usize,
    /// Mean normalized RMSE over the highest quarter of spectral indices.
    pub top_quartile_mean_normalized_rmse: f64,
    /// Mean normalized RMSE over the lowest quarter of spectral indices.
    pub bottom_quartile_mean_normalized_rmse: f64,
    pub flagged_channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminabilityReport {
    pub rows: Vec<ReportRow>,
    pub summary: ReportSummary,
}

impl DiscriminabilityReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "channel,clean_min,clean_max,clean_var,adv_min,adv_max,adv_var,rmse,normalized_rmse,range_flagged\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.channel,
                r.clean_min,
                r.clean_max,
                r.clean_var,
                r.adv_min,
                r.adv_max,
                r.adv_var,
                r.rmse,
                r.normalized_rmse,
                u8::from(r.range_flagged)
            ));
        }
        s
    }

    /// Writes the per-channel CSV to `path` and the summary as JSON next to
    /// it (`report.csv` → `report.summary.json`).
    pub fn write(&self, path: &Path) -> Result<()> {
        let csv = self.to_csv();
        write_atomic(path, |w| w.write_all(csv.as_bytes()))?;
        let summary = serde_json::to_vec_pretty(&self.summary)?;
        write_atomic(&path.with_extension("summary.json"), |w| w.write_all(&summary))
    }
}

/// Builds the per-channel comparison table and quartile summary.
pub fn discriminability_report(clean: &[CoefficientTensor], adv: &[CoefficientTensor]) -> Result<DiscriminabilityReport> {
    let rmse = channel_rmse(clean, adv)?;
    let cs = channel_stats(clean)?;
    let as_ = channel_stats(adv)?;
    let norm = normalize_by_range(&rmse, &cs);
    let rows: Vec<ReportRow> = (0..rmse.len())
        .map(|ch| ReportRow {
            channel: ch,
            clean_min: cs[ch].min,
            clean_max: cs[ch].max,
            clean_var: cs[ch].variance,
            adv_min: as_[ch].min,
            adv_max: as_[ch].max,
            adv_var: as_[ch].variance,
            rmse: rmse[ch],
            normalized_rmse: norm.values[ch],
            range_flagged: norm.flagged.contains(&ch),
        })
        .collect();
    let k = rows.len();
    let q = (k / 4).max(1);
    let mean = |vals: &[f64]| vals.iter().sum::<f64>() / vals.len() as f64;
    let summary = ReportSummary {
        channels: k,
        quartile_size: q,
        top_quartile_mean_normalized_rmse: mean(&norm.values[k - q..]),
        bottom_quartile_mean_normalized_rmse: mean(&norm.values[..q]),
        flagged_channels: norm.flagged,
    };
    Ok(DiscriminabilityReport { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(h: usize, w: usize, k: usize, data: Vec<f64>) -> CoefficientTensor {
        CoefficientTensor::new(1, Tensor3::new(h, w, k, data).unwrap()).unwrap()
    }

    fn random_set(n: usize, rng: &mut ChaCha8Rng) -> Vec<CoefficientTensor> {
        (0..n)
            .map(|_| tensor(2, 3, 4, (0..24).map(|i| rng.gen_range(-1.0..1.0) * (1 + i % 4) as f64).collect()))
            .collect()
    }

    #[test]
    fn constant_channel() {
        let s = channel_stats(&[tensor(2, 2, 1, vec![2.0; 4])]).unwrap();
        assert_eq!((s[0].min, s[0].max, s[0].mean, s[0].variance), (2.0, 2.0, 2.0, 0.0));
    }

    #[test]
    fn plus_minus_one() {
        let s = channel_stats(&[tensor(1, 2, 1, vec![-1.0, 1.0])]).unwrap();
        assert_eq!(s[0].mean, 0.0);
        assert_eq!(s[0].variance, 1.0);
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = random_set(7, &mut rng);
        let stats = channel_stats(&set).unwrap();
        for ch in 0..4 {
            let vals: Vec<f64> = set.iter().flat_map(|c| c.data().chunks(4).map(move |p| p[ch])).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((stats[ch].mean - mean).abs() <= 1e-12);
            assert!((stats[ch].variance - var).abs() <= 1e-12);
            assert_eq!((stats[ch].min, stats[ch].max), (min, max));
            assert!(stats[ch].min <= stats[ch].mean && stats[ch].mean <= stats[ch].max);
        }
    }

    #[test]
    fn empty_and_mismatched() {
        assert!(channel_stats(&[]).is_err());
        let a = vec![tensor(1, 1, 2, vec![0.0, 0.0])];
        let b = vec![tensor(1, 1, 3, vec![0.0; 3])];
        assert!(channel_rmse(&a, &b).is_err());
        assert!(channel_rmse(&a, &[]).is_err());
    }

    #[test]
    fn rmse_identical_and_single_channel_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clean = random_set(3, &mut rng);
        assert!(channel_rmse(&clean, &clean).unwrap().iter().all(|v| *v == 0.0));
        let adv: Vec<CoefficientTensor> = clean
            .iter()
            .map(|c| {
                let mut d = c.data().to_vec();
                for px in d.chunks_mut(4) {
                    px[2] += -0.3;
                }
                tensor(2, 3, 4, d)
            })
            .collect();
        let r = channel_rmse(&clean, &adv).unwrap();
        assert!((r[2] - 0.3).abs() < 1e-12);
        assert!(r[0] == 0.0 && r[1] == 0.0 && r[3] == 0.0);
    }

    #[test]
    fn rmse_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean = random_set(5, &mut rng);
        let adv = random_set(5, &mut rng);
        let r = channel_rmse(&clean, &adv).unwrap();
        for (ch, &got) in r.iter().enumerate() {
            let mut s = 0.0;
            let mut n = 0.0;
            for (c, a) in clean.iter().zip(&adv) {
                for y in 0..2 {
                    for x in 0..3 {
                        s += (a.get(y, x, ch) - c.get(y, x, ch)).powi(2);
                        n += 1.0;
                    }
                }
            }
            assert!((got - (s / n).sqrt()).abs() <= 1e-14);
        }
    }

    #[test]
    fn normalized_by_range_and_flagging() {
        let clean = vec![tensor(1, 2, 2, vec![0.0, 5.0, 2.0, 5.0])];
        let adv = vec![tensor(1, 2, 2, vec![1.0, 5.0, 3.0, 6.0])];
        let n = normalized_channel_rmse(&clean, &adv).unwrap();
        assert!((n.values[0] - 0.5).abs() < 1e-15);
        assert_eq!(n.values[1], 0.0);
        assert_eq!(n.flagged, vec![1]);
    }

    #[test]
    fn normalized_invariant_to_joint_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let clean = random_set(4, &mut rng);
        let adv = random_set(4, &mut rng);
        let base = normalized_channel_rmse(&clean, &adv).unwrap();
        let scale = |set: &[CoefficientTensor]| -> Vec<CoefficientTensor> {
            set.iter()
                .map(|c| {
                    let mut d = c.data().to_vec();
                    for px in d.chunks_mut(4) {
                        px[1] *= 37.5;
                    }
                    tensor(2, 3, 4, d)
                })
                .collect()
        };
        let scaled = normalized_channel_rmse(&scale(&clean), &scale(&adv)).unwrap();
        for (a, b) in base.values.iter().zip(&scaled.values) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn histograms_conserve_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clean = random_set(4, &mut rng);
        let adv: Vec<CoefficientTensor> = clean
            .iter()
            .map(|c| tensor(2, 3, 4, c.data().iter().map(|v| v * 3.0).collect()))
            .collect();
        for bins in [1, 2, 7, DEFAULT_BINS] {
            let hs = channel_histograms(&clean, &adv, bins).unwrap();
            for h in &hs {
                assert_eq!(h.clean.total(), 24);
                assert_eq!(h.adversarial.total(), 24);
                assert!(h.clean.edges.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn degenerate_histogram_span() {
        let mut h = Histogram::uniform(1.0, 1.0, 4).unwrap();
        h.add(1.0);
        h.add(-100.0);
        h.add(100.0);
        assert_eq!(h.total(), 3);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[3], 1);
        assert!(Histogram::uniform(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn identical_report_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clean = random_set(3, &mut rng);
        let r = discriminability_report(&clean, &clean).unwrap();
        assert!(r.rows.iter().all(|row| row.rmse == 0.0 && row.normalized_rmse == 0.0));
        assert_eq!(r.summary.quartile_size, 1);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("channel,clean_min"));
    }
}
