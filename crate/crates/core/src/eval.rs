//! Metrics and experiment harnesses.
//!
//! Harnesses take per-sample prediction lists rather than a model, so the same
//! code scores trained networks, the regression baseline and ground-truth
//! heatmaps fed straight through the decoder.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::codec::{extract_peaks, GridMapping, HeatmapGrid, KernelParams, PeakDetection, PeakParams};
use crate::engine::{Architecture, Network, Tensor};
use crate::error::{Error, Result};
use crate::par;
use crate::sim::{sweep_separations, Sample};
use crate::train::image_batch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub peaks: PeakParams,
    /// Matched pairs farther apart than this become a miss plus a false positive.
    pub match_gate_mm: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            peaks: PeakParams::default(),
            match_gate_mm: 5.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_gate_mm > 0.0) {
            return Err(Error::Config("match_gate_mm must be positive".into()));
        }
        if self.peaks.footprint % 2 == 0 || !(self.peaks.threshold >= 0.0) {
            return Err(Error::Config("peak footprint must be odd and threshold non-negative".into()));
        }
        Ok(())
    }
}

/// Something that maps marker images to contact detections.
#[derive(Debug, Clone)]
pub enum Predictor {
    Model(Network<f32>),
    /// Treats the input itself as a heatmap; exercises the decoder alone.
    HeatmapPassthrough,
}

impl Predictor {
    /// Detections for each image of an (N, C, H, W) batch.
    pub fn predict(
        &self,
        images: &Tensor<f32>,
        mapping: &GridMapping,
        kernel: &KernelParams,
        peaks: &PeakParams,
    ) -> Result<Vec<Vec<PeakDetection>>> {
        let [n, c, h, w] = images.dims4()?;
        match self {
            Predictor::HeatmapPassthrough => {
                if c != 1 || h != mapping.resolution || w != mapping.resolution {
                    return Err(Error::shape(format!(
                        "heatmap input must be (1, {r}, {r}), got ({c}, {h}, {w})",
                        r = mapping.resolution
                    )));
                }
                (0..n)
                    .map(|i| {
                        let grid = HeatmapGrid::from_tensor(&images.batch_item(i)?, *mapping)?;
                        Ok(extract_peaks(&grid, peaks, kernel.d_max_mm))
                    })
                    .collect()
            }
            Predictor::Model(net) => predict_contacts(net, images, mapping, kernel, peaks),
        }
    }
}

/// Network forward pass followed by peak decoding. The regression baseline
/// yields exactly one detection per image.
pub fn predict_contacts(
    net: &Network<f32>,
    images: &Tensor<f32>,
    mapping: &GridMapping,
    kernel: &KernelParams,
    peaks: &PeakParams,
) -> Result<Vec<Vec<PeakDetection>>> {
    let out = net.predict(images)?;
    let n = out.shape()[0];
    match net.arch {
        Architecture::Unet(_) => {
            if out.len() / n != mapping.resolution * mapping.resolution {
                return Err(Error::shape("network output does not match the heatmap grid"));
            }
            Ok(par::map_range(n, |i| -> Result<Vec<PeakDetection>> {
                let grid = HeatmapGrid::from_tensor(&out.batch_item(i)?, *mapping)?;
                Ok(extract_peaks(&grid, peaks, kernel.d_max_mm))
            })
            .into_iter()
            .collect::<Result<_>>()?)
        }
        Architecture::Cnn(_) => Ok(out
            .data()
            .chunks_exact(3)
            .map(|v| {
                let depth = v[2] as f64;
                vec![PeakDetection {
                    x_mm: v[0] as f64,
                    y_mm: v[1] as f64,
                    depth_mm: depth,
                    peak_value: depth / kernel.d_max_mm,
                }]
            })
            .collect()),
    }
}

/// Runs `predictor` over samples in chunks to bound memory.
pub fn predict_samples(
    predictor: &Predictor,
    samples: &[&Sample],
    mapping: &GridMapping,
    kernel: &KernelParams,
    peaks: &PeakParams,
) -> Result<Vec<Vec<PeakDetection>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        out.extend(predictor.predict(&image_batch(chunk)?, mapping, kernel, peaks)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisMetrics {
    pub r2: f64,
    pub mae_mm: f64,
    pub rmse_mm: f64,
}

/// `R² = 1 − Σe²/Σ(y−ȳ)²`, MAE and RMSE of `pred` against `truth`.
pub fn axis_metrics(pred: &[f64], truth: &[f64]) -> AxisMetrics {
    assert_eq!(pred.len(), truth.len());
    let n = truth.len() as f64;
    if truth.is_empty() {
        return AxisMetrics {
            r2: f64::NAN,
            mae_mm: f64::NAN,
            rmse_mm: f64::NAN,
        };
    }
    let mean = truth.iter().sum::<f64>() / n;
    let (mut sse, mut sae, mut sst) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        let e = p - t;
        sse += e * e;
        sae += e.abs();
        sst += (t - mean) * (t - mean);
    }
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    AxisMetrics {
        r2,
        mae_mm: sae / n,
        rmse_mm: (sse / n).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub x: AxisMetrics,
    pub y: AxisMetrics,
    pub z: AxisMetrics,
    pub average: AxisMetrics,
    pub n: usize,
    /// Samples that produced no detection; excluded from the metrics.
    pub misses: usize,
}

impl EvalReport {
    pub fn table(&self) -> MetricTable {
        let row = |m: &AxisMetrics| vec![m.r2, m.mae_mm, m.rmse_mm];
        MetricTable {
            columns: vec!["r2".into(), "mae_mm".into(), "rmse_mm".into()],
            rows: vec![
                ("x".into(), row(&self.x)),
                ("y".into(), row(&self.y)),
                ("z".into(), row(&self.z)),
                ("average".into(), row(&self.average)),
            ],
        }
    }

    pub fn to_csv(&self) -> String {
        self.table().to_csv("axis")
    }

    pub fn summary(&self) -> String {
        format!(
            "n={} misses={} | x: R2={:.4} MAE={:.4} RMSE={:.4} | y: R2={:.4} MAE={:.4} RMSE={:.4} | z: R2={:.4} MAE={:.4} RMSE={:.4}",
            self.n, self.misses, self.x.r2, self.x.mae_mm, self.x.rmse_mm, self.y.r2, self.y.mae_mm, self.y.rmse_mm,
            self.z.r2, self.z.mae_mm, self.z.rmse_mm
        )
    }
}

/// Single-contact scoring: the strongest detection is the prediction; x and y
/// come from its position, z from its recovered depth.
pub fn evaluate_single_point(preds: &[Vec<PeakDetection>], samples: &[&Sample]) -> Result<EvalReport> {
    if preds.len() != samples.len() {
        return Err(Error::Schema("prediction and sample counts differ".into()));
    }
    let mut cols: [(Vec<f64>, Vec<f64>); 3] = Default::default();
    let mut misses = 0;
    for (p, s) in preds.iter().zip(samples) {
        let gt = match s.contacts.as_slice() {
            [c] => c,
            _ => {
                return Err(Error::Schema(format!(
                    "sample {} is not a single contact",
                    s.index
                )))
            }
        };
        let Some(best) = p.iter().max_by(|a, b| a.peak_value.total_cmp(&b.peak_value)) else {
            misses += 1;
            continue;
        };
        for (k, (pv, tv)) in [(best.x_mm, gt.x_mm), (best.y_mm, gt.y_mm), (best.depth_mm, gt.depth_mm)]
            .into_iter()
            .enumerate()
        {
            cols[k].0.push(pv);
            cols[k].1.push(tv);
        }
    }
    let [x, y, z] = cols.map(|(p, t)| axis_metrics(&p, &t));
    let average = AxisMetrics {
        r2: (x.r2 + y.r2 + z.r2) / 3.0,
        mae_mm: (x.mae_mm + y.mae_mm + z.mae_mm) / 3.0,
        rmse_mm: (x.rmse_mm + y.rmse_mm + z.rmse_mm) / 3.0,
    };
    Ok(EvalReport {
        x,
        y,
        z,
        average,
        n: samples.len() - misses,
        misses,
    })
}

/// Mean planar distance between the strongest detection and the single truth.
pub fn single_point_position_mae(preds: &[Vec<PeakDetection>], samples: &[&Sample]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, s) in preds.iter().zip(samples) {
        if let (Some(best), [gt]) = (
            p.iter().max_by(|a, b| a.peak_value.total_cmp(&b.peak_value)),
            s.contacts.as_slice(),
        ) {
            sum += (best.x_mm - gt.x_mm).hypot(best.y_mm - gt.y_mm);
            n += 1;
        }
    }
    sum / n as f64
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// (prediction index, ground-truth index)
    pub pairs: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub misses: Vec<usize>,
}

/// Minimum-cost assignment on a rectangular cost matrix (rows ≤ cols);
/// returns the column assigned to each row.
fn hungarian(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    let m = cols;
    let inf = f64::INFINITY;
    // potentials and matching, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Minimum-total-distance pairing of predicted and true planar positions, with
/// pairs beyond `gate_mm` split into a false positive and a miss.
pub fn match_peaks(preds: &[(f64, f64)], gts: &[(f64, f64)], gate_mm: f64) -> MatchResult {
    let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
    let mut raw: Vec<(usize, usize)> = if preds.len() <= gts.len() {
        let cost: Vec<Vec<f64>> = preds.iter().map(|&p| gts.iter().map(|&g| dist(p, g)).collect()).collect();
        hungarian(&cost, gts.len()).into_iter().enumerate().collect()
    } else {
        let cost: Vec<Vec<f64>> = gts.iter().map(|&g| preds.iter().map(|&p| dist(p, g)).collect()).collect();
        hungarian(&cost, preds.len())
            .into_iter()
            .enumerate()
            .map(|(g, p)| (p, g))
            .collect()
    };
    raw.sort_unstable();
    let mut out = MatchResult::default();
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    for (pi, gi) in raw {
        if dist(preds[pi], gts[gi]) <= gate_mm {
            out.pairs.push((pi, gi));
            pred_used[pi] = true;
            gt_used[gi] = true;
        }
    }
    out.false_positives = (0..preds.len()).filter(|&i| !pred_used[i]).collect();
    out.misses = (0..gts.len()).filter(|&i| !gt_used[i]).collect();
    out
}

fn positions_of(p: &[PeakDetection]) -> Vec<(f64, f64)> {
    p.iter().map(|d| (d.x_mm, d.y_mm)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationBin {
    pub separation_mm: f64,
    /// NaN when no trial at this separation produced exactly two peaks.
    pub distance_mae_mm: f64,
    /// Trials that produced exactly two peaks.
    pub n: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoPointReport {
    pub bins: Vec<SeparationBin>,
    pub overall_distance_mae_mm: f64,
    pub mean_position_error_mm: f64,
    pub depth_mae_mm: f64,
    pub valid_pairs: usize,
    pub failures: usize,
}

impl TwoPointReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("separation_mm,distance_mae_mm,n\n");
        for b in &self.bins {
            let _ = writeln!(s, "{:.1},{:.6},{}", b.separation_mm, b.distance_mae_mm, b.n);
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "overall distance MAE {:.4} mm over {} valid trials ({} discrimination failures); mean position error {:.4} mm; depth MAE {:.4} mm",
            self.overall_distance_mae_mm, self.valid_pairs, self.failures, self.mean_position_error_mm, self.depth_mae_mm
        )
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Dual-indenter sweep scoring. A trial counts only when exactly two peaks are
/// detected; otherwise it is a discrimination failure.
pub fn two_point_discrimination(
    preds: &[Vec<PeakDetection>],
    samples: &[&Sample],
    gate_mm: f64,
) -> Result<TwoPointReport> {
    if preds.len() != samples.len() {
        return Err(Error::Schema("prediction and sample counts differ".into()));
    }
    let seps = sweep_separations();
    let mut per_bin: Vec<(Vec<f64>, usize)> = vec![(Vec::new(), 0); seps.len()];
    let (mut all, mut pos, mut depth) = (Vec::new(), Vec::new(), Vec::new());
    for (p, s) in preds.iter().zip(samples) {
        let sep = s
            .separation_mm
            .ok_or_else(|| Error::Schema(format!("sample {} has no nominal separation", s.index)))?;
        let bin = seps
            .iter()
            .position(|&v| (v - sep).abs() < 1e-6)
            .ok_or_else(|| Error::Schema(format!("separation {sep} is not a sweep value")))?;
        if s.contacts.len() != 2 {
            return Err(Error::Schema(format!("sample {} is not a dual contact", s.index)));
        }
        if p.len() != 2 {
            per_bin[bin].1 += 1;
            continue;
        }
        let d = (p[0].x_mm - p[1].x_mm).hypot(p[0].y_mm - p[1].y_mm);
        let e = (d - sep).abs();
        per_bin[bin].0.push(e);
        all.push(e);
        let gts: Vec<(f64, f64)> = s.contacts.iter().map(|c| (c.x_mm, c.y_mm)).collect();
        let m = match_peaks(&positions_of(p), &gts, gate_mm);
        for (pi, gi) in m.pairs {
            let (pp, g) = (&p[pi], &s.contacts[gi]);
            pos.push((pp.x_mm - g.x_mm).hypot(pp.y_mm - g.y_mm));
            depth.push((pp.depth_mm - g.depth_mm).abs());
        }
    }
    let bins: Vec<SeparationBin> = seps
        .iter()
        .zip(&per_bin)
        .map(|(&sep, (errs, fail))| SeparationBin {
            separation_mm: sep,
            distance_mae_mm: mean(errs),
            n: errs.len(),
            failures: *fail,
        })
        .collect();
    let failures = bins.iter().map(|b| b.failures).sum();
    Ok(TwoPointReport {
        bins,
        overall_distance_mae_mm: mean(&all),
        mean_position_error_mm: mean(&pos),
        depth_mae_mm: mean(&depth),
        valid_pairs: all.len(),
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplicityRow {
    pub contacts: usize,
    pub samples: usize,
    /// Samples whose peak count equals the true contact count.
    pub correct_count: usize,
    pub mean_position_error_mm: f64,
    pub mean_depth_error_mm: f64,
    pub matched_pairs: usize,
    pub misses: usize,
    pub false_positives: usize,
}

impl MultiplicityRow {
    pub fn label(&self) -> String {
        match self.contacts {
            1 => "single".into(),
            2 => "dual".into(),
            3 => "triple".into(),
            k => format!("{k}-point"),
        }
    }

    pub fn count_accuracy(&self) -> f64 {
        self.correct_count as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiContactReport {
    pub rows: Vec<MultiplicityRow>,
}

impl MultiContactReport {
    pub fn row(&self, contacts: usize) -> Option<&MultiplicityRow> {
        self.rows.iter().find(|r| r.contacts == contacts)
    }

    pub fn table(&self) -> MetricTable {
        MetricTable {
            columns: vec![
                "samples".into(),
                "correct_count".into(),
                "position_error_mm".into(),
                "depth_error_mm".into(),
                "matched".into(),
                "misses".into(),
                "false_positives".into(),
            ],
            rows: self
                .rows
                .iter()
                .map(|r| {
                    (
                        r.label(),
                        vec![
                            r.samples as f64,
                            r.correct_count as f64,
                            r.mean_position_error_mm,
                            r.mean_depth_error_mm,
                            r.matched_pairs as f64,
                            r.misses as f64,
                            r.false_positives as f64,
                        ],
                    )
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        self.table().to_csv("multiplicity")
    }

    pub fn summary(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{}: {} samples, {:.1}% correct peak count, position error {:.4} mm, depth error {:.4} mm",
                    r.label(),
                    r.samples,
                    100.0 * r.count_accuracy(),
                    r.mean_position_error_mm,
                    r.mean_depth_error_mm
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Position and depth error grouped by true contact count. Errors average
/// over matched pairs of samples with the correct peak count; misses and
/// false positives are counted over every sample.
pub fn multi_contact_eval(
    preds: &[Vec<PeakDetection>],
    samples: &[&Sample],
    gate_mm: f64,
) -> Result<MultiContactReport> {
    if preds.len() != samples.len() {
        return Err(Error::Schema("prediction and sample counts differ".into()));
    }
    #[derive(Default)]
    struct Acc {
        samples: usize,
        correct: usize,
        pos: Vec<f64>,
        depth: Vec<f64>,
        misses: usize,
        fps: usize,
    }
    let mut groups: BTreeMap<usize, Acc> = BTreeMap::new();
    for (p, s) in preds.iter().zip(samples) {
        let k = s.contacts.len();
        let acc = groups.entry(k).or_default();
        acc.samples += 1;
        let gts: Vec<(f64, f64)> = s.contacts.iter().map(|c| (c.x_mm, c.y_mm)).collect();
        let m = match_peaks(&positions_of(p), &gts, gate_mm);
        acc.misses += m.misses.len();
        acc.fps += m.false_positives.len();
        if p.len() == k {
            acc.correct += 1;
            for (pi, gi) in m.pairs {
                let (pp, g) = (&p[pi], &s.contacts[gi]);
                acc.pos.push((pp.x_mm - g.x_mm).hypot(pp.y_mm - g.y_mm));
                acc.depth.push((pp.depth_mm - g.depth_mm).abs());
            }
        }
    }
    Ok(MultiContactReport {
        rows: groups
            .into_iter()
            .map(|(k, a)| MultiplicityRow {
                contacts: k,
                samples: a.samples,
                correct_count: a.correct,
                mean_position_error_mm: mean(&a.pos),
                mean_depth_error_mm: mean(&a.depth),
                matched_pairs: a.pos.len(),
                misses: a.misses,
                false_positives: a.fps,
            })
            .collect(),
    })
}

/// Keyed rows of named metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MetricTable {
    pub fn to_csv(&self, key_header: &str) -> String {
        let mut s = format!("{key_header},{}\n", self.columns.join(","));
        for (k, vals) in &self.rows {
            let v: Vec<String> = vals.iter().map(|x| format!("{x:.6}")).collect();
            let _ = writeln!(s, "{k},{}", v.join(","));
        }
        s
    }
}

/// Side-by-side CSV of two tables with identical row keys and columns.
pub fn compare_models(name_a: &str, a: &MetricTable, name_b: &str, b: &MetricTable) -> Result<String> {
    if a.columns != b.columns {
        return Err(Error::Schema(format!(
            "metric columns differ: {:?} vs {:?}",
            a.columns, b.columns
        )));
    }
    let keys_a: Vec<&str> = a.rows.iter().map(|r| r.0.as_str()).collect();
    let keys_b: Vec<&str> = b.rows.iter().map(|r| r.0.as_str()).collect();
    if keys_a != keys_b {
        return Err(Error::Schema(format!("row keys differ: {keys_a:?} vs {keys_b:?}")));
    }
    let mut s = format!("key,metric,{name_a},{name_b},delta\n");
    for ((k, va), (_, vb)) in a.rows.iter().zip(&b.rows) {
        for ((c, x), y) in a.columns.iter().zip(va).zip(vb) {
            let _ = writeln!(s, "{k},{c},{x:.6},{y:.6},{:.6}", y - x);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ContactPoint;
    use crate::sim::ScenarioKind;
    use proptest::prelude::*;

    fn det(x: f64, y: f64, d: f64) -> PeakDetection {
        PeakDetection {
            x_mm: x,
            y_mm: y,
            depth_mm: d,
            peak_value: d / 6.0,
        }
    }

    fn sample(contacts: Vec<ContactPoint>, sep: Option<f64>) -> Sample {
        let m = GridMapping::default();
        Sample {
            index: 0,
            seed: 0,
            kind: ScenarioKind::Single,
            separation_mm: sep,
            image: Tensor::zeros(&[1, 64, 64]),
            heatmap: HeatmapGrid::zeros(m),
            contacts,
        }
    }

    #[test]
    fn perfect_predictions_give_perfect_metrics() {
        let ss: Vec<Sample> = (0..10)
            .map(|i| sample(vec![ContactPoint::new(i as f64 - 5.0, 0.3 * i as f64, 0.5 + 0.5 * i as f64)], None))
            .collect();
        let refs: Vec<&Sample> = ss.iter().collect();
        let preds: Vec<Vec<PeakDetection>> = ss
            .iter()
            .map(|s| vec![det(s.contacts[0].x_mm, s.contacts[0].y_mm, s.contacts[0].depth_mm)])
            .collect();
        let r = evaluate_single_point(&preds, &refs).unwrap();
        for m in [r.x, r.y, r.z, r.average] {
            assert_eq!((m.r2, m.mae_mm, m.rmse_mm), (1.0, 0.0, 0.0));
        }
        assert_eq!(r.table().rows.len(), 4);
        assert!(r.to_csv().starts_with("axis,r2,mae_mm,rmse_mm\nx,1.000000,"));
    }

    #[test]
    fn constant_predictor_has_nonpositive_r2() {
        let truth: Vec<f64> = (0..20).map(|i| (i as f64).sin() * 3.0).collect();
        for c in [-1.0, 0.0, 0.7, 5.0] {
            assert!(axis_metrics(&vec![c; 20], &truth).r2 <= 0.0);
        }
    }

    #[test]
    fn misses_are_reported_separately() {
        let ss = [
            sample(vec![ContactPoint::new(0.0, 0.0, 1.0)], None),
            sample(vec![ContactPoint::new(1.0, 0.0, 2.0)], None),
        ];
        let refs: Vec<&Sample> = ss.iter().collect();
        let r = evaluate_single_point(&[vec![det(0.0, 0.0, 1.0)], vec![]], &refs).unwrap();
        assert_eq!((r.n, r.misses), (1, 1));
    }

    #[test]
    fn matching_examples() {
        let a = [(0.0, 0.0), (10.0, 0.0)];
        let m = match_peaks(&a, &a, 5.0);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        // crossed: pred 0 is near gt 1
        let m = match_peaks(&[(9.0, 0.0), (1.0, 0.0)], &a, 5.0);
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
        let m = match_peaks(&[(0.2, 0.0)], &a, 5.0);
        assert_eq!((m.pairs, m.misses, m.false_positives), (vec![(0, 0)], vec![1], vec![]));
        let m = match_peaks(&[(0.0, 6.0)], &[(0.0, 0.0)], 5.0);
        assert_eq!((m.pairs.len(), m.misses, m.false_positives), (0, vec![0], vec![0]));
        assert_eq!(match_peaks(&[], &a, 5.0).misses, vec![0, 1]);
    }

    fn brute_force_cost(p: &[(f64, f64)], g: &[(f64, f64)]) -> f64 {
        fn rec(p: &[(f64, f64)], g: &[(f64, f64)], used: &mut Vec<bool>, i: usize) -> f64 {
            if i == p.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..g.len() {
                if !used[j] {
                    used[j] = true;
                    let c = (p[i].0 - g[j].0).hypot(p[i].1 - g[j].1) + rec(p, g, used, i + 1);
                    best = best.min(c);
                    used[j] = false;
                }
            }
            best
        }
        if p.len() <= g.len() {
            rec(p, g, &mut vec![false; g.len()], 0)
        } else {
            rec(g, p, &mut vec![false; p.len()], 0)
        }
    }

    fn pts(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 0..=max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn matching_equals_permutation_minimum(p in pts(3), g in pts(3)) {
            let m = match_peaks(&p, &g, f64::INFINITY);
            let cost: f64 = m.pairs.iter().map(|&(i, j)| (p[i].0 - g[j].0).hypot(p[i].1 - g[j].1)).sum();
            prop_assert_eq!(m.pairs.len(), p.len().min(g.len()));
            prop_assert!((cost - brute_force_cost(&p, &g)).abs() < 1e-9);
            let mut pi: Vec<usize> = m.pairs.iter().map(|x| x.0).chain(m.false_positives.iter().copied()).collect();
            let mut gi: Vec<usize> = m.pairs.iter().map(|x| x.1).chain(m.misses.iter().copied()).collect();
            pi.sort();
            gi.sort();
            prop_assert_eq!(pi, (0..p.len()).collect::<Vec<_>>());
            prop_assert_eq!(gi, (0..g.len()).collect::<Vec<_>>());
        }

        #[test]
        fn matching_up_to_eight_is_a_valid_gated_assignment(p in pts(8), g in pts(8)) {
            let m = match_peaks(&p, &g, 5.0);
            for &(i, j) in &m.pairs {
                prop_assert!((p[i].0 - g[j].0).hypot(p[i].1 - g[j].1) <= 5.0);
            }
            prop_assert_eq!(m.pairs.len() + m.false_positives.len(), p.len());
            prop_assert_eq!(m.pairs.len() + m.misses.len(), g.len());
        }

        #[test]
        fn rmse_at_least_mae(v in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40)) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let m = axis_metrics(&p, &t);
            prop_assert!(m.rmse_mm + 1e-12 >= m.mae_mm);
            prop_assert!(m.mae_mm >= 0.0);
            prop_assert!(m.r2 <= 1.0);
        }
    }

    #[test]
    fn two_point_bins_and_perfect_report() {
        let ss: Vec<Sample> = sweep_separations()
            .into_iter()
            .map(|sep| {
                sample(
                    vec![ContactPoint::new(-sep / 2.0, 1.0, 2.0), ContactPoint::new(sep / 2.0, 1.0, 2.0)],
                    Some(sep),
                )
            })
            .collect();
        let refs: Vec<&Sample> = ss.iter().collect();
        let preds: Vec<Vec<PeakDetection>> = ss
            .iter()
            .map(|s| s.contacts.iter().map(|c| det(c.x_mm, c.y_mm, c.depth_mm)).collect())
            .collect();
        let r = two_point_discrimination(&preds, &refs, 5.0).unwrap();
        assert_eq!(r.bins.len(), 12);
        assert_eq!(r.overall_distance_mae_mm, 0.0);
        assert_eq!(r.mean_position_error_mm, 0.0);
        assert_eq!(r.depth_mae_mm, 0.0);
        assert_eq!(r.to_csv().lines().count(), 13);
        let mut bad = preds.clone();
        bad[0].pop();
        let r = two_point_discrimination(&bad, &refs, 5.0).unwrap();
        assert_eq!((r.failures, r.valid_pairs, r.bins[0].n), (1, 11, 0));
    }

    #[test]
    fn multi_contact_rows_split_by_multiplicity() {
        let dual = sample(vec![ContactPoint::new(-4.0, 0.0, 2.0), ContactPoint::new(4.0, 0.0, 3.0)], None);
        let triple = sample(
            vec![
                ContactPoint::new(0.0, 5.0, 1.0),
                ContactPoint::new(4.3, -2.5, 2.0),
                ContactPoint::new(-4.3, -2.5, 3.0),
            ],
            None,
        );
        let refs = [&dual, &triple];
        let exact: Vec<Vec<PeakDetection>> = refs
            .iter()
            .map(|s| s.contacts.iter().map(|c| det(c.x_mm, c.y_mm, c.depth_mm)).collect())
            .collect();
        let r = multi_contact_eval(&exact, &refs, 5.0).unwrap();
        assert_eq!(r.rows.len(), 2);
        for row in &r.rows {
            assert_eq!((row.mean_position_error_mm, row.mean_depth_error_mm), (0.0, 0.0));
            assert_eq!(row.count_accuracy(), 1.0);
        }
        assert_eq!(r.row(2).unwrap().label(), "dual");
        assert_eq!(r.row(3).unwrap().label(), "triple");
        let one = vec![vec![det(-4.0, 0.0, 2.0)], exact[1].clone()];
        let r = multi_contact_eval(&one, &refs, 5.0).unwrap();
        assert_eq!((r.row(2).unwrap().misses, r.row(2).unwrap().correct_count), (1, 0));
    }

    #[test]
    fn compare_models_schema() {
        let a = MetricTable {
            columns: vec!["r2".into()],
            rows: vec![("x".into(), vec![0.5]), ("y".into(), vec![0.25])],
        };
        let csv = compare_models("a", &a, "b", &a).unwrap();
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",0.000000")));
        let mut b = a.clone();
        b.rows.pop();
        assert!(matches!(compare_models("a", &a, "b", &b), Err(Error::Schema(_))));
    }
}
