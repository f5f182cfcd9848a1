//! Contact sets ⇄ depth-weighted Gaussian heatmaps.
//!
//! Encoding places one Gaussian per contact whose amplitude is the normalized
//! depth `d / d_max` and whose width follows the Hertzian contact radius of a
//! spherical indenter, widened by a fixed compliance term. Decoding finds
//! local maxima with a maximum filter, refines them to sub-pixel precision and
//! scales the peak height back to millimetres.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};

/// One indentation: planar position and depth along −z, all in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub x_mm: f64,
    pub y_mm: f64,
    pub depth_mm: f64,
}

impl ContactPoint {
    pub fn new(x_mm: f64, y_mm: f64, depth_mm: f64) -> Self {
        Self {
            x_mm,
            y_mm,
            depth_mm,
        }
    }

    pub fn planar_distance(&self, other: &ContactPoint) -> f64 {
        (self.x_mm - other.x_mm).hypot(self.y_mm - other.y_mm)
    }
}

/// One contact scenario (1–3 simultaneous indentations).
pub type ContactSet = Vec<ContactPoint>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    /// Indenter tip radius R.
    pub indenter_radius_mm: f64,
    pub sigma_blur_mm: f64,
    /// Depth that maps to a heatmap value of 1.
    pub d_max_mm: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            indenter_radius_mm: 3.0,
            sigma_blur_mm: 2.0,
            d_max_mm: 6.0,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.indenter_radius_mm, self.sigma_blur_mm, self.d_max_mm]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(Error::Config("kernel parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Affine mapping between workspace millimetres and the square pixel grid.
///
/// Pixel `(row i, col j)` has its center at
/// `x = (j + 0.5)·pitch − L/2`, `y = (i + 0.5)·pitch − L/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridMapping {
    pub resolution: usize,
    pub workspace_side_mm: f64,
}

impl Default for GridMapping {
    fn default() -> Self {
        Self {
            resolution: 64,
            workspace_side_mm: 32.0,
        }
    }
}

impl GridMapping {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || !(self.workspace_side_mm > 0.0) {
            return Err(Error::Config("degenerate grid mapping".into()));
        }
        Ok(())
    }

    pub fn pixel_pitch_mm(&self) -> f64 {
        self.workspace_side_mm / self.resolution as f64
    }

    pub fn half_side_mm(&self) -> f64 {
        0.5 * self.workspace_side_mm
    }

    pub fn contains(&self, x_mm: f64, y_mm: f64) -> bool {
        let h = self.half_side_mm();
        x_mm.abs() <= h && y_mm.abs() <= h
    }

    /// Continuous (row, col) coordinates; pixel centers sit on integers.
    pub fn mm_to_px(&self, x_mm: f64, y_mm: f64) -> Result<(f64, f64)> {
        if !self.contains(x_mm, y_mm) {
            return Err(Error::OutsideWorkspace { x_mm, y_mm });
        }
        Ok(self.mm_to_px_unchecked(x_mm, y_mm))
    }

    pub fn mm_to_px_unchecked(&self, x_mm: f64, y_mm: f64) -> (f64, f64) {
        let p = self.pixel_pitch_mm();
        let h = self.half_side_mm();
        ((y_mm + h) / p - 0.5, (x_mm + h) / p - 0.5)
    }

    /// Inverse of [`mm_to_px`](Self::mm_to_px); returns (x_mm, y_mm).
    pub fn px_to_mm(&self, row: f64, col: f64) -> (f64, f64) {
        let p = self.pixel_pitch_mm();
        let h = self.half_side_mm();
        ((col + 0.5) * p - h, (row + 0.5) * p - h)
    }
}

/// Hertzian contact radius `a = √(R·d)` of a sphere pressed `d` into a flat.
pub fn hertz_contact_radius(radius_mm: f64, depth_mm: f64) -> Result<f64> {
    if depth_mm < 0.0 || depth_mm.is_nan() {
        return Err(Error::Domain(format!("negative indentation depth {depth_mm}")));
    }
    if !(radius_mm > 0.0) {
        return Err(Error::Domain(format!("indenter radius must be positive, got {radius_mm}")));
    }
    Ok((radius_mm * depth_mm).sqrt())
}

/// Kernel width: contact term `a/3` (edge of contact at 3σ) combined in
/// quadrature with the compliance blur.
pub fn kernel_sigma(depth_mm: f64, k: &KernelParams) -> Result<f64> {
    let sigma_contact = hertz_contact_radius(k.indenter_radius_mm, depth_mm)? / 3.0;
    Ok(sigma_contact.hypot(k.sigma_blur_mm))
}

pub fn depth_from_value(value: f64, d_max_mm: f64) -> f64 {
    value * d_max_mm
}

/// Single-channel heatmap with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    values: Vec<f32>,
    mapping: GridMapping,
}

impl HeatmapGrid {
    pub fn zeros(mapping: GridMapping) -> Self {
        Self {
            values: vec![0.0; mapping.resolution * mapping.resolution],
            mapping,
        }
    }

    pub fn from_values(values: Vec<f32>, mapping: GridMapping) -> Result<Self> {
        let n = mapping.resolution * mapping.resolution;
        if values.len() != n {
            return Err(Error::shape(format!(
                "heatmap needs {n} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("heatmap value {v} outside [0, 1]")));
        }
        Ok(Self { values, mapping })
    }

    /// Accepts any tensor holding exactly one grid (e.g. (1,64,64) or (1,1,64,64)).
    pub fn from_tensor(t: &Tensor<f32>, mapping: GridMapping) -> Result<Self> {
        Self::from_values(t.data().to_vec(), mapping)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        let r = self.mapping.resolution;
        Tensor::from_vec(&[1, r, r], self.values.clone()).expect("grid extents are valid")
    }

    pub fn mapping(&self) -> &GridMapping {
        &self.mapping
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn resolution(&self) -> usize {
        self.mapping.resolution
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.mapping.resolution + col]
    }
}

/// Renders a contact set as the pixelwise maximum of its Gaussian kernels,
/// sampled at pixel centers.
pub fn encode_heatmap(contacts: &[ContactPoint], mapping: &GridMapping, k: &KernelParams) -> Result<HeatmapGrid> {
    mapping.validate()?;
    k.validate()?;
    let res = mapping.resolution;
    let mut grid = HeatmapGrid::zeros(*mapping);
    for c in contacts {
        if !mapping.contains(c.x_mm, c.y_mm) {
            return Err(Error::OutsideWorkspace {
                x_mm: c.x_mm,
                y_mm: c.y_mm,
            });
        }
        let sigma = kernel_sigma(c.depth_mm, k)?;
        let amp = (c.depth_mm / k.d_max_mm).clamp(0.0, 1.0);
        let inv = 1.0 / (2.0 * sigma * sigma);
        for row in 0..res {
            for col in 0..res {
                let (x, y) = mapping.px_to_mm(row as f64, col as f64);
                let d2 = (x - c.x_mm).powi(2) + (y - c.y_mm).powi(2);
                let v = (amp * (-d2 * inv).exp()) as f32;
                let cell = &mut grid.values[row * res + col];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
    Ok(grid)
}

/// Peak-extraction knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakParams {
    /// Minimum raw value for a local maximum to count.
    pub threshold: f64,
    /// Odd side length of the maximum-filter window.
    pub footprint: usize,
    /// Candidates closer than this (in pixels) keep only the stronger one.
    pub min_sep_px: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            threshold: 0.06,
            footprint: 5,
            min_sep_px: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakDetection {
    pub x_mm: f64,
    pub y_mm: f64,
    pub depth_mm: f64,
    /// Raw grid value at the discrete maximum.
    pub peak_value: f64,
}

impl PeakDetection {
    pub fn as_contact(&self) -> ContactPoint {
        ContactPoint::new(self.x_mm, self.y_mm, self.depth_mm)
    }
}

/// Sub-pixel offset `(dx, dy)` of a discrete maximum from a separable
/// three-point parabola fit along columns and rows. Border pixels get `(0, 0)`.
pub fn refine_subpixel(h: &HeatmapGrid, row: usize, col: usize) -> (f64, f64) {
    let (dx, dy, _) = refine(h, row, col);
    (dx, dy)
}

fn parabola(vm: f64, v0: f64, vp: f64) -> (f64, f64) {
    let den = vm - 2.0 * v0 + vp;
    if den.abs() <= 1e-12 {
        return (0.0, 0.0);
    }
    let off = (0.5 * (vm - vp) / den).clamp(-0.5, 0.5);
    // height gain of the fitted vertex over v0
    (off, 0.25 * (vp - vm) * off)
}

fn refine(h: &HeatmapGrid, row: usize, col: usize) -> (f64, f64, f64) {
    let res = h.resolution();
    let v0 = h.get(row, col) as f64;
    if row == 0 || col == 0 || row + 1 >= res || col + 1 >= res {
        return (0.0, 0.0, v0);
    }
    let (dx, gx) = parabola(h.get(row, col - 1) as f64, v0, h.get(row, col + 1) as f64);
    let (dy, gy) = parabola(h.get(row - 1, col) as f64, v0, h.get(row + 1, col) as f64);
    (dx, dy, (v0 + gx + gy).clamp(0.0, 1.0))
}

/// Local maxima of `h` (maximum-filter test plus threshold), thinned by
/// minimum separation, refined and depth-scaled. Sorted by descending value.
pub fn extract_peaks(h: &HeatmapGrid, p: &PeakParams, d_max_mm: f64) -> Vec<PeakDetection> {
    let res = h.resolution();
    let half = (p.footprint.max(1) / 2) as isize;
    let mut candidates: Vec<(usize, usize, f32)> = Vec::new();
    for row in 0..res {
        for col in 0..res {
            let v = h.get(row, col);
            if (v as f64) < p.threshold {
                continue;
            }
            let mut is_max = true;
            'window: for dr in -half..=half {
                for dc in -half..=half {
                    let (r, c) = (row as isize + dr, col as isize + dc);
                    if r < 0 || c < 0 || r >= res as isize || c >= res as isize {
                        continue;
                    }
                    if h.get(r as usize, c as usize) > v {
                        is_max = false;
                        break 'window;
                    }
                }
            }
            if is_max {
                candidates.push((row, col, v));
            }
        }
    }
    // stable: equal values keep row-major order
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut kept: Vec<(usize, usize, f32)> = Vec::new();
    for c in candidates {
        let far = kept.iter().all(|k| {
            let dr = k.0 as f64 - c.0 as f64;
            let dc = k.1 as f64 - c.1 as f64;
            dr.hypot(dc) >= p.min_sep_px
        });
        if far {
            kept.push(c);
        }
    }
    kept.into_iter()
        .map(|(row, col, v)| {
            let (dx, dy, refined) = refine(h, row, col);
            let (x_mm, y_mm) = h.mapping().px_to_mm(row as f64 + dy, col as f64 + dx);
            PeakDetection {
                x_mm,
                y_mm,
                depth_mm: depth_from_value(refined, d_max_mm),
                peak_value: v as f64,
            }
        })
        .collect()
}

/// Peak list as CSV (`x_mm,y_mm,depth_mm,peak_value`, six decimals).
pub fn peaks_to_csv(peaks: &[PeakDetection]) -> String {
    let mut s = String::from("x_mm,y_mm,depth_mm,peak_value\n");
    for p in peaks {
        let _ = writeln!(
            s,
            "{:.6},{:.6},{:.6},{:.6}",
            p.x_mm, p.y_mm, p.depth_mm, p.peak_value
        );
    }
    s
}
