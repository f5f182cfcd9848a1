//! Deterministic synthetic stand-in for a marker-based tactile sensor.
//!
//! A flat membrane carries an `m × m` marker grid. Each contact pushes markers
//! radially outward with a tilt profile `(r/σ)·exp(−r²/2σ²)` scaled by the
//! normalized depth; contributions from several contacts add as vectors. The
//! displaced markers are rasterized as anti-aliased discs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{encode_heatmap, kernel_sigma, ContactPoint, ContactSet, GridMapping, HeatmapGrid, KernelParams};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Nominal dual-indenter separations, 6.5 mm to 12.0 mm in 0.5 mm steps.
pub fn sweep_separations() -> Vec<f64> {
    (0..12).map(|i| 6.5 + 0.5 * i as f64).collect()
}

/// Tip-height levels of the stepped indenters, 0.0 mm to 3.0 mm in 0.5 mm steps.
pub fn tip_height_levels() -> Vec<f64> {
    (0..=6).map(|i| 0.5 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Markers per side.
    pub marker_grid: usize,
    pub image_resolution: usize,
    pub channels: usize,
    pub marker_disc_radius_px: f64,
    /// Peak-scale marker deflection in pixels at full depth.
    pub deflection_gain_px: f64,
    pub pixel_noise_sigma: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            marker_grid: 13,
            image_resolution: 64,
            channels: 1,
            marker_disc_radius_px: 1.2,
            deflection_gain_px: 3.0,
            pixel_noise_sigma: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, mapping: &GridMapping) -> Result<()> {
        if self.marker_grid == 0 || self.image_resolution == 0 || self.channels == 0 {
            return Err(Error::Config("simulator extents must be positive".into()));
        }
        let spacing_px = self.image_resolution as f64 / self.marker_grid as f64;
        if !(self.marker_disc_radius_px > 0.0) || spacing_px <= 2.0 * self.marker_disc_radius_px {
            return Err(Error::Config(format!(
                "marker spacing {spacing_px:.3} px must exceed the disc diameter"
            )));
        }
        if !(self.deflection_gain_px > 0.0) || !(self.pixel_noise_sigma >= 0.0) {
            return Err(Error::Config("deflection gain must be positive, noise non-negative".into()));
        }
        mapping.validate()
    }

    fn image_mapping(&self, mapping: &GridMapping) -> GridMapping {
        GridMapping {
            resolution: self.image_resolution,
            workspace_side_mm: mapping.workspace_side_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
    /// Distance kept between contacts and the workspace border. `None` means
    /// three kernel widths at the maximum depth.
    pub margin_mm: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            depth_min_mm: 0.5,
            depth_max_mm: 6.0,
            margin_mm: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, k: &KernelParams) -> Result<()> {
        if !(self.depth_min_mm > 0.0 && self.depth_min_mm <= self.depth_max_mm && self.depth_max_mm <= k.d_max_mm) {
            return Err(Error::Config(format!(
                "depth range [{}, {}] must lie within (0, {}]",
                self.depth_min_mm, self.depth_max_mm, k.d_max_mm
            )));
        }
        Ok(())
    }

    pub fn margin(&self, k: &KernelParams) -> Result<f64> {
        match self.margin_mm {
            Some(m) => Ok(m),
            None => Ok(3.0 * kernel_sigma(self.depth_max_mm, k)?),
        }
    }

    /// Half-width of the square region contacts may occupy.
    pub fn inner_half_side(&self, mapping: &GridMapping, k: &KernelParams) -> Result<f64> {
        let h = mapping.half_side_mm() - self.margin(k)?;
        if !(h > 0.0) {
            return Err(Error::Config("margin leaves no usable workspace".into()));
        }
        Ok(h)
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` under `master_seed`; any sample can be regenerated alone.
pub fn sample_seed(master_seed: u64, index: u64) -> u64 {
    mix64(master_seed ^ mix64(index))
}

pub fn sample_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `count` single-contact sets, uniform in position (inside the margin) and depth.
pub fn sample_single_contacts(
    master_seed: u64,
    count: usize,
    cfg: &SamplerConfig,
    mapping: &GridMapping,
    k: &KernelParams,
) -> Result<Vec<ContactSet>> {
    cfg.validate(k)?;
    let half = cfg.inner_half_side(mapping, k)?;
    Ok((0..count)
        .map(|i| {
            let mut rng = sample_rng(sample_seed(master_seed, i as u64));
            vec![random_single(&mut rng, half, cfg)]
        })
        .collect())
}

fn random_single(rng: &mut ChaCha8Rng, half: f64, cfg: &SamplerConfig) -> ContactPoint {
    let x = rng.gen_range(-half..=half);
    let y = rng.gen_range(-half..=half);
    let d = rng.gen_range(cfg.depth_min_mm..=cfg.depth_max_mm);
    ContactPoint::new(x, y, d)
}

/// Rest positions (mm) of the marker grid, at cell centers across the workspace.
pub fn rest_markers(cfg: &SimConfig, mapping: &GridMapping) -> Vec<(f64, f64)> {
    let m = cfg.marker_grid;
    let spacing = mapping.workspace_side_mm / m as f64;
    let h = mapping.half_side_mm();
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            out.push(((j as f64 + 0.5) * spacing - h, (i as f64 + 0.5) * spacing - h));
        }
    }
    out
}

/// Applies the radial tilt field of every contact to the rest positions.
pub fn displace_markers(
    rest: &[(f64, f64)],
    contacts: &[ContactPoint],
    cfg: &SimConfig,
    mapping: &GridMapping,
    k: &KernelParams,
) -> Result<Vec<(f64, f64)>> {
    let gain_mm = cfg.deflection_gain_px * mapping.pixel_pitch_mm();
    let fields = contacts
        .iter()
        .map(|c| Ok((c, kernel_sigma(c.depth_mm, k)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rest
        .iter()
        .map(|&(x, y)| {
            let (mut dx, mut dy) = (0.0, 0.0);
            for &(c, sigma) in &fields {
                let (rx, ry) = (x - c.x_mm, y - c.y_mm);
                let r2 = rx * rx + ry * ry;
                // (r/σ)·exp(−r²/2σ²)·û  ==  exp(−r²/2σ²)/σ · (rx, ry)
                let s = gain_mm * (c.depth_mm / k.d_max_mm) * (-r2 / (2.0 * sigma * sigma)).exp() / sigma;
                dx += s * rx;
                dy += s * ry;
            }
            (x + dx, y + dy)
        })
        .collect())
}

/// Rasterizes markers as anti-aliased discs (coverage ≈ clamp(r + ½ − dist))
/// on a black background, then adds optional Gaussian pixel noise.
pub fn render_image(
    markers_mm: &[(f64, f64)],
    cfg: &SimConfig,
    mapping: &GridMapping,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<f32>> {
    let im = cfg.image_mapping(mapping);
    let res = cfg.image_resolution;
    let rad = cfg.marker_disc_radius_px;
    let reach = (rad + 1.0).ceil() as isize;
    let mut img = vec![0.0f64; res * res];
    for &(x, y) in markers_mm {
        let (pr, pc) = im.mm_to_px_unchecked(x, y);
        let (r0, c0) = (pr.round() as isize, pc.round() as isize);
        for r in r0 - reach..=r0 + reach {
            for c in c0 - reach..=c0 + reach {
                if r < 0 || c < 0 || r >= res as isize || c >= res as isize {
                    continue;
                }
                let d = (r as f64 - pr).hypot(c as f64 - pc);
                let cov = (rad + 0.5 - d).clamp(0.0, 1.0);
                let cell = &mut img[r as usize * res + c as usize];
                if cov > *cell {
                    *cell = cov;
                }
            }
        }
    }
    if cfg.pixel_noise_sigma > 0.0 {
        let rng = rng.ok_or_else(|| Error::Config("noisy rendering needs an rng".into()))?;
        let normal = Normal::new(0.0, cfg.pixel_noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in img.iter_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    let plane: Vec<f32> = img.into_iter().map(|v| v as f32).collect();
    let mut data = Vec::with_capacity(plane.len() * cfg.channels);
    for _ in 0..cfg.channels {
        data.extend_from_slice(&plane);
    }
    Tensor::from_vec(&[cfg.channels, res, res], data)
}

fn check_inside(contacts: &[ContactPoint], mapping: &GridMapping) -> Result<()> {
    match contacts.iter().find(|c| !mapping.contains(c.x_mm, c.y_mm)) {
        Some(c) => Err(Error::OutsideWorkspace {
            x_mm: c.x_mm,
            y_mm: c.y_mm,
        }),
        None => Ok(()),
    }
}

/// Two equal-depth tips placed symmetrically about `center` along `angle_rad`.
pub fn dual_indenter_contacts(
    center: (f64, f64),
    separation_mm: f64,
    angle_rad: f64,
    depth_mm: f64,
    mapping: &GridMapping,
) -> Result<ContactSet> {
    stepped_dual_contacts(center, separation_mm, angle_rad, [0.0, 0.0], depth_mm, mapping)
}

/// Per-tip depths of a stepped indenter: the tallest tip reaches
/// `base_depth_mm`, every other tip is shallower by its height deficit. Tips
/// that do not reach `min_depth_mm` are reported as `None`.
pub fn stepped_tip_depths(heights_mm: &[f64], base_depth_mm: f64, min_depth_mm: f64) -> Vec<Option<f64>> {
    let top = heights_mm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    heights_mm
        .iter()
        .map(|&h| {
            let d = base_depth_mm - (top - h);
            (d >= min_depth_mm).then_some(d)
        })
        .collect()
}

/// Dual indenter whose two tips may differ in height.
pub fn stepped_dual_contacts(
    center: (f64, f64),
    separation_mm: f64,
    angle_rad: f64,
    heights_mm: [f64; 2],
    base_depth_mm: f64,
    mapping: &GridMapping,
) -> Result<ContactSet> {
    let (ux, uy) = (angle_rad.cos(), angle_rad.sin());
    let half = 0.5 * separation_mm;
    let tips = [
        (center.0 - half * ux, center.1 - half * uy),
        (center.0 + half * ux, center.1 + half * uy),
    ];
    build_tips(&tips, &heights_mm, base_depth_mm, mapping)
}

/// Three tips at 120° spacing on a circle of `layout_radius_mm`.
pub fn triple_indenter_contacts(
    center: (f64, f64),
    angle_rad: f64,
    tip_heights_mm: [f64; 3],
    base_depth_mm: f64,
    layout_radius_mm: f64,
    mapping: &GridMapping,
) -> Result<ContactSet> {
    let tips: Vec<(f64, f64)> = (0..3)
        .map(|i| {
            let a = angle_rad + 2.0 * PI * i as f64 / 3.0;
            (center.0 + layout_radius_mm * a.cos(), center.1 + layout_radius_mm * a.sin())
        })
        .collect();
    build_tips(&tips, &tip_heights_mm, base_depth_mm, mapping)
}

/// Shallowest depth that counts as an indentation.
pub const MIN_VALID_DEPTH_MM: f64 = 0.5;

fn build_tips(tips: &[(f64, f64)], heights: &[f64], base_depth_mm: f64, mapping: &GridMapping) -> Result<ContactSet> {
    let depths = stepped_tip_depths(heights, base_depth_mm, MIN_VALID_DEPTH_MM);
    let contacts: ContactSet = tips
        .iter()
        .zip(depths)
        .filter_map(|(&(x, y), d)| d.map(|d| ContactPoint::new(x, y, d)))
        .collect();
    if contacts.is_empty() {
        return Err(Error::EmptyContacts);
    }
    check_inside(&contacts, mapping)?;
    Ok(contacts)
}

/// Kind of contact scenario a sample was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// No contact; the undeformed marker grid.
    None,
    Single,
    /// Equal-depth dual indenter at a random separation in [6.5, 12] mm.
    Dual,
    /// Stepped triple indenter with random tip heights.
    Triple,
    /// Equal-depth dual indenter at each nominal sweep separation.
    DualSweep,
    /// Stepped dual indenter with random tip heights.
    DualDepth,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::None,
        ScenarioKind::Single,
        ScenarioKind::Dual,
        ScenarioKind::Triple,
        ScenarioKind::DualSweep,
        ScenarioKind::DualDepth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::None => "none",
            ScenarioKind::Single => "single",
            ScenarioKind::Dual => "dual",
            ScenarioKind::Triple => "triple",
            ScenarioKind::DualSweep => "dual_sweep",
            ScenarioKind::DualDepth => "dual_depth",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario kind {s:?}")))
    }
}

/// Sample counts per scenario kind, e.g. `single:5000,dual:1000,triple:1000`.
/// For `dual_sweep` the count is trials per separation (12 separations).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ScenarioSpec {
    pub counts: Vec<(ScenarioKind, usize)>,
}

impl ScenarioSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let mut counts: Vec<(ScenarioKind, usize)> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, n) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("scenario entry {part:?} is not kind:count")))?;
            let kind = ScenarioKind::parse(k.trim())?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad count in {part:?}")))?;
            if counts.iter().any(|(k, _)| *k == kind) {
                return Err(Error::Config(format!("scenario {k} listed twice")));
            }
            counts.push((kind, n));
        }
        if counts.is_empty() {
            return Err(Error::Config("empty scenario spec".into()));
        }
        Ok(Self { counts })
    }

    pub fn single(n: usize) -> Self {
        Self {
            counts: vec![(ScenarioKind::Single, n)],
        }
    }

    /// Samples in generation order: kinds in listed order, indices ascending.
    pub fn plan(&self) -> Vec<PlannedSample> {
        let mut out = Vec::new();
        for &(kind, n) in &self.counts {
            match kind {
                ScenarioKind::DualSweep => {
                    for sep in sweep_separations() {
                        for _ in 0..n {
                            out.push(PlannedSample {
                                kind,
                                separation_mm: Some(sep),
                            });
                        }
                    }
                }
                _ => out.extend((0..n).map(|_| PlannedSample {
                    kind,
                    separation_mm: None,
                })),
            }
        }
        out
    }

    pub fn total(&self) -> usize {
        self.plan().len()
    }

    pub fn to_spec_string(&self) -> String {
        self.counts
            .iter()
            .map(|(k, n)| format!("{}:{n}", k.name()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedSample {
    pub kind: ScenarioKind,
    pub separation_mm: Option<f64>,
}

/// One generated sample: marker image, labels and ground-truth heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub seed: u64,
    pub kind: ScenarioKind,
    pub separation_mm: Option<f64>,
    /// (C, H, W)
    pub image: Tensor<f32>,
    pub contacts: ContactSet,
    pub heatmap: HeatmapGrid,
}

/// Everything needed to turn contacts into samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Simulator {
    pub sim: SimConfig,
    pub sampler: SamplerConfig,
    pub kernel: KernelParams,
    pub mapping: GridMapping,
    /// Circle radius of the triple indenter's tips.
    pub triple_layout_radius_mm: f64,
}

pub const DEFAULT_TRIPLE_LAYOUT_RADIUS_MM: f64 = 5.0;

impl Simulator {
    pub fn new(sim: SimConfig, sampler: SamplerConfig, kernel: KernelParams, mapping: GridMapping) -> Result<Self> {
        let s = Self {
            sim,
            sampler,
            kernel,
            mapping,
            triple_layout_radius_mm: DEFAULT_TRIPLE_LAYOUT_RADIUS_MM,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate(&self.mapping)?;
        self.kernel.validate()?;
        self.sampler.validate(&self.kernel)?;
        self.sampler.inner_half_side(&self.mapping, &self.kernel)?;
        Ok(())
    }

    /// Marker image of a contact set (noise drawn from `rng` when enabled).
    pub fn render_contacts(&self, contacts: &[ContactPoint], rng: Option<&mut ChaCha8Rng>) -> Result<Tensor<f32>> {
        let rest = rest_markers(&self.sim, &self.mapping);
        let moved = displace_markers(&rest, contacts, &self.sim, &self.mapping, &self.kernel)?;
        render_image(&moved, &self.sim, &self.mapping, rng)
    }

    /// Draws the contacts of one planned sample from its own rng.
    pub fn sample_contacts(&self, plan: &PlannedSample, rng: &mut ChaCha8Rng) -> Result<ContactSet> {
        let half = self.sampler.inner_half_side(&self.mapping, &self.kernel)?;
        let (dmin, dmax) = (self.sampler.depth_min_mm, self.sampler.depth_max_mm);
        let inside = |c: &ContactSet| c.iter().all(|p| p.x_mm.abs() <= half && p.y_mm.abs() <= half);
        match plan.kind {
            ScenarioKind::None => Ok(Vec::new()),
            ScenarioKind::Single => Ok(vec![random_single(rng, half, &self.sampler)]),
            ScenarioKind::Dual | ScenarioKind::DualSweep => {
                let sep = match plan.separation_mm {
                    Some(s) => s,
                    None => rng.gen_range(6.5..=12.0),
                };
                let depth = rng.gen_range(dmin..=dmax);
                self.place(rng, half, sep * 0.5, |center, angle| {
                    let c = dual_indenter_contacts(center, sep, angle, depth, &self.mapping)?;
                    Ok(inside(&c).then_some(c))
                })
            }
            ScenarioKind::DualDepth => {
                let sep = rng.gen_range(6.5..=12.0);
                let heights = [random_level(rng), random_level(rng)];
                let base = random_base_depth(rng, &heights, dmin, dmax);
                self.place(rng, half, sep * 0.5, |center, angle| {
                    let c = stepped_dual_contacts(center, sep, angle, heights, base, &self.mapping)?;
                    Ok(inside(&c).then_some(c))
                })
            }
            ScenarioKind::Triple => {
                let heights = [random_level(rng), random_level(rng), random_level(rng)];
                let base = random_base_depth(rng, &heights, dmin, dmax);
                let radius = self.triple_layout_radius_mm;
                self.place(rng, half, radius, |center, angle| {
                    let c = triple_indenter_contacts(center, angle, heights, base, radius, &self.mapping)?;
                    Ok(inside(&c).then_some(c))
                })
            }
        }
    }

    /// Rejection-samples a center and orientation until `make` accepts.
    fn place(
        &self,
        rng: &mut ChaCha8Rng,
        half: f64,
        reach: f64,
        make: impl Fn((f64, f64), f64) -> Result<Option<ContactSet>>,
    ) -> Result<ContactSet> {
        if reach >= half {
            return Err(Error::Config(format!(
                "indenter reach {reach:.2} mm does not fit the {half:.2} mm usable half-width"
            )));
        }
        for _ in 0..10_000 {
            let cx = rng.gen_range(-half..=half);
            let cy = rng.gen_range(-half..=half);
            let angle = rng.gen_range(0.0..PI);
            if let Some(c) = make((cx, cy), angle)? {
                return Ok(c);
            }
        }
        Err(Error::Config("could not place indenter inside the workspace".into()))
    }

    pub fn generate_sample(&self, index: usize, seed: u64, plan: &PlannedSample) -> Result<Sample> {
        let mut rng = sample_rng(seed);
        let contacts = self.sample_contacts(plan, &mut rng)?;
        let image = self.render_contacts(&contacts, Some(&mut rng))?;
        let heatmap = encode_heatmap(&contacts, &self.mapping, &self.kernel)?;
        Ok(Sample {
            index,
            seed,
            kind: plan.kind,
            separation_mm: plan.separation_mm,
            image,
            contacts,
            heatmap,
        })
    }

    /// All samples of `spec`, generated in parallel, returned in index order.
    pub fn generate(&self, master_seed: u64, spec: &ScenarioSpec) -> Result<Vec<Sample>> {
        self.validate()?;
        let plan = spec.plan();
        par::map_range(plan.len(), |i| {
            self.generate_sample(i, sample_seed(master_seed, i as u64), &plan[i])
        })
        .into_iter()
        .collect()
    }
}

fn random_level(rng: &mut ChaCha8Rng) -> f64 {
    let levels = tip_height_levels();
    levels[rng.gen_range(0..levels.len())]
}

/// Base depth such that every tip of a stepped indenter indents at least `dmin`.
fn random_base_depth(rng: &mut ChaCha8Rng, heights: &[f64], dmin: f64, dmax: f64) -> f64 {
    let top = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let low = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let lo = (dmin + (top - low)).min(dmax);
    rng.gen_range(lo..=dmax)
}
