//! Procedural side-scan-sonar-like scenes.
//!
//! A scene is a smooth low-frequency seabed return with additive, clamped
//! Gaussian speckle. A mine contributes a bright elliptical highlight (the
//! labelled footprint) and a dark acoustic shadow: a trapezoid cast from the
//! mine along `-insonify_dir`, i.e. away from the sonar. Conical mines are
//! near-circular with a radial intensity taper; cylindrical mines are
//! elongated and evenly lit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MineClass {
    Conical,
    Cylindrical,
    None,
}

impl MineClass {
    pub fn name(self) -> &'static str {
        match self {
            MineClass::Conical => "Conical",
            MineClass::Cylindrical => "Cylindrical",
            MineClass::None => "None",
        }
    }

    pub fn stream(self) -> u64 {
        match self {
            MineClass::Conical => 1,
            MineClass::Cylindrical => 2,
            MineClass::None => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    #[serde(rename = "DDPM")]
    Ddpm,
    #[serde(rename = "DDIM")]
    Ddim,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Original => "Original",
            Provenance::Ddpm => "DDPM",
            Provenance::Ddim => "DDIM",
        }
    }
}

/// Full description of one scene. Pixel coordinates have their origin at
/// the centre of the top-left pixel; `x` grows rightwards, `y` downwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub mine_class: MineClass,
    /// `(x, y)` centre of the highlight ellipse.
    pub mine_center: [f64; 2],
    /// Major and minor semi-axis lengths, pixels.
    pub mine_extent: [f64; 2],
    /// Orientation of the major axis, radians from +x.
    pub mine_angle: f64,
    /// Unit vector from the mine towards the sonar.
    pub insonify_dir: [f64; 2],
    pub highlight_gain: f64,
    pub shadow_len: f64,
    pub speckle_mean: f64,
    pub speckle_std: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Half extents of the highlight ellipse's axis-aligned bounding box.
    pub fn footprint_half_extents(&self) -> (f64, f64) {
        let [a, b] = self.mine_extent;
        let (s, c) = self.mine_angle.sin_cos();
        (
            (a * a * c * c + b * b * s * s).sqrt(),
            (a * a * s * s + b * b * c * c).sqrt(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("scene must have nonzero size"));
        }
        if !(self.speckle_std > 0.0) {
            return Err(Error::config(format!("speckle_std must be > 0, got {}", self.speckle_std)));
        }
        if !(0.0..=1.0).contains(&self.speckle_mean) {
            return Err(Error::config(format!(
                "speckle_mean must lie in [0,1], got {}",
                self.speckle_mean
            )));
        }
        if self.mine_class == MineClass::None {
            return Ok(());
        }
        if !(self.shadow_len >= 0.0) {
            return Err(Error::config(format!("shadow_len must be >= 0, got {}", self.shadow_len)));
        }
        if !(self.highlight_gain > 0.0 && self.highlight_gain <= 1.0) {
            return Err(Error::config(format!(
                "highlight_gain must lie in (0,1], got {}",
                self.highlight_gain
            )));
        }
        let [a, b] = self.mine_extent;
        if !(b >= 1.0 && a >= b) {
            return Err(Error::config(format!(
                "mine_extent must satisfy major >= minor >= 1, got [{a}, {b}]"
            )));
        }
        let [dx, dy] = self.insonify_dir;
        if ((dx * dx + dy * dy).sqrt() - 1.0).abs() > 1e-6 {
            return Err(Error::config("insonify_dir must be a unit vector"));
        }
        let (hx, hy) = self.footprint_half_extents();
        let [cx, cy] = self.mine_center;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if cx - hx < 0.0 || cx + hx > max_x || cy - hy < 0.0 || cy + hy > max_y {
            return Err(Error::OutOfBounds(format!(
                "ellipse at ({cx:.2}, {cy:.2}) with half extents ({hx:.2}, {hy:.2}) leaves the {}x{} image",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Normalized elliptical radius of `(x, y)`; `<= 1` inside the highlight.
    fn ellipse_radius(&self, x: f64, y: f64) -> f64 {
        let [a, b] = self.mine_extent;
        let (s, c) = self.mine_angle.sin_cos();
        let (dx, dy) = (x - self.mine_center[0], y - self.mine_center[1]);
        let u = (dx * c + dy * s) / a;
        let v = (-dx * s + dy * c) / b;
        (u * u + v * v).sqrt()
    }

    /// Exact highlight footprint.
    pub fn footprint(&self) -> Mask {
        if self.mine_class == MineClass::None {
            return Mask::empty(self.width, self.height);
        }
        Mask::from_fn(self.width, self.height, |x, y| {
            self.ellipse_radius(x as f64, y as f64) <= 1.0
        })
    }

    /// Shadow trapezoid (excluding the highlight itself).
    pub fn shadow_region(&self) -> Mask {
        if self.mine_class == MineClass::None || self.shadow_len <= 0.0 {
            return Mask::empty(self.width, self.height);
        }
        let footprint = self.footprint();
        let [a, b] = self.mine_extent;
        let (s, c) = self.mine_angle.sin_cos();
        // Shadow axis u points away from the sonar; v is lateral.
        let (ux, uy) = (-self.insonify_dir[0], -self.insonify_dir[1]);
        let (vx, vy) = (-uy, ux);
        let project = |px: f64, py: f64| {
            let along_major = px * c + py * s;
            let along_minor = -px * s + py * c;
            (a * a * along_major * along_major + b * b * along_minor * along_minor).sqrt()
        };
        let half_u = project(ux, uy);
        let half_v = project(vx, vy);
        let reach = half_u + self.shadow_len;
        Mask::from_fn(self.width, self.height, |x, y| {
            if footprint.get(x, y) {
                return false;
            }
            let (dx, dy) = (x as f64 - self.mine_center[0], y as f64 - self.mine_center[1]);
            let u = dx * ux + dy * uy;
            let v = dx * vx + dy * vy;
            u > 0.0 && u <= reach && v.abs() <= half_v * (1.0 + 0.3 * u / reach)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Image,
    pub mask: Mask,
    pub class: MineClass,
    pub provenance: Provenance,
    pub seed: u64,
}

/// Render a scene. Pure function of `spec`.
pub fn synth_scene(spec: &SceneSpec) -> Result<LabeledImage> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = seed::rng(spec.seed);
    let sigma = spec.speckle_std;

    // Low-frequency seabed field: three random cosines, total amplitude about
    // half the speckle deviation.
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let amp = 0.5 * sigma / (waves.len() as f64 / 2.0).sqrt();
    let field = |x: usize, y: usize| {
        let mut f = spec.speckle_mean;
        for &(fx, fy, phase) in &waves {
            let arg = std::f64::consts::TAU * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64);
            f += amp * (arg + phase).cos() / std::f64::consts::SQRT_2;
        }
        f
    };

    let mask = spec.footprint();
    let shadow = spec.shadow_region();
    let noise = seed::normals(&mut rng, w * h);
    let [a, b] = spec.mine_extent;
    let (sin, cos) = spec.mine_angle.sin_cos();

    let pixels = Image::from_fn(w, h, |x, y| {
        let n = noise[y * w + x];
        let bg = field(x, y);
        let value = if mask.get(x, y) {
            let taper = match spec.mine_class {
                MineClass::Conical => {
                    let r = spec.ellipse_radius(x as f64, y as f64);
                    1.0 - 0.4 * r * r
                }
                _ => {
                    let (dx, dy) = (x as f64 - spec.mine_center[0], y as f64 - spec.mine_center[1]);
                    let along = (dx * cos + dy * sin) / a;
                    let across = (-dx * sin + dy * cos) / b;
                    1.0 - 0.1 * along.abs() - 0.1 * across.abs()
                }
            };
            let floor = bg + 2.0 * sigma;
            floor + spec.highlight_gain * taper * (1.0 - floor).max(0.0) + sigma * n
        } else if shadow.get(x, y) {
            (0.25 * bg).min(bg - 1.5 * sigma).max(0.0) + 0.5 * sigma * n
        } else {
            bg + sigma * n
        };
        value.clamp(0.0, 1.0)
    });

    Ok(LabeledImage {
        pixels,
        mask,
        class: spec.mine_class,
        provenance: Provenance::Original,
        seed: spec.seed,
    })
}

/// Parameter ranges from which random scenes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneRanges {
    pub conical_major: [f64; 2],
    /// Minor/major ratio for conical mines.
    pub conical_aspect: [f64; 2],
    pub cylindrical_major: [f64; 2],
    pub cylindrical_minor: [f64; 2],
    pub highlight_gain: [f64; 2],
    pub shadow_len: [f64; 2],
    pub speckle_mean: [f64; 2],
    pub speckle_std: [f64; 2],
    /// Maximum tilt of the insonification direction away from the x axis.
    pub max_tilt: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            conical_major: [2.5, 3.5],
            conical_aspect: [0.85, 1.0],
            cylindrical_major: [4.5, 6.5],
            cylindrical_minor: [1.6, 2.4],
            highlight_gain: [0.4, 0.8],
            shadow_len: [5.0, 9.0],
            speckle_mean: [0.30, 0.42],
            speckle_std: [0.04, 0.07],
            max_tilt: 0.3,
        }
    }
}

fn uniform(rng: &mut seed::Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random scene generator for a fixed resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneForge {
    pub width: usize,
    pub height: usize,
    pub ranges: SceneRanges,
}

impl Default for SceneForge {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            ranges: SceneRanges::default(),
        }
    }
}

impl SceneForge {
    /// Draw a scene description. Geometry comes from a stream derived from
    /// `seed`; the rendered speckle uses `seed` itself.
    pub fn sample_spec(&self, class: MineClass, seed: u64) -> SceneSpec {
        let r = &self.ranges;
        let mut rng = seed::rng(seed::derive(seed, 0x5ce4e));
        let speckle_mean = uniform(&mut rng, r.speckle_mean);
        let speckle_std = uniform(&mut rng, r.speckle_std);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let tilt = uniform(&mut rng, [-r.max_tilt, r.max_tilt]);
        let insonify_dir = [side * tilt.cos(), tilt.sin()];
        let mut spec = SceneSpec {
            width: self.width,
            height: self.height,
            mine_class: class,
            mine_center: [self.width as f64 / 2.0, self.height as f64 / 2.0],
            mine_extent: [1.0, 1.0],
            mine_angle: 0.0,
            insonify_dir,
            highlight_gain: uniform(&mut rng, r.highlight_gain),
            shadow_len: uniform(&mut rng, r.shadow_len),
            speckle_mean,
            speckle_std,
            seed,
        };
        let (major, minor) = match class {
            MineClass::None => return spec,
            MineClass::Conical => {
                let a = uniform(&mut rng, r.conical_major);
                (a, (a * uniform(&mut rng, r.conical_aspect)).max(1.0))
            }
            MineClass::Cylindrical => {
                let a = uniform(&mut rng, r.cylindrical_major);
                (a, uniform(&mut rng, r.cylindrical_minor).clamp(1.0, a))
            }
        };
        spec.mine_extent = [major, minor];
        spec.mine_angle = uniform(&mut rng, [0.0, std::f64::consts::PI]);
        let (hx, hy) = spec.footprint_half_extents();
        let place = |rng: &mut seed::Rng, half: f64, len: usize| {
            let lo = half + 1.0;
            let hi = len as f64 - 2.0 - half;
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                (len as f64 - 1.0) / 2.0
            }
        };
        spec.mine_center = [place(&mut rng, hx, self.width), place(&mut rng, hy, self.height)];
        spec
    }

    pub fn scene(&self, class: MineClass, seed: u64) -> Result<LabeledImage> {
        synth_scene(&self.sample_spec(class, seed))
    }

    /// `n_per_class` scenes of every listed class, class-major order.
    pub fn synth_dataset(&self, n_per_class: usize, classes: &[MineClass], base_seed: u64) -> Result<Dataset> {
        if n_per_class == 0 {
            return Err(Error::config("n_per_class must be >= 1"));
        }
        let mut items = Vec::with_capacity(n_per_class * classes.len());
        for &class in classes {
            let class_seed = seed::derive(base_seed, class.stream());
            for i in 0..n_per_class {
                items.push(self.scene(class, seed::derive(class_seed, i as u64))?);
            }
        }
        Ok(Dataset {
            seed: base_seed,
            items,
        })
    }
}

/// Scenes drawn with [`SceneForge::default`].
pub fn synth_dataset(n_per_class: usize, classes: &[MineClass], base_seed: u64) -> Result<Dataset> {
    SceneForge::default().synth_dataset(n_per_class, classes, base_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Augment {
    HFlip,
    VFlip,
    IntensityJitter(f64),
    /// Crop the window at `(x, y)` of the given size and resize it back to
    /// the full resolution (nearest neighbour).
    CropResize {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
}

/// Apply `ops` in order. Geometric ops move pixels and mask through the same
/// index map, so `mask(g(img)) == g(mask(img))` exactly.
pub fn augment(img: &LabeledImage, ops: &[Augment]) -> Result<LabeledImage> {
    let mut out = img.clone();
    for op in ops {
        let (w, h) = out.pixels.shape();
        let remap = |src: &dyn Fn(usize, usize) -> (usize, usize), out: &mut LabeledImage| {
            out.pixels = Image::from_fn(w, h, |x, y| {
                let (sx, sy) = src(x, y);
                out.pixels.get(sx, sy)
            });
            out.mask = Mask::from_fn(w, h, |x, y| {
                let (sx, sy) = src(x, y);
                out.mask.get(sx, sy)
            });
        };
        match *op {
            Augment::HFlip => remap(&|x, y| (w - 1 - x, y), &mut out),
            Augment::VFlip => remap(&|x, y| (x, h - 1 - y), &mut out),
            Augment::IntensityJitter(delta) => {
                if !delta.is_finite() || delta.abs() > 1.0 {
                    return Err(Error::config(format!("jitter {delta} outside [-1, 1]")));
                }
                out.pixels = out.pixels.map(|v| (v + delta).clamp(0.0, 1.0));
            }
            Augment::CropResize {
                x: cx,
                y: cy,
                width: cw,
                height: ch,
            } => {
                if cw == 0 || ch == 0 || cx + cw > w || cy + ch > h {
                    return Err(Error::config(format!(
                        "crop {cw}x{ch} at ({cx}, {cy}) outside {w}x{h}"
                    )));
                }
                remap(&|x, y| (cx + x * cw / w, cy + y * ch / h), &mut out);
            }
        }
    }
    if out.mask.is_empty() {
        out.class = MineClass::None;
    }
    Ok(out)
}

/// A random flip/jitter/crop chain. Crops keep the whole footprint in view.
pub fn random_augmentation(img: &LabeledImage, seed: u64) -> Vec<Augment> {
    let mut rng = seed::rng(seed);
    let (w, h) = img.pixels.shape();
    let mut ops = Vec::new();
    if rng.random_bool(0.5) {
        ops.push(Augment::HFlip);
    }
    if rng.random_bool(0.5) {
        ops.push(Augment::VFlip);
    }
    ops.push(Augment::IntensityJitter(rng.random_range(-0.05..0.05)));

    let size = ((w.min(h) as f64) * rng.random_range(0.8..1.0)).round() as usize;
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if img.mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    let range = |lo_box: usize, hi_box: usize, len: usize| {
        let lo = (hi_box + 1).saturating_sub(size);
        let hi = lo_box.min(len - size);
        (lo <= hi).then_some((lo, hi))
    };
    let window = if img.mask.is_empty() {
        Some(((0, w - size), (0, h - size)))
    } else {
        range(x0, x1, w).zip(range(y0, y1, h))
    };
    if let Some(((xl, xh), (yl, yh))) = window {
        ops.push(Augment::CropResize {
            x: rng.random_range(xl..=xh),
            y: rng.random_range(yl..=yh),
            width: size,
            height: size,
        });
    }
    ops
}

/// In-memory labelled image collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub items: Vec<LabeledImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub raw: String,
    pub mask: String,
    pub class: MineClass,
    pub provenance: Provenance,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub entries: Vec<ManifestEntry>,
    pub counts_by_class: BTreeMap<String, usize>,
    pub counts_by_provenance: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn check_counts(&self) -> Result<()> {
        let mut by_class = BTreeMap::new();
        let mut by_prov = BTreeMap::new();
        for e in &self.entries {
            *by_class.entry(e.class.name().to_string()).or_insert(0) += 1;
            *by_prov.entry(e.provenance.name().to_string()).or_insert(0) += 1;
        }
        if by_class != self.counts_by_class || by_prov != self.counts_by_provenance {
            return Err(Error::format("manifest", "counts disagree with entries"));
        }
        Ok(())
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> Vec<Image> {
        self.items.iter().map(|i| i.pixels.clone()).collect()
    }

    pub fn manifest(&self, stem: &str) -> DatasetManifest {
        let (width, height) = self.items.first().map(|i| i.pixels.shape()).unwrap_or((0, 0));
        let entries: Vec<ManifestEntry> = self
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| ManifestEntry {
                image: format!("{stem}_{i:04}.pgm"),
                raw: format!("{stem}_{i:04}.f32"),
                mask: format!("{stem}_{i:04}_mask.pgm"),
                class: item.class,
                provenance: item.provenance,
                seed: item.seed,
            })
            .collect();
        let mut counts_by_class = BTreeMap::new();
        let mut counts_by_provenance = BTreeMap::new();
        for e in &entries {
            *counts_by_class.entry(e.class.name().to_string()).or_insert(0) += 1;
            *counts_by_provenance.entry(e.provenance.name().to_string()).or_insert(0) += 1;
        }
        DatasetManifest {
            seed: self.seed,
            width,
            height,
            entries,
            counts_by_class,
            counts_by_provenance,
        }
    }

    /// Write every image (PGM + raw sidecar), mask and `manifest.json` into
    /// `dir`. Returns the manifest path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest(stem);
        for (item, entry) in self.items.iter().zip(&manifest.entries) {
            item.pixels.write_pgm(&dir.join(&entry.image))?;
            item.pixels.write_raw(&dir.join(&entry.raw))?;
            item.mask.write_pgm(&dir.join(&entry.mask))?;
        }
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Load from a manifest path; pixel values come from the raw sidecar.
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.check_counts()?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let mut items = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let pgm = dir.join(&e.image);
            if !pgm.exists() {
                return Err(Error::format("manifest", format!("missing {}", pgm.display())));
            }
            let pixels = Image::read_raw(&dir.join(&e.raw), manifest.width, manifest.height)?;
            let mask = Mask::read_pgm(&dir.join(&e.mask))?;
            items.push(LabeledImage {
                pixels,
                mask,
                class: e.class,
                provenance: e.provenance,
                seed: e.seed,
            });
        }
        Ok(Dataset {
            seed: manifest.seed,
            items,
        })
    }
}
