//! Synthetic multispectral imagery.
//!
//! A stand-in for land-cover patches: each class owns a spectral signature
//! and a spatial texture frequency. A *scene* is one ground patch with a
//! fixed class, illumination factor and texture phase; rendering a scene at
//! time index `t` shifts every class signature along a per-class drift
//! direction by `t·temporal_drift` and adds fresh sensor noise.
//!
//! Pixels are rounded to `f32` precision at render time so that the `MSIT`
//! file format (which stores `f32`) round-trips bit for bit.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::math::{powf, sin, sqrt};
use crate::nn::Tensor;
use crate::rng::{hash_coords, rng_from_seed, standard_normal};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralImage {
    height: u16,
    width: u16,
    bands: u16,
    pixels: Vec<f64>,
    label: u16,
    timestamp_index: u32,
}

impl MultispectralImage {
    pub fn new(height: u16, width: u16, bands: u16, pixels: Vec<f64>, label: u16, timestamp_index: u32) -> Result<Self> {
        let n = height as usize * width as usize * bands as usize;
        if pixels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: pixels.len() });
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("image pixels"));
        }
        Ok(Self { height, width, bands, pixels, label, timestamp_index })
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn bands(&self) -> u16 {
        self.bands
    }

    pub fn label(&self) -> usize {
        self.label as usize
    }

    pub fn timestamp_index(&self) -> u32 {
        self.timestamp_index
    }

    /// Row-major `H × W × D`.
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, i: usize, j: usize, k: usize) -> f64 {
        self.pixels[(i * self.width as usize + j) * self.bands as usize + k]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

pub const EUROSAT_CLASSES: [&str; 10] = [
    "AnnualCrop",
    "Forest",
    "HerbaceousVegetation",
    "Highway",
    "Industrial",
    "Pasture",
    "PermanentCrop",
    "Residential",
    "River",
    "SeaLake",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Empty("class catalog"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::param("duplicate class name index", i as f64));
            }
        }
        Ok(Self { names })
    }

    /// The ten land-cover classes, truncated to `classes`.
    pub fn eurosat(classes: usize) -> Result<Self> {
        if classes == 0 || classes > EUROSAT_CLASSES.len() {
            return Err(Error::param("classes", classes as f64));
        }
        Self::new(EUROSAT_CLASSES[..classes].iter().map(|s| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, c: usize) -> &str {
        &self.names[c]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl Default for ClassCatalog {
    fn default() -> Self {
        Self::eurosat(10).expect("static catalog")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub per_class_count: usize,
    pub height: u16,
    pub width: u16,
    pub bands: u16,
    pub classes: usize,
    /// Minimum pairwise Euclidean distance between class signatures.
    pub class_separation: f64,
    /// Signature shift per time step.
    pub temporal_drift: f64,
    pub noise_std: f64,
    /// Illumination factor is uniform in `1 ± illumination_jitter`.
    pub illumination_jitter: f64,
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            per_class_count: 100,
            height: 8,
            width: 8,
            bands: 4,
            classes: 10,
            class_separation: 1.0,
            temporal_drift: 0.0,
            noise_std: 0.6,
            illumination_jitter: 0.3,
            texture_amplitude: 0.3,
            seed: 1,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.per_class_count < 2 {
            return Err(Error::param("per_class_count", self.per_class_count as f64));
        }
        if !(self.class_separation > 0.0) {
            return Err(Error::param("class_separation", self.class_separation));
        }
        if !(self.temporal_drift >= 0.0) {
            return Err(Error::param("temporal_drift", self.temporal_drift));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::param("noise_std", self.noise_std));
        }
        if !(0.0..1.0).contains(&self.illumination_jitter) {
            return Err(Error::param("illumination_jitter", self.illumination_jitter));
        }
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::param("image dimensions", 0.0));
        }
        if self.classes < 2 || self.classes > u16::MAX as usize {
            return Err(Error::param("classes", self.classes as f64));
        }
        Ok(())
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height as usize * self.width as usize * self.bands as usize
    }
}

/// An ordered collection of images.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<MultispectralImage>,
}

impl Dataset {
    pub fn new(images: Vec<MultispectralImage>) -> Self {
        Self { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|i| i.label()).collect()
    }

    /// One flattened image per row.
    pub fn to_tensor(&self) -> Tensor {
        let cols = self.images.first().map_or(0, |i| i.len());
        let mut data = Vec::with_capacity(self.len() * cols);
        for im in &self.images {
            data.extend_from_slice(im.pixels());
        }
        Tensor::from_vec(&[self.len(), cols], data).expect("uniform image sizes")
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for im in &self.images {
            if im.label() < classes {
                counts[im.label()] += 1;
            }
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { images: idx.iter().map(|&i| self.images[i].clone()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scene {
    label: usize,
    illumination: f64,
    phase: f64,
    noise_key: u64,
}

/// Persistent ground scenes that can be imaged at any time index.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSet {
    spec: DatasetSpec,
    signatures: Vec<Vec<f64>>,
    drift_directions: Vec<Vec<f64>>,
    frequencies: Vec<(f64, f64)>,
    scenes: Vec<Scene>,
}

impl SceneSet {
    /// `classes · per_class_count` scenes in class-major order.
    pub fn new(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(spec.seed);
        let signatures = place_signatures(spec, &mut rng)?;
        let d = spec.bands as usize;
        let drift_directions = (0..spec.classes).map(|_| random_unit(d, &mut rng)).collect();
        let frequencies = (0..spec.classes)
            .map(|_| (rng.random_range(0..4) as f64, rng.random_range(0..4) as f64))
            .collect();
        let mut scenes = Vec::with_capacity(spec.classes * spec.per_class_count);
        for label in 0..spec.classes {
            for _ in 0..spec.per_class_count {
                let j = spec.illumination_jitter;
                scenes.push(Scene {
                    label,
                    illumination: if j > 0.0 { rng.random_range(1.0 - j..1.0 + j) } else { 1.0 },
                    phase: rng.random_range(0.0..2.0 * PI),
                    noise_key: rng.random(),
                });
            }
        }
        Ok(Self { spec: *spec, signatures, drift_directions, frequencies, scenes })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn label(&self, scene: usize) -> usize {
        self.scenes[scene].label
    }

    pub fn signatures(&self) -> &[Vec<f64>] {
        &self.signatures
    }

    /// Class signature after `t` drift steps.
    pub fn signature_at(&self, class: usize, t: u32) -> Vec<f64> {
        let shift = self.spec.temporal_drift * t as f64;
        self.signatures[class]
            .iter()
            .zip(&self.drift_directions[class])
            .map(|(m, d)| m + shift * d)
            .collect()
    }

    pub fn render(&self, scene: usize, t: u32) -> MultispectralImage {
        let s = &self.scenes[scene];
        let spec = &self.spec;
        let (h, w, d) = (spec.height as usize, spec.width as usize, spec.bands as usize);
        let mu = self.signature_at(s.label, t);
        let (fx, fy) = self.frequencies[s.label];
        let mut rng = rng_from_seed(hash_coords(&[s.noise_key, t as u64]));
        let mut pixels = Vec::with_capacity(h * w * d);
        for i in 0..h {
            for j in 0..w {
                let tex = spec.texture_amplitude
                    * sin(2.0 * PI * (fx * i as f64 / h as f64 + fy * j as f64 / w as f64) + s.phase);
                for &m in &mu {
                    let v = s.illumination * m + tex + spec.noise_std * standard_normal(&mut rng);
                    pixels.push(v as f32 as f64);
                }
            }
        }
        MultispectralImage::new(spec.height, spec.width, spec.bands, pixels, s.label as u16, t)
            .expect("rendered image is well formed")
    }

    pub fn render_many(&self, scenes: &[usize], t: u32) -> Dataset {
        Dataset::new(scenes.iter().map(|&s| self.render(s, t)).collect())
    }

    pub fn render_all(&self, t: u32) -> Dataset {
        let all: Vec<usize> = (0..self.len()).collect();
        self.render_many(&all, t)
    }
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        let n = sqrt(v.iter().map(|x| x * x).sum());
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn place_signatures<R: Rng + ?Sized>(spec: &DatasetSpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let d = spec.bands as usize;
    let sep = spec.class_separation;
    // Cube large enough that rejection sampling succeeds quickly.
    let half = sep * f64::max(1.5, powf(spec.classes as f64, 1.0 / d as f64));
    for _attempt in 0..64 {
        let mut placed: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
        let mut tries = 0;
        while placed.len() < spec.classes && tries < 10_000 {
            tries += 1;
            let cand: Vec<f64> = (0..d).map(|_| rng.random_range(-half..half)).collect();
            if placed.iter().all(|p| euclidean(p, &cand) >= sep) {
                placed.push(cand);
            }
        }
        if placed.len() == spec.classes {
            return Ok(placed);
        }
    }
    Err(Error::SignaturePlacement { classes: spec.classes, separation: sep })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Stratified split: within each class the records are shuffled with
/// `seed`, then `round(n·r_train)` go to train, `round(n·r_val)` to
/// validation and the remainder to test.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    let idx = split_indices(&dataset.labels(), ratios, seed)?;
    Ok(Splits {
        train: dataset.subset(&idx[0]),
        val: dataset.subset(&idx[1]),
        test: dataset.subset(&idx[2]),
    })
}

/// Index form of [`split`].
pub fn split_indices(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || !(total > 0.0) {
        return Err(Error::param("split ratio", total));
    }
    let r = ratios.map(|x| x / total);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = rng_from_seed(seed);
    let mut out: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = libm::round(n as f64 * r[0]) as usize;
        let n_val = (libm::round(n as f64 * r[1]) as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        out[0].extend_from_slice(&members[..n_train]);
        out[1].extend_from_slice(&members[n_train..n_train + n_val]);
        out[2].extend_from_slice(&members[n_train + n_val..]);
    }
    for part in &mut out {
        part.sort_unstable();
    }
    Ok(out)
}

/// Output of [`generate_synthetic`]: the same scenes imaged at `t0` and
/// `t1`, split identically.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub catalog: ClassCatalog,
    pub scenes: SceneSet,
    pub t0: Splits,
    pub t1: Splits,
}

/// Default split proportions.
pub const SPLIT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

pub fn generate_synthetic(spec: &DatasetSpec) -> Result<SyntheticData> {
    let scenes = SceneSet::new(spec)?;
    let labels: Vec<usize> = (0..scenes.len()).map(|s| scenes.label(s)).collect();
    let idx = split_indices(&labels, SPLIT_RATIOS, spec.seed ^ 0x5EED)?;
    let render = |t: u32| Splits {
        train: scenes.render_many(&idx[0], t),
        val: scenes.render_many(&idx[1], t),
        test: scenes.render_many(&idx[2], t),
    };
    let (t0, t1) = (render(0), render(1));
    let catalog = if spec.classes <= EUROSAT_CLASSES.len() {
        ClassCatalog::eurosat(spec.classes)?
    } else {
        ClassCatalog::new((0..spec.classes).map(|c| alloc::format!("class{c}")).collect())?
    };
    Ok(SyntheticData { catalog, scenes, t0, t1 })
}

/// Per-class mean feature vector; absent classes yield zero vectors.
pub fn class_means(x: &Tensor, labels: &[usize], classes: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; x.cols()]; classes];
    let mut counts = vec![0usize; classes];
    for (r, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(x.row(r)) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            for v in s.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    sums
}
