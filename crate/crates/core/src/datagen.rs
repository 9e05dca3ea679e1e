//! Synthetic shape/skeleton pairs and directory ingestion.
//!
//! Layout on disk: `img/NNNN.png` (shapes), `gt/NNNN.png` (skeletons) and a
//! `manifest.json` describing the generator settings.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mask::{connected_components, load_png, save_png, BinaryMask, MaskError};
use crate::thinning::{skeletonize, ThinningAlgo};

/// Attempts per index before giving up on a degenerate draw.
pub const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("no valid shape for index {index} after {attempts} attempts")]
    GenerationFailure { index: usize, attempts: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("`{stem}` has no counterpart in {missing_in}")]
    MissingPair { stem: String, missing_in: PathBuf },
    #[error("`{stem}`: shape is {shape:?} but skeleton is {skeleton:?}")]
    DimensionMismatch {
        stem: String,
        shape: (usize, usize),
        skeleton: (usize, usize),
    },
    #[error("no PNG files in {0}")]
    EmptyDirectory(PathBuf),
    #[error("split of {total} items at fraction {fraction} leaves one side empty")]
    DegenerateSplit { total: usize, fraction: f64 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatagenError + '_ {
    move |source| DatagenError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Relative frequency of each shape family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeMix {
    pub ellipse_union: f64,
    pub polygon: f64,
    pub random_walk: f64,
}

impl Default for ShapeMix {
    fn default() -> Self {
        Self {
            ellipse_union: 0.4,
            polygon: 0.4,
            random_walk: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub mix: ShapeMix,
    pub gt: ThinningAlgo,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 200,
            size: 64,
            seed: 0,
            mix: ShapeMix::default(),
            gt: ThinningAlgo::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidSpec(m));
        if self.count == 0 {
            return bad("count must be at least 1".into());
        }
        if self.size < 16 || !self.size.is_multiple_of(16) {
            return bad(format!("size must be a positive multiple of 16, got {}", self.size));
        }
        let r = [self.mix.ellipse_union, self.mix.polygon, self.mix.random_walk];
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("shape mix must be non-negative and sum to 1, got {r:?}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePair {
    pub shape: BinaryMask,
    pub skeleton: BinaryMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Family {
    EllipseUnion,
    Polygon,
    RandomWalk,
}

fn pick_family(mix: &ShapeMix, u: f64) -> Family {
    if u < mix.ellipse_union {
        Family::EllipseUnion
    } else if u < mix.ellipse_union + mix.polygon {
        Family::Polygon
    } else {
        Family::RandomWalk
    }
}

fn ellipse_union(rng: &mut ChaCha8Rng, size: f64) -> BinaryMask {
    let n = rng.gen_range(1..=4);
    let mut ellipses = Vec::with_capacity(n);
    let (mut cy, mut cx) = (
        rng.gen_range(0.35 * size..0.65 * size),
        rng.gen_range(0.35 * size..0.65 * size),
    );
    for _ in 0..n {
        let a = rng.gen_range(0.06 * size..0.22 * size);
        let b = rng.gen_range(0.06 * size..0.22 * size);
        let theta = rng.gen_range(0.0..PI);
        ellipses.push((cy, cx, a, b, theta.cos(), theta.sin()));
        // Next centre lands inside the current ellipse's reach so parts overlap.
        let (d, phi) = (rng.gen_range(0.0..a.max(b)), rng.gen_range(0.0..2.0 * PI));
        cy = (cy + d * phi.sin()).clamp(0.25 * size, 0.75 * size);
        cx = (cx + d * phi.cos()).clamp(0.25 * size, 0.75 * size);
    }
    let s = size as u32;
    BinaryMask::from_fn(s, s, |r, c| {
        ellipses.iter().any(|&(cy, cx, a, b, ct, st)| {
            let (y, x) = (r as f64 - cy, c as f64 - cx);
            let (u, v) = (x * ct + y * st, -x * st + y * ct);
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
    })
}

/// Star-shaped polygon around a centre; equal radii give a convex one.
fn polygon(rng: &mut ChaCha8Rng, size: f64) -> BinaryMask {
    let n = rng.gen_range(3..=9);
    let (cy, cx) = (
        rng.gen_range(0.4 * size..0.6 * size),
        rng.gen_range(0.4 * size..0.6 * size),
    );
    let r_max = rng.gen_range(0.18 * size..0.36 * size);
    let convex = rng.gen_bool(0.5);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    angles.sort_by(f64::total_cmp);
    let verts: Vec<(f64, f64)> = angles
        .iter()
        .map(|&t| {
            let r = if convex { r_max } else { rng.gen_range(0.35 * r_max..r_max) };
            (cy + r * t.sin(), cx + r * t.cos())
        })
        .collect();
    let s = size as u32;
    BinaryMask::from_fn(s, s, |r, c| point_in_polygon(&verts, r as f64, c as f64))
}

/// Even-odd rule.
fn point_in_polygon(verts: &[(f64, f64)], y: f64, x: f64) -> bool {
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let ((yi, xi), (yj, xj)) = (verts[i], verts[j]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Smoothly turning walk stamped with a disc.
fn random_walk(rng: &mut ChaCha8Rng, size: f64) -> BinaryMask {
    let margin = 0.15 * size;
    let radius = rng.gen_range(0.025 * size..0.065 * size).max(1.5);
    let steps = rng.gen_range(15..45);
    let (mut y, mut x) = (
        rng.gen_range(0.35 * size..0.65 * size),
        rng.gen_range(0.35 * size..0.65 * size),
    );
    let mut heading = rng.gen_range(0.0..2.0 * PI);
    let step = 0.025 * size;
    let mut points = vec![(y, x)];
    for _ in 0..steps {
        heading += rng.gen_range(-0.6..0.6);
        let (ny, nx) = (y + step * heading.sin(), x + step * heading.cos());
        if !(margin..size - margin).contains(&ny) || !(margin..size - margin).contains(&nx) {
            heading += PI;
            continue;
        }
        (y, x) = (ny, nx);
        points.push((y, x));
    }
    let s = size as u32;
    let r2 = radius * radius;
    BinaryMask::from_fn(s, s, |r, c| {
        points
            .iter()
            .any(|&(py, px)| (r as f64 - py).powi(2) + (c as f64 - px).powi(2) <= r2)
    })
}

fn largest_component(m: &BinaryMask) -> BinaryMask {
    let comps = connected_components(m);
    if comps.count <= 1 {
        return m.clone();
    }
    let mut sizes = vec![0usize; comps.count + 1];
    for &l in &comps.labels {
        sizes[l as usize] += 1;
    }
    let best = (1..=comps.count).max_by_key(|&l| (sizes[l], std::cmp::Reverse(l))).unwrap() as u32;
    let labels = comps.labels;
    BinaryMask::from_fn(m.width(), m.height(), |r, c| labels[r * m.width() as usize + c] == best)
}

fn touches_border(m: &BinaryMask) -> bool {
    let (h, w) = m.dims();
    m.foreground().any(|(r, c)| r == 0 || c == 0 || r == h - 1 || c == w - 1)
}

/// Pair number `index` of the dataset; depends only on `(spec.seed, index)`.
pub fn gen_shape(spec: &DatasetSpec, index: usize) -> Result<SamplePair, DatagenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let size = spec.size as f64;
    let min_area = spec.size * spec.size / 100;
    for _ in 0..MAX_ATTEMPTS {
        let raw = match pick_family(&spec.mix, rng.gen()) {
            Family::EllipseUnion => ellipse_union(&mut rng, size),
            Family::Polygon => polygon(&mut rng, size),
            Family::RandomWalk => random_walk(&mut rng, size),
        };
        let shape = largest_component(&raw);
        if shape.count() < min_area || touches_border(&shape) {
            continue;
        }
        let skeleton = skeletonize(&shape, &spec.gt);
        if skeleton.is_empty() {
            continue;
        }
        return Ok(SamplePair { shape, skeleton });
    }
    Err(DatagenError::GenerationFailure {
        index,
        attempts: MAX_ATTEMPTS,
    })
}

pub fn gen_pairs(spec: &DatasetSpec) -> Result<Vec<SamplePair>, DatagenError> {
    spec.validate()?;
    (0..spec.count).into_par_iter().map(|i| gen_shape(spec, i)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stem: String,
    pub img: String,
    pub gt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub files: Vec<ManifestEntry>,
}

pub fn stem_for(index: usize) -> String {
    format!("{index:04}")
}

/// Generates the dataset and writes `img/`, `gt/` and `manifest.json` under `out_dir`.
pub fn gen_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest, DatagenError> {
    let pairs = gen_pairs(spec)?;
    let (img_dir, gt_dir) = (out_dir.join("img"), out_dir.join("gt"));
    for d in [&img_dir, &gt_dir] {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let files: Vec<ManifestEntry> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let stem = stem_for(i);
            let img = format!("img/{stem}.png");
            let gt = format!("gt/{stem}.png");
            save_png(&p.shape, out_dir.join(&img))?;
            save_png(&p.skeleton, out_dir.join(&gt))?;
            Ok(ManifestEntry { stem, img, gt })
        })
        .collect::<Result<_, DatagenError>>()?;
    let manifest = Manifest { spec: *spec, files };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

/// A shape read from disk, with its skeleton when a ground-truth directory was given.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedSample {
    pub stem: String,
    pub shape: BinaryMask,
    pub skeleton: Option<BinaryMask>,
}

/// `stem -> path` for every `*.png` in `dir`, sorted by stem.
pub fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DatagenError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_owned(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Loads every shape in `img_dir`, pairing by file stem with `gt_dir` when given.
pub fn ingest_dir(img_dir: &Path, gt_dir: Option<&Path>) -> Result<Vec<NamedSample>, DatagenError> {
    let imgs = png_files(img_dir)?;
    if imgs.is_empty() {
        return Err(DatagenError::EmptyDirectory(img_dir.to_owned()));
    }
    let gts = match gt_dir {
        Some(d) => {
            let gts = png_files(d)?;
            if let Some(stem) = imgs.keys().find(|s| !gts.contains_key(*s)) {
                return Err(DatagenError::MissingPair {
                    stem: stem.clone(),
                    missing_in: d.to_owned(),
                });
            }
            if let Some(stem) = gts.keys().find(|s| !imgs.contains_key(*s)) {
                return Err(DatagenError::MissingPair {
                    stem: stem.clone(),
                    missing_in: img_dir.to_owned(),
                });
            }
            Some(gts)
        }
        None => None,
    };
    imgs.into_par_iter()
        .map(|(stem, path)| {
            let shape = load_png(&path)?;
            let skeleton = match &gts {
                Some(g) => {
                    let sk = load_png(&g[&stem])?;
                    if !sk.same_dims(&shape) {
                        return Err(DatagenError::DimensionMismatch {
                            stem,
                            shape: shape.dims(),
                            skeleton: sk.dims(),
                        });
                    }
                    Some(sk)
                }
                None => None,
            };
            Ok(NamedSample { stem, shape, skeleton })
        })
        .collect()
}

/// Seeded shuffle, then the first `round(n * train_fraction)` items train.
pub fn split_dataset<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), DatagenError> {
    let degenerate = DatagenError::DegenerateSplit {
        total: items.len(),
        fraction: train_fraction,
    };
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(degenerate);
    }
    let n_train = (items.len() as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == items.len() {
        return Err(degenerate);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}
