//! Pixel F1 and the Matching Cross-correlation (M-CCORR) skeleton score.
//!
//! M-CCORR divides the best zero-mean normalized cross-correlation found over a
//! window of integer translations by `log2(D + 2)`, where `D` is the distance
//! between the bounding-box centres of the two skeletons:
//!
//! ```text
//! M-CCORR(t, p) = max(0, max_zncc(t, p)) / log2(D(t, p) + 2)
//! ```
//!
//! Masks are correlated as 0/1 values. Because the data is binary, every
//! correlation is a function of four integers (overlap area and three sums), so
//! the search compares candidates exactly and tie-breaking is reproducible.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{bounding_box, BinaryMask};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("dimension mismatch: truth {truth:?} vs prediction {pred:?}")]
    DimensionMismatch {
        truth: (u32, u32),
        pred: (u32, u32),
    },
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("every offset within radius {radius} was rejected by the overlap threshold")]
    AllRejected { radius: usize },
    #[error("invalid match configuration: {0}")]
    InvalidConfig(String),
}

/// Bounds on the translation search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Largest `|dx|` and `|dy|` explored.
    pub search_radius: usize,
    /// An offset only counts when the overlap covers at least this fraction of the image.
    pub min_overlap_fraction: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            search_radius: 64,
            min_overlap_fraction: 0.25,
        }
    }
}

impl MatchConfig {
    pub fn new(search_radius: usize, min_overlap_fraction: f64) -> Result<Self, MetricError> {
        let cfg = Self {
            search_radius,
            min_overlap_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.min_overlap_fraction > 0.0 && self.min_overlap_fraction <= 1.0) {
            return Err(MetricError::InvalidConfig(format!(
                "min_overlap_fraction must be in (0, 1], got {}",
                self.min_overlap_fraction
            )));
        }
        Ok(())
    }
}

/// Per-image scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub max_zncc: f64,
    /// Distance between bounding-box centres; `None` when either mask is empty.
    pub center_distance: Option<f64>,
    pub m_ccorr: f64,
    /// Set when the prediction or the truth is empty.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_dims(truth: &BinaryMask, pred: &BinaryMask) -> Result<(), MetricError> {
    if truth.same_dims(pred) {
        Ok(())
    } else {
        Err(MetricError::DimensionMismatch {
            truth: (truth.width(), truth.height()),
            pred: (pred.width(), pred.height()),
        })
    }
}

pub fn confusion_counts(truth: &BinaryMask, pred: &BinaryMask) -> Result<Confusion, MetricError> {
    check_dims(truth, pred)?;
    let mut c = Confusion::default();
    for (&t, &p) in truth.data().iter().zip(pred.data()) {
        match (t, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Foreground-class F1. Two empty masks score 1.
pub fn f1_score(truth: &BinaryMask, pred: &BinaryMask) -> Result<f64, MetricError> {
    let c = confusion_counts(truth, pred)?;
    if c.tp + c.fp + c.fn_ == 0 {
        return Ok(1.0);
    }
    Ok(f1_from(c.precision(), c.recall()))
}

/// Integer sufficient statistics of a binary window pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct WindowStats {
    area: u64,
    sum_truth: u64,
    sum_pred: u64,
    sum_both: u64,
}

/// A Pearson coefficient kept as `num / sqrt(den)` for exact comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Corr {
    num: i128,
    den: u128,
}

impl Corr {
    const ZERO: Corr = Corr { num: 0, den: 1 };

    fn from_stats(s: WindowStats) -> Corr {
        let n = s.area as i128;
        let (a, b, ab) = (s.sum_truth as i128, s.sum_pred as i128, s.sum_both as i128);
        let var_a = n * a - a * a;
        let var_b = n * b - b * b;
        if var_a == 0 || var_b == 0 {
            return Corr::ZERO;
        }
        Corr {
            num: n * ab - a * b,
            den: var_a as u128 * var_b as u128,
        }
    }

    fn value(&self) -> f64 {
        if self.num == 0 {
            return 0.0;
        }
        let sq = self.num.unsigned_abs().checked_mul(self.num.unsigned_abs());
        if sq == Some(self.den) {
            return self.num.signum() as f64;
        }
        (self.num as f64 / (self.den as f64).sqrt()).clamp(-1.0, 1.0)
    }

    fn cmp_value(&self, other: &Corr) -> Ordering {
        let (sa, sb) = (self.num.signum(), other.num.signum());
        if sa != sb {
            return sa.cmp(&sb);
        }
        if sa == 0 {
            return Ordering::Equal;
        }
        let (na, nb) = (self.num.unsigned_abs(), other.num.unsigned_abs());
        let lhs = na.checked_mul(na).and_then(|x| x.checked_mul(other.den));
        let rhs = nb.checked_mul(nb).and_then(|x| x.checked_mul(self.den));
        let magnitude = match (lhs, rhs) {
            (Some(l), Some(r)) => l.cmp(&r),
            _ => self
                .value()
                .abs()
                .partial_cmp(&other.value().abs())
                .unwrap_or(Ordering::Equal),
        };
        if sa > 0 {
            magnitude
        } else {
            magnitude.reverse()
        }
    }
}

/// Overlap of the truth frame with the prediction translated by `(dx, dy)`,
/// as half-open `(row0, row1, col0, col1)` in truth coordinates.
fn overlap(h: usize, w: usize, dx: isize, dy: isize) -> Option<(usize, usize, usize, usize)> {
    let (h, w) = (h as isize, w as isize);
    let (r0, r1) = (dy.max(0), (h + dy).min(h));
    let (c0, c1) = (dx.max(0), (w + dx).min(w));
    if r0 >= r1 || c0 >= c1 {
        None
    } else {
        Some((r0 as usize, r1 as usize, c0 as usize, c1 as usize))
    }
}

fn rejected(area: u64, h: usize, w: usize, cfg: &MatchConfig) -> bool {
    (area as f64) < cfg.min_overlap_fraction * (h * w) as f64
}

/// ZNCC of `truth` against `pred` translated by `(dx, dy)`, over their overlap.
///
/// Returns `None` when the overlap is smaller than the configured fraction of the
/// image, and `0` when either window is constant.
pub fn zncc_at_offset(
    truth: &BinaryMask,
    pred: &BinaryMask,
    dx: isize,
    dy: isize,
    cfg: &MatchConfig,
) -> Result<Option<f64>, MetricError> {
    check_dims(truth, pred)?;
    let (h, w) = truth.dims();
    let Some((r0, r1, c0, c1)) = overlap(h, w, dx, dy) else {
        return Ok(None);
    };
    let mut s = WindowStats {
        area: ((r1 - r0) * (c1 - c0)) as u64,
        sum_truth: 0,
        sum_pred: 0,
        sum_both: 0,
    };
    if rejected(s.area, h, w, cfg) {
        return Ok(None);
    }
    for r in r0..r1 {
        let pr = (r as isize - dy) as usize;
        for c in c0..c1 {
            let pc = (c as isize - dx) as usize;
            let (a, b) = (truth.get(r, c), pred.get(pr, pc));
            s.sum_truth += a as u64;
            s.sum_pred += b as u64;
            s.sum_both += (a && b) as u64;
        }
    }
    Ok(Some(Corr::from_stats(s).value()))
}

/// Best translation found by [`max_zncc`]. `dx`, `dy` move the prediction onto the truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestMatch {
    pub coefficient: f64,
    pub dx: isize,
    pub dy: isize,
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    data: Vec<u64>,
}

impl Integral {
    fn new(m: &BinaryMask) -> Self {
        let (h, w) = m.dims();
        let mut data = vec![0u64; (h + 1) * (w + 1)];
        for r in 0..h {
            let mut run = 0u64;
            for c in 0..w {
                run += m.get(r, c) as u64;
                data[(r + 1) * (w + 1) + c + 1] = data[r * (w + 1) + c + 1] + run;
            }
        }
        Self { w: w + 1, data }
    }

    fn sum(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> u64 {
        let at = |r: usize, c: usize| self.data[r * self.w + c];
        at(r1, c1) + at(r0, c0) - at(r0, c1) - at(r1, c0)
    }
}

fn pack_row(bits: impl Iterator<Item = usize>, words: usize) -> Vec<u64> {
    let mut row = vec![0u64; words];
    for c in bits {
        row[c / 64] |= 1u64 << (c % 64);
    }
    row
}

/// Maximum ZNCC over all translations in `[-R, R]^2`, ignoring rejected offsets.
///
/// Ties go to the offset with the smallest `dx^2 + dy^2`, then the smallest `dy`,
/// then the smallest `dx`.
pub fn max_zncc(
    truth: &BinaryMask,
    pred: &BinaryMask,
    cfg: &MatchConfig,
) -> Result<BestMatch, MetricError> {
    check_dims(truth, pred)?;
    cfg.validate()?;
    let (h, w) = truth.dims();
    let words = w.div_ceil(64);
    let radius = cfg.search_radius as isize;
    let truth_rows: Vec<Vec<u64>> = (0..h)
        .map(|r| pack_row((0..w).filter(|&c| truth.get(r, c)), words))
        .collect();
    let it = Integral::new(truth);
    let ip = Integral::new(pred);

    let mut best: Option<(Corr, isize, isize)> = None;
    let dx_range = (-radius).max(1 - w as isize)..=radius.min(w as isize - 1);
    for dx in dx_range {
        // Prediction rows with columns already translated by dx.
        let shifted: Vec<Vec<u64>> = (0..h)
            .map(|r| {
                let cols = (0..w).filter(|&c| pred.get(r, c)).filter_map(|c| {
                    let nc = c as isize + dx;
                    (nc >= 0 && (nc as usize) < w).then_some(nc as usize)
                });
                pack_row(cols, words)
            })
            .collect();
        for dy in (-radius).max(1 - h as isize)..=radius.min(h as isize - 1) {
            let Some((r0, r1, c0, c1)) = overlap(h, w, dx, dy) else {
                continue;
            };
            let area = ((r1 - r0) * (c1 - c0)) as u64;
            if rejected(area, h, w, cfg) {
                continue;
            }
            let sum_both: u64 = (r0..r1)
                .map(|r| {
                    let pr = (r as isize - dy) as usize;
                    truth_rows[r]
                        .iter()
                        .zip(&shifted[pr])
                        .map(|(a, b)| (a & b).count_ones() as u64)
                        .sum::<u64>()
                })
                .sum();
            let pr0 = (r0 as isize - dy) as usize;
            let pc0 = (c0 as isize - dx) as usize;
            let stats = WindowStats {
                area,
                sum_truth: it.sum(r0, r1, c0, c1),
                sum_pred: ip.sum(pr0, pr0 + (r1 - r0), pc0, pc0 + (c1 - c0)),
                sum_both,
            };
            let corr = Corr::from_stats(stats);
            let better = match &best {
                None => true,
                Some((b, bdx, bdy)) => match corr.cmp_value(b) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => {
                        (dx * dx + dy * dy, dy, dx) < (bdx * bdx + bdy * bdy, *bdy, *bdx)
                    }
                },
            };
            if better {
                best = Some((corr, dx, dy));
            }
        }
    }
    best.map(|(c, dx, dy)| BestMatch {
        coefficient: c.value(),
        dx,
        dy,
    })
    .ok_or(MetricError::AllRejected {
        radius: cfg.search_radius,
    })
}

/// Euclidean distance between the real-valued bounding-box centres.
pub fn bbox_center_distance(truth: &BinaryMask, pred: &BinaryMask) -> Result<f64, MetricError> {
    let bt = bounding_box(truth).map_err(|_| MetricError::EmptyMask)?;
    let bp = bounding_box(pred).map_err(|_| MetricError::EmptyMask)?;
    let (tr, tc) = bt.center();
    let (pr, pc) = bp.center();
    Ok((tr - pr).hypot(tc - pc))
}

/// M-CCORR with its ingredients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MCcorr {
    pub value: f64,
    pub max_zncc: f64,
    pub center_distance: Option<f64>,
    pub degenerate: bool,
}

/// Both masks empty scores 1; exactly one empty scores 0. Both cases are flagged.
pub fn m_ccorr(
    truth: &BinaryMask,
    pred: &BinaryMask,
    cfg: &MatchConfig,
) -> Result<MCcorr, MetricError> {
    check_dims(truth, pred)?;
    let best = max_zncc(truth, pred, cfg)?;
    match (truth.is_empty(), pred.is_empty()) {
        (true, true) => Ok(MCcorr {
            value: 1.0,
            max_zncc: best.coefficient,
            center_distance: None,
            degenerate: true,
        }),
        (true, false) | (false, true) => Ok(MCcorr {
            value: 0.0,
            max_zncc: best.coefficient,
            center_distance: None,
            degenerate: true,
        }),
        (false, false) => {
            let d = bbox_center_distance(truth, pred)?;
            Ok(MCcorr {
                value: best.coefficient.max(0.0) / (d + 2.0).log2(),
                max_zncc: best.coefficient,
                center_distance: Some(d),
                degenerate: false,
            })
        }
    }
}

pub fn evaluate_pair(
    truth: &BinaryMask,
    pred: &BinaryMask,
    cfg: &MatchConfig,
) -> Result<MetricReport, MetricError> {
    let c = confusion_counts(truth, pred)?;
    let mc = m_ccorr(truth, pred, cfg)?;
    let both_empty = c.tp + c.fp + c.fn_ == 0;
    let (precision, recall, f1) = if both_empty {
        (1.0, 1.0, 1.0)
    } else {
        let (p, r) = (c.precision(), c.recall());
        (p, r, f1_from(p, r))
    };
    Ok(MetricReport {
        precision,
        recall,
        f1,
        max_zncc: mc.max_zncc,
        center_distance: mc.center_distance,
        m_ccorr: mc.value,
        degenerate: mc.degenerate,
    })
}

/// Scores every `(truth, pred)` pair in parallel; output order follows input order.
pub fn evaluate_batch(
    pairs: &[(BinaryMask, BinaryMask)],
    cfg: &MatchConfig,
) -> Result<Vec<MetricReport>, MetricError> {
    pairs
        .par_iter()
        .map(|(t, p)| evaluate_pair(t, p, cfg))
        .collect()
}

/// Arithmetic means of a set of reports. `degenerate` is the flagged fraction and
/// `center_distance` averages only the images where it is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub max_zncc: f64,
    pub center_distance: Option<f64>,
    pub m_ccorr: f64,
    pub degenerate: f64,
}

pub fn aggregate(reports: &[MetricReport]) -> AggregateReport {
    let n = reports.len();
    let mean = |f: &dyn Fn(&MetricReport) -> f64| {
        if n == 0 {
            0.0
        } else {
            reports.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let distances: Vec<f64> = reports.iter().filter_map(|r| r.center_distance).collect();
    AggregateReport {
        count: n,
        precision: mean(&|r| r.precision),
        recall: mean(&|r| r.recall),
        f1: mean(&|r| r.f1),
        max_zncc: mean(&|r| r.max_zncc),
        center_distance: (!distances.is_empty())
            .then(|| distances.iter().sum::<f64>() / distances.len() as f64),
        m_ccorr: mean(&|r| r.m_ccorr),
        degenerate: mean(&|r| r.degenerate as u8 as f64),
    }
}
