//! Classical skeletonization: Zhang-Suen thinning, a distance-transform ridge
//! (medial axis), and spur pruning. Used both to generate synthetic ground truth
//! and as a non-learned baseline. The image frame is treated as background.

use serde::{Deserialize, Serialize};

use crate::mask::{distance_transform, BinaryMask, NEIGHBOURS_8};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThinningVariant {
    ZhangSuen,
    MedialAxis,
}

impl std::str::FromStr for ThinningVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zhang-suen" => Ok(Self::ZhangSuen),
            "medial-axis" => Ok(Self::MedialAxis),
            other => Err(format!("unknown thinning algorithm `{other}`")),
        }
    }
}

/// Skeletonizer choice plus spur-removal threshold (0 disables pruning).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinningAlgo {
    pub variant: ThinningVariant,
    pub prune_length: usize,
}

impl Default for ThinningAlgo {
    fn default() -> Self {
        Self {
            variant: ThinningVariant::ZhangSuen,
            prune_length: 8,
        }
    }
}

pub fn skeletonize(shape: &BinaryMask, algo: &ThinningAlgo) -> BinaryMask {
    let skel = match algo.variant {
        ThinningVariant::ZhangSuen => zhang_suen_thin(shape),
        ThinningVariant::MedialAxis => medial_axis(shape),
    };
    prune_spurs(&skel, algo.prune_length)
}

/// Neighbours P2..P9 clockwise from north.
fn ring(m: &BinaryMask, r: usize, c: usize) -> [bool; 8] {
    let (r, c) = (r as isize, c as isize);
    [
        m.get_or_bg(r - 1, c),
        m.get_or_bg(r - 1, c + 1),
        m.get_or_bg(r, c + 1),
        m.get_or_bg(r + 1, c + 1),
        m.get_or_bg(r + 1, c),
        m.get_or_bg(r + 1, c - 1),
        m.get_or_bg(r, c - 1),
        m.get_or_bg(r - 1, c - 1),
    ]
}

/// Number of background-to-foreground transitions around the ring.
fn transitions(p: &[bool; 8]) -> usize {
    (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count()
}

/// Whether the Zhang-Suen sub-pass (`0` or `1`) would delete foreground pixel `(r, c)`.
pub fn zhang_suen_deletable(m: &BinaryMask, r: usize, c: usize, subpass: usize) -> bool {
    if !m.get(r, c) {
        return false;
    }
    let p = ring(m, r, c);
    let [p2, _, p4, _, p6, _, p8, _] = p;
    let b = p.iter().filter(|&&x| x).count();
    if !(2..=6).contains(&b) || transitions(&p) != 1 {
        return false;
    }
    if subpass == 0 {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Iterates the two parallel Zhang-Suen sub-passes until neither deletes anything.
pub fn zhang_suen_thin(shape: &BinaryMask) -> BinaryMask {
    let mut m = shape.clone();
    let (h, w) = m.dims();
    let mut marked = Vec::new();
    loop {
        let mut changed = false;
        for subpass in 0..2 {
            marked.clear();
            for r in 0..h {
                for c in 0..w {
                    if zhang_suen_deletable(&m, r, c, subpass) {
                        marked.push((r, c));
                    }
                }
            }
            for &(r, c) in &marked {
                m.set(r, c, false);
            }
            changed |= !marked.is_empty();
        }
        if !changed {
            return m;
        }
    }
}

/// Foreground pixels whose distance-transform value is a ridge along at least one
/// of the horizontal, vertical or diagonal directions.
///
/// Along a direction a pixel is a ridge when it is no smaller than both
/// neighbours and strictly greater than a *foreground* one, or when both
/// neighbours are background (the shape is one pixel thick there). Being larger
/// than a background neighbour alone does not count, otherwise every boundary
/// pixel of a straight edge would qualify.
pub fn medial_axis(shape: &BinaryMask) -> BinaryMask {
    const DIRECTIONS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    let dt = distance_transform(shape);
    let (h, w) = shape.dims();
    let at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            dt.get(r as usize, c as usize)
        }
    };
    BinaryMask::from_fn(shape.width(), shape.height(), |r, c| {
        if !shape.get(r, c) {
            return false;
        }
        let (ri, ci) = (r as isize, c as isize);
        let v = at(ri, ci);
        DIRECTIONS.iter().any(|&(dr, dc)| {
            let (a, b) = (at(ri - dr, ci - dc), at(ri + dr, ci + dc));
            (a == 0.0 && b == 0.0) || (v >= a && v >= b && ((v > a && a > 0.0) || (v > b && b > 0.0)))
        })
    })
}

fn is_junction(m: &BinaryMask, r: usize, c: usize) -> bool {
    m.get(r, c) && transitions(&ring(m, r, c)) >= 3
}

fn neighbours(m: &BinaryMask, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    NEIGHBOURS_8.iter().filter_map(move |&(dr, dc)| {
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        m.get_or_bg(nr, nc).then_some((nr as usize, nc as usize))
    })
}

fn adjacent(a: (usize, usize), b: (usize, usize)) -> bool {
    a != b && a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1
}

/// Number of 8-connected groups formed by `pts` among themselves.
fn group_count(pts: &[(usize, usize)]) -> usize {
    let mut label: Vec<usize> = (0..pts.len()).collect();
    for i in 0..pts.len() {
        for j in 0..i {
            if adjacent(pts[i], pts[j]) {
                let (a, b) = (label[i], label[j]);
                label.iter_mut().filter(|l| **l == a).for_each(|l| *l = b);
            }
        }
    }
    label.sort_unstable();
    label.dedup();
    label.len()
}

/// Walks from an endpoint towards the rest of the skeleton. Returns the branch
/// pixels when the walk reaches a junction within `max_len` pixels, `None` when
/// the branch is long or never meets a junction.
fn trace_spur(m: &BinaryMask, start: (usize, usize), max_len: usize) -> Option<Vec<(usize, usize)>> {
    let mut branch = vec![start];
    let mut cur = start;
    loop {
        let next: Vec<(usize, usize)> = neighbours(m, cur.0, cur.1)
            .filter(|p| !branch.contains(p))
            .collect();
        if next.is_empty() {
            return None;
        }
        if next.iter().any(|&(r, c)| is_junction(m, r, c)) {
            return Some(branch);
        }
        if group_count(&next) >= 2 {
            // `cur` itself splits the skeleton; keep it as the attachment point.
            branch.pop();
            return Some(branch);
        }
        let step = next
            .iter()
            .copied()
            .find(|&(r, c)| r == cur.0 || c == cur.1)
            .unwrap_or(next[0]);
        branch.push(step);
        cur = step;
        if branch.len() >= max_len {
            return None;
        }
    }
}

/// Removes terminal branches shorter than `max_len` pixels, measured from the
/// endpoint up to (not including) the junction they hang from. Repeats until
/// nothing changes; a skeleton that is a single path is left alone.
pub fn prune_spurs(skel: &BinaryMask, max_len: usize) -> BinaryMask {
    let mut m = skel.clone();
    if max_len == 0 {
        return m;
    }
    let (h, w) = m.dims();
    loop {
        let mut changed = false;
        for r in 0..h {
            for c in 0..w {
                if !m.get(r, c) || m.neighbour_count(r, c) != 1 {
                    continue;
                }
                if let Some(branch) = trace_spur(&m, (r, c), max_len) {
                    if !branch.is_empty() && branch.len() < max_len {
                        for (br, bc) in branch {
                            m.set(br, bc, false);
                        }
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return m;
        }
    }
}
