//! Input-view selection by mask completeness and viewpoint diversity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::splat::Camera;

const EPS: f64 = 1e-8;
/// Fraction of views (smallest object coverage first) dropped before selection.
pub const DISCARD_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSelectConfig {
    pub k: usize,
    pub lambda_shape: f64,
    pub lambda_view: f64,
}

impl Default for ViewSelectConfig {
    fn default() -> Self {
        Self {
            k: 4,
            lambda_shape: 0.5,
            lambda_view: 0.5,
        }
    }
}

impl ViewSelectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Validation("view selection k must be ≥ 1".into()));
        }
        if !(self.lambda_shape >= 0.0 && self.lambda_view >= 0.0) {
            return Err(Error::Validation("view selection weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view: usize,
    pub q_shape: f64,
    pub q_view: f64,
    pub q_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSelection {
    pub selected: Vec<usize>,
    /// Score of each selected view at the moment it was picked.
    pub scores: Vec<ViewScore>,
    pub candidates: Vec<usize>,
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull of integer points, counter-clockwise, collinear points removed.
fn hull_2d(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn on_segment(a: (i64, i64), b: (i64, i64), p: (i64, i64)) -> bool {
    cross(a, b, p) == 0 && p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn in_hull(h: &[(i64, i64)], p: (i64, i64)) -> bool {
    match h.len() {
        0 => false,
        1 => h[0] == p,
        2 => on_segment(h[0], h[1], p),
        n => (0..n).all(|i| cross(h[i], h[(i + 1) % n], p) >= 0),
    }
}

/// Number of pixel centers inside the filled convex hull of the foreground pixel centers.
pub fn hull_pixel_count(mask: &Mask) -> usize {
    let pts: Vec<(i64, i64)> = (0..mask.height())
        .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| *mask.get(x, y))
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    let h = hull_2d(pts);
    let Some((x0, y0, x1, y1)) = mask.bounding_box() else {
        return 0;
    };
    (y0..=y1)
        .flat_map(|y| (x0..=x1).map(move |x| (x as i64, y as i64)))
        .filter(|&p| in_hull(&h, p))
        .count()
}

/// Foreground count over filled-hull count, in `(0, 1]`.
pub fn q_shape(mask: &Mask) -> Result<f64> {
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(n as f64 / hull_pixel_count(mask) as f64)
}

fn min_dist(c: &Camera, selected: &[&Camera]) -> f64 {
    selected
        .iter()
        .map(|s| (c.position() - s.position()).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Diversity of `candidate` against `selected`, normalized over `all`.
///
/// Position term: nearest selected camera distance, min-max normalized over
/// all candidates. Orientation term: `(1 − max dot)/2` over viewing directions.
pub fn q_view(candidate: &Camera, selected: &[&Camera], all: &[&Camera]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::Validation("q_view needs at least one selected view".into()));
    }
    let d = min_dist(candidate, selected);
    let (lo, hi) = all
        .iter()
        .map(|c| min_dist(c, selected))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if all.is_empty() { (0.0, d) } else { (lo.min(d), hi.max(d)) };
    let d_pos = (d - lo) / (hi - lo + EPS);
    let dir = candidate.view_direction();
    let max_dot = selected
        .iter()
        .map(|s| dir.dot(&s.view_direction()))
        .fold(f64::NEG_INFINITY, f64::max);
    let d_rot = ((1.0 - max_dot) / 2.0).clamp(0.0, 1.0);
    Ok(0.5 * d_pos + 0.5 * d_rot)
}

/// Views surviving the coverage discard, in index order.
pub fn surviving_views(masks: &[Mask]) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = masks
        .iter()
        .enumerate()
        .map(|(i, m)| (i, m.count() as f64 / m.len().max(1) as f64))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let drop = (DISCARD_FRACTION * masks.len() as f64).floor() as usize;
    let mut keep: Vec<usize> = order[drop..].iter().map(|&(i, _)| i).collect();
    keep.sort_unstable();
    keep
}

/// Greedy selection: best completeness first, then the best combined score.
pub fn select_views(masks: &[Mask], cams: &[Camera], cfg: &ViewSelectConfig) -> Result<ViewSelection> {
    cfg.validate()?;
    if masks.len() != cams.len() {
        return Err(Error::DimensionMismatch(format!("{} masks, {} cameras", masks.len(), cams.len())));
    }
    let cand = surviving_views(masks);
    if cand.is_empty() {
        return Err(Error::InsufficientData("no views survive the coverage discard".into()));
    }
    if cfg.k > cand.len() {
        log::warn!("requested {} views but only {} survive; truncating", cfg.k, cand.len());
    }
    let shapes: Vec<f64> = cand
        .par_iter()
        .map(|&i| q_shape(&masks[i]).unwrap_or(0.0))
        .collect();
    let all: Vec<&Camera> = cand.iter().map(|&i| &cams[i]).collect();

    let mut first = 0;
    for j in 1..cand.len() {
        if shapes[j] > shapes[first] {
            first = j;
        }
    }
    let mut picked = vec![first];
    let mut scores = vec![ViewScore {
        view: cand[first],
        q_shape: shapes[first],
        q_view: 0.0,
        q_total: cfg.lambda_shape * shapes[first],
    }];
    while picked.len() < cfg.k.min(cand.len()) {
        let sel: Vec<&Camera> = picked.iter().map(|&j| all[j]).collect();
        let scored: Vec<Option<ViewScore>> = (0..cand.len())
            .into_par_iter()
            .map(|j| {
                if picked.contains(&j) {
                    return Ok(None);
                }
                let qv = q_view(all[j], &sel, &all)?;
                Ok(Some(ViewScore {
                    view: cand[j],
                    q_shape: shapes[j],
                    q_view: qv,
                    q_total: cfg.lambda_shape * shapes[j] + cfg.lambda_view * qv,
                }))
            })
            .collect::<Result<_>>()?;
        let mut best: Option<(usize, ViewScore)> = None;
        for (j, s) in scored.into_iter().enumerate() {
            if let Some(s) = s {
                if best.is_none_or(|(_, b)| s.q_total > b.q_total) {
                    best = Some((j, s));
                }
            }
        }
        let (j, s) = best.expect("an unpicked candidate remains");
        picked.push(j);
        scores.push(s);
    }
    Ok(ViewSelection {
        selected: scores.iter().map(|s| s.view).collect(),
        scores,
        candidates: cand,
    })
}
