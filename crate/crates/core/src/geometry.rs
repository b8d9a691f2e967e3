//! Planar helpers shared by scene synthesis and background removal.
//!
//! Pixel `(x, y)` covers the unit square `[x, x+1) x [y, y+1)`; its center is
//! at `(x + 0.5, y + 0.5)`. Angles are in degrees, counter-clockwise in image
//! coordinates (y pointing down, so visually clockwise).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: (f64, f64),
    pub width: f64,
    pub height: f64,
    pub angle_deg: f64,
}

impl OrientedRect {
    pub fn new(center: (f64, f64), width: f64, height: f64, angle_deg: f64) -> Self {
        Self {
            center,
            width,
            height,
            angle_deg,
        }
    }

    /// Axis-aligned rectangle covering a full `width x height` frame.
    pub fn full_frame(width: usize, height: usize) -> Self {
        Self::new(
            (width as f64 / 2.0, height as f64 / 2.0),
            width as f64,
            height as f64,
            0.0,
        )
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width.is_finite()
            && self.height.is_finite()
            && self.width >= 1.0
            && self.height >= 1.0
            && self.center.0.is_finite()
            && self.center.1.is_finite()
            && self.angle_deg.is_finite())
    }

    fn axes(&self) -> ((f64, f64), (f64, f64)) {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        ((c, s), (-s, c))
    }

    /// Frame coordinates of local point `(u, v)` measured from the center
    /// along the rectangle's width and height axes.
    pub fn to_frame(&self, u: f64, v: f64) -> (f64, f64) {
        let (ax, ay) = self.axes();
        (
            self.center.0 + u * ax.0 + v * ay.0,
            self.center.1 + u * ax.1 + v * ay.1,
        )
    }

    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (ax, ay) = self.axes();
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        (dx * ax.0 + dy * ax.1, dx * ay.0 + dy * ay.1)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.to_local(x, y);
        u.abs() <= self.width / 2.0 && v.abs() <= self.height / 2.0
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        [
            self.to_frame(-hw, -hh),
            self.to_frame(hw, -hh),
            self.to_frame(hw, hh),
            self.to_frame(-hw, hh),
        ]
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// True when every corner lies within the frame, allowing `slack` pixels.
    pub fn fits_in(&self, width: usize, height: usize, slack: f64) -> bool {
        self.corners().iter().all(|&(x, y)| {
            x >= -slack && y >= -slack && x <= width as f64 + slack && y <= height as f64 + slack
        })
    }

    /// Same rectangle, described with the angle folded into `(-45, 45]`.
    pub fn normalized(&self) -> Self {
        let mut r = *self;
        let mut a = r.angle_deg % 180.0;
        if a <= -90.0 {
            a += 180.0;
        } else if a > 90.0 {
            a -= 180.0;
        }
        if a > 45.0 {
            a -= 90.0;
            std::mem::swap(&mut r.width, &mut r.height);
        } else if a <= -45.0 {
            a += 90.0;
            std::mem::swap(&mut r.width, &mut r.height);
        }
        r.angle_deg = a;
        r
    }

    pub fn shrunk(&self, inset_fraction: f64) -> Self {
        let k = 1.0 - 2.0 * inset_fraction;
        Self {
            width: self.width * k,
            height: self.height * k,
            ..*self
        }
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull by monotone chain, counter-clockwise without collinear points.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle. One side of the optimum is collinear
/// with a hull edge, so every edge direction is tried.
pub fn min_area_rect(points: &[(f64, f64)]) -> Option<OrientedRect> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, OrientedRect)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        if len == 0.0 {
            continue;
        }
        let ux = ((b.0 - a.0) / len, (b.1 - a.1) / len);
        let uy = (-ux.1, ux.0);
        let (mut min_u, mut max_u, mut min_v, mut max_v) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let u = p.0 * ux.0 + p.1 * ux.1;
            let v = p.0 * uy.0 + p.1 * uy.1;
            min_u = min_u.min(u);
            max_u = max_u.max(u);
            min_v = min_v.min(v);
            max_v = max_v.max(v);
        }
        let area = (max_u - min_u) * (max_v - min_v);
        if best.as_ref().is_none_or(|(a, _)| area < *a - 1e-9) {
            let cu = (min_u + max_u) / 2.0;
            let cv = (min_v + max_v) / 2.0;
            let center = (cu * ux.0 + cv * uy.0, cu * ux.1 + cv * uy.1);
            let rect = OrientedRect::new(
                center,
                max_u - min_u,
                max_v - min_v,
                ux.1.atan2(ux.0).to_degrees(),
            );
            best = Some((area, rect.normalized()));
        }
    }
    best.map(|(_, r)| r)
}

/// 8-connected components of `mask`; returns a label per pixel (0 = unset)
/// and the area of each label, indexed by `label - 1`.
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; mask.len()];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        let mut area = 0;
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}
