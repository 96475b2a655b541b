//! Closed-circuit track geometry.
//!
//! A [`Track`] is a uniform-arclength polyline centerline with linearly
//! interpolated queries, constant width, and left/right edge polylines offset
//! by half the width along each sample's normal. Curvature is signed,
//! positive for left (counter-clockwise) turns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec2::{point_segment, wrap_angle, Vec2};

/// Rays in the frontal fan: 180 degrees at 15 degree increments, both ends included.
pub const N_RAYS: usize = 13;
pub const RAY_STEP: f64 = std::f64::consts::PI / 12.0;
pub const DEFAULT_RAY_RANGE: f64 = 100.0;
/// Distance beyond the edges at which on-track queries give up.
pub const OFF_TRACK_MARGIN: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate track spec: {0}")]
    DegenerateSpec(String),
    #[error("track edges self-intersect near s = {s:.2} m")]
    SelfIntersectingEdges { s: f64 },
    #[error("point is {distance:.2} m from the centerline (limit {limit:.2} m)")]
    OffTrackTooFar { distance: f64, limit: f64 },
    #[error("pose is off track (lateral offset {lateral:.2} m)")]
    OffTrack { lateral: f64 },
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    /// Closed loop of points; the last connects back to the first.
    pub control_points: Vec<[f64; 2]>,
    pub width: f64,
    pub resample_step: f64,
}

/// Building block for analytic track layouts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Piece {
    Straight(f64),
    /// Signed sweep angle (positive turns left) on the given radius.
    Arc { radius: f64, angle: f64 },
}

impl TrackSpec {
    /// Traces `pieces` from the origin heading +x, emitting a control point
    /// roughly every `spacing` meters. The caller is responsible for closure.
    pub fn from_pieces(pieces: &[Piece], width: f64, resample_step: f64, spacing: f64) -> Self {
        let mut pos = Vec2::ZERO;
        let mut heading = 0.0f64;
        let mut pts = vec![[0.0, 0.0]];
        for piece in pieces {
            match *piece {
                Piece::Straight(len) => {
                    let n = (len / spacing).ceil().max(1.0) as usize;
                    let start = pos;
                    let dir = Vec2::from_angle(heading);
                    for k in 1..=n {
                        pos = start + dir * (len * k as f64 / n as f64);
                        pts.push([pos.x, pos.y]);
                    }
                }
                Piece::Arc { radius, angle } => {
                    let n = (radius * angle.abs() / spacing).ceil().max(1.0) as usize;
                    let sign = angle.signum();
                    let center = pos + Vec2::from_angle(heading).perp() * (radius * sign);
                    let h0 = heading;
                    for k in 1..=n {
                        let h = h0 + angle * k as f64 / n as f64;
                        pos = center - Vec2::from_angle(h).perp() * (radius * sign);
                        pts.push([pos.x, pos.y]);
                    }
                    heading = h0 + angle;
                }
            }
        }
        // closing point duplicates the start
        if let (Some(first), Some(last)) = (pts.first().copied(), pts.last().copied()) {
            if Vec2::new(first[0] - last[0], first[1] - last[1]).norm() < 1e-6 {
                pts.pop();
            }
        }
        Self {
            control_points: pts,
            width,
            resample_step,
        }
    }

    /// Counter-clockwise circle centered at the origin, starting at (r, 0).
    pub fn circle(radius: f64, width: f64, resample_step: f64) -> Self {
        let n = ((std::f64::consts::TAU * radius).ceil() as usize).max(16);
        let control_points = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self {
            control_points,
            width,
            resample_step,
        }
    }

    /// Two straights joined by semicircular caps, counter-clockwise, starting
    /// at the middle of the bottom straight.
    pub fn stadium(straight: f64, radius: f64, width: f64, resample_step: f64) -> Self {
        use std::f64::consts::PI;
        let h = straight / 2.0;
        Self::from_pieces(
            &[
                Piece::Straight(h),
                Piece::Arc { radius, angle: PI },
                Piece::Straight(straight),
                Piece::Arc { radius, angle: PI },
                Piece::Straight(h),
            ],
            width,
            resample_step,
            1.0,
        )
    }

    /// Stadium whose top straight carries a left-right-left chicane.
    /// The start line is in the middle of the bottom straight.
    pub fn stadium_chicane(
        straight: f64,
        radius: f64,
        chicane_radius: f64,
        chicane_angle: f64,
        width: f64,
        resample_step: f64,
    ) -> Self {
        use std::f64::consts::PI;
        let (cr, ca) = (chicane_radius, chicane_angle);
        let chicane = [
            Piece::Arc { radius: cr, angle: ca },
            Piece::Arc { radius: cr, angle: -2.0 * ca },
            Piece::Arc { radius: cr, angle: ca },
        ];
        // longitudinal extent of the chicane along the straight
        let chicane_len = 4.0 * cr * ca.sin();
        let lead = (straight - chicane_len) / 2.0;
        let mut pieces = vec![
            Piece::Straight(straight / 2.0),
            Piece::Arc { radius, angle: PI },
            Piece::Straight(lead),
        ];
        pieces.extend_from_slice(&chicane);
        pieces.extend_from_slice(&[
            Piece::Straight(lead),
            Piece::Arc { radius, angle: PI },
            Piece::Straight(straight / 2.0),
        ]);
        Self::from_pieces(&pieces, width, resample_step, 1.0)
    }

    /// The default evaluation circuit.
    pub fn default_circuit() -> Self {
        Self::stadium_chicane(150.0, 30.0, 25.0, 30f64.to_radians(), 10.0, 0.5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterlineSample {
    pub s: f64,
    pub position: Vec2,
    pub tangent: Vec2,
    pub curvature: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec2, yaw: f64) -> Self {
        Self {
            position,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.yaw)
    }
}

/// Nearest point on the centerline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub s: f64,
    /// Signed perpendicular offset, positive to the left of the tangent.
    pub lateral: f64,
    pub segment: usize,
    pub t: f64,
    pub point: Vec2,
    pub segment_dir: Vec2,
}

/// Uniform grid over the segments of a closed polyline. Each cell keeps the
/// segments within `reach` (plus the cell half-diagonal) of its center, sorted
/// by distance, so nearest-segment queries can stop early.
#[derive(Clone, Debug)]
struct SegmentGrid {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    half_diag: f64,
    reach: f64,
    starts: Vec<u32>,
    entries: Vec<(f32, u32)>,
}

impl SegmentGrid {
    fn build(points: &[Vec2], reach: f64, cell: f64) -> Self {
        let n = points.len();
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let pad = reach + cell;
        let origin = lo - Vec2::new(pad, pad);
        let nx = ((hi.x - lo.x + 2.0 * pad) / cell).ceil() as usize + 1;
        let ny = ((hi.y - lo.y + 2.0 * pad) / cell).ceil() as usize + 1;
        let half_diag = cell * std::f64::consts::FRAC_1_SQRT_2;
        let mut buckets: Vec<Vec<(f32, u32)>> = vec![Vec::new(); nx * ny];
        let r = reach + half_diag;
        for i in 0..n {
            let (a, b) = (points[i], points[(i + 1) % n]);
            let x0 = (((a.x.min(b.x) - r - origin.x) / cell).floor().max(0.0)) as usize;
            let x1 = (((a.x.max(b.x) + r - origin.x) / cell).ceil() as usize).min(nx - 1);
            let y0 = (((a.y.min(b.y) - r - origin.y) / cell).floor().max(0.0)) as usize;
            let y1 = (((a.y.max(b.y) + r - origin.y) / cell).ceil() as usize).min(ny - 1);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    let c = origin + Vec2::new((cx as f64 + 0.5) * cell, (cy as f64 + 0.5) * cell);
                    let (_, d) = point_segment(c, a, b);
                    if d <= r {
                        buckets[cy * nx + cx].push((d as f32, i as u32));
                    }
                }
            }
        }
        let mut starts = Vec::with_capacity(nx * ny + 1);
        let mut entries = Vec::new();
        for mut b in buckets {
            b.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            starts.push(entries.len() as u32);
            entries.extend(b);
        }
        starts.push(entries.len() as u32);
        Self {
            origin,
            cell,
            nx,
            ny,
            half_diag,
            reach,
            starts,
            entries,
        }
    }

    /// Nearest segment to `p` if one lies within `limit` (which must not exceed `reach`).
    fn nearest(&self, points: &[Vec2], p: Vec2, limit: f64) -> Option<(usize, f64, f64)> {
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0) || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        let idx = fy as usize * self.nx + fx as usize;
        let cell = &self.entries[self.starts[idx] as usize..self.starts[idx + 1] as usize];
        let n = points.len();
        let limit = limit.min(self.reach);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut bound = limit;
        for &(dc, seg) in cell {
            // tolerance covers the f32 rounding of the stored distance
            if dc as f64 - self.half_diag > bound + 1e-4 {
                break;
            }
            let i = seg as usize;
            let (t, d) = point_segment(p, points[i], points[(i + 1) % n]);
            let better = match best {
                None => d <= limit,
                Some((bi, _, bd)) => d < bd || (d == bd && i < bi),
            };
            if better {
                best = Some((i, t, d));
                bound = d;
            }
        }
        best
    }
}

#[derive(Clone, Debug)]
pub struct Track {
    spec: TrackSpec,
    samples: Vec<CenterlineSample>,
    positions: Vec<Vec2>,
    left: Vec<Vec2>,
    right: Vec<Vec2>,
    length: f64,
    step: f64,
    width: f64,
    center_grid: SegmentGrid,
    left_grid: SegmentGrid,
    right_grid: SegmentGrid,
}

/// Closed centripetal Catmull-Rom through the control points, densely sampled.
fn catmull_rom_dense(ctrl: &[Vec2], max_spacing: f64) -> Vec<Vec2> {
    let n = ctrl.len();
    let mut out = Vec::new();
    for i in 0..n {
        let p0 = ctrl[(i + n - 1) % n];
        let p1 = ctrl[i];
        let p2 = ctrl[(i + 1) % n];
        let p3 = ctrl[(i + 2) % n];
        let knot = |a: Vec2, b: Vec2| a.distance(b).sqrt().max(1e-12);
        let t0 = 0.0;
        let t1 = t0 + knot(p0, p1);
        let t2 = t1 + knot(p1, p2);
        let t3 = t2 + knot(p2, p3);
        let subdiv = ((p1.distance(p2) / max_spacing).ceil() as usize).max(1);
        for k in 0..subdiv {
            let t = t1 + (t2 - t1) * k as f64 / subdiv as f64;
            let a1 = p0 * ((t1 - t) / (t1 - t0)) + p1 * ((t - t0) / (t1 - t0));
            let a2 = p1 * ((t2 - t) / (t2 - t1)) + p2 * ((t - t1) / (t2 - t1));
            let a3 = p2 * ((t3 - t) / (t3 - t2)) + p3 * ((t - t2) / (t3 - t2));
            let b1 = a1 * ((t2 - t) / (t2 - t0)) + a2 * ((t - t0) / (t2 - t0));
            let b2 = a2 * ((t3 - t) / (t3 - t1)) + a3 * ((t - t1) / (t3 - t1));
            out.push(b1 * ((t2 - t) / (t2 - t1)) + b2 * ((t - t1) / (t2 - t1)));
        }
    }
    out
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Index of a segment of `poly` that crosses a non-adjacent segment of `other`
/// (or of `poly` itself when `other` is `None`).
fn find_crossing(poly: &[Vec2], other: Option<&[Vec2]>) -> Option<usize> {
    let n = poly.len();
    let q = other.unwrap_or(poly);
    let m = q.len();
    let bbox = |a: Vec2, b: Vec2| (a.x.min(b.x), a.x.max(b.x), a.y.min(b.y), a.y.max(b.y));
    let qboxes: Vec<_> = (0..m).map(|j| bbox(q[j], q[(j + 1) % m])).collect();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (x0, x1, y0, y1) = bbox(a, b);
        for j in 0..m {
            if other.is_none() {
                let gap = (i as isize - j as isize).rem_euclid(n as isize) as usize;
                if gap <= 1 || gap >= n - 1 {
                    continue;
                }
            }
            let (u0, u1, v0, v1) = qboxes[j];
            if u0 > x1 || u1 < x0 || v0 > y1 || v1 < y0 {
                continue;
            }
            if segments_intersect(a, b, q[j], q[(j + 1) % m]) {
                return Some(i);
            }
        }
    }
    None
}

impl Track {
    pub fn build(spec: &TrackSpec) -> Result<Self> {
        if spec.control_points.len() < 4 {
            return Err(GeometryError::DegenerateSpec(format!(
                "{} control points (need at least 4)",
                spec.control_points.len()
            )));
        }
        if !(spec.resample_step > 0.0) || !spec.resample_step.is_finite() {
            return Err(GeometryError::DegenerateSpec("resample_step must be positive".into()));
        }
        if !(spec.width > 0.0) || !spec.width.is_finite() {
            return Err(GeometryError::DegenerateSpec("width must be positive".into()));
        }
        let mut ctrl: Vec<Vec2> = spec.control_points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        if ctrl.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::DegenerateSpec("non-finite control point".into()));
        }
        if ctrl.first().unwrap().distance(*ctrl.last().unwrap()) < 1e-9 {
            ctrl.pop();
        }
        ctrl.dedup_by(|a, b| a.distance(*b) < 1e-9);
        if ctrl.len() < 4 {
            return Err(GeometryError::DegenerateSpec("fewer than 4 distinct control points".into()));
        }

        let dense = catmull_rom_dense(&ctrl, spec.resample_step / 8.0);
        let nd = dense.len();
        let mut cum = Vec::with_capacity(nd + 1);
        cum.push(0.0);
        for i in 0..nd {
            let d = dense[i].distance(dense[(i + 1) % nd]);
            cum.push(cum[i] + d);
        }
        let length = cum[nd];
        let n = (length / spec.resample_step).round() as usize;
        if n < 8 {
            return Err(GeometryError::DegenerateSpec(format!(
                "track length {length:.3} m is too short for step {}",
                spec.resample_step
            )));
        }
        let step = length / n as f64;

        let mut positions = Vec::with_capacity(n);
        let mut j = 0;
        for i in 0..n {
            let s = i as f64 * step;
            while cum[j + 1] < s {
                j += 1;
            }
            let seg = cum[j + 1] - cum[j];
            let t = if seg > 0.0 { (s - cum[j]) / seg } else { 0.0 };
            positions.push(dense[j].lerp(dense[(j + 1) % nd], t));
        }

        let tangents: Vec<Vec2> = (0..n)
            .map(|i| (positions[(i + 1) % n] - positions[(i + n - 1) % n]).normalized())
            .collect();
        let angles: Vec<f64> = tangents.iter().map(|t| t.angle()).collect();
        let samples: Vec<CenterlineSample> = (0..n)
            .map(|i| {
                let dtheta = wrap_angle(angles[(i + 1) % n] - angles[(i + n - 1) % n]);
                CenterlineSample {
                    s: i as f64 * step,
                    position: positions[i],
                    tangent: tangents[i],
                    curvature: dtheta / (2.0 * step),
                }
            })
            .collect();

        let half = spec.width / 2.0;
        if let Some(bad) = samples.iter().find(|c| c.curvature.abs() * half >= 1.0) {
            return Err(GeometryError::SelfIntersectingEdges { s: bad.s });
        }
        let left: Vec<Vec2> = samples.iter().map(|c| c.position + c.tangent.perp() * half).collect();
        let right: Vec<Vec2> = samples.iter().map(|c| c.position - c.tangent.perp() * half).collect();
        let crossing = find_crossing(&left, None)
            .or_else(|| find_crossing(&right, None))
            .or_else(|| find_crossing(&left, Some(&right)));
        if let Some(i) = crossing {
            return Err(GeometryError::SelfIntersectingEdges { s: samples[i].s });
        }

        let reach = 2.0 * spec.width + OFF_TRACK_MARGIN;
        let cell = (spec.width / 4.0).clamp(0.5, 4.0);
        Ok(Self {
            spec: spec.clone(),
            center_grid: SegmentGrid::build(&positions, reach, cell),
            left_grid: SegmentGrid::build(&left, reach, cell),
            right_grid: SegmentGrid::build(&right, reach, cell),
            samples,
            positions,
            left,
            right,
            length,
            step,
            width: spec.width,
        })
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn samples(&self) -> &[CenterlineSample] {
        &self.samples
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn left_edge(&self) -> &[Vec2] {
        &self.left
    }

    pub fn right_edge(&self) -> &[Vec2] {
        &self.right
    }

    pub fn max_abs_curvature(&self) -> f64 {
        self.samples.iter().map(|c| c.curvature.abs()).fold(0.0, f64::max)
    }

    pub fn wrap_s(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.length);
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    /// Centerline point at arclength `s` (wrapped).
    pub fn point_at(&self, s: f64) -> Vec2 {
        let (i, t) = self.locate(s);
        self.positions[i].lerp(self.positions[(i + 1) % self.positions.len()], t)
    }

    /// Unit tangent at `s`, interpolated between samples.
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        let (i, t) = self.locate(s);
        let n = self.samples.len();
        self.samples[i].tangent.lerp(self.samples[(i + 1) % n].tangent, t).normalized()
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        let n = self.samples.len();
        let (a, b) = (self.samples[i].curvature, self.samples[(i + 1) % n].curvature);
        a + (b - a) * t
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = self.wrap_s(s);
        let n = self.samples.len();
        let f = s / self.step;
        let i = (f.floor() as usize).min(n - 1);
        (i, (f - i as f64).clamp(0.0, 1.0))
    }

    fn projection_from(&self, p: Vec2, seg: usize, t: f64, dist: f64) -> Projection {
        let n = self.positions.len();
        let (a, b) = (self.positions[seg], self.positions[(seg + 1) % n]);
        let dir = (b - a).normalized();
        let point = a.lerp(b, t);
        let side = dir.cross(p - point);
        let lateral = if side < 0.0 { -dist } else { dist };
        Projection {
            s: self.wrap_s((seg as f64 + t) * self.step),
            lateral,
            segment: seg,
            t,
            point,
            segment_dir: dir,
        }
    }

    /// Nearest centerline point. Fails if `p` is more than twice the track
    /// width from the centerline.
    pub fn project(&self, p: Vec2) -> Result<Projection> {
        let limit = 2.0 * self.width;
        match self.center_grid.nearest(&self.positions, p, limit) {
            Some((seg, t, d)) => Ok(self.projection_from(p, seg, t, d)),
            None => {
                let (seg, t, d) = self.brute_nearest(p);
                if d <= limit {
                    Ok(self.projection_from(p, seg, t, d))
                } else {
                    Err(GeometryError::OffTrackTooFar { distance: d, limit })
                }
            }
        }
    }

    /// Nearest centerline point without a distance limit.
    pub fn project_unbounded(&self, p: Vec2) -> Projection {
        if let Some((seg, t, d)) = self.center_grid.nearest(&self.positions, p, 2.0 * self.width) {
            return self.projection_from(p, seg, t, d);
        }
        let (seg, t, d) = self.brute_nearest(p);
        self.projection_from(p, seg, t, d)
    }

    fn brute_nearest(&self, p: Vec2) -> (usize, f64, f64) {
        let n = self.positions.len();
        (0..n)
            .map(|i| {
                let (t, d) = point_segment(p, self.positions[i], self.positions[(i + 1) % n]);
                (i, t, d)
            })
            .fold((0, 0.0, f64::INFINITY), |acc, x| if x.2 < acc.2 { x } else { acc })
    }

    /// Distance from `p` to the centerline if it is at most `limit`.
    /// Cheap for points far from the track.
    pub fn centerline_distance_within(&self, p: Vec2, limit: f64) -> Option<f64> {
        self.center_grid.nearest(&self.positions, p, limit).map(|(_, _, d)| d)
    }

    /// Wraparound-aware signed progress from `s_prev` to `s_curr`, in `(-L/2, L/2]`.
    pub fn progress_delta(&self, s_prev: f64, s_curr: f64) -> f64 {
        progress_delta(self.length, s_prev, s_curr)
    }

    fn on_track(&self, pose: &Pose) -> Result<Projection> {
        let proj = self.project(pose.position).map_err(|e| match e {
            GeometryError::OffTrackTooFar { distance, .. } => GeometryError::OffTrack { lateral: distance },
            e => e,
        })?;
        if proj.lateral.abs() > self.width / 2.0 + OFF_TRACK_MARGIN {
            return Err(GeometryError::OffTrack { lateral: proj.lateral });
        }
        Ok(proj)
    }

    /// Distances along the 13-ray frontal fan to the first edge crossing,
    /// clamped to `d_max`. Ray `i` points at `yaw - 90deg + i * 15deg`.
    pub fn ray_edge_distances(&self, pose: &Pose, d_max: f64) -> Result<[f64; N_RAYS]> {
        self.on_track(pose)?;
        let mut out = [d_max; N_RAYS];
        let o = pose.position;
        for (i, d) in out.iter_mut().enumerate() {
            let dir = Vec2::from_angle(pose.yaw - std::f64::consts::FRAC_PI_2 + i as f64 * RAY_STEP);
            *d = self.cast(o, dir, d_max);
        }
        Ok(out)
    }

    fn cast(&self, o: Vec2, dir: Vec2, d_max: f64) -> f64 {
        let end = o + dir * d_max;
        let (bx0, bx1) = (o.x.min(end.x), o.x.max(end.x));
        let (by0, by1) = (o.y.min(end.y), o.y.max(end.y));
        let mut best = d_max;
        for edge in [&self.left, &self.right] {
            let n = edge.len();
            for i in 0..n {
                let (a, b) = (edge[i], edge[(i + 1) % n]);
                if a.x.max(b.x) < bx0 || a.x.min(b.x) > bx1 || a.y.max(b.y) < by0 || a.y.min(b.y) > by1 {
                    continue;
                }
                let e = b - a;
                let denom = dir.cross(e);
                if denom.abs() < 1e-15 {
                    continue;
                }
                let ao = a - o;
                let t = ao.cross(e) / denom;
                let u = ao.cross(dir) / denom;
                if t >= 0.0 && t < best && (0.0..=1.0).contains(&u) {
                    best = t;
                }
            }
        }
        best
    }

    /// Minimum Euclidean distance from the pose position to the left and right edges.
    pub fn min_edge_distances(&self, pose: &Pose) -> Result<(f64, f64)> {
        self.on_track(pose)?;
        let p = pose.position;
        let d = |grid: &SegmentGrid, pts: &[Vec2]| {
            grid.nearest(pts, p, grid.reach).map(|(_, _, d)| d).unwrap_or_else(|| {
                let n = pts.len();
                (0..n)
                    .map(|i| point_segment(p, pts[i], pts[(i + 1) % n]).1)
                    .fold(f64::INFINITY, f64::min)
            })
        };
        Ok((d(&self.left_grid, &self.left), d(&self.right_grid, &self.right)))
    }

    /// Signed angle from the centerline tangent to the vehicle heading, in `(-pi, pi]`.
    pub fn heading_angle(&self, pose: &Pose) -> Result<f64> {
        let proj = self.on_track(pose)?;
        Ok(wrap_angle(pose.yaw - self.tangent_at(proj.s).angle()))
    }

    /// Signed lateral offset of an on-track pose.
    pub fn lateral_offset(&self, pose: &Pose) -> Result<f64> {
        Ok(self.on_track(pose)?.lateral)
    }

    pub fn curvature_lookahead(&self, s: f64, distances: &[f64]) -> Vec<f64> {
        distances.iter().map(|d| self.curvature_at(s + d)).collect()
    }
}

/// Wraparound-aware signed delta on a loop of length `length`, in `(-L/2, L/2]`.
pub fn progress_delta(length: f64, s_prev: f64, s_curr: f64) -> f64 {
    let half = length / 2.0;
    half - (half - (s_curr - s_prev)).rem_euclid(length)
}

/// Evenly spaced lookahead distances for the curvature preview.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookaheadWindow {
    pub near: f64,
    pub far: f64,
    pub count: usize,
}

impl Default for LookaheadWindow {
    fn default() -> Self {
        Self {
            near: 20.0,
            far: 60.0,
            count: 10,
        }
    }
}

impl LookaheadWindow {
    pub fn distances(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.near];
        }
        (0..self.count)
            .map(|i| self.near + (self.far - self.near) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}
