//! Slow reference implementations that the self-test and the acceptance
//! suite compare the fast geometry, gradient, reward and delay code against.
//!
//! Nothing here calls the accelerated query paths of `visracer_core`; the
//! geometry references only read the centerline samples and the edge
//! polylines and then search them exhaustively.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use visracer_core::geometry::{DEFAULT_RAY_RANGE, N_RAYS, RAY_STEP};
use visracer_core::{CameraSpec, Pose, Track, TrackSpec, Vec2};

fn seg_dist(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let (px, py) = (p.x - a.x, p.y - a.y);
    let len2 = ex * ex + ey * ey;
    let t = if len2 == 0.0 { 0.0 } else { ((px * ex + py * ey) / len2).clamp(0.0, 1.0) };
    let (dx, dy) = (px - t * ex, py - t * ey);
    (t, (dx * dx + dy * dy).sqrt())
}

/// Exhaustive nearest point on the closed centerline polyline: `(s, signed lateral)`.
pub fn brute_projection(track: &Track, p: Vec2) -> (f64, f64) {
    let pts: Vec<Vec2> = track.samples().iter().map(|c| c.position).collect();
    let n = pts.len();
    let mut best = (f64::INFINITY, 0, 0.0);
    for i in 0..n {
        let (t, d) = seg_dist(p, pts[i], pts[(i + 1) % n]);
        if d < best.0 {
            best = (d, i, t);
        }
    }
    let (d, i, t) = best;
    let (a, b) = (pts[i], pts[(i + 1) % n]);
    let q = Vec2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
    let side = (b.x - a.x) * (p.y - q.y) - (b.y - a.y) * (p.x - q.x);
    let s = ((i as f64 + t) * track.step()).rem_euclid(track.length());
    (s, if side < 0.0 { -d } else { d })
}

/// Exhaustive distance to a closed polyline.
pub fn brute_polyline_distance(pts: &[Vec2], p: Vec2) -> f64 {
    let n = pts.len();
    (0..n).map(|i| seg_dist(p, pts[i], pts[(i + 1) % n]).1).fold(f64::INFINITY, f64::min)
}

/// Sphere-traced distance along a ray to the first edge, clamped to `d_max`.
///
/// Each step advances by a lower bound on the distance to any edge segment,
/// so the march cannot jump over a crossing.
pub fn marched_ray(track: &Track, o: Vec2, dir: Vec2, d_max: f64) -> f64 {
    const MARGIN: f64 = 5.0;
    const HIT: f64 = 1e-9;
    let end = o + dir * d_max;
    let (x0, x1) = (o.x.min(end.x) - MARGIN, o.x.max(end.x) + MARGIN);
    let (y0, y1) = (o.y.min(end.y) - MARGIN, o.y.max(end.y) + MARGIN);
    let mut segs = Vec::new();
    for edge in [track.left_edge(), track.right_edge()] {
        let n = edge.len();
        for i in 0..n {
            let (a, b) = (edge[i], edge[(i + 1) % n]);
            if a.x.max(b.x) >= x0 && a.x.min(b.x) <= x1 && a.y.max(b.y) >= y0 && a.y.min(b.y) <= y1 {
                segs.push((a, b));
            }
        }
    }
    let mut t = 0.0;
    for _ in 0..1_000_000 {
        if t >= d_max {
            return d_max;
        }
        let p = o + dir * t;
        let d = segs.iter().map(|&(a, b)| seg_dist(p, a, b).1).fold(MARGIN, f64::min);
        if d < HIT {
            return t;
        }
        t += d;
    }
    t.min(d_max)
}

/// Reference tracks for the geometry suite.
pub fn oracle_tracks() -> Vec<(&'static str, Track)> {
    [
        ("circle", TrackSpec::circle(50.0, 10.0, 0.5)),
        ("stadium", TrackSpec::stadium(150.0, 30.0, 10.0, 0.5)),
        ("default", TrackSpec::default_circuit()),
    ]
    .into_iter()
    .map(|(n, s)| (n, Track::build(&s).expect("reference track builds")))
    .collect()
}

#[derive(Clone, Debug, Default)]
pub struct GeometryErrors {
    pub poses: usize,
    pub projection_s: f64,
    pub projection_lateral: f64,
    pub ray: f64,
    pub min_edge: f64,
    /// Largest `|kappa - 1/R|` (circle tracks only).
    pub circle_curvature: f64,
    /// Largest `|lateral - (R - |p|)|` on circle tracks.
    pub circle_lateral: f64,
}

impl GeometryErrors {
    pub fn max_distance_error(&self) -> f64 {
        self.projection_s.max(self.projection_lateral).max(self.ray).max(self.min_edge)
    }
}

/// Random on-track pose: uniform arclength, lateral within the road, yaw
/// within 0.5 rad of the centerline direction.
pub fn random_pose(track: &Track, rng: &mut impl Rng) -> Pose {
    let s = rng.random_range(0.0..track.length());
    let half = track.width() / 2.0 - 0.05;
    let lat = rng.random_range(-half..half);
    let tan = track.tangent_at(s);
    Pose::new(track.point_at(s) + tan.perp() * lat, tan.angle() + rng.random_range(-0.5..0.5))
}

/// Compares projection, rays and min-edge distances with the references on
/// `poses` random poses per track, and circle curvature with `1/R`.
pub fn geometry_suite(tracks: &[(&str, Track)], poses: usize, seed: u64) -> GeometryErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = GeometryErrors::default();
    for (name, track) in tracks {
        let l = track.length();
        for _ in 0..poses {
            let pose = random_pose(track, &mut rng);
            let p = pose.position;
            let proj = track.project(p).expect("on-track pose projects");
            let (s_ref, lat_ref) = brute_projection(track, p);
            let ds = (proj.s - s_ref).rem_euclid(l);
            e.projection_s = e.projection_s.max(ds.min(l - ds));
            e.projection_lateral = e.projection_lateral.max((proj.lateral - lat_ref).abs());

            let rays = track.ray_edge_distances(&pose, DEFAULT_RAY_RANGE).expect("on track");
            for (i, &d) in rays.iter().enumerate().take(N_RAYS) {
                let dir = Vec2::from_angle(pose.yaw - std::f64::consts::FRAC_PI_2 + i as f64 * RAY_STEP);
                e.ray = e.ray.max((d - marched_ray(track, p, dir, DEFAULT_RAY_RANGE)).abs());
            }

            let (dl, dr) = track.min_edge_distances(&pose).expect("on track");
            e.min_edge = e
                .min_edge
                .max((dl - brute_polyline_distance(track.left_edge(), p)).abs())
                .max((dr - brute_polyline_distance(track.right_edge(), p)).abs());

            if *name == "circle" {
                let r = track.spec().control_points[0][0];
                e.circle_curvature = e.circle_curvature.max((track.curvature_at(proj.s) - 1.0 / r).abs());
                e.circle_lateral = e.circle_lateral.max((proj.lateral - (r - p.norm())).abs());
            }
            e.poses += 1;
        }
    }
    e
}

/// Small camera used where image size does not matter.
pub fn tiny_camera() -> CameraSpec {
    CameraSpec {
        width: 16,
        height: 8,
        ..CameraSpec::default()
    }
}
