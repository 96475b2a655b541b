use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::OnceLock;

use proptest::prelude::*;

use visracer_core::dynamics::{resolve_walls, step, CONTROL_DT};
use visracer_core::geometry::{progress_delta, DEFAULT_RAY_RANGE, N_RAYS};
use visracer_core::render::{depth_to_space, render_view, space_to_depth};
use visracer_core::{Action, CameraSpec, Frame, Pose, Standardizer, Track, TrackSpec, Vec2, VehicleParams, VehicleState};

const R: f64 = 50.0;
const W: f64 = 10.0;

fn circle() -> &'static Track {
    static T: OnceLock<Track> = OnceLock::new();
    T.get_or_init(|| Track::build(&TrackSpec::circle(R, W, 0.5)).unwrap())
}

fn circuit() -> &'static Track {
    static T: OnceLock<Track> = OnceLock::new();
    T.get_or_init(|| Track::build(&TrackSpec::default_circuit()).unwrap())
}

#[test]
fn circle_length_matches_circumference() {
    let t = circle();
    assert!((t.length() - TAU * R).abs() < 1e-2, "{}", t.length());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // polar point (r, theta) on a CCW circle starting at (R, 0):
    // s = theta * R, lateral = R - r (left of travel is the inside). Feet land
    // on 0.5 m chords, which shifts s by up to |R - r| * step / (2R).
    #[test]
    fn circle_projection_is_polar(theta in 0.0..TAU, r in (R - W / 2.0 + 0.01)..(R + W / 2.0 - 0.01)) {
        let t = circle();
        let p = t.project(Vec2::new(r * theta.cos(), r * theta.sin())).unwrap();
        let s_expected = theta * t.length() / TAU;
        let ds = (p.s - s_expected).rem_euclid(t.length());
        let tol = (R - r).abs() * t.step() / (2.0 * R) + 1e-3;
        prop_assert!(ds.min(t.length() - ds) < tol, "s {} vs {}", p.s, s_expected);
        prop_assert!((p.lateral - (R - r)).abs() < 1e-3, "lateral {} vs {}", p.lateral, R - r);
    }

    // with the heading along the tangent, the rightmost ray points straight
    // out and the leftmost straight in
    #[test]
    fn circle_side_rays_hit_the_edges(theta in 0.0..TAU, r in (R - W / 2.0 + 0.01)..(R + W / 2.0 - 0.01)) {
        let t = circle();
        let pose = Pose::new(Vec2::new(r * theta.cos(), r * theta.sin()), theta + FRAC_PI_2);
        let rays = t.ray_edge_distances(&pose, DEFAULT_RAY_RANGE).unwrap();
        prop_assert!((rays[0] - (R + W / 2.0 - r)).abs() < 1e-3, "right {} vs {}", rays[0], R + W / 2.0 - r);
        prop_assert!((rays[N_RAYS - 1] - (r - (R - W / 2.0))).abs() < 1e-3);
        let (dl, dr) = t.min_edge_distances(&pose).unwrap();
        prop_assert!((dl - (r - (R - W / 2.0))).abs() < 1e-3);
        prop_assert!((dr - (R + W / 2.0 - r)).abs() < 1e-3);
        prop_assert!((t.curvature_at(theta * R) - 1.0 / R).abs() < 1e-4);
    }

    #[test]
    fn progress_telescopes(start in 0.0..100.0f64, steps in prop::collection::vec(-20.0..40.0f64, 1..200)) {
        let l = 100.0;
        let mut unwrapped = start;
        let mut s = start;
        let mut sum = 0.0;
        for d in steps {
            unwrapped += d;
            let next = unwrapped.rem_euclid(l);
            sum += progress_delta(l, s, next);
            s = next;
        }
        prop_assert!((sum - (unwrapped - start)).abs() < 1e-9);
    }

    #[test]
    fn progress_is_antisymmetric(a in 0.0..100.0f64, b in 0.0..100.0f64) {
        prop_assume!(((a - b).abs() - 50.0).abs() > 1e-6);
        prop_assert!((progress_delta(100.0, a, b) + progress_delta(100.0, b, a)).abs() < 1e-12);
    }

    #[test]
    fn dynamics_is_deterministic(actions in prop::collection::vec((-0.6..0.6f64, -1.0..1.0f64), 1..100), v0 in 0.0..20.0f64) {
        let t = circuit();
        let vp = VehicleParams::default();
        let run = || {
            let mut st = VehicleState::with_speed(Pose::new(t.point_at(0.0), t.tangent_at(0.0).angle()), v0);
            for &(s, a) in &actions {
                st = resolve_walls(t, &step(&st, Action::new(s, a), &vp, CONTROL_DT).unwrap(), &vp).0;
            }
            st
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.pose.position.x.to_bits(), b.pose.position.x.to_bits());
        prop_assert_eq!(a.pose.yaw.to_bits(), b.pose.yaw.to_bits());
        prop_assert_eq!(a.velocity.y.to_bits(), b.velocity.y.to_bits());
        prop_assert_eq!(a.tick, b.tick);
    }

    // after resolution the body is inside the walls and never moving outward
    #[test]
    fn walls_contain_the_vehicle(s in 0.0..490.0f64, lat in -9.0..9.0f64, vx in -30.0..30.0f64, vy in -30.0..30.0f64) {
        let t = circuit();
        let vp = VehicleParams::default();
        let tan = t.tangent_at(s);
        let mut st = VehicleState::at_rest(Pose::new(t.point_at(s) + tan.perp() * lat, tan.angle()));
        st.velocity = Vec2::new(vx, vy);
        let (out, hit) = resolve_walls(t, &st, &vp);
        let p = t.project_unbounded(out.pose.position);
        prop_assert!(p.lateral.abs() <= vp.wall_offset(t) + 1e-6);
        if lat.abs() < vp.wall_offset(t) - 1e-6 {
            prop_assert!(!hit);
        }
        if hit {
            let outward = p.segment_dir.perp() * p.lateral.signum();
            prop_assert!(out.velocity.dot(outward) <= 1e-9);
        }
    }

    #[test]
    fn space_to_depth_inverts(h in 1usize..6, w in 1usize..6, c in 1usize..4, block in 1usize..4, seed in any::<u64>()) {
        let (h, w) = (h * block, w * block);
        let data: Vec<u8> = (0..h * w * c).map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8).collect();
        let f = Frame { width: w, height: h, channels: c, data, timestamp: 3 };
        let (d, shape) = space_to_depth(&f, block).unwrap();
        prop_assert_eq!(shape, [h / block, w / block, c * block * block]);
        let back = depth_to_space(&d, shape, block, 3).unwrap();
        prop_assert_eq!(back.data, f.data);
    }

    #[test]
    fn standardizer_inverts(rows in prop::collection::vec(prop::collection::vec(-100.0..100.0f64, 4), 2..20)) {
        let std = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        for r in &rows {
            let back = std.invert(&std.apply(r));
            for (a, b) in back.iter().zip(r) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
        }
    }
}

#[test]
fn frames_are_a_pure_function_of_pose() {
    let t = Track::build(&TrackSpec::default_circuit()).unwrap();
    let cam = CameraSpec::default();
    let pose = Pose::new(t.point_at(123.0), t.tangent_at(123.0).angle());
    let a = render_view(&t, &pose, &cam, 7);
    let b = render_view(&t, &pose, &cam, 7);
    assert_eq!(a.data, b.data);
    let c = render_view(&t, &Pose::new(t.point_at(200.0), t.tangent_at(200.0).angle()), &cam, 7);
    assert_ne!(a.data, c.data);
}
