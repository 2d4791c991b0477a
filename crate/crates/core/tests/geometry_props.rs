mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use sdf_atlas::geometry::distance::{brute_force_distance, SignedDistance};
use sdf_atlas::geometry::grid::VoxelGrid;
use sdf_atlas::geometry::marching_cubes::marching_cubes;
use sdf_atlas::geometry::mesh::TriMesh;
use sdf_atlas::geometry::sampling::sample_faces;
use sdf_atlas::geometry::vec3::norm;
use sdf_atlas::metrics::hausdorff;

fn ellipsoid() -> TriMesh {
    TriMesh::ellipsoid([5.0, -3.0, 2.0], [30.0, 20.0, 15.0], 3).unwrap()
}

#[test]
fn vertices_have_zero_distance() {
    let m = ellipsoid();
    let sd = SignedDistance::new(&m).unwrap();
    for v in m.vertices() {
        assert!(sd.unsigned(*v) < 1e-12);
        assert!(sd.query(*v).abs() < 1e-12);
    }
}

#[test]
fn signed_distance_matches_brute_force() {
    let m = ellipsoid();
    let sd = SignedDistance::new(&m).unwrap();
    let mut r = rng(4);
    for _ in 0..500 {
        let p = [
            r.random_range(-40.0..50.0),
            r.random_range(-30.0..25.0),
            r.random_range(-20.0..25.0),
        ];
        let d = sd.query(p);
        assert!((d.abs() - brute_force_distance(&m, p)).abs() < 1e-12);
        // Polyhedral inside test against the analytic ellipsoid, away from the surface.
        let q = ((p[0] - 5.0) / 30.0).powi(2)
            + ((p[1] + 3.0) / 20.0).powi(2)
            + ((p[2] - 2.0) / 15.0).powi(2);
        if q < 0.8 {
            assert!(d < 0.0, "{p:?} inside but d = {d}");
        } else if q > 1.2 {
            assert!(d > 0.0, "{p:?} outside but d = {d}");
        }
    }
}

fn sphere_mesh(n: usize) -> TriMesh {
    let lo = -40.0;
    let h = 80.0 / (n - 1) as f64;
    let g = VoxelGrid::from_fn([lo; 3], [h; 3], [n; 3], 1, |p| vec![norm(p) - 30.0]).unwrap();
    marching_cubes(&g, 0, 0.0).unwrap()
}

#[test]
fn grid_refinement_changes_surface_less_than_a_cell() {
    let coarse = sphere_mesh(64);
    let fine = sphere_mesh(128);
    let hd = hausdorff(coarse.vertices(), fine.vertices()).unwrap();
    let cell = 80.0 / 63.0 * 3f64.sqrt();
    assert!(hd < cell, "Hausdorff {hd} vs coarse cell diagonal {cell}");
    coarse.check_watertight().unwrap();
    fine.check_watertight().unwrap();
}

#[test]
fn face_draws_follow_their_masses() {
    let mass = [1.0, 2.0, 3.0, 4.0, 0.0];
    let n = 100_000;
    let counts = sample_faces(&mass, n, &mut rng(8))
        .unwrap()
        .into_iter()
        .fold([0usize; 5], |mut c, f| {
            c[f] += 1;
            c
        });
    assert_eq!(counts[4], 0);
    for (c, m) in counts.iter().zip(mass) {
        let p = m / 10.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
        assert!(
            (*c as f64 - n as f64 * p).abs() <= 4.0 * sigma,
            "{counts:?}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn obj_roundtrip_preserves_mesh(axes in prop::array::uniform3(1.0f64..50.0), level in 0usize..3) {
        let m = TriMesh::ellipsoid([0.0; 3], axes, level).unwrap();
        let back = TriMesh::from_obj(&m.to_obj()).unwrap();
        prop_assert_eq!(back.faces(), m.faces());
        prop_assert_eq!(back.vertices(), m.vertices());
    }

    #[test]
    fn rigid_motion_preserves_distance(angle in -3.0f64..3.0, t in prop::array::uniform3(-20.0f64..20.0),
                                      p in prop::array::uniform3(-60.0f64..60.0)) {
        use sdf_atlas::geometry::vec3::Rigid;
        let m = ellipsoid();
        let rigid = Rigid::from_axis_angle([0.3, 0.9, -0.2], angle, t);
        let moved = m.transformed(&rigid);
        let a = SignedDistance::new(&m).unwrap().query(p);
        let b = SignedDistance::new(&moved).unwrap().query(rigid.apply(p));
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }
}
