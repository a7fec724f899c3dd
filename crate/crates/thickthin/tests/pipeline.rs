//! End-to-end decompositions and verifier verdicts on generated surfaces.

use std::f64::consts::PI;

use thickthin::axioms::ConstantsBundle;
use thickthin::decomposer::{build_decomposition, derive_constants, prepare, Branch, BubbleDecomposition, Prepared, SearchPlan};
use thickthin::field::{Field, RationalMap};
use thickthin::geometry::MetricModel;
use thickthin::spherenorm::K0_UNIFORM;
use thickthin::surface::{double, BorderedSurface, DensitySource, Grid, MeasuredSurface};
use thickthin::verifier::{fit_f1, verify, verify_counts, verify_prepared};
use thickthin::Error;

fn constants() -> ConstantsBundle {
    derive_constants(&ConstantsBundle::default()).unwrap()
}

fn sphere(field: Field) -> MeasuredSurface {
    let grid = Grid::sphere(800, 32, -40.0, 40.0).unwrap();
    MeasuredSurface::new(MetricModel::sphere(), 0, grid, DensitySource::Field { field }, None, None).unwrap()
}

fn bubble(eps: f64) -> MeasuredSurface {
    sphere(Field::RationalPullback { map: RationalMap::bubble(eps) })
}

fn torus(t: f64) -> MeasuredSurface {
    let m = MetricModel::flat_torus(0.0, t).unwrap();
    let grid = Grid::torus(&m, 1024, 16).unwrap();
    MeasuredSurface::new(m, 1, grid, DensitySource::Field { field: Field::TorusBand { width: 1.0 } }, None, None).unwrap()
}

fn run(s: &MeasuredSurface) -> (Prepared, BubbleDecomposition) {
    let c = constants();
    let plan = SearchPlan::new(7);
    let prep = prepare(s, &c, &plan).unwrap();
    let d = build_decomposition(&prep, &c, &plan).unwrap();
    (prep, d)
}

#[test]
fn deep_bubble_splits_into_two_spheres() {
    let s = bubble(1e-14);
    let (prep, d) = run(&s);
    assert_eq!(d.branch, Branch::Main);
    assert_eq!(d.thin.len(), 1);
    assert_eq!(d.thick.len(), 2);
    assert!(d.audits.pass, "{:?}", d.audits);
    for t in &d.thick {
        assert!((t.mass - 4.0 * PI).abs() < 1e-3 * 4.0 * PI);
        assert_eq!((t.genus, t.boundaries), (0, 1));
    }
    let r = verify_prepared(&prep, &d).unwrap();
    assert_eq!((r.graph.vertices.len(), r.graph.edges.len(), r.graph.loops()), (2, 1, 0));
    assert!(r.pass, "{:?}", r.failures());
    assert!(r.thin.rows[0].fit.exponent >= 0.8 * 0.5);
    assert!(r.partition.relative_error < 1e-2);
    assert_eq!(r.euler.thick + r.euler.thin, r.euler.surface);
}

#[test]
fn torus_neck_is_a_loop() {
    let s = torus(20.0);
    let (prep, d) = run(&s);
    assert_eq!(d.thin.len(), 1);
    assert_eq!(d.thick.len(), 1);
    let r = verify_prepared(&prep, &d).unwrap();
    assert_eq!((r.graph.vertices.len(), r.graph.edges.len(), r.graph.loops()), (1, 1, 1));
    assert!(r.graph.half_edges.iter().all(|h| !h.contractible && h.external));
    assert_eq!(r.euler.surface, 0);
    assert!(r.pass, "{:?}", r.failures());
}

#[test]
fn uniform_sphere_is_one_vertex() {
    let s = sphere(Field::Constant { value: 1.0 });
    let (prep, d) = run(&s);
    assert_eq!(d.branch, Branch::TrivialSphere);
    assert!(d.thin.is_empty() && d.long_necks.is_empty());
    let n = d.normalization.as_ref().unwrap();
    assert_eq!(n.case, 1);
    assert!((n.k0 - K0_UNIFORM).abs() < 1e-12);
    let r = verify_prepared(&prep, &d).unwrap();
    assert_eq!((r.graph.vertices.len(), r.graph.edges.len()), (1, 0));
    assert!(r.pass);
}

#[test]
fn reduced_trim_is_a_window_error() {
    let s = bubble(1e-14);
    let (prep, mut d) = run(&s);
    let c = constants();
    let t = &mut d.thin[0];
    let trim = 0.5 * (c.c2 + PI);
    t.thin = t.representative.trim(trim, trim).unwrap();
    assert!(matches!(verify_prepared(&prep, &d), Err(Error::Window { .. })));
}

#[test]
fn overlapping_thin_annuli_fail() {
    let s = bubble(1e-14);
    let (prep, mut d) = run(&s);
    let extra = d.thin[0].clone();
    d.thin.push(extra);
    match verify_prepared(&prep, &d) {
        Ok(r) => {
            assert!(!r.disjoint);
            assert!(!r.pass);
        }
        Err(e) => panic!("expected a failing report, got {e}"),
    }
}

#[test]
fn verify_rejects_a_foreign_surface() {
    let (_, d) = run(&bubble(1e-14));
    assert!(verify(&torus(20.0), &d).is_err());
}

#[test]
fn count_bound_violation() {
    let c = verify_counts(0, 4.0 * PI, 5000, 0, 0.4 / 6.0);
    assert!(!c.pass);
    let ok = verify_counts(0, 8.0 * PI, 2, 1, 0.4 / 6.0);
    assert!(ok.pass);
    assert!((ok.bound - (2.0 * 8.0 * PI / (0.4 / 6.0) - 3.0)).abs() < 1e-9);
}

#[test]
fn f1_without_samples_has_no_coefficient() {
    let s = bubble(1e-14);
    let (prep, d) = run(&s);
    let r = verify_prepared(&prep, &d).unwrap();
    let f = fit_f1(&prep, &r.graph, &[], &constants()).unwrap();
    assert_eq!(f.used, 0);
    assert!(f.coefficient.is_none());
}

#[test]
fn boundary_bubble_is_conjugation_invariant() {
    let s = double(&BorderedSurface::Disk {
        field: Field::RationalPullback { map: RationalMap::bubble(1e-14) },
        rows: 800,
        cols: 32,
        s_min: -40.0,
        s_max: 40.0,
    })
    .unwrap();
    let (prep, d) = run(&s);
    assert_eq!(d.thin.len(), 1);
    assert_eq!(d.audits.conjugation_invariant, Some(true));
    let r = verify_prepared(&prep, &d).unwrap();
    assert!(r.pass, "{:?}", r.failures());
}

#[test]
fn same_seed_same_decomposition() {
    let s = bubble(1e-14);
    let (_, a) = run(&s);
    let (_, b) = run(&s);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
