use std::sync::Arc;

use qlink::dense::{expm_hermitian, to_dense};
use qlink::engine::*;
use qlink::lattice::{parse_pattern, SectorConfig};
use qlink::magnus::*;
use qlink::operators::*;
use qlink::{Boundary, LatticeSpec, C64};

fn model(l: usize, b: Boundary, h: f64) -> Model {
    build_model(&LatticeSpec::half(l, b).unwrap(), Couplings::new(1.0, 4.0, h)).unwrap()
}

fn random_state(basis: Arc<Basis>, seed: u64) -> StateVector {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut amps: Vec<C64> = (0..basis.len()).map(|_| C64::new(next(), next())).collect();
    let n = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|a| *a /= n);
    StateVector { basis, amps }
}

fn distance(a: &StateVector, b: &StateVector) -> f64 {
    a.amps.iter().zip(&b.amps).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn operator_application() {
    let m = model(3, Boundary::Pbc, 0.5);
    let s = *m.h.spec();
    let psi = random_state(Arc::new(Basis::full(&s)), 1);
    let same = apply_operator(&psi, &OperatorSum::identity(&s)).unwrap();
    assert!(distance(&same, &psi) < 1e-15);
    let got = apply_operator(&psi, &m.h).unwrap();
    let want = to_dense(&m.h).unwrap() * psi.to_dvector();
    assert!(got.amps.iter().zip(want.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
    // G_total on a product state
    let sym = build_symmetry_generators(&s);
    let st = StateVector::from_pattern(&s, "uddudd").unwrap();
    let g = apply_operator(&st, &sym.gauss_total).unwrap();
    let total: i32 = qlink::lattice::sector_of(parse_pattern("uddudd", &s).unwrap(), &s).0.iter().sum();
    assert!(distance(&g, &StateVector { basis: st.basis.clone(), amps: st.amps.iter().map(|a| a * total as f64).collect() }) < 1e-14);
}

#[test]
fn evolve_examples() {
    let m = model(3, Boundary::Pbc, 0.5);
    let s = *m.h.spec();
    let psi = random_state(Arc::new(Basis::full(&s)), 2);
    assert!(distance(&evolve(&psi, &m.h, 0.0, 1e-9).unwrap(), &psi) < 1e-14);
    let want = expm_hermitian(&to_dense(&m.h).unwrap(), 1.0) * psi.to_dvector();
    for dense_limit in [0, 4096] {
        let opts = EvolveOptions { dense_limit, tol: 1e-12, ..Default::default() };
        let got = evolve_with(&psi, &m.h, 1.0, &opts).unwrap();
        let err: f64 = got.amps.iter().zip(want.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-10, "{dense_limit}: {err}");
        assert!((got.norm() - 1.0).abs() < 1e-9);
    }
    // single spin under Z
    let one = LatticeSpec::half(1, Boundary::Pbc).unwrap();
    let z = site_op(&one, 0, "z");
    let plus = StateVector {
        basis: Arc::new(Basis::full(&one)),
        amps: vec![C64::new(0.5f64.sqrt(), 0.0), C64::new(0.5f64.sqrt(), 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
    };
    let out = evolve(&plus, &z, std::f64::consts::FRAC_PI_2, 1e-12).unwrap();
    let r = 0.5f64.sqrt();
    assert!((out.amps[0] - C64::new(0.0, r)).norm() < 1e-12);
    assert!((out.amps[1] - C64::new(0.0, -r)).norm() < 1e-12);
}

#[test]
fn evolve_rejects_bad_input() {
    let m = model(2, Boundary::Pbc, 0.5);
    let psi = random_state(Arc::new(Basis::full(m.h.spec())), 3);
    let anti = m.h_lgt.scale(C64::new(0.0, 1.0));
    assert!(evolve(&psi, &anti, 1.0, 1e-9).is_err());
    assert!(evolve(&psi, &m.h, 1.0, 0.0).is_err());
}

#[test]
fn pulses() {
    let s = LatticeSpec::half(3, Boundary::Pbc).unwrap();
    let m = build_model(&s, Couplings::new(1.0, 4.0, 0.5)).unwrap();
    let basis = Arc::new(Basis::full(&s));
    for (n, p) in [Pulse::TAU_Z, Pulse::TAU_X, Pulse::SIGMA_Z_ODD].into_iter().enumerate() {
        let psi = random_state(basis.clone(), 10 + n as u64);
        let back = apply_pulse(&apply_pulse(&psi, &p).unwrap(), &p.dag()).unwrap();
        assert!((back.fidelity(&psi) - 1.0).abs() < 1e-12);
        // W^dagger A W psi == conjugated A psi
        let lhs = apply_pulse(&apply_operator(&apply_pulse(&psi, &p).unwrap(), &m.h).unwrap(), &p.dag()).unwrap();
        let rhs = apply_operator(&psi, &m.h.conjugate_by_pulse(&p)).unwrap();
        assert!(distance(&lhs, &rhs) < 1e-10);
    }
    let st = StateVector::product(basis, parse_pattern("ududdu", &s).unwrap()).unwrap();
    let out = apply_pulse(&st, &Pulse::TAU_Z).unwrap();
    assert!(out.amps.iter().zip(&st.amps).all(|(a, b)| (a.norm() - b.norm()).abs() < 1e-14));
}

#[test]
fn lab_frame_matches_toggled_frame() {
    for b in [Boundary::Pbc, Boundary::Obc] {
        let m = model(4, b, 0.5);
        let basis = Arc::new(Basis::full(m.h.spec()));
        let psi = random_state(basis.clone(), 5);
        for p in [protocol_simple(&m, 0.05).unwrap(), protocol_full(&m, 0.05).unwrap()] {
            let lab = lab_period(&psi, &p, 1e-12).unwrap();
            let step = StepPropagator::for_protocol(&p, &basis, &EvolveOptions::default()).unwrap();
            let toggled = StateVector { basis: basis.clone(), amps: step.step(&psi.amps).unwrap() };
            assert!(distance(&lab, &toggled) < 1e-10);
        }
    }
}

#[test]
fn zero_field_quench_conserves_symmetries() {
    let m = model(3, Boundary::Pbc, 0.0);
    let s = *m.h.spec();
    let sym = build_symmetry_generators(&s);
    let psi = random_state(Arc::new(Basis::full(&s)), 7);
    let expect = |st: &StateVector, op: &OperatorSum| st.inner(&apply_operator(st, op).unwrap()).re;
    let out = evolve(&psi, &m.h, 25.0, 1e-10).unwrap();
    for z in &sym.z2 {
        assert!((expect(&psi, z) - expect(&out, z)).abs() < 1e-8);
    }
    assert!((expect(&psi, &sym.gauss_total) - expect(&out, &sym.gauss_total)).abs() < 1e-8);
}

#[test]
fn vacuum_stays_put_under_zero_field_quench() {
    let m = model(6, Boundary::Obc, 0.0);
    let s = *m.h.spec();
    let psi = StateVector::from_pattern(&s, &"dd".repeat(6)).unwrap();
    let p = DriveProtocol::quench(&m.h, 0.25).unwrap();
    let (ts, _) = run_floquet(&psi, &p, 400, &parse_observables(&names(&["G"]), 6).unwrap(), 20, &EvolveOptions::default()).unwrap();
    for row in &ts.rows {
        assert!(row.iter().all(|g| (g - 1.0).abs() < 1e-8));
    }
}

#[test]
fn charge_three_defect_is_frozen() {
    let m = model(4, Boundary::Pbc, 0.0);
    let s = *m.h.spec();
    // sector (1, 3, 1, -3): site 1 holds g = 3
    let st = parse_pattern("dddudddu", &s).unwrap();
    assert_eq!(qlink::lattice::charge_at(st, 1, &s), 3);
    let psi = StateVector::product(Arc::new(Basis::full(&s)), st).unwrap();
    let p = DriveProtocol::quench(&m.h, 0.5).unwrap();
    let (ts, _) = run_floquet(&psi, &p, 200, &parse_observables(&names(&["G_1"]), 4).unwrap(), 10, &EvolveOptions::default()).unwrap();
    assert!(ts.column("G_1").unwrap().iter().all(|g| (g - 3.0).abs() < 1e-8));
}

#[test]
fn unitarity_over_many_periods() {
    let m = model(6, Boundary::Pbc, 0.5);
    let psi = StateVector::from_pattern(m.h.spec(), "uduududududu").unwrap();
    let p = protocol_full(&m, 1.0 / (4.0 * 6.2) / 9.0).unwrap();
    let opts = EvolveOptions { dense_limit: 0, ..Default::default() };
    let (ts, out) = run_floquet(&psi, &p, 1000, &[Observable::Norm], 250, &opts).unwrap();
    assert!((out.norm() - 1.0).abs() < 1e-8);
    assert!(ts.column("norm").unwrap().iter().all(|n| (n - 1.0).abs() < 1e-8));
}

#[test]
fn reversibility() {
    let m = model(4, Boundary::Obc, 0.5);
    let psi = random_state(Arc::new(Basis::full(m.h.spec())), 9);
    let opts = EvolveOptions { dense_limit: 0, ..Default::default() };
    let fwd = evolve_with(&psi, &m.h, 3.0, &opts).unwrap();
    let back = evolve_with(&fwd, &m.h, -3.0, &opts).unwrap();
    assert!(back.fidelity(&psi) > 1.0 - 1e-6);
}

#[test]
fn measurements() {
    let s = LatticeSpec::half(4, Boundary::Pbc).unwrap();
    let vac = StateVector::from_pattern(&s, "dddddddd").unwrap();
    for j in 0..4 {
        assert_eq!(measure_site(&vac, SiteKind::Defect, j).unwrap(), 0.0);
    }
    // left link up, matter up, right link down at site 1
    let def = StateVector::from_pattern(&s, "duuddddd").unwrap();
    assert!((measure_site(&def, SiteKind::Defect, 1).unwrap() - 1.0).abs() < 1e-14);
    let gsp = StateVector::from_pattern(&s, "ddudddud").unwrap();
    let target = SectorConfig(vec![1, -1, 1, -1]);
    assert_eq!(dominant_sector(&gsp), target);
    assert_eq!(violation_average(&gsp, &target, ViolationKind::Gauss).unwrap(), 0.0);
    assert_eq!(violation_average(&gsp, &target, ViolationKind::Z2).unwrap(), 0.0);
    let other = SectorConfig(vec![1, 1, 1, 1]);
    assert!((violation_average(&gsp, &other, ViolationKind::Gauss).unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn effective_run_keeps_charges_at_zeroth_order() {
    let m = model(6, Boundary::Pbc, 0.5);
    let psi = StateVector::from_pattern(m.h.spec(), &"dd".repeat(6)).unwrap();
    let p = protocol_full(&m, 0.01).unwrap();
    let eff = effective_orders(&p, 0).unwrap();
    let (ts, _) = run_effective(&psi, &eff, &[0], 50.0 * p.period(), &parse_observables(&names(&["G"]), 6).unwrap(), 5, &EvolveOptions::default()).unwrap();
    assert!(ts.rows.iter().flatten().all(|g| (g - 1.0).abs() < 1e-10));
    assert!(run_effective(&psi, &eff, &[1], 1.0, &[], 1, &EvolveOptions::default()).is_err());
}

#[test]
fn second_order_effective_tracks_floquet() {
    let m = model(6, Boundary::Pbc, 0.5);
    let psi = StateVector::from_pattern(m.h.spec(), "uduududududu").unwrap();
    let p = protocol_full(&m, 1.0 / (4.0 * 6.2) / 9.0).unwrap();
    let eff = effective_orders(&p, 2).unwrap();
    let obs = parse_observables(&names(&["nd_0", "nk_1", "violS"]), 6).unwrap();
    let opts = EvolveOptions::default();
    let (a, _) = run_floquet(&psi, &p, 1000, &obs, 50, &opts).unwrap();
    let (b, _) = run_effective(&psi, &eff, &[0, 1, 2], 1000.0 * p.period(), &obs, 50, &opts).unwrap();
    let dev = a.max_deviation(&b, &["nd_0", "nk_1", "violS"]).unwrap();
    assert!(dev.iter().all(|d| *d < 1e-2), "{dev:?}");
}

#[test]
fn runs_are_deterministic_and_serialise() {
    let m = model(4, Boundary::Obc, 0.5);
    let psi = StateVector::from_pattern(m.h.spec(), "uduudddd").unwrap();
    let p = protocol_full(&m, 0.02).unwrap();
    let obs = parse_observables(&names(&["G", "nd_0", "violG", "violS"]), 4).unwrap();
    let opts = EvolveOptions { dense_limit: 0, ..Default::default() };
    let (a, _) = run_floquet(&psi, &p, 30, &obs, 3, &opts).unwrap();
    let (b, _) = run_floquet(&psi, &p, 30, &obs, 3, &opts).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.to_csv().starts_with("step,t,G_0,G_1,G_2,G_3,nd_0,violG,violS\n"));
    assert!(a.times.windows(2).all(|w| w[0] < w[1]));
    let (empty, _) = run_floquet(&psi, &p, 3, &[], 1, &opts).unwrap();
    assert_eq!(empty.columns.len(), 0);
    assert!(run_floquet(&psi, &p, 3, &[], 0, &opts).is_err());
    assert_eq!(default_stride(10), 1);
    assert_eq!(default_stride(10_000), 5);
}

#[test]
fn powered_and_stepped_runs_agree() {
    let m = model(4, Boundary::Pbc, 0.5);
    let psi = StateVector::from_pattern(m.h.spec(), "uduudddd").unwrap();
    let p = protocol_full(&m, 0.03).unwrap();
    let obs = parse_observables(&names(&["nd_0", "violG"]), 4).unwrap();
    let dense = EvolveOptions::default();
    let sparse = EvolveOptions { dense_limit: 0, tol: 1e-12, ..Default::default() };
    let (a, fa) = run_floquet(&psi, &p, 2000, &obs, 100, &dense).unwrap();
    let (b, fb) = run_floquet(&psi, &p, 2000, &obs, 100, &sparse).unwrap();
    assert!(a.max_deviation(&b, &["nd_0", "violG"]).unwrap().iter().all(|d| *d < 1e-8));
    assert!(fa.fidelity(&fb) > 1.0 - 1e-8);
}
