use proptest::prelude::*;
use qlink::lattice::*;
use qlink::{Boundary, GaugeSpin, LatticeSpec};

fn spec(l: usize, spin: GaugeSpin, b: Boundary) -> LatticeSpec {
    LatticeSpec::new(l, spin, b).unwrap()
}

#[test]
fn two_down_is_zero() {
    let s = spec(1, GaugeSpin::HALF, Boundary::Pbc);
    assert_eq!(parse_pattern("dd", &s).unwrap(), 0);
}

#[test]
fn bad_patterns() {
    let s = spec(2, GaugeSpin::HALF, Boundary::Pbc);
    assert!(parse_pattern("ddd", &s).is_err());
    assert!(parse_pattern("dd0d", &s).is_err());
    let s1 = spec(2, GaugeSpin::ONE, Boundary::Pbc);
    assert!(parse_pattern("dudu", &s1).is_err());
    assert!(parse_pattern("d+u-", &s1).is_ok());
}

#[test]
fn dimension_cap() {
    assert!(LatticeSpec::with_cap(10, GaugeSpin::HALF, Boundary::Obc, 1 << 19).is_err());
    assert_eq!(LatticeSpec::with_cap(10, GaugeSpin::HALF, Boundary::Obc, 1 << 20).unwrap().dim(), 1 << 20);
    assert_eq!(spec(3, GaugeSpin::ONE, Boundary::Pbc).dim(), 216);
}

/// Site 1 charge from its left link, matter and right link characters.
fn local_charge(spin: GaugeSpin, left: char, matter: char, right: char) -> i32 {
    let s = spec(3, spin, Boundary::Pbc);
    let fill = if spin == GaugeSpin::HALF { 'd' } else { '0' };
    let pattern: String = ['d', left, matter, right, 'd', fill].iter().collect();
    charge_at(parse_pattern(&pattern, &s).unwrap(), 1, &s)
}

#[test]
fn local_charges() {
    assert_eq!(local_charge(GaugeSpin::HALF, 'd', 'd', 'd'), 1);
    assert_eq!(local_charge(GaugeSpin::HALF, 'u', 'u', 'd'), -3);
    assert_eq!(local_charge(GaugeSpin::HALF, 'd', 'd', 'u'), 3);
    assert_eq!(local_charge(GaugeSpin::ONE, '-', 'd', '+'), 5);
}

#[test]
fn z2_table() {
    let s = spec(3, GaugeSpin::HALF, Boundary::Pbc);
    let at = |p: &str| z2_eigenvalue_at(parse_pattern(p, &s).unwrap(), 1, &s);
    assert_eq!(at("duuddd"), 1);
    assert_eq!(at("dddudd"), -1);
    // i exp(-i pi g / 2) over every state
    for st in 0..s.dim() as u64 {
        for j in 0..3 {
            let g = charge_at(st, j, &s) as f64;
            let z = qlink::C64::new(0.0, 1.0) * qlink::C64::from_polar(1.0, -std::f64::consts::FRAC_PI_2 * g);
            assert!((z.re - z2_eigenvalue_at(st, j, &s) as f64).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }
}

#[test]
fn sectors_partition_the_space() {
    for (l, spin) in [(2, GaugeSpin::HALF), (3, GaugeSpin::HALF), (2, GaugeSpin::ONE)] {
        for b in [Boundary::Pbc, Boundary::Obc] {
            let s = spec(l, spin, b);
            let mut seen = std::collections::BTreeSet::new();
            let mut total = 0;
            for st in 0..s.dim() as u64 {
                let sec = sector_of(st, &s);
                sec.validate(spin).unwrap();
                if seen.insert(sec.clone()) {
                    let members = enumerate_sector(&s, &sec).unwrap();
                    assert!(members.windows(2).all(|w| w[0] < w[1]));
                    assert!(members.iter().all(|&m| sector_of(m, &s) == sec));
                    total += members.len();
                }
            }
            assert_eq!(total, s.dim());
        }
    }
}

#[test]
fn unrealisable_sector_is_empty() {
    let s = spec(2, GaugeSpin::HALF, Boundary::Pbc);
    assert!(enumerate_sector(&s, &SectorConfig(vec![3, 3])).unwrap().is_empty());
}

#[test]
fn physical_sector_nonempty_at_ten_sites() {
    let s = spec(10, GaugeSpin::HALF, Boundary::Pbc);
    let st = parse_pattern(&"ddud".repeat(5), &s).unwrap();
    let sec = sector_of(st, &s);
    assert_eq!(sec.0, [1, -1].repeat(5));
    assert!(enumerate_sector(&s, &sec).unwrap().contains(&st));
}

#[test]
fn ring_charge_telescopes() {
    for spin in [GaugeSpin::HALF, GaugeSpin::ONE] {
        for l in 1..=4 {
            let s = spec(l, spin, Boundary::Pbc);
            if s.dim() > 20_000 {
                continue;
            }
            for st in 0..s.dim() as u64 {
                let g: i32 = sector_of(st, &s).0.iter().sum();
                let sz: i32 = (0..l).map(|j| LatticeSpec::matter_z(s.digit(st, s.matter_pos(j)))).sum();
                assert_eq!(g, -sz);
            }
        }
    }
}

#[test]
fn sector_text_round_trip() {
    let sec: SectorConfig = "-3,1,1,1".parse().unwrap();
    assert_eq!(sec.to_string(), "-3,1,1,1");
    assert!(SectorConfig(vec![2, 1]).validate(GaugeSpin::HALF).is_err());
    assert!(SectorConfig(vec![5, 1]).validate(GaugeSpin::HALF).is_err());
    assert!(SectorConfig(vec![5, 1]).validate(GaugeSpin::ONE).is_ok());
}

proptest! {
    #[test]
    fn digits_round_trip(l in 1usize..6, seed in any::<u64>(), one in any::<bool>()) {
        let s = spec(l, if one { GaugeSpin::ONE } else { GaugeSpin::HALF }, Boundary::Pbc);
        let st = seed % s.dim() as u64;
        prop_assert_eq!(s.index_of(&s.digits(st)), st);
        let text = render_pattern(st, &s);
        prop_assert_eq!(parse_pattern(&text, &s).unwrap(), st);
        prop_assert_eq!(render_pattern(parse_pattern(&text, &s).unwrap(), &s), text);
    }

    #[test]
    fn charges_are_odd_and_bounded(l in 1usize..5, seed in any::<u64>(), one in any::<bool>()) {
        let spin = if one { GaugeSpin::ONE } else { GaugeSpin::HALF };
        let s = spec(l, spin, Boundary::Obc);
        let st = seed % s.dim() as u64;
        prop_assert!(sector_of(st, &s).validate(spin).is_ok());
    }
}
