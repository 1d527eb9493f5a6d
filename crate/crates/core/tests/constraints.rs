mod common;

use evalscope::version::{Version, VersionConstraint};
use proptest::prelude::*;

#[test]
fn reference_constraints_match_truth_table() {
    let grid = common::version_grid();
    assert!(grid.len() > 100);
    for c in common::REFERENCE_CONSTRAINTS {
        let parsed = VersionConstraint::parse(c).unwrap();
        for &(ma, mi, pa) in &grid {
            assert_eq!(
                parsed.satisfies(&Version::new(ma, mi, pa)),
                common::constraint_truth(c, (ma, mi, pa)),
                "{c} vs {ma}.{mi}.{pa}"
            );
        }
    }
}

#[test]
fn frozen_membership_examples() {
    let sat = |c: &str, v: &str| VersionConstraint::parse(c).unwrap().satisfies(&v.parse().unwrap());
    assert!(sat("^1.x", "1.13.1"));
    assert!(!sat("^1.x", "2.0.0"));
    assert!(sat("~1.13", "1.13.9"));
    assert!(!sat("~1.13", "1.14.0"));
    assert!(sat(">=1.10.x and <=1.13.0", "1.10.0"));
    assert!(!sat(">=1.10.x and <=1.13.0", "1.13.1"));
    assert!(!sat("1.12.x", "1.13.0"));
}

#[test]
fn malformed_constraints_are_rejected() {
    for bad in ["", ">=", "1..2", "~", "^x.1", ">=1.0 and", "abc", "1.2.3.4", "and 1.0", "1.0 and and 2.0"] {
        assert!(VersionConstraint::parse(bad).is_err(), "{bad:?} should not parse");
    }
}

proptest! {
    #[test]
    fn caret_wildcard_means_same_major(m in 0u64..6, v in (0u64..8, 0u64..30, 0u64..30)) {
        let c = VersionConstraint::parse(&format!("^{m}.x")).unwrap();
        prop_assert_eq!(c.satisfies(&Version::new(v.0, v.1, v.2)), v.0 == m);
    }

    #[test]
    fn tilde_means_same_minor(m in 0u64..4, n in 0u64..20, v in (0u64..5, 0u64..22, 0u64..10)) {
        let c = VersionConstraint::parse(&format!("~{m}.{n}")).unwrap();
        prop_assert_eq!(c.satisfies(&Version::new(v.0, v.1, v.2)), v.0 == m && v.1 == n);
    }

    #[test]
    fn conjunction_is_intersection(a in 0usize..4, b in 0usize..4, v in (0u64..3, 0u64..21, 0u64..4)) {
        let (ca, cb) = (common::REFERENCE_CONSTRAINTS[a], common::REFERENCE_CONSTRAINTS[b]);
        let both = VersionConstraint::parse(&format!("{ca} and {cb}")).unwrap();
        prop_assert_eq!(
            both.satisfies(&Version::new(v.0, v.1, v.2)),
            common::constraint_truth(ca, v) && common::constraint_truth(cb, v)
        );
    }

    #[test]
    fn versions_display_and_reparse(v in (0u64..100, 0u64..100, 0u64..100)) {
        let ver = Version::new(v.0, v.1, v.2);
        prop_assert_eq!(ver.to_string().parse::<Version>().unwrap(), ver);
    }
}
