mod common;

use evalscope::tracing::{compare, summarize, validate_spans, Recorded, TraceCollector, TraceError, TraceLevel, TraceSpan};
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn per_level_totals_match_interval_oracle() {
    let mut rng = common::rng(31);
    for _ in 0..300 {
        let horizon = rng.random_range(10..400);
        let spans = common::random_forest(&mut rng, horizon, 40);
        validate_spans(&spans).unwrap();
        let summary = summarize(&spans).unwrap();
        let got: Vec<(TraceLevel, u64)> = summary.per_level_ns.into_iter().collect();
        assert_eq!(got, common::level_totals_oracle(&spans, horizon));
    }
}

#[test]
fn arrival_order_does_not_change_the_trace() {
    let mut rng = common::rng(32);
    for _ in 0..200 {
        let spans = common::random_forest(&mut rng, 300, 30);
        let reference = {
            let c = TraceCollector::new(TraceLevel::Hardware);
            spans.iter().for_each(|s| assert_eq!(c.record(s.clone()).unwrap(), Recorded::Kept));
            c.finish().unwrap()
        };
        let mut shuffled = spans.clone();
        shuffled.shuffle(&mut rng);
        let c = TraceCollector::new(TraceLevel::Hardware);
        for s in shuffled {
            c.record(s).unwrap();
        }
        assert_eq!(c.finish().unwrap(), reference);
    }
}

#[test]
fn spans_finer_than_the_request_are_dropped() {
    let mut rng = common::rng(33);
    for _ in 0..100 {
        let spans = common::random_forest(&mut rng, 200, 30);
        for requested in common::LEVELS {
            let c = TraceCollector::new(requested);
            for s in &spans {
                let r = c.record(s.clone()).unwrap();
                assert_eq!(r == Recorded::Kept, s.level <= requested);
            }
            let kept = c.finish().unwrap();
            assert_eq!(kept.len(), spans.iter().filter(|s| s.level <= requested).count());
        }
        let none = TraceCollector::new(TraceLevel::None);
        for s in &spans {
            assert_eq!(none.record(s.clone()).unwrap(), Recorded::Dropped);
        }
    }
}

#[test]
fn violations_are_reported_in_any_arrival_order() {
    let parent = TraceSpan::new("p", None, TraceLevel::Framework, "tf", 10, 20);
    let outside = TraceSpan::new("c", Some("p"), TraceLevel::Layer, "conv", 15, 25);
    let coarser = TraceSpan::new("c", Some("p"), TraceLevel::Model, "m", 12, 18);
    for child in [outside, coarser] {
        for order in [[&parent, &child], [&child, &parent]] {
            let c = TraceCollector::new(TraceLevel::Hardware);
            let results: Vec<_> = order.iter().map(|s| c.record((*s).clone())).collect();
            assert!(results.iter().any(|r| matches!(
                r,
                Err(TraceError::NotContained { .. } | TraceError::LevelOrder { .. })
            )));
        }
    }
    let c = TraceCollector::new(TraceLevel::Hardware);
    assert!(matches!(
        c.record(TraceSpan::new("x", None, TraceLevel::Layer, "bad", 5, 4)),
        Err(TraceError::NegativeDuration(_))
    ));
}

#[test]
fn fused_layer_compares_against_its_parts() {
    let (fused, separate) = common::fused_traces();
    let a = summarize(&fused).unwrap();
    let b = summarize(&separate).unwrap();
    let rows = compare(&a, &b);
    let row = rows.iter().find(|r| r.members.contains(&"conv2".to_string())).unwrap();
    assert!(row.fused && row.matched);
    assert_eq!(row.members, ["conv2", "relu"]);
    assert_eq!(row.a_ns, Some(1_950_000));
    assert_eq!(row.b_ns, Some(2_630_000));
    assert_eq!(row.delta_ns, Some(-680_000));
}
