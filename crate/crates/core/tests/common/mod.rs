//! Independent oracles and generators shared by the integration tests.
//! Nothing here calls the code under test to compute expected values.
#![allow(dead_code)]

pub mod cluster;
pub mod http;
pub mod procs;

use std::path::{Path, PathBuf};

use evalscope::tracing::{TraceLevel, TraceSpan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Bilinear resize with half-pixel centers, evaluated pixel by pixel in
/// f32: the four neighbours are blended horizontally, then vertically.
pub fn resize_oracle(src: &[f32], h: usize, w: usize, c: usize, oh: usize, ow: usize) -> Vec<f32> {
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let s = (o as f32 + 0.5) * (n_in as f32 / n_out as f32) - 0.5;
        let s = if s < 0.0 {
            0.0
        } else if s > (n_in - 1) as f32 {
            (n_in - 1) as f32
        } else {
            s
        };
        let lo = s.floor() as usize;
        let hi = if lo + 1 < n_in { lo + 1 } else { n_in - 1 };
        (lo, hi, s - lo as f32)
    };
    let mut out = vec![0.0f32; oh * ow * c];
    for oy in 0..oh {
        let (y0, y1, fy) = coord(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, fx) = coord(ox, w, ow);
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(oy * ow + ox) * c + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Center-crop window `(top, left, height, width)` for a percentage given
/// in tenths (500, 875, 1000), in integer arithmetic; `None` when empty.
pub fn crop_oracle(h: usize, w: usize, tenths: usize) -> Option<(usize, usize, usize, usize)> {
    let ch = h * tenths / 1000;
    let cw = w * tenths / 1000;
    if ch == 0 || cw == 0 {
        return None;
    }
    Some(((h - ch) / 2, (w - cw) / 2, ch, cw))
}

/// Hand-written truth for the four reference constraints.
pub fn constraint_truth(constraint: &str, v: (u64, u64, u64)) -> bool {
    match constraint {
        "^1.x" => (1, 0, 0) <= v && v < (2, 0, 0),
        "~1.13" => (1, 13, 0) <= v && v < (1, 14, 0),
        ">=1.10.x and <=1.13.0" => (1, 10, 0) <= v && v <= (1, 13, 0),
        "1.12.x" => (1, 12, 0) <= v && v < (1, 13, 0),
        other => panic!("no oracle for {other}"),
    }
}

pub const REFERENCE_CONSTRAINTS: [&str; 4] = ["^1.x", "~1.13", ">=1.10.x and <=1.13.0", "1.12.x"];

/// Every version from 0.9.0 to 2.1.0 on a grid of minors 0..=20 and
/// patches 0..=3.
pub fn version_grid() -> Vec<(u64, u64, u64)> {
    let mut out = Vec::new();
    for major in 0..=2 {
        for minor in 0..=20 {
            for patch in 0..=3 {
                let v = (major, minor, patch);
                if (0, 9, 0) <= v && v <= (2, 1, 0) {
                    out.push(v);
                }
            }
        }
    }
    out
}

/// The two byte-input normalization orders with mean = rescale = 127.5:
/// convert to float first, or work in integers with both constants
/// rounded and a truncating divide.
pub fn order_policies(x: u8) -> (f32, f32) {
    let convert_first = (f32::from(x) - 127.5) / 127.5;
    let in_bytes = (i32::from(x) - 128) / 128;
    (convert_first, in_bytes as f32)
}

/// Frozen result of the exhaustive 256-value comparison of
/// [`order_policies`]: the largest difference, and where it occurs.
pub const ORDER_MAX_DIFF: f32 = 1.0;
pub const ORDER_MAX_AT: u8 = 255;

pub const LEVELS: [TraceLevel; 6] = [
    TraceLevel::Application,
    TraceLevel::Model,
    TraceLevel::Framework,
    TraceLevel::Layer,
    TraceLevel::Library,
    TraceLevel::Hardware,
];

/// A random well-nested span forest inside `[0, horizon)`: children lie
/// within their parent and sit at the same or a finer level.
pub fn random_forest(rng: &mut impl Rng, horizon: u64, max_spans: usize) -> Vec<TraceSpan> {
    let mut spans = Vec::new();
    let roots = rng.random_range(1..=2);
    for r in 0..roots {
        let s = rng.random_range(0..horizon / 2);
        let e = rng.random_range(s + 1..=horizon);
        grow(rng, &mut spans, None, 0, s, e, &format!("r{r}"), max_spans);
    }
    spans
}

#[allow(clippy::too_many_arguments)]
fn grow(
    rng: &mut impl Rng,
    spans: &mut Vec<TraceSpan>,
    parent: Option<&str>,
    min_level: usize,
    start: u64,
    end: u64,
    id: &str,
    budget: usize,
) {
    if spans.len() >= budget {
        return;
    }
    let level = rng.random_range(min_level..LEVELS.len());
    let name = format!("n{}", rng.random_range(0..4));
    spans.push(TraceSpan::new(id, parent, LEVELS[level], &name, start, end));
    let kids = if end - start < 2 { 0 } else { rng.random_range(0..=3) };
    for k in 0..kids {
        let s = rng.random_range(start..end);
        let e = rng.random_range(s + 1..=end);
        grow(rng, spans, Some(id), level, s, e, &format!("{id}.{k}"), budget);
    }
}

/// Covered nanoseconds per level, by marking every nanosecond.
pub fn level_totals_oracle(spans: &[TraceSpan], horizon: u64) -> Vec<(TraceLevel, u64)> {
    LEVELS
        .iter()
        .filter_map(|&level| {
            let mut covered = vec![false; horizon as usize];
            let mut any = false;
            for s in spans.iter().filter(|s| s.level == level) {
                any = true;
                for t in s.start_ns..s.end_ns {
                    covered[t as usize] = true;
                }
            }
            any.then(|| (level, covered.iter().filter(|&&c| c).count() as u64))
        })
        .collect()
}

/// The fused-versus-separate layer traces: conv2 fused with relu taking
/// 1.95ms in one run, conv2 and relu taking 1.8ms and 0.83ms in another.
pub fn fused_traces() -> (Vec<TraceSpan>, Vec<TraceSpan>) {
    let ms = |x: f64| (x * 1e6).round() as u64;
    let fused = vec![
        TraceSpan::new("m", None, TraceLevel::Model, "resnet", 0, ms(10.0)),
        TraceSpan::new("f", Some("m"), TraceLevel::Framework, "tensorrt", ms(0.5), ms(9.0)),
        TraceSpan::new("c", Some("f"), TraceLevel::Layer, "conv2", ms(1.0), ms(1.0) + ms(1.95))
            .with_tag("fused_of", "[conv2, relu]"),
    ];
    let separate = vec![
        TraceSpan::new("m", None, TraceLevel::Model, "resnet", 0, ms(10.0)),
        TraceSpan::new("f", Some("m"), TraceLevel::Framework, "caffe2", ms(0.5), ms(9.0)),
        TraceSpan::new("c", Some("f"), TraceLevel::Layer, "conv2", ms(1.0), ms(1.0) + ms(1.8)),
        TraceSpan::new("r", Some("f"), TraceLevel::Layer, "relu", ms(3.0), ms(3.0) + ms(0.83)),
    ];
    (fused, separate)
}

/// Frozen companions of [`ORDER_MAX_DIFF`]: how many of the 256 inputs
/// differ, and the mean absolute difference rounded to 6 decimals.
pub const ORDER_VALUES_DIFFERING: usize = 255;
pub const ORDER_MEAN_DIFF: f64 = 0.498055;
