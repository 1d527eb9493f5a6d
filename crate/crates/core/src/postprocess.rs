//! Ranking model outputs and scoring them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PostprocessError {
    #[error("k = {k} exceeds the {classes} available classes")]
    KTooLarge { k: usize, classes: usize },
    #[error("{labels} labels for {classes} classes")]
    LabelCount { labels: usize, classes: usize },
    #[error("probability tensor must be [N, C] or [C], got {0:?}")]
    Shape(Vec<usize>),
    #[error("non-finite probability at sample {sample}, class {class}")]
    NonFinite { sample: usize, class: usize },
    #[error("detection tensors disagree: {0}")]
    DetectionDims(String),
    #[error("box {index} is not a normalized [ymin, xmin, ymax, xmax]: {coords:?}")]
    InvalidBox { index: usize, coords: [String; 4] },
    #[error("{results} results but {truth} ground-truth labels")]
    LengthMismatch { results: usize, truth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// 1-based.
    pub rank: usize,
    pub label_index: usize,
    pub label: String,
    pub probability: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFeature {
    /// `[ymin, xmin, ymax, xmax]`, normalized to the image size.
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
    pub class_index: i64,
    pub score: f32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask: Option<Vec<Vec<f32>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n_samples: usize,
    pub top1: f64,
    pub top5: f64,
}

/// Reads a label list: one label per line, index = line number.
pub fn load_labels(text: &str) -> Vec<String> {
    let mut labels: Vec<String> = text.lines().map(|l| l.trim_end().to_string()).collect();
    while labels.last().is_some_and(|l| l.is_empty()) {
        labels.pop();
    }
    labels
}

/// The `k` most probable classes per sample, by descending probability;
/// equal probabilities keep the lower class index first.
pub fn top_k(probabilities: &Tensor, k: usize, labels: &[String]) -> Result<Vec<Vec<Prediction>>, PostprocessError> {
    let (n, c) = match probabilities.dims[..] {
        [c] => (1, c),
        [n, c] => (n, c),
        _ => return Err(PostprocessError::Shape(probabilities.dims.clone())),
    };
    if labels.len() != c {
        return Err(PostprocessError::LabelCount {
            labels: labels.len(),
            classes: c,
        });
    }
    if k > c {
        return Err(PostprocessError::KTooLarge { k, classes: c });
    }
    (0..n)
        .map(|sample| {
            let row = &probabilities.data[sample * c..(sample + 1) * c];
            if let Some(class) = row.iter().position(|p| !p.is_finite()) {
                return Err(PostprocessError::NonFinite { sample, class });
            }
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            Ok(order
                .into_iter()
                .take(k)
                .enumerate()
                .map(|(r, idx)| Prediction {
                    rank: r + 1,
                    label_index: idx,
                    label: labels[idx].clone(),
                    probability: row[idx],
                })
                .collect())
        })
        .collect()
}

/// Zips per-detection tensors into features sorted by descending score
/// (ties keep detection order). A leading batch dimension of 1 is
/// accepted on every tensor.
pub fn assemble_detections(
    boxes: &Tensor,
    scores: &Tensor,
    classes: &Tensor,
    masks: Option<&Tensor>,
) -> Result<Vec<DetectionFeature>, PostprocessError> {
    let n = scores.len();
    if boxes.len() != n * 4 {
        return Err(PostprocessError::DetectionDims(format!(
            "{} box values for {n} scores",
            boxes.len()
        )));
    }
    if classes.len() != n {
        return Err(PostprocessError::DetectionDims(format!(
            "{} classes for {n} scores",
            classes.len()
        )));
    }
    let mask_shape = match masks {
        Some(m) => {
            let [.., h, w] = m.dims[..] else {
                return Err(PostprocessError::DetectionDims(format!("mask dims {:?}", m.dims)));
            };
            if m.len() != n * h * w {
                return Err(PostprocessError::DetectionDims(format!(
                    "{} mask values for {n} detections of {h}x{w}",
                    m.len()
                )));
            }
            Some((h, w))
        }
        None => None,
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let b: [f32; 4] = boxes.data[i * 4..i * 4 + 4].try_into().expect("four coordinates");
        let normalized = b.iter().all(|v| (0.0..=1.0).contains(v)) && b[0] <= b[2] && b[1] <= b[3];
        if !normalized {
            return Err(PostprocessError::InvalidBox {
                index: i,
                coords: b.map(|v| v.to_string()),
            });
        }
        let mask = match (masks, mask_shape) {
            (Some(m), Some((h, w))) => Some(
                m.data[i * h * w..(i + 1) * h * w]
                    .chunks_exact(w)
                    .map(<[f32]>::to_vec)
                    .collect(),
            ),
            _ => None,
        };
        out.push(DetectionFeature {
            bbox: b,
            class_index: classes.data[i] as i64,
            score: scores.data[i],
            mask,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Top-1 / top-5 hit rates against ground-truth class indices.
pub fn score_accuracy(results: &[Vec<Prediction>], ground_truth: &[usize]) -> Result<AccuracyReport, PostprocessError> {
    if results.len() != ground_truth.len() {
        return Err(PostprocessError::LengthMismatch {
            results: results.len(),
            truth: ground_truth.len(),
        });
    }
    let n = results.len();
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for (preds, &truth) in results.iter().zip(ground_truth) {
        let hit_at = |limit: usize| preds.iter().any(|p| p.rank <= limit && p.label_index == truth);
        top1 += usize::from(hit_at(1));
        top5 += usize::from(hit_at(5));
    }
    let frac = |hits: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    Ok(AccuracyReport {
        n_samples: n,
        top1: frac(top1),
        top5: frac(top5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{DataLayout, ElementType};

    fn tensor(dims: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::new(dims, DataLayout::Nhwc, ElementType::Float32, data).unwrap()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| ((b'a' + i as u8) as char).to_string()).collect()
    }

    #[test]
    fn top_k_basic_and_ties() {
        let out = top_k(&tensor(vec![1, 3], vec![0.1, 0.7, 0.2]), 2, &labels(3)).unwrap();
        let got: Vec<_> = out[0].iter().map(|p| (p.rank, p.label.as_str(), p.probability)).collect();
        assert_eq!(got, [(1, "b", 0.7), (2, "c", 0.2)]);

        let out = top_k(&tensor(vec![3], vec![1.0 / 3.0; 3]), 3, &labels(3)).unwrap();
        let idx: Vec<_> = out[0].iter().map(|p| p.label_index).collect();
        assert_eq!(idx, [0, 1, 2]);

        assert!(matches!(
            top_k(&tensor(vec![3], vec![0.; 3]), 4, &labels(3)),
            Err(PostprocessError::KTooLarge { .. })
        ));
        assert!(matches!(
            top_k(&tensor(vec![3], vec![0.; 3]), 1, &labels(2)),
            Err(PostprocessError::LabelCount { .. })
        ));
    }

    #[test]
    fn detections_sorted_with_masks() {
        let boxes = tensor(vec![1, 2, 4], vec![0.1, 0.1, 0.5, 0.5, 0.2, 0.2, 0.9, 0.9]);
        let scores = tensor(vec![1, 2], vec![0.4, 0.9]);
        let classes = tensor(vec![1, 2], vec![3.0, 7.0]);
        let masks = tensor(vec![1, 2, 1, 2], vec![0.0, 0.1, 1.0, 1.1]);
        let out = assemble_detections(&boxes, &scores, &classes, Some(&masks)).unwrap();
        assert_eq!(out[0].score, 0.9);
        assert_eq!(out[0].class_index, 7);
        assert_eq!(out[0].mask.as_deref(), Some(&[vec![1.0, 1.1]][..]));
        assert_eq!(out[1].bbox, [0.1, 0.1, 0.5, 0.5]);

        let empty = tensor(vec![0], vec![]);
        assert!(assemble_detections(&empty, &empty, &empty, None).unwrap().is_empty());
        assert!(assemble_detections(&boxes, &scores, &tensor(vec![1], vec![1.0]), None).is_err());
    }

    #[test]
    fn accuracy_rank_three() {
        let preds: Vec<Prediction> = (0..5)
            .map(|r| Prediction {
                rank: r + 1,
                label_index: r,
                label: String::new(),
                probability: 0.0,
            })
            .collect();
        let report = score_accuracy(&[preds.clone(), preds], &[2, 2]).unwrap();
        assert_eq!((report.top1, report.top5), (0.0, 1.0));
        assert!(score_accuracy(&[], &[1]).is_err());
    }

    #[test]
    fn label_file() {
        assert_eq!(load_labels("n01 tench\r\nn02 goldfish\n\n"), ["n01 tench", "n02 goldfish"]);
    }
}
