//! Pixel accuracy, per-class IoU, mean IoU and comparison reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Confusion counts with class 1 as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// IoU of one class, `None` when the class is absent from both masks.
    pub fn class_iou(&self, class: u8) -> Option<f64> {
        let (hit, union) = match class {
            0 => (self.tn, self.tn + self.fp + self.fn_),
            _ => (self.tp, self.tp + self.fp + self.fn_),
        };
        (union > 0).then(|| hit as f64 / union as f64)
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// How a class absent from both prediction and target enters the mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EmptyClass {
    /// Counts as a perfect 1.0.
    #[default]
    One,
    /// Left out of the mean.
    Exclude,
}

/// Hard mask: 1 where `sigmoid(logit) >= 0.5`, that is `logit >= 0`.
pub fn binarize<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    logits.map(|v| if v >= T::zero() { T::one() } else { T::zero() })
}

pub fn confusion<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.shape() != target.shape() {
        return Err(Error::mismatch("confusion", pred.shape(), target.shape()));
    }
    let bit = |v: T, which: &str| -> Result<bool> {
        if v == T::one() {
            Ok(true)
        } else if v == T::zero() {
            Ok(false)
        } else {
            Err(Error::domain("confusion", format!("{which} mask holds non-binary value {}", v.as_f64())))
        }
    };
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        match (bit(p, "predicted")?, bit(t, "target")?) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn pixel_accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::domain("pixel_accuracy", "no pixels")),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

/// IoU of `class`; 1.0 when the class is empty in both masks.
pub fn iou<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, class: u8) -> Result<f64> {
    Ok(confusion(pred, target)?.class_iou(class).unwrap_or(1.0))
}

/// Mean of the IoU over classes present under `policy`.
pub fn mean_iou_counts(c: &ConfusionCounts, policy: EmptyClass) -> f64 {
    let ious: Vec<f64> = [0, 1]
        .iter()
        .filter_map(|&k| match (c.class_iou(k), policy) {
            (Some(v), _) => Some(v),
            (None, EmptyClass::One) => Some(1.0),
            (None, EmptyClass::Exclude) => None,
        })
        .collect();
    // Both classes cannot be empty when there is at least one pixel.
    ious.iter().sum::<f64>() / ious.len().max(1) as f64
}

/// Mean IoU over background and foreground.
pub fn mean_iou<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    Ok(mean_iou_counts(&confusion(pred, target)?, EmptyClass::One))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub counts: ConfusionCounts,
    pub pa: f64,
    pub iou_bg: f64,
    pub iou_fg: f64,
    pub miou: f64,
}

impl ImageMetrics {
    pub fn from_counts(counts: ConfusionCounts, policy: EmptyClass) -> Result<Self> {
        Ok(Self {
            counts,
            pa: pixel_accuracy(&counts)?,
            iou_bg: counts.class_iou(0).unwrap_or(1.0),
            iou_fg: counts.class_iou(1).unwrap_or(1.0),
            miou: mean_iou_counts(&counts, policy),
        })
    }
}

/// Aggregates over a set of images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    /// Mean of per-image pixel accuracy.
    pub pa: f64,
    /// Mean of per-image mIoU.
    pub miou: f64,
    /// Pixel accuracy of the pooled counts.
    pub pooled_pa: f64,
    /// mIoU of the pooled counts.
    pub pooled_miou: f64,
}

fn summarize(images: &[ImageMetrics], idx: &[usize], policy: EmptyClass) -> Result<Summary> {
    if idx.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = idx.len() as f64;
    let pooled = idx.iter().fold(ConfusionCounts::default(), |acc, &i| acc + images[i].counts);
    Ok(Summary {
        pa: idx.iter().map(|&i| images[i].pa).sum::<f64>() / n,
        miou: idx.iter().map(|&i| images[i].miou).sum::<f64>() / n,
        pooled_pa: pixel_accuracy(&pooled)?,
        pooled_miou: mean_iou_counts(&pooled, policy),
    })
}

/// Binary predicted masks of one model, aligned with the evaluation images.
#[derive(Debug, Clone)]
pub struct ModelPredictions {
    pub model: String,
    pub masks: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone)]
pub struct ModelReport {
    pub model: String,
    pub per_image: Vec<ImageMetrics>,
    pub all: Summary,
    /// Indices of the best `k` images by per-image mIoU, best first.
    pub best_images: Vec<usize>,
    pub best: Summary,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub image_ids: Vec<String>,
    pub baseline: String,
    pub k: usize,
    pub models: Vec<ModelReport>,
}

/// Which aggregate a comparison table is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    BestK,
}

impl MetricsReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }

    fn summary(m: &ModelReport, scope: Scope) -> &Summary {
        match scope {
            Scope::All => &m.all,
            Scope::BestK => &m.best,
        }
    }

    /// `(ΔPA, ΔmIoU)` of `model` against the baseline.
    pub fn delta(&self, model: &str, scope: Scope) -> Option<(f64, f64)> {
        let c = Self::summary(self.model(model)?, scope);
        let b = Self::summary(self.model(&self.baseline)?, scope);
        Some((c.pa - b.pa, c.miou - b.miou))
    }

    /// One row per (model, image) followed by summary rows per model.
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = comment_block(header);
        out.push_str("model,scope,image,pa,iou_bg,iou_fg,miou,delta_pa,delta_miou\n");
        for m in &self.models {
            for (i, im) in m.per_image.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},image,{},{},{},{},{},,",
                    m.model,
                    self.image_ids[i],
                    fmt4(im.pa),
                    fmt4(im.iou_bg),
                    fmt4(im.iou_fg),
                    fmt4(im.miou)
                );
            }
            for (scope, label) in [(Scope::All, "all".to_string()), (Scope::BestK, format!("best{}", self.k))] {
                let s = Self::summary(m, scope);
                let (dpa, dmiou) = self.delta(&m.model, scope).unwrap_or((0.0, 0.0));
                let _ = writeln!(
                    out,
                    "{},{label},,{},,,{},{},{}",
                    m.model,
                    fmt4(s.pa),
                    fmt4(s.miou),
                    fmt4(dpa),
                    fmt4(dmiou)
                );
            }
            let _ = writeln!(
                out,
                "{},pooled,,{},,,{},,",
                m.model,
                fmt4(m.all.pooled_pa),
                fmt4(m.all.pooled_miou)
            );
        }
        out
    }

    /// Comparison table: model, PA, ΔPA, mIoU, ΔmIoU.
    pub fn table_csv(&self, scope: Scope, header: &[String]) -> String {
        let mut out = comment_block(header);
        out.push_str("model,pa,delta_pa,miou,delta_miou\n");
        for m in &self.models {
            let s = Self::summary(m, scope);
            let (dpa, dmiou) = self.delta(&m.model, scope).unwrap_or((0.0, 0.0));
            let _ = writeln!(out, "{},{},{},{},{}", m.model, fmt4(s.pa), fmt4(dpa), fmt4(s.miou), fmt4(dmiou));
        }
        out
    }
}

fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

/// Four decimals, never printing a negative zero.
pub fn fmt4(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

/// Scores every model on the same targets, ranks the best `k` images per
/// model by mIoU and computes deltas against `baseline`.
pub fn evaluate_and_rank(
    models: &[ModelPredictions],
    image_ids: &[String],
    targets: &[Tensor<f32>],
    k: usize,
    baseline: &str,
    policy: EmptyClass,
) -> Result<MetricsReport> {
    if targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if image_ids.len() != targets.len() {
        return Err(Error::Config(format!(
            "{} image ids for {} targets",
            image_ids.len(),
            targets.len()
        )));
    }
    if k == 0 || k > targets.len() {
        return Err(Error::Config(format!("best-k must be in 1..={}, got {k}", targets.len())));
    }
    if !models.iter().any(|m| m.model == baseline) {
        return Err(Error::Config(format!("baseline model `{baseline}` is not among the evaluated models")));
    }
    let mut reports = Vec::with_capacity(models.len());
    for m in models {
        if m.masks.len() != targets.len() {
            return Err(Error::Config(format!(
                "model `{}` has {} predictions for {} images",
                m.model,
                m.masks.len(),
                targets.len()
            )));
        }
        let per_image = m
            .masks
            .iter()
            .zip(targets)
            .map(|(p, t)| ImageMetrics::from_counts(confusion(p, t)?, policy))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..per_image.len()).collect();
        order.sort_by(|&a, &b| per_image[b].miou.total_cmp(&per_image[a].miou));
        order.truncate(k);
        let all_idx: Vec<usize> = (0..per_image.len()).collect();
        reports.push(ModelReport {
            model: m.model.clone(),
            all: summarize(&per_image, &all_idx, policy)?,
            best: summarize(&per_image, &order, policy)?,
            best_images: order,
            per_image,
        });
    }
    Ok(MetricsReport {
        image_ids: image_ids.to_vec(),
        baseline: baseline.to_string(),
        k,
        models: reports,
    })
}
