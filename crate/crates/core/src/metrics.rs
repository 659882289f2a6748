//! Segmentation scoring: confusion matrices, per-class IoU / precision /
//! recall / F1, pixel accuracy, model-level loss and gradient audits, and
//! the evaluation report emitted as text and `key=value` lines.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fcn::FcnModel;
use crate::fusion::ConstraintThresholds;
use crate::label::LabelMap;
use crate::tensor::{softmax_cross_entropy, MacCounter, Tensor};

/// C x C integer counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Count per-pixel (truth, prediction) pairs of one tile.
    pub fn from_pair(pred: &LabelMap, truth: &LabelMap) -> Result<ConfusionMatrix> {
        if pred.width() != truth.width()
            || pred.height() != truth.height()
            || pred.num_classes() != truth.num_classes()
        {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} ({} classes) vs truth {}x{} ({} classes)",
                pred.width(),
                pred.height(),
                pred.num_classes(),
                truth.width(),
                truth.height(),
                truth.num_classes()
            )));
        }
        let mut cm = ConfusionMatrix::new(truth.num_classes());
        for (&p, &t) in pred.ids().iter().zip(truth.ids()) {
            cm.counts[t as usize * cm.num_classes + p as usize] += 1;
        }
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.count(c, c)).sum()
    }

    /// Integer addition commutes, so per-tile matrices can be accumulated
    /// in any order.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "confusion matrices with {} vs {} classes",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Per-class rates; a 0/0 ratio is reported as 0 with its `defined` flag
/// cleared, and such classes are excluded from the corresponding mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// The class occurs in ground truth.
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegMetrics {
    pub pixel_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean IoU over classes present in ground truth.
    pub mean_iou: f64,
    /// Unweighted mean F1 over classes present in ground truth.
    pub macro_f1: f64,
    /// Mean precision over present classes whose precision is defined.
    pub macro_precision: f64,
    /// Mean recall over classes present in ground truth.
    pub macro_recall: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl SegMetrics {
    pub fn from_confusion(cm: &ConfusionMatrix) -> SegMetrics {
        let c = cm.num_classes();
        let mut per_class = Vec::with_capacity(c);
        for cls in 0..c {
            let tp = cm.count(cls, cls);
            let row: u64 = (0..c).map(|p| cm.count(cls, p)).sum();
            let col: u64 = (0..c).map(|t| cm.count(t, cls)).sum();
            let fp = col - tp;
            let fn_ = row - tp;
            per_class.push(ClassMetrics {
                tp,
                fp,
                fn_,
                iou: ratio(tp, tp + fp + fn_),
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
                present: row > 0,
            });
        }

        // Summing in sorted order makes the means exactly invariant under
        // class relabeling (the multiset of addends fixes the result).
        let mean_over = |select: &dyn Fn(&ClassMetrics) -> Option<f64>| -> f64 {
            let mut vals: Vec<f64> = per_class.iter().filter_map(|m| select(m)).collect();
            if vals.is_empty() {
                return 0.0;
            }
            vals.sort_by(|a, b| a.partial_cmp(b).expect("metric ratios are finite"));
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let mean_iou = mean_over(&|m| m.present.then_some(m.iou));
        let macro_f1 = mean_over(&|m| m.present.then_some(m.f1));
        let macro_recall = mean_over(&|m| m.present.then_some(m.recall));
        let macro_precision =
            mean_over(&|m| (m.present && m.tp + m.fp > 0).then_some(m.precision));

        SegMetrics {
            pixel_accuracy: ratio(cm.trace(), cm.total()),
            per_class,
            mean_iou,
            macro_f1,
            macro_precision,
            macro_recall,
        }
    }
}

/// Score one prediction against ground truth.
pub fn evaluate(pred: &LabelMap, truth: &LabelMap) -> Result<SegMetrics> {
    Ok(SegMetrics::from_confusion(&ConfusionMatrix::from_pair(pred, truth)?))
}

/// Mean per-tile cross-entropy of a model over a test set.
pub fn test_loss(model: &FcnModel, test_set: &[(Tensor, LabelMap)]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let mut macs = MacCounter::new();
    let mut sum = 0.0;
    for (tile, labels) in test_set {
        let logits = model.forward(tile, &mut macs)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        sum += loss;
    }
    Ok(sum / test_set.len() as f64)
}

/// L2 norm over the concatenation of all parameter gradients for one
/// loss evaluation.
pub fn gradient_norm(model: &FcnModel, batch: &Tensor, labels: &LabelMap) -> Result<f64> {
    let mut macs = MacCounter::new();
    let (_, tape) = model.loss_and_gradients(batch, labels, &mut macs)?;
    let mut sum_sq = 0.0;
    for layer in &tape.layers {
        sum_sq += layer.weight_grad.data().iter().map(|g| g * g).sum::<f64>();
        sum_sq += layer.bias_grad.data().iter().map(|g| g * g).sum::<f64>();
    }
    Ok(sum_sq.sqrt())
}

/// Scores, audits and provenance for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub metrics: SegMetrics,
    pub mean_test_loss: f64,
    pub gradient_norm: f64,
    pub flag_accuracy_min: bool,
    pub flag_grad_norm: bool,
    pub flag_test_error: bool,
    /// Digest of the scored tile set; comparisons require it to match.
    pub test_set_digest: String,
    pub model_digest: String,
    /// Multiply-accumulate count reported by the training run, if known.
    pub train_macs: u64,
}

impl EvalReport {
    pub fn new(
        dataset: String,
        metrics: SegMetrics,
        mean_test_loss: f64,
        gradient_norm: f64,
        thresholds: &ConstraintThresholds,
    ) -> EvalReport {
        EvalReport {
            dataset,
            flag_accuracy_min: thresholds.accuracy_pass(metrics.pixel_accuracy),
            flag_grad_norm: thresholds.grad_norm_pass(gradient_norm),
            flag_test_error: thresholds.test_error_pass(mean_test_loss),
            metrics,
            mean_test_loss,
            gradient_norm,
            test_set_digest: String::new(),
            model_digest: String::new(),
            train_macs: 0,
        }
    }

    /// Flat machine-readable form: one `key=value` per line, keys lowercase
    /// with underscores, floats at full precision.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("dataset", self.dataset.clone());
        push("num_classes", self.metrics.per_class.len().to_string());
        push("pixel_accuracy", format!("{}", self.metrics.pixel_accuracy));
        push("mean_iou", format!("{}", self.metrics.mean_iou));
        push("macro_f1", format!("{}", self.metrics.macro_f1));
        push("macro_precision", format!("{}", self.metrics.macro_precision));
        push("macro_recall", format!("{}", self.metrics.macro_recall));
        for (c, m) in self.metrics.per_class.iter().enumerate() {
            push(&format!("iou_class_{c}"), format!("{}", m.iou));
            push(&format!("precision_class_{c}"), format!("{}", m.precision));
            push(&format!("recall_class_{c}"), format!("{}", m.recall));
            push(&format!("f1_class_{c}"), format!("{}", m.f1));
            push(&format!("present_class_{c}"), m.present.to_string());
        }
        push("mean_test_loss", format!("{}", self.mean_test_loss));
        push("gradient_norm", format!("{}", self.gradient_norm));
        push("flag_accuracy_min", self.flag_accuracy_min.to_string());
        push("flag_grad_norm", self.flag_grad_norm.to_string());
        push("flag_test_error", self.flag_test_error.to_string());
        push("test_set_digest", self.test_set_digest.clone());
        push("model_digest", self.model_digest.clone());
        push("train_macs", self.train_macs.to_string());
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("evaluation report ({})\n", self.dataset));
        out.push_str(&format!("  pixel accuracy : {:.4}\n", self.metrics.pixel_accuracy));
        out.push_str(&format!("  mean IoU       : {:.4}\n", self.metrics.mean_iou));
        out.push_str(&format!("  macro F1       : {:.4}\n", self.metrics.macro_f1));
        out.push_str(&format!("  macro precision: {:.4}\n", self.metrics.macro_precision));
        out.push_str(&format!("  macro recall   : {:.4}\n", self.metrics.macro_recall));
        out.push_str(&format!("  mean test loss : {:.6}\n", self.mean_test_loss));
        out.push_str(&format!("  gradient norm  : {:.6}\n", self.gradient_norm));
        out.push_str("  class      iou   precision  recall      f1\n");
        for (c, m) in self.metrics.per_class.iter().enumerate() {
            out.push_str(&format!(
                "  {c:>5} {:>8.4} {:>10.4} {:>7.4} {:>7.4}{}\n",
                m.iou,
                m.precision,
                m.recall,
                m.f1,
                if m.present { "" } else { "  (absent)" }
            ));
        }
        out.push_str(&format!(
            "  audits: accuracy_min={} grad_norm={} test_error={}\n",
            self.flag_accuracy_min, self.flag_grad_norm, self.flag_test_error
        ));
        out
    }
}

/// Subset of a stored report needed to build comparison tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub dataset: String,
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub train_macs: u64,
    pub test_set_digest: String,
    pub model_digest: String,
}

impl ReportSummary {
    /// Parse the `key=value` form written by [`EvalReport::to_kv`].
    pub fn from_kv(text: &str) -> Result<ReportSummary> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("report line {}: missing '='", lineno + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::InvalidConfig(format!("report missing key '{k}'")))
        };
        let getf = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("report key '{k}' is not a number")))
        };
        Ok(ReportSummary {
            dataset: get("dataset")?,
            pixel_accuracy: getf("pixel_accuracy")?,
            mean_iou: getf("mean_iou")?,
            macro_f1: getf("macro_f1")?,
            macro_precision: getf("macro_precision")?,
            macro_recall: getf("macro_recall")?,
            train_macs: get("train_macs")?
                .parse()
                .map_err(|_| Error::InvalidConfig("report key 'train_macs' is not an integer".into()))?,
            test_set_digest: get("test_set_digest")?,
            model_digest: get("model_digest")?,
        })
    }
}
