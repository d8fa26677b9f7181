//! Saliency evaluation: adaptive-threshold precision/recall, F-measure and MAE.

use crate::error::{Error, Result};
use crate::exec;

/// Weight of precision in the F-measure (`β²`, not `β`).
pub const BETA_SQ: f64 = 0.3;

/// CSV header for per-split evaluation rows.
pub const CSV_HEADER: &str = "split,n_images,precision,recall,f_beta,mae";

/// Binary `H×W` mask; every value is 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "mask",
                format!(
                    "{height}×{width} mask needs {} values, got {}",
                    height * width,
                    data.len()
                ),
            ));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(MaskImage { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        MaskImage {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(u8::from(f(i, j)));
            }
        }
        MaskImage { height, width, data }
    }

    /// Binarizes values at 0.5 (`v ≥ 0.5` is foreground).
    pub fn from_values(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let data = values.iter().map(|&v| u8::from(v >= 0.5)).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.width + j]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_values(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Saliency map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    /// Values are clamped into `[0, 1]`; NaN becomes 0.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "saliency map",
                format!(
                    "{height}×{width} map needs {} values, got {}",
                    height * width,
                    values.len()
                ),
            ));
        }
        let values = values
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Ok(SaliencyMap { height, width, values })
    }

    pub fn from_mask(mask: &MaskImage) -> Self {
        SaliencyMap {
            height: mask.height,
            width: mask.width,
            values: mask.to_values(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Precision, recall, F-measure and MAE for one image or a split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub mae: f64,
    pub n_images: usize,
}

impl MetricsRecord {
    pub fn csv_row(&self, split: &str) -> String {
        format!(
            "{split},{},{:.6},{:.6},{:.6},{:.6}",
            self.n_images, self.precision, self.recall, self.f_beta, self.mae
        )
    }
}

/// Threshold at twice the mean saliency, capped at 1; foreground is
/// strictly above it.
pub fn adaptive_threshold(s: &SaliencyMap) -> MaskImage {
    let t = (2.0 * s.mean()).min(1.0);
    let data = s.values.iter().map(|&v| u8::from(v > t)).collect();
    MaskImage {
        height: s.height,
        width: s.width,
        data,
    }
}

fn same_extent(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{}×{} vs {}×{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

pub fn confusion(pred: &MaskImage, g: &MaskImage) -> Result<ConfusionCounts> {
    same_extent("confusion", (pred.height, pred.width), (g.height, g.width))?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data.iter().zip(&g.data) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// `(TP/(TP+FP), TP/(TP+FN))`; a ratio is 0 whenever TP is 0.
pub fn precision_recall(c: &ConfusionCounts) -> (f64, f64) {
    if c.tp == 0 {
        return (0.0, 0.0);
    }
    let tp = c.tp as f64;
    (tp / (tp + c.fp as f64), tp / (tp + c.fn_ as f64))
}

/// Weighted harmonic mean `(1+β²)·p·r / (β²·p + r)`; 0 on a zero denominator.
pub fn f_measure(p: f64, r: f64, beta_sq: f64) -> f64 {
    let den = beta_sq * p + r;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + beta_sq) * p * r / den
}

pub fn mae(s: &SaliencyMap, g: &MaskImage) -> Result<f64> {
    same_extent("mae", (s.height, s.width), (g.height, g.width))?;
    if s.values.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = s
        .values
        .iter()
        .zip(&g.data)
        .map(|(&v, &t)| (f64::from(t) - v).abs())
        .sum();
    Ok(total / s.values.len() as f64)
}

pub fn evaluate_image(s: &SaliencyMap, g: &MaskImage) -> Result<MetricsRecord> {
    let counts = confusion(&adaptive_threshold(s), g)?;
    let (precision, recall) = precision_recall(&counts);
    Ok(MetricsRecord {
        precision,
        recall,
        f_beta: f_measure(precision, recall, BETA_SQ),
        mae: mae(s, g)?,
        n_images: 1,
    })
}

/// Per-image metrics averaged over the set. Images are scored in parallel
/// and folded in input order.
pub fn evaluate_dataset(pairs: &[(SaliencyMap, MaskImage)]) -> Result<MetricsRecord> {
    let records = exec::map(pairs, |(s, g)| evaluate_image(s, g));
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    mean_record(&records)
}

/// Arithmetic mean of per-image records, in order.
pub fn mean_record(records: &[MetricsRecord]) -> Result<MetricsRecord> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty set".into()));
    }
    let n = records.len() as f64;
    let mut acc = MetricsRecord {
        precision: 0.0,
        recall: 0.0,
        f_beta: 0.0,
        mae: 0.0,
        n_images: records.len(),
    };
    for r in records {
        acc.precision += r.precision;
        acc.recall += r.recall;
        acc.f_beta += r.f_beta;
        acc.mae += r.mae;
    }
    acc.precision /= n;
    acc.recall /= n;
    acc.f_beta /= n;
    acc.mae /= n;
    Ok(acc)
}
