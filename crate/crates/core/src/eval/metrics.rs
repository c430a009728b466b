//! Confusion matrices and accuracy summaries.

use crate::error::{Error, Result};

/// `cm[true][predicted]` counts.
pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<Vec<Vec<u64>>> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = vec![vec![0u64; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::InvalidLabel(format!(
                "class index {} of {classes}",
                p.max(l)
            )));
        }
        cm[l][p] += 1;
    }
    Ok(cm)
}

/// Accuracy in percent; zero for an empty matrix.
pub fn accuracy(cm: &[Vec<u64>]) -> f64 {
    let total: u64 = cm.iter().flatten().sum();
    let trace: u64 = cm.iter().enumerate().map(|(i, r)| r[i]).sum();
    if total == 0 {
        0.0
    } else {
        100.0 * trace as f64 / total as f64
    }
}

/// Recall per true class, `None` where the class never occurs.
pub fn per_class_recall(cm: &[Vec<u64>]) -> Vec<Option<f64>> {
    cm.iter()
        .enumerate()
        .map(|(i, r)| {
            let n: u64 = r.iter().sum();
            (n > 0).then(|| r[i] as f64 / n as f64)
        })
        .collect()
}

/// Elementwise sum of equally sized confusion matrices.
pub fn sum_confusion<'a>(
    mats: impl IntoIterator<Item = &'a Vec<Vec<u64>>>,
    classes: usize,
) -> Vec<Vec<u64>> {
    let mut out = vec![vec![0u64; classes]; classes];
    for m in mats {
        for (o, r) in out.iter_mut().zip(m) {
            for (a, b) in o.iter_mut().zip(r) {
                *a += b;
            }
        }
    }
    out
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Mean and standard error (sample standard deviation over √n).
pub fn accuracy_stats(acc: &[f64]) -> Result<(f64, f64)> {
    if acc.len() < 2 {
        return Err(Error::Empty(format!(
            "standard error needs at least two values, got {}",
            acc.len()
        )));
    }
    let n = acc.len() as f64;
    let m = acc.iter().sum::<f64>() / n;
    let var = acc.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((m, (var / n).sqrt()))
}
