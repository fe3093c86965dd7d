use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Data("metric over an empty set".into()));
    }
    if a != b {
        return Err(Error::Data(format!("{a} predictions for {b} references")));
    }
    Ok(())
}

pub fn metric_accuracy(predictions: &[usize], references: &[usize]) -> Result<f64> {
    check_lengths(predictions.len(), references.len())?;
    let hits = predictions.iter().zip(references).filter(|(p, r)| p == r).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Matthews correlation for binary labels; 0 when any marginal is empty.
pub fn metric_mcc(predictions: &[usize], references: &[usize]) -> Result<f64> {
    check_lengths(predictions.len(), references.len())?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0f64, 0f64, 0f64, 0f64);
    for (&p, &r) in predictions.iter().zip(references) {
        match (p, r) {
            (1, 1) => tp += 1.0,
            (0, 0) => tn += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            _ => return Err(Error::Data(format!("MCC needs binary labels, got ({p}, {r})"))),
        }
    }
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom.sqrt())
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn metric_spearman(predictions: &[f64], references: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), references.len())?;
    if predictions.iter().chain(references).any(|v| !v.is_finite()) {
        return Err(Error::Data("spearman inputs must be finite".into()));
    }
    Ok(pearson(&average_ranks(predictions), &average_ranks(references)))
}
