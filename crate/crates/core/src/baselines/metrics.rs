use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub ll: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegMetrics {
    pub mse: f64,
    pub ll: f64,
}

/// Confusion-matrix metrics at threshold 0.5 (positive class 1) and the
/// Bernoulli log-likelihood. Empty ratios are reported as 0.
pub fn metrics_classification(probs: &DVector<f64>, labels: &DVector<f64>) -> ClassMetrics {
    assert_eq!(probs.len(), labels.len());
    let (mut tp, mut fp, mut tn, mut fneg) = (0.0, 0.0, 0.0, 0.0);
    let mut ll = 0.0;
    for (p, y) in probs.iter().zip(labels.iter()) {
        let pred = *p >= 0.5;
        let pos = *y == 1.0;
        match (pred, pos) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fneg += 1.0,
        }
        ll += if pos { p.ln() } else { (1.0 - p).ln() };
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    ClassMetrics {
        precision,
        recall,
        accuracy: (tp + tn) / probs.len() as f64,
        f1: ratio(2.0 * precision * recall, precision + recall),
        ll,
    }
}

/// Mean squared error and the Gaussian log-likelihood with variance `sigma2`.
pub fn metrics_regression(preds: &DVector<f64>, targets: &DVector<f64>, sigma2: f64) -> RegMetrics {
    assert_eq!(preds.len(), targets.len());
    let n = preds.len() as f64;
    let rss = (preds - targets).norm_squared();
    RegMetrics {
        mse: rss / n,
        ll: -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - rss / (2.0 * sigma2),
    }
}
