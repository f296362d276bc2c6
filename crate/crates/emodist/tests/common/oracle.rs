//! Naive reference implementations of every scalar metric, written directly
//! from the textbook formulas over plain probability vectors. Nothing here
//! touches the library's metric code; the acceptance suite checks the two
//! agree on randomized inputs.

/// H(p) = -sum p_i log2 p_i, with 0 log 0 = 0.
pub fn entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &pi in p {
        if pi > 0.0 {
            h -= pi * pi.log2();
        }
    }
    h
}

/// KL(p || q) in bits, skipping zero-probability terms of p.
fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut d = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            d += p[i] * (p[i] / q[i]).log2();
        }
    }
    d
}

/// JSD(p, q) = 1/2 KL(p||m) + 1/2 KL(q||m) with m the midpoint, logs base 2.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

/// BC(p, q) = sum sqrt(p_i q_i).
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum()
}

/// Coefficient of determination pooled over every (vector, component) cell.
pub fn r_squared(golds: &[Vec<f64>], preds: &[Vec<f64>]) -> f64 {
    let mut pool_gold = Vec::new();
    let mut pool_pred = Vec::new();
    for (g, p) in golds.iter().zip(preds) {
        for i in 0..g.len() {
            pool_gold.push(g[i]);
            pool_pred.push(p[i]);
        }
    }
    let mean: f64 = pool_gold.iter().sum::<f64>() / pool_gold.len() as f64;
    let ss_res: f64 = pool_gold
        .iter()
        .zip(&pool_pred)
        .map(|(g, p)| (g - p) * (g - p))
        .sum();
    let ss_tot: f64 = pool_gold.iter().map(|g| (g - mean) * (g - mean)).sum();
    1.0 - ss_res / ss_tot
}

/// Top-label expected calibration error with equal-width bins over (0, 1].
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = confidences.len();
    let mut sum_conf = vec![0.0; bins];
    let mut sum_correct = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for i in 0..n {
        let c = confidences[i];
        // bin b covers (b/bins, (b+1)/bins]
        let mut b = (c * bins as f64).ceil() as usize;
        if b == 0 {
            b = 1;
        }
        if b > bins {
            b = bins;
        }
        let b = b - 1;
        sum_conf[b] += c;
        sum_correct[b] += if correct[i] { 1.0 } else { 0.0 };
        count[b] += 1;
    }
    let mut e = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let acc = sum_correct[b] / count[b] as f64;
            let conf = sum_conf[b] / count[b] as f64;
            e += count[b] as f64 / n as f64 * (acc - conf).abs();
        }
    }
    e
}

/// Accuracy, weighted F1, and unweighted average recall from a square
/// confusion matrix (rows = gold, cols = predicted).
pub fn classification(cm: &[Vec<u64>]) -> (f64, f64, f64) {
    let k = cm.len();
    let total: u64 = cm.iter().flatten().sum();
    let mut trace = 0u64;
    for (i, row) in cm.iter().enumerate() {
        trace += row[i];
    }
    let accuracy = trace as f64 / total as f64;

    let mut weighted_f1 = 0.0;
    let mut recall_sum = 0.0;
    let mut with_support = 0usize;
    for (c, row) in cm.iter().enumerate() {
        let support: u64 = row.iter().sum();
        let predicted: u64 = (0..k).map(|r| cm[r][c]).sum();
        let tp = row[c];
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted_f1 += support as f64 / total as f64 * f1;
        if support > 0 {
            recall_sum += recall;
            with_support += 1;
        }
    }
    let uar = recall_sum / with_support as f64;
    (accuracy, weighted_f1, uar)
}

/// Quantile by linear interpolation at rank h = (n-1) q over sorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
