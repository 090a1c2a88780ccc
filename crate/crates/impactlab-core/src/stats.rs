//! Small statistics helpers: log-log slope fitting and grouped jackknife
//! standard errors for Monte Carlo estimates.

/// Least-squares line fit.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points to fit a line");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    LineFit {
        slope,
        intercept,
        residual_rms,
    }
}

/// Log-log slope of `ys` against `xs` (both must be positive).
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    fit_line(&lx, &ly)
}

/// Sup-over-nodes mean estimate with a grouped (delete-one-block) jackknife
/// standard error.
///
/// `block_sums[b][node]` holds the sum of per-path values in block `b` at
/// each node; `block_counts[b]` the number of paths in the block. The
/// statistic is `max_node( total_sum[node] / total_count )`.
pub fn sup_mean_jackknife(block_sums: &[Vec<f64>], block_counts: &[usize]) -> (f64, f64) {
    let blocks = block_sums.len();
    assert!(blocks >= 2, "jackknife needs at least two blocks");
    assert_eq!(blocks, block_counts.len());
    let nodes = block_sums[0].len();
    let total_count: usize = block_counts.iter().sum();

    let mut total = vec![0.0; nodes];
    for sums in block_sums {
        for (t, s) in total.iter_mut().zip(sums) {
            *t += s;
        }
    }
    let full = total
        .iter()
        .map(|s| s / total_count as f64)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut estimates = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let rest = (total_count - block_counts[b]) as f64;
        let est = total
            .iter()
            .zip(&block_sums[b])
            .map(|(t, s)| (t - s) / rest)
            .fold(f64::NEG_INFINITY, f64::max);
        estimates.push(est);
    }
    let mean_est = estimates.iter().sum::<f64>() / blocks as f64;
    let var = estimates
        .iter()
        .map(|e| (e - mean_est) * (e - mean_est))
        .sum::<f64>()
        * (blocks as f64 - 1.0)
        / blocks as f64;
    (full, var.sqrt())
}

/// Plain-mean estimate with grouped jackknife standard error (single node).
pub fn mean_jackknife(block_sums: &[f64], block_counts: &[usize]) -> (f64, f64) {
    let wrapped: Vec<Vec<f64>> = block_sums.iter().map(|&s| vec![s]).collect();
    sup_mean_jackknife(&wrapped, block_counts)
}
