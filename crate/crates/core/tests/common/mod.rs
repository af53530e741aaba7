#![allow(dead_code)]

use std::time::Instant;

use index_tracker::model::ReturnsPanel;
use index_tracker::solver::{full_replication, SolverOptions};
use index_tracker::synth::{generate, SynthConfig, SynthData};

pub fn synth(n: usize, d: usize, sparse_k: usize, noise: f64, seed: u64) -> SynthData {
    generate(&SynthConfig { n, d, sparse_k, noise, seed }).expect("valid synthetic config")
}

pub fn panel(n: usize, d: usize, sparse_k: usize, noise: f64, seed: u64) -> ReturnsPanel {
    synth(n, d, sparse_k, noise, seed).panel
}

/// Every k-subset of 0..n in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Smallest full-replication objective over all supports of size k.
pub fn best_subset_objective(panel: &ReturnsPanel, k: usize) -> f64 {
    subsets(panel.n_stocks(), k)
        .iter()
        .map(|s| {
            let sub = panel.columns(s).unwrap();
            full_replication(&sub, &SolverOptions::default())
                .map(|r| r.objective)
                .unwrap_or_else(|e| match e {
                    index_tracker::Error::MaxIterationsExceeded { best, .. } => best.objective,
                    e => panic!("oracle fit failed: {e}"),
                })
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

/// Fastest of `repeats` runs of `f`; scheduler noise only ever adds time.
pub fn min_time(repeats: usize, mut f: impl FnMut()) -> f64 {
    (0..repeats)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Slope of the least-squares line through `(x, y)`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn verdict(criterion: u32, pass: bool, detail: &str) {
    println!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
}
