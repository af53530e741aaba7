//! Greedy selection baselines built from repeated full replications.

use std::time::Instant;

use crate::dcc;
use crate::error::{Error, Result};
use crate::model::{ReturnsPanel, SolveReport, WeightVector};
use crate::solver::{full_replication, tracking_objective, SolverOptions};

/// Adds one stock per round: the unselected stock with the largest weight
/// in a full replication (ties to the lower index, zero weights last), then
/// refits on the K chosen stocks. Runs K + 1 full replications.
pub fn forward_selection(panel: &ReturnsPanel, k: usize, opts: &SolverOptions) -> Result<SolveReport> {
    let started = Instant::now();
    check_k(panel, k)?;
    let n = panel.n_stocks();
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut fits = Fits::default();
    for _ in 0..k {
        let all: Vec<usize> = (0..n).collect();
        let w = fits.fit(panel, &all, opts)?;
        let next = (0..n)
            .filter(|i| !selected.contains(i))
            .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)))
            .expect("K < N leaves a candidate");
        selected.push(next);
    }
    selected.sort_unstable();
    fits.finish(panel, &selected, opts, started)
}

/// Starts from all N stocks and drops the smallest weight (ties: the
/// higher index goes) with a refit after each removal, until K remain.
/// Runs N - K + 1 full replications.
pub fn backward_selection(panel: &ReturnsPanel, k: usize, opts: &SolverOptions) -> Result<SolveReport> {
    let started = Instant::now();
    check_k(panel, k)?;
    let mut kept: Vec<usize> = (0..panel.n_stocks()).collect();
    let mut fits = Fits::default();
    while kept.len() > k {
        let w = fits.fit(panel, &kept, opts)?;
        let drop = (0..kept.len())
            .min_by(|&i, &j| w[kept[i]].total_cmp(&w[kept[j]]).then(kept[j].cmp(&kept[i])))
            .expect("nonempty");
        kept.remove(drop);
    }
    fits.finish(panel, &kept, opts, started)
}

fn check_k(panel: &ReturnsPanel, k: usize) -> Result<()> {
    let n = panel.n_stocks();
    if k < 1 || k >= n {
        return Err(Error::InfeasibleConstraintConfig(format!(
            "K must satisfy 1 <= K < N={n}, got {k}"
        )));
    }
    Ok(())
}

#[derive(Default)]
struct Fits {
    count: usize,
    iterations: usize,
    last_kkt: f64,
}

impl Fits {
    /// Full replication on `cols`, scattered back to all N stocks.
    fn fit(&mut self, panel: &ReturnsPanel, cols: &[usize], opts: &SolverOptions) -> Result<Vec<f64>> {
        self.count += 1;
        let n = panel.n_stocks();
        let mut w = vec![0.0; n];
        if cols.len() == 1 {
            w[cols[0]] = 1.0;
            self.last_kkt = 0.0;
            return Ok(w);
        }
        let sub = panel.columns(cols)?;
        let sub_opts = SolverOptions {
            initial_weights: None,
            ..opts.clone()
        };
        let report = full_replication(&sub, &sub_opts)?;
        self.iterations += report.iterations;
        self.last_kkt = report.kkt_residual;
        for (&c, &v) in cols.iter().zip(report.weights.as_slice()) {
            w[c] = v;
        }
        Ok(w)
    }

    fn finish(
        mut self,
        panel: &ReturnsPanel,
        cols: &[usize],
        opts: &SolverOptions,
        started: Instant,
    ) -> Result<SolveReport> {
        let w = self.fit(panel, cols, opts)?;
        let weights = WeightVector::new(w, crate::model::DEFAULT_EPS)?;
        Ok(SolveReport {
            objective: tracking_objective(panel, weights.as_slice()),
            kkt_residual: self.last_kkt,
            iterations: self.iterations,
            smooth_cardinality: 0.0,
            exact_cardinality: dcc::cardinality_exact(&weights),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            full_replications: self.count,
            weights,
        })
    }
}
