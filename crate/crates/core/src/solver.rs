//! Sequential quadratic programming for full and partial replication.
//!
//! Both problems minimise `||X w - y||^2` over the simplex. Partial
//! replication adds the smooth cardinality constraint `C(w) <= K`. Every
//! iteration solves a dense QP in the step `d` (see [`crate::qp`]) whose
//! Hessian is `2 X'X` plus the convex part of the constraint curvature,
//! followed by an Armijo backtracking search on an exact penalty merit
//! function. Weights already at zero start the QP held at their bound.
//!
//! A steep sigmoid constraint is flat almost everywhere, so a direct solve
//! from equal weights stalls. Partial replication therefore walks a
//! continuation path: a sequence of rational-surrogate problems with growing
//! steepness selects the support, then the target problem is solved warm.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dcc::{self, logistic, logistic_slope};
use crate::error::{Error, Result};
use crate::model::{DccParams, ReturnsPanel, SolveReport, Variant, WeightVector};
use crate::qp::{self, Constraint, Normal, QpError, QpSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative objective change below which a feasible iterate is accepted.
    pub tol_objective: f64,
    /// Largest tolerated constraint violation and KKT residual.
    pub tol_feasibility: f64,
    /// Starting point; equal weights when absent.
    pub initial_weights: Option<WeightVector>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 500,
            tol_objective: 1e-9,
            tol_feasibility: 1e-8,
            initial_weights: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        for (name, v) in [
            ("tol_objective", self.tol_objective),
            ("tol_feasibility", self.tol_feasibility),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `C(w) - K` for one surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Surrogate {
    a: f64,
    eps: f64,
    k: f64,
    variant: Variant,
}

impl Surrogate {
    fn value(&self, w: &[f64]) -> f64 {
        dcc::smooth_count(w, self.a, self.eps, self.variant) - self.k
    }

    fn grad(&self, w: &[f64]) -> DVector<f64> {
        DVector::from_vec(dcc::smooth_count_grad(w, self.a, self.eps, self.variant))
    }

    /// Second derivative of one indicator term.
    fn curvature(&self, w: f64) -> f64 {
        match self.variant {
            Variant::Sigmoid => {
                let z = self.a * (w - self.eps);
                self.a * self.a * logistic_slope(z) * (1.0 - 2.0 * logistic(z))
            }
            Variant::Rational => -2.0 * self.a * self.a / (self.a * w + 1.0).powi(3),
        }
    }
}

/// Lagrange multipliers of
/// `1/2 ||Xw - y||^2 + lambda (1 - sum w) - mu . w + nu (C(w) - K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub nu: f64,
}

impl Multipliers {
    pub fn zeros(n: usize) -> Self {
        Multipliers {
            lambda: 0.0,
            mu: vec![0.0; n],
            nu: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub w: DVector<f64>,
    pub multipliers: Multipliers,
    /// Scaled Lagrangian Hessian approximation, kept positive definite.
    pub hessian_approx: DMatrix<f64>,
    pub penalty: f64,
    pub iteration: usize,
    /// Max-norm of the last accepted move.
    pub last_step: f64,
    /// Relative merit decrease of the last accepted move.
    pub last_change: f64,
}

/// The least-squares tracking problem in Gram form, optionally constrained.
///
/// The objective is scaled internally by the mean squared column norm so
/// that the QP data are of order one; reported objectives and multipliers
/// are unscaled.
#[derive(Debug, Clone)]
pub struct TrackingProblem {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    scale: f64,
    base_hessian: DMatrix<f64>,
    constraint: Option<Surrogate>,
}

impl TrackingProblem {
    /// Full replication on every column of the panel.
    pub fn full(panel: &ReturnsPanel) -> Result<Self> {
        let n = panel.n_stocks();
        if n < 2 {
            return Err(Error::DegenerateProblem(format!("need at least 2 stocks, got {n}")));
        }
        let x = &panel.returns;
        if let Some(col) = (0..n).find(|&c| x.column(c).iter().all(|&v| v == 0.0)) {
            return Err(Error::DegenerateProblem(format!(
                "stock {} has identically zero returns",
                panel.tickers[col]
            )));
        }
        let gram = x.tr_mul(x);
        let xty = x.tr_mul(&panel.target);
        let yty = panel.target.norm_squared();
        let scale = gram.trace() / n as f64;
        let base_hessian = regularised(&gram * (2.0 / scale));
        Ok(TrackingProblem {
            gram,
            xty,
            yty,
            scale,
            base_hessian,
            constraint: None,
        })
    }

    /// Partial replication with the smooth cardinality constraint `p`.
    pub fn with_cardinality(panel: &ReturnsPanel, p: &DccParams) -> Result<Self> {
        let p = DccParams::new(p.a, p.eps, p.k, panel.n_stocks(), p.variant)?;
        let mut problem = Self::full(panel)?;
        problem.constraint = Some(Surrogate {
            a: p.a,
            eps: p.eps,
            k: p.k as f64,
            variant: p.variant,
        });
        Ok(problem)
    }

    fn constrained_by(&self, s: Surrogate) -> Self {
        TrackingProblem {
            constraint: Some(s),
            ..self.clone()
        }
    }

    pub fn n(&self) -> usize {
        self.xty.len()
    }

    /// `||X w - y||^2`, evaluated through the Gram matrix.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        (w.dot(&(&self.gram * &w)) - 2.0 * self.xty.dot(&w) + self.yty).max(0.0)
    }

    fn scaled_objective(&self, w: &DVector<f64>) -> f64 {
        (w.dot(&(&self.gram * w)) - 2.0 * self.xty.dot(w) + self.yty) / self.scale
    }

    fn scaled_grad(&self, w: &DVector<f64>) -> DVector<f64> {
        (&self.gram * w - &self.xty) * (2.0 / self.scale)
    }

    /// `C(w) - K`, or `None` for full replication.
    pub fn constraint_value(&self, w: &[f64]) -> Option<f64> {
        self.constraint.map(|s| s.value(w))
    }

    fn merit(&self, w: &DVector<f64>, penalty: f64) -> f64 {
        let violation = self.constraint.map_or(0.0, |s| s.value(w.as_slice()).max(0.0));
        self.scaled_objective(w) + penalty * violation
    }

    /// Max-norm of stationarity, primal violations and complementarity.
    /// The nonnegativity and sign conditions on the multipliers are
    /// included as violations too.
    pub fn kkt_residual(&self, w: &[f64], m: &Multipliers) -> f64 {
        let wv = DVector::from_column_slice(w);
        let mut stat = &self.gram * &wv - &self.xty;
        stat.add_scalar_mut(-m.lambda);
        for (s, mu) in stat.iter_mut().zip(&m.mu) {
            *s -= mu;
        }
        let mut worst = stat.amax();
        if let Some(s) = self.constraint {
            let c = s.value(w);
            stat.axpy(m.nu, &s.grad(w), 1.0);
            worst = stat.amax().max(c.max(0.0)).max((m.nu * c).abs()).max((-m.nu).max(0.0));
        }
        worst = worst.max((1.0 - wv.sum()).abs());
        for (wi, mu) in w.iter().zip(&m.mu) {
            worst = worst.max((-wi).max(0.0)).max((mu * wi).abs()).max((-mu).max(0.0));
        }
        worst
    }

    pub fn initial_state(&self, w: &WeightVector) -> Result<SolverState> {
        if w.len() != self.n() {
            return Err(Error::LengthMismatch {
                left: w.len(),
                right: self.n(),
            });
        }
        Ok(SolverState {
            w: w.to_dvector(),
            multipliers: Multipliers::zeros(self.n()),
            hessian_approx: self.base_hessian.clone(),
            penalty: 0.0,
            iteration: 0,
            last_step: f64::INFINITY,
            last_change: f64::INFINITY,
        })
    }

    /// `2 X'X` plus the convex part of the constraint curvature, scaled.
    /// The objective is quadratic and the constraint separable, so this is
    /// the Lagrangian Hessian with its negative diagonal entries dropped.
    fn lagrangian_hessian(&self, w: &DVector<f64>, nu: f64) -> DMatrix<f64> {
        let mut h = self.base_hessian.clone();
        if let Some(s) = self.constraint {
            let nu_scaled = 2.0 * nu / self.scale;
            if nu_scaled > 0.0 {
                for (i, &wi) in w.iter().enumerate() {
                    h[(i, i)] += nu_scaled * s.curvature(wi).max(0.0);
                }
            }
        }
        h
    }

    /// One SQP iteration. The returned state has `last_step == 0` when no
    /// descent step exists from `state`.
    pub fn sqp_step(&self, state: &SolverState) -> Result<SolverState> {
        let n = self.n();
        let w = &state.w;
        let g = self.scaled_grad(w);
        let eq = [Constraint::new(
            Normal::Dense(DVector::from_element(n, 1.0)),
            1.0 - w.sum(),
        )];
        let mut ineq: Vec<Constraint> = (0..n).map(|i| Constraint::new(Normal::Unit(i), -w[i])).collect();
        let linearised = self.constraint.map(|s| {
            let c = s.value(w.as_slice());
            let h = s.grad(w.as_slice());
            // On the simplex h'd can fall no lower than min h - h'w; relax
            // an unreachable linearisation to most of that reach.
            let reach = h.min() - h.dot(w);
            let rhs = if -c >= reach { -c } else { 0.9 * reach };
            (c, h, rhs)
        });
        if let Some((_, h, rhs)) = &linearised {
            ineq.push(Constraint::new(Normal::Dense(-h), -rhs));
        }

        let hessian = self.lagrangian_hessian(w, state.multipliers.nu);
        let sol = match self.solve_on_free_set(&hessian, &g, w, linearised.as_ref().map(|(_, h, r)| (h, *r))) {
            Some(sol) => sol,
            None => qp::solve(&hessian, &g, &eq, &ineq).map_err(subproblem_error)?,
        };
        let d = sol.x;
        let nu_q = if linearised.is_some() { sol.ineq_multipliers[n] } else { 0.0 };

        let mut penalty = state.penalty;
        if penalty < 1.1 * nu_q {
            penalty = 2.0 * nu_q;
        }
        let phi0 = self.merit(w, penalty);
        let slope = g.dot(&d)
            + linearised.as_ref().map_or(0.0, |(c, h, _)| {
                penalty * ((c + h.dot(&d)).max(0.0) - c.max(0.0))
            });

        let mut next = state.clone();
        next.iteration += 1;
        next.penalty = penalty;
        let half_scale = 0.5 * self.scale;
        next.multipliers = Multipliers {
            lambda: half_scale * sol.eq_multipliers[0],
            mu: sol.ineq_multipliers[..n].iter().map(|u| half_scale * u).collect(),
            nu: half_scale * nu_q,
        };

        let mut accepted = None;
        if slope < 0.0 {
            let mut alpha = 1.0;
            for _ in 0..60 {
                let trial = step_to(w, &d, alpha);
                let phi = self.merit(&trial, penalty);
                if phi <= phi0 + 1e-4 * alpha * slope {
                    accepted = Some((trial, alpha, phi));
                    break;
                }
                alpha *= 0.5;
            }
        }
        let Some((trial, alpha, phi)) = accepted else {
            next.last_step = 0.0;
            next.last_change = 0.0;
            next.hessian_approx = self.base_hessian.clone();
            return Ok(next);
        };

        next.hessian_approx = hessian;
        next.last_step = alpha * d.amax();
        next.last_change = (phi0 - phi).abs() / phi.abs().max(f64::MIN_POSITIVE);
        next.w = trial;
        Ok(next)
    }

    /// Solves the subproblem with the zero weights held at zero, freeing any
    /// whose bound multiplier comes out negative. Returns `None` when the
    /// working set fails to settle, so the caller can solve in full.
    fn solve_on_free_set(
        &self,
        hessian: &DMatrix<f64>,
        g: &DVector<f64>,
        w: &DVector<f64>,
        linearised: Option<(&DVector<f64>, f64)>,
    ) -> Option<QpSolution> {
        let n = w.len();
        let mut free: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
        if free.len() == n || free.is_empty() {
            return None;
        }
        for _ in 0..FREE_SET_ROUNDS {
            let m = free.len();
            let sub_h = hessian.select_rows(&free).select_columns(&free);
            let sub_g = DVector::from_iterator(m, free.iter().map(|&i| g[i]));
            let eq = [Constraint::new(Normal::Dense(DVector::from_element(m, 1.0)), 1.0 - w.sum())];
            let mut ineq: Vec<Constraint> =
                free.iter().enumerate().map(|(j, &i)| Constraint::new(Normal::Unit(j), -w[i])).collect();
            if let Some((h, rhs)) = linearised {
                let sub = DVector::from_iterator(m, free.iter().map(|&i| h[i]));
                ineq.push(Constraint::new(Normal::Dense(-sub), -rhs));
            }
            let sub = qp::solve(&sub_h, &sub_g, &eq, &ineq).ok()?;

            let mut x = DVector::zeros(n);
            for (j, &i) in free.iter().enumerate() {
                x[i] = sub.x[j];
            }
            let lambda = sub.eq_multipliers[0];
            let nu = if linearised.is_some() { sub.ineq_multipliers[m] } else { 0.0 };
            let residual = hessian * &x + g;
            let tol = 1e-10 * (1.0 + residual.amax());
            let mut mu = vec![0.0; n];
            for (j, &i) in free.iter().enumerate() {
                mu[i] = sub.ineq_multipliers[j];
            }
            let mut released = Vec::new();
            for i in 0..n {
                if w[i] > 0.0 || free.binary_search(&i).is_ok() {
                    continue;
                }
                let u = residual[i] - lambda + linearised.map_or(0.0, |(h, _)| nu * h[i]);
                if u < -tol {
                    released.push(i);
                }
                mu[i] = u.max(0.0);
            }
            if released.is_empty() {
                let mut ineq_multipliers = mu;
                if linearised.is_some() {
                    ineq_multipliers.push(nu);
                }
                return Some(QpSolution {
                    x,
                    eq_multipliers: vec![lambda],
                    ineq_multipliers,
                });
            }
            free.extend(released);
            free.sort_unstable();
        }
        None
    }

    /// Runs SQP iterations until the KKT residual or the objective change
    /// falls below tolerance. Returns the final state and whether it
    /// converged.
    fn iterate(&self, mut state: SolverState, opts: &SolverOptions) -> Result<(SolverState, bool)> {
        let start_iteration = state.iteration;
        while state.iteration - start_iteration < opts.max_iterations {
            let next = self.sqp_step(&state)?;
            let stalled = next.last_step == 0.0;
            let retried = stalled && state.last_step == 0.0;
            state = next;
            let violation = self.constraint_value(state.w.as_slice()).unwrap_or(0.0);
            if violation > opts.tol_feasibility {
                if retried {
                    break;
                }
                continue;
            }
            let kkt = self.kkt_residual(state.w.as_slice(), &state.multipliers);
            if kkt <= opts.tol_feasibility
                || state.last_change <= opts.tol_objective && state.last_step <= opts.tol_objective.sqrt()
                || retried
            {
                return Ok((state, true));
            }
        }
        Ok((state, false))
    }
}

fn subproblem_error(e: QpError) -> Error {
    Error::DegenerateProblem(format!("quadratic subproblem failed: {e:?}"))
}

/// Adds the smallest ridge that keeps every Cholesky pivot of `m` above
/// `1e-9` of its largest diagonal entry.
fn regularised(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let top = m.diagonal().amax();
    let well_posed = |c: &DMatrix<f64>| {
        Cholesky::new(c.clone()).is_some_and(|ch| ch.l().diagonal().iter().all(|&l| l * l >= 1e-9 * top))
    };
    if well_posed(&m) {
        return m;
    }
    let mut ridge = 1e-9 * top;
    loop {
        let candidate = &m + DMatrix::identity(n, n) * ridge;
        if well_posed(&candidate) {
            debug!("Gram matrix near singular, added ridge {ridge:e}");
            return candidate;
        }
        ridge *= 10.0;
    }
}

/// `w + alpha d`, with roundoff below zero clipped.
fn step_to(w: &DVector<f64>, d: &DVector<f64>, alpha: f64) -> DVector<f64> {
    w.zip_map(d, |wi, di| {
        let v = wi + alpha * di;
        if v < 1e-15 {
            0.0
        } else {
            v
        }
    })
}

/// Minimum-variance tracking portfolio over all stocks.
pub fn full_replication(panel: &ReturnsPanel, opts: &SolverOptions) -> Result<SolveReport> {
    opts.validate()?;
    let started = Instant::now();
    let problem = TrackingProblem::full(panel)?;
    let eps = crate::model::DEFAULT_EPS;
    let w0 = initial_weights(panel.n_stocks(), eps, opts)?;
    let (state, converged) = problem.iterate(problem.initial_state(&w0)?, opts)?;
    let weights = clean_simplex(state.w.as_slice(), eps)?;
    let report = SolveReport {
        objective: tracking_objective(panel, weights.as_slice()),
        kkt_residual: problem.kkt_residual(weights.as_slice(), &state.multipliers),
        iterations: state.iteration,
        smooth_cardinality: 0.0,
        exact_cardinality: dcc::cardinality_exact(&weights),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        full_replications: 1,
        weights,
    };
    if converged {
        Ok(report)
    } else {
        Err(Error::MaxIterationsExceeded {
            iterations: state.iteration,
            best: Box::new(report),
        })
    }
}

/// Rational-surrogate steps before the target problem: geometric in `a`
/// from `RATIONAL_START * K` up to `RATIONAL_END / eps`.
const RATIONAL_START: f64 = 1.0;
const RATIONAL_END: f64 = 10.0;
const RATIONAL_RATIO: f64 = 1.25;
/// Relative objective change between stages below which the support
/// search ends early.
const SETTLED_CHANGE: f64 = 1e-4;
/// Iteration cap for each intermediate continuation stage.
const STAGE_ITERATIONS: usize = 200;
/// Working-set corrections tried before the QP is solved from scratch.
const FREE_SET_ROUNDS: usize = 8;
/// Objective tolerance of the intermediate stages.
const STAGE_TOL_OBJECTIVE: f64 = 1e-6;

/// Sparse tracking portfolio with at most `p.k` holdings of weight `p.eps`
/// or more.
pub fn partial_replication_dcc(panel: &ReturnsPanel, p: &DccParams, opts: &SolverOptions) -> Result<SolveReport> {
    opts.validate()?;
    let started = Instant::now();
    let n = panel.n_stocks();
    let problem = TrackingProblem::with_cardinality(panel, p)?;
    let conditions = dcc::check_conditions(n, p.a, p.eps)?;
    if !conditions.all() {
        warn!(
            "a={} does not satisfy every condition for N={n}, eps={} (c0={}, c1={}, c2={})",
            p.a, p.eps, conditions.c0, conditions.c1, conditions.c2
        );
    }

    // With a shallow sigmoid every empty slot still counts a little; when
    // that floor exceeds the tolerance the last slot cannot hold a full
    // position, so the support search aims one lower.
    let floor = match p.variant {
        Variant::Sigmoid => (n - p.k) as f64 * logistic(-p.a * p.eps),
        Variant::Rational => 0.0,
    };
    let k_support = if floor > opts.tol_feasibility && p.k > 1 { p.k - 1 } else { p.k };
    let a_end = match p.variant {
        Variant::Sigmoid => RATIONAL_END / p.eps,
        Variant::Rational => p.a,
    };

    let w0 = initial_weights(n, p.eps, opts)?;
    let mut state = problem.initial_state(&w0)?;
    let stage_opts = SolverOptions {
        max_iterations: STAGE_ITERATIONS,
        tol_objective: opts.tol_objective.max(STAGE_TOL_OBJECTIVE),
        tol_feasibility: opts.tol_feasibility,
        initial_weights: None,
    };
    let held = |w: &DVector<f64>| -> Vec<usize> { (0..n).filter(|&i| w[i] >= p.eps).collect() };
    let mut previous: Option<(Vec<usize>, f64)> = None;
    let mut a = RATIONAL_START * k_support as f64;
    while a < a_end {
        let stage = problem.constrained_by(Surrogate {
            a,
            eps: p.eps,
            k: k_support as f64,
            variant: Variant::Rational,
        });
        state.hessian_approx = problem.base_hessian.clone();
        let (next, converged) = stage.iterate(state, &stage_opts)?;
        debug!(
            "rational stage a={a:.3e}: iterations={} converged={converged} objective={:.6e}",
            next.iteration,
            stage.objective(next.w.as_slice())
        );
        state = next;
        a *= RATIONAL_RATIO;

        // Stop once the holdings are settled: same set as the last stage,
        // within budget, and the objective no longer moving.
        let support = held(&state.w);
        let objective = problem.scaled_objective(&state.w);
        if let Some((last_support, last_objective)) = &previous {
            if *last_support == support
                && support.len() <= k_support
                && (objective - last_objective).abs() <= SETTLED_CHANGE * objective.abs()
            {
                break;
            }
        }
        previous = Some((support, objective));
    }

    // Filling an empty slot past the cutoff raises C by at least the floor
    // (or by one when the floor is negligible). Price that above any
    // possible objective gain so the merit never accepts it.
    let jump = floor.clamp(opts.tol_feasibility, 1.0);
    state.penalty = state.penalty.max(2.0 * problem.scaled_objective(&state.w) / jump);
    state.hessian_approx = problem.base_hessian.clone();
    let (state, converged) = problem.iterate(state, opts)?;
    let pre = state.w.as_slice();
    let smooth = dcc::cardinality_smooth(pre, p);
    let kkt = problem.kkt_residual(pre, &state.multipliers);
    debug!("final stage: iterations={} converged={converged} smooth={smooth} kkt={kkt:e}", state.iteration);

    let pre_weights = clean_simplex(pre, p.eps)?;
    let weights = refit_on_support(panel, &threshold_project(&pre_weights, p)?, p, opts)?;
    let exact = dcc::cardinality_exact(&weights);
    let report = SolveReport {
        objective: tracking_objective(panel, weights.as_slice()),
        kkt_residual: kkt,
        iterations: state.iteration,
        smooth_cardinality: smooth,
        exact_cardinality: exact,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        full_replications: 0,
        weights,
    };
    if exact > p.k {
        return Err(Error::CardinalityExceeded { exact, k: p.k });
    }
    if !converged || smooth > p.k as f64 + opts.tol_feasibility {
        return Err(Error::MaxIterationsExceeded {
            iterations: state.iteration,
            best: Box::new(report),
        });
    }
    Ok(report)
}

/// Re-solves full replication on the held stocks, as the selection
/// baselines do for their final portfolio. Mass the threshold removed is
/// redistributed optimally instead of proportionally.
fn refit_on_support(
    panel: &ReturnsPanel,
    w: &WeightVector,
    p: &DccParams,
    opts: &SolverOptions,
) -> Result<WeightVector> {
    let support = w.support();
    if support.len() < 2 {
        return Ok(w.clone());
    }
    let sub = panel.columns(&support)?;
    let start = WeightVector::new(support.iter().map(|&i| w.as_slice()[i]).collect(), p.eps)?;
    let sub_opts = SolverOptions {
        initial_weights: Some(start),
        ..opts.clone()
    };
    let refit = match full_replication(&sub, &sub_opts) {
        Ok(r) => r,
        Err(Error::MaxIterationsExceeded { best, .. }) => *best,
        Err(e) => return Err(e),
    };
    let full = WeightVector::scatter(&refit.weights, &support, panel.n_stocks())?;
    threshold_project(&full, p)
}

/// Zeroes every weight below `p.eps` and rescales the rest to sum to one.
/// A weight exactly at the cutoff is kept.
pub fn threshold_project(w: &WeightVector, p: &DccParams) -> Result<WeightVector> {
    let kept: Vec<f64> = w
        .as_slice()
        .iter()
        .map(|&v| if v >= p.eps { v } else { 0.0 })
        .collect();
    let sum: f64 = kept.iter().sum();
    if sum == 0.0 {
        return Err(Error::AllBelowCutoff { eps: p.eps });
    }
    WeightVector::new(kept.iter().map(|v| v / sum).collect(), w.eps())
}

fn initial_weights(n: usize, eps: f64, opts: &SolverOptions) -> Result<WeightVector> {
    match &opts.initial_weights {
        Some(w) if w.len() != n => Err(Error::LengthMismatch { left: w.len(), right: n }),
        Some(w) => Ok(w.clone()),
        None => WeightVector::uniform(n, eps),
    }
}

/// Rescales an iterate that is on the simplex up to roundoff.
fn clean_simplex(w: &[f64], eps: f64) -> Result<WeightVector> {
    let clipped: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    WeightVector::new(clipped.iter().map(|v| v / sum).collect(), eps)
}

/// `||X w - y||^2` evaluated directly on the panel.
pub fn tracking_objective(panel: &ReturnsPanel, w: &[f64]) -> f64 {
    (&panel.returns * DVector::from_column_slice(w) - &panel.target).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn panel(n: usize, d: usize, seed: u64) -> ReturnsPanel {
        generate(&SynthConfig { n, d, sparse_k: n, noise: 0.002, seed }).unwrap().panel
    }

    fn project_simplex(v: &[f64]) -> Vec<f64> {
        let mut u = v.to_vec();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut cum = 0.0;
        let mut theta = 0.0;
        for (j, &x) in u.iter().enumerate() {
            cum += x;
            let t = (cum - 1.0) / (j + 1) as f64;
            if x - t > 0.0 {
                theta = t;
            }
        }
        v.iter().map(|x| (x - theta).max(0.0)).collect()
    }

    fn projected_gradient(panel: &ReturnsPanel) -> f64 {
        let g = panel.returns.tr_mul(&panel.returns);
        let b = panel.returns.tr_mul(&panel.target);
        let step = 0.5 / g.symmetric_eigenvalues().max();
        let n = panel.n_stocks();
        let mut w = vec![1.0 / n as f64; n];
        for _ in 0..200_000 {
            let wv = DVector::from_column_slice(&w);
            let grad = (&g * &wv - &b) * 2.0;
            let next = project_simplex((wv - grad * step).as_slice());
            let moved = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            w = next;
            if moved < 1e-15 {
                break;
            }
        }
        tracking_objective(panel, &w)
    }

    #[test]
    fn exact_replication() {
        let mut p = panel(6, 80, 1);
        p.target = p.returns.column(4).into_owned();
        let report = full_replication(&p, &SolverOptions::default()).unwrap();
        assert!((report.weights.as_slice()[4] - 1.0).abs() < 1e-6);
        assert!(report.objective < 1e-12);
    }

    #[test]
    fn matches_grid_search_on_three_assets() {
        let mut p = panel(3, 100, 2);
        p.target = DVector::from_iterator(100, p.returns.row_iter().map(|r| r.sum() / 3.0));
        let mut best = f64::INFINITY;
        for i in 0..=1000 {
            for j in 0..=(1000 - i) {
                let w = [i as f64 / 1e3, j as f64 / 1e3, (1000 - i - j) as f64 / 1e3];
                best = best.min(tracking_objective(&p, &w));
            }
        }
        let report = full_replication(&p, &SolverOptions::default()).unwrap();
        assert!((report.objective - best).abs() < 1e-6, "{} vs {best}", report.objective);
        for &w in report.weights.as_slice() {
            assert!((w - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_projected_gradient() {
        for seed in 0..4 {
            let p = panel(12, 150, 10 + seed);
            let oracle = projected_gradient(&p);
            let report = full_replication(&p, &SolverOptions::default()).unwrap();
            assert!(
                (report.objective - oracle).abs() <= 1e-6 * oracle,
                "seed {seed}: {} vs {oracle}",
                report.objective
            );
            assert!(report.kkt_residual <= 1e-8);
        }
    }

    /// Interior optimum of a two-asset problem in closed form.
    fn two_asset() -> (ReturnsPanel, Vec<f64>, Multipliers) {
        let x = DMatrix::from_row_slice(4, 2, &[0.01, -0.02, 0.03, 0.01, -0.01, 0.02, 0.02, 0.0]);
        let y = DVector::from_column_slice(&[0.0, 0.02, 0.005, 0.01]);
        let (x1, x2) = (x.column(0).into_owned(), x.column(1).into_owned());
        let diff = &x1 - &x2;
        let w1 = (&y - &x2).dot(&diff) / diff.norm_squared();
        assert!(w1 > 0.0 && w1 < 1.0);
        let lambda = x1.dot(&(&x1 * w1 + &x2 * (1.0 - w1) - &y));
        let dates = crate::synth::generate(&SynthConfig { n: 2, d: 4, sparse_k: 1, noise: 0.0, seed: 0 })
            .unwrap()
            .panel
            .dates;
        let panel = ReturnsPanel::new(x, y, dates, vec!["A".into(), "B".into()]).unwrap();
        let m = Multipliers {
            lambda,
            mu: vec![0.0, 0.0],
            nu: 0.0,
        };
        (panel, vec![w1, 1.0 - w1], m)
    }

    #[test]
    fn analytic_kkt_point_has_zero_residual() {
        let (p, w, m) = two_asset();
        let problem = TrackingProblem::full(&p).unwrap();
        assert!(problem.kkt_residual(&w, &m) < 1e-10);
    }

    #[test]
    fn step_at_kkt_point_is_a_no_op() {
        let (p, w, _) = two_asset();
        let problem = TrackingProblem::full(&p).unwrap();
        let state = problem
            .initial_state(&WeightVector::new(w.clone(), crate::model::DEFAULT_EPS).unwrap())
            .unwrap();
        let next = problem.sqp_step(&state).unwrap();
        assert!((&next.w - DVector::from_vec(w)).amax() < 1e-10);
    }

    #[test]
    fn residual_bounds_and_symmetry() {
        let p = panel(5, 60, 3);
        let problem = TrackingProblem::full(&p).unwrap();
        let w = [0.5, 0.4, 0.3, -0.1, 0.2];
        let m = Multipliers {
            lambda: 0.1,
            mu: vec![0.0, 0.2, 0.0, 0.3, 0.1],
            nu: 0.0,
        };
        assert!(problem.kkt_residual(&w, &m) >= 0.3 - 1e-15);

        let perm = [3, 0, 4, 1, 2];
        let mut q = p.clone();
        q.returns = p.returns.select_columns(&perm);
        let permuted = TrackingProblem::full(&q).unwrap();
        let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let pm = Multipliers {
            mu: perm.iter().map(|&i| m.mu[i]).collect(),
            ..m.clone()
        };
        let (r1, r2) = (problem.kkt_residual(&w, &m), permuted.kkt_residual(&pw, &pm));
        assert!((r1 - r2).abs() <= 1e-15 * r1.max(1.0));
    }

    #[test]
    fn first_step_decreases_merit_with_signed_multipliers() {
        for seed in 0..5 {
            let p = panel(20, 120, 30 + seed);
            let params = DccParams::sigmoid(1e3, 1e-4, 5, 20).unwrap();
            let problem = TrackingProblem::with_cardinality(&p, &params).unwrap();
            let state = problem.initial_state(&WeightVector::uniform(20, 1e-4).unwrap()).unwrap();
            let next = problem.sqp_step(&state).unwrap();
            assert!(next.last_step > 0.0);
            assert!(problem.merit(&next.w, next.penalty) < problem.merit(&state.w, next.penalty));
            assert!(next.multipliers.nu >= 0.0);
            assert!(next.multipliers.mu.iter().all(|&u| u >= 0.0));
        }
    }

    #[test]
    fn threshold_examples() {
        let eps = 1e-4;
        let p = DccParams::sigmoid(1e6, eps, 2, 3).unwrap();
        let w = WeightVector::new(vec![0.6, 0.4 - eps / 2.0, eps / 2.0], eps).unwrap();
        let s = 0.6 + 0.4 - eps / 2.0;
        let out = threshold_project(&w, &p).unwrap();
        assert_eq!(out.as_slice(), &[0.6 / s, (0.4 - eps / 2.0) / s, 0.0]);

        let sparse = WeightVector::new(vec![0.25, 0.0, 0.75], eps).unwrap();
        assert_eq!(threshold_project(&sparse, &p).unwrap(), sparse);

        let at_cutoff = WeightVector::new(vec![eps, 1.0 - eps, 0.0], eps).unwrap();
        assert_eq!(threshold_project(&at_cutoff, &p).unwrap().support(), vec![0, 1]);

        let p = DccParams::sigmoid(1e6, 0.4, 1, 3).unwrap();
        let small = WeightVector::uniform(3, 0.4).unwrap();
        assert_eq!(threshold_project(&small, &p).unwrap_err().code(), "AllBelowCutoff");
    }

    #[test]
    fn sparse_truth_is_recovered() {
        let data = generate(&SynthConfig { n: 15, d: 200, sparse_k: 2, noise: 0.0, seed: 8 }).unwrap();
        let params = DccParams::sigmoid(1e6, 1e-4, 4, 15).unwrap();
        let report = partial_replication_dcc(&data.panel, &params, &SolverOptions::default())
            .or_else(|e| match e {
                Error::MaxIterationsExceeded { best, .. } => Ok(*best),
                e => Err(e),
            })
            .unwrap();
        assert!(report.exact_cardinality <= 4);
        assert!(report.objective < 1e-12, "{}", report.objective);
    }

    #[test]
    fn constraint_only_hurts() {
        let p = panel(10, 150, 4);
        let full = full_replication(&p, &SolverOptions::default()).unwrap();
        let params = DccParams::sigmoid(1e6, 1e-4, 9, 10).unwrap();
        let partial = match partial_replication_dcc(&p, &params, &SolverOptions::default()) {
            Ok(r) => r,
            Err(Error::MaxIterationsExceeded { best, .. }) => *best,
            Err(e) => panic!("{e}"),
        };
        assert!(partial.objective >= full.objective * (1.0 - 1e-9));
    }

    #[test]
    fn rejects_bad_options() {
        let p = panel(4, 40, 5);
        let opts = SolverOptions {
            max_iterations: 0,
            ..SolverOptions::default()
        };
        assert_eq!(full_replication(&p, &opts).unwrap_err().code(), "InvalidParameter");
        let mut q = p.clone();
        q.returns.column_mut(2).fill(0.0);
        assert_eq!(full_replication(&q, &SolverOptions::default()).unwrap_err().code(), "DegenerateProblem");
    }
}
