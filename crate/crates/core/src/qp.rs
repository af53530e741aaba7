//! Dense strictly convex quadratic programs.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x' G x + g' x
//! subject to  n_j' x  = b_j   (equalities)
//!             n_j' x >= b_j   (inequalities)
//! ```
//!
//! with the Goldfarb-Idnani dual active-set method. The factor `J = L^-T` of
//! `G = L L'` and the triangular `R` with `J' N_active = [R; 0]` are updated
//! by Givens rotations, so adding or dropping a constraint costs O(n^2) and a
//! full solve O(n^3). Unit-vector constraint normals (variable bounds) are
//! stored without a dense column.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) enum Normal {
    /// `e_i`
    Unit(usize),
    Dense(DVector<f64>),
}

impl Normal {
    fn dot(&self, v: &DVector<f64>) -> f64 {
        match self {
            Normal::Unit(i) => v[*i],
            Normal::Dense(a) => a.dot(v),
        }
    }

    /// `J' n`
    fn project(&self, j: &DMatrix<f64>) -> DVector<f64> {
        match self {
            Normal::Unit(i) => j.row(*i).transpose(),
            Normal::Dense(a) => j.tr_mul(a),
        }
    }

    fn norm(&self) -> f64 {
        match self {
            Normal::Unit(_) => 1.0,
            Normal::Dense(a) => a.norm(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub normal: Normal,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(normal: Normal, rhs: f64) -> Self {
        Constraint { normal, rhs }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub x: DVector<f64>,
    /// Multiplier of each equality, in input order.
    pub eq_multipliers: Vec<f64>,
    /// Multiplier of each inequality (zero when inactive), in input order.
    pub ineq_multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum QpError {
    NotPositiveDefinite,
    Infeasible,
}

/// Stationarity holds as `G x + g = sum_eq lambda_j n_j + sum_ineq u_j n_j`
/// with `u >= 0`.
pub(crate) fn solve(
    hessian: &DMatrix<f64>,
    linear: &DVector<f64>,
    equalities: &[Constraint],
    inequalities: &[Constraint],
) -> Result<QpSolution, QpError> {
    let n = linear.len();
    let chol = Cholesky::new(hessian.clone()).ok_or(QpError::NotPositiveDefinite)?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPositiveDefinite)?;
    let mut state = ActiveSet {
        j: l_inv.transpose(),
        r: DMatrix::zeros(n, n),
        q: 0,
        active: Vec::new(),
        u: Vec::new(),
    };
    let j = &state.j;
    let mut x = -(j * j.tr_mul(linear));

    let meq = equalities.len();
    let constraint = |idx: usize| -> &Constraint {
        if idx < meq {
            &equalities[idx]
        } else {
            &inequalities[idx - meq]
        }
    };
    let mut is_active = vec![false; meq + inequalities.len()];
    let max_rounds = 3 * (n + meq + inequalities.len()) + 50;
    let mut next_eq = 0;
    // Equalities enter with their normal flipped when that makes them a
    // violated `>=` constraint.
    let mut eq_sign = vec![1.0; meq];

    for _ in 0..max_rounds {
        // Pick the next constraint to add: equalities first, then the most
        // violated inequality.
        let (p, sign) = if next_eq < meq {
            let c = &equalities[next_eq];
            next_eq += 1;
            if c.normal.dot(&x) - c.rhs > 0.0 {
                eq_sign[next_eq - 1] = -1.0;
            }
            (next_eq - 1, eq_sign[next_eq - 1])
        } else {
            let mut worst = None;
            let mut worst_s = 0.0;
            for (i, c) in inequalities.iter().enumerate() {
                if is_active[meq + i] {
                    continue;
                }
                let s = c.normal.dot(&x) - c.rhs;
                let tol = 1e-12 * (1.0 + c.rhs.abs() + c.normal.norm() * x.amax());
                if s < -tol && s < worst_s {
                    worst_s = s;
                    worst = Some(meq + i);
                }
            }
            match worst {
                Some(p) => (p, 1.0),
                None => break,
            }
        };
        let cp = constraint(p);
        let mut u_p = 0.0;

        loop {
            let s_p = sign * (cp.normal.dot(&x) - cp.rhs);
            let d = sign * cp.normal.project(&state.j);
            let q = state.q;
            let d_tail = d.rows(q, n - q);
            let tail_sq = d_tail.norm_squared();
            let z = if tail_sq > 1e-14 * d.norm_squared().max(f64::MIN_POSITIVE) {
                Some(state.j.columns(q, n - q) * d_tail)
            } else {
                None
            };
            let r = state.back_substitute(&d);

            // Largest dual step that keeps active inequality multipliers >= 0.
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (pos, &idx) in state.active.iter().enumerate() {
                if idx >= meq && r[pos] > 0.0 {
                    let ratio = state.u[pos] / r[pos];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(pos);
                    }
                }
            }
            // Step that makes constraint p active; z'n = |d_tail|^2.
            let t2 = match &z {
                Some(_) => -s_p / tail_sq,
                None => f64::INFINITY,
            };

            if t1.is_infinite() && t2.is_infinite() {
                return Err(QpError::Infeasible);
            }
            let t = t1.min(t2);
            for (u, ri) in state.u.iter_mut().zip(r.iter()) {
                *u -= t * ri;
            }
            u_p += t;
            if let Some(z) = &z {
                x.axpy(t, z, 1.0);
            }
            if t2 <= t1 {
                state.add(d, p, u_p);
                is_active[p] = true;
                break;
            }
            let pos = drop_at.expect("finite t1 has a blocking constraint");
            is_active[state.active[pos]] = false;
            state.drop(pos);
        }
    }

    let mut eq_multipliers = vec![0.0; meq];
    let mut ineq_multipliers = vec![0.0; inequalities.len()];
    for (&idx, &u) in state.active.iter().zip(&state.u) {
        if idx < meq {
            eq_multipliers[idx] = eq_sign[idx] * u;
        } else {
            ineq_multipliers[idx - meq] = u.max(0.0);
        }
    }
    Ok(QpSolution {
        x,
        eq_multipliers,
        ineq_multipliers,
    })
}

struct ActiveSet {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
    active: Vec<usize>,
    u: Vec<f64>,
}

impl ActiveSet {
    /// `R^-1 d[..q]`
    fn back_substitute(&self, d: &DVector<f64>) -> Vec<f64> {
        let q = self.q;
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for (k, rk) in r.iter().enumerate().skip(i + 1) {
                acc -= self.r[(i, k)] * rk;
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }

    fn add(&mut self, mut d: DVector<f64>, idx: usize, u: f64) {
        let n = d.len();
        let q = self.q;
        for k in (q + 1..n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, k, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.q += 1;
        self.active.push(idx);
        self.u.push(u);
    }

    fn drop(&mut self, pos: usize) {
        let q = self.q;
        for col in pos..q - 1 {
            for row in 0..=col + 1 {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        self.active.remove(pos);
        self.u.remove(pos);
        let q = q - 1;
        for k in pos..q {
            let (a, b) = (self.r[(k, k)], self.r[(k + 1, k)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q {
                let (t1, t2) = (self.r[(k, col)], self.r[(k + 1, col)]);
                self.r[(k, col)] = c * t1 + s * t2;
                self.r[(k + 1, col)] = -s * t1 + c * t2;
            }
            self.r[(k + 1, k)] = 0.0;
            rotate_columns(&mut self.j, k, k + 1, c, s);
        }
        self.q = q;
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, a: usize, b: usize, c: f64, s: f64) {
    for row in 0..m.nrows() {
        let (t1, t2) = (m[(row, a)], m[(row, b)]);
        m[(row, a)] = c * t1 + s * t2;
        m[(row, b)] = -s * t1 + c * t2;
    }
}
