//! Adaptive logarithmic barrier for linearly constrained minimisation.
//!
//! Constraints are `u . x - c >= 0`. Each outer step minimises
//! `R(x) = f(x) - mu * sum_k [g_k(x_t) ln g_k(x) - u_k . x]` from the current
//! iterate `x_t`. The barrier gradient vanishes at `x_t`, so the iterates
//! approach a constrained minimiser without driving `mu` to zero. The inner
//! problem uses BFGS with central-difference gradients and step halving.

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub u: Vec<f64>,
    pub c: f64,
}

impl LinearConstraint {
    pub fn new(u: Vec<f64>, c: f64) -> Self {
        Self { u, c }
    }

    pub fn slack(&self, x: &[f64]) -> f64 {
        self.u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.c
    }

    /// `0 <= x_i <= 1` for every coordinate of an `n`-vector.
    pub fn unit_box(n: usize) -> Vec<Self> {
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            out.push(Self::new(e.clone(), 0.0));
            e[i] = -1.0;
            out.push(Self::new(e, -1.0));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierOptions {
    pub mu: f64,
    /// Stop once an outer step improves `f` by less than this.
    pub objective_tol: f64,
    /// Budget of inner iterations summed over all outer steps.
    pub max_iters: usize,
    pub max_outer: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            mu: 1e-4,
            objective_tol: 1e-12,
            max_iters: 10_000,
            max_outer: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const STEP_CUTOFF: f64 = 1e-15;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central-difference gradient; steps shrink near the boundary so every
/// evaluation stays strictly feasible.
fn gradient<F: Fn(&[f64]) -> f64>(r: &F, x: &[f64], cons: &[LinearConstraint]) -> Vec<f64> {
    let margin = cons
        .iter()
        .map(|k| k.slack(x) / k.u.iter().map(|v| v.abs()).sum::<f64>().max(1e-300))
        .fold(f64::INFINITY, f64::min);
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = (1e-6 * x[i].abs().max(1.0)).min(0.25 * margin);
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = r(&xp);
            xp[i] = orig - h;
            let fm = r(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// BFGS with backtracking on a function that is `+inf` outside its domain.
fn bfgs<F: Fn(&[f64]) -> f64>(
    r: &F,
    x0: &[f64],
    cons: &[LinearConstraint],
    budget: usize,
) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    let identity = || {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
        h
    };
    let mut x = x0.to_vec();
    let mut fx = r(&x);
    let mut g = gradient(r, &x, cons);
    let mut h = identity();
    let mut iters = 0;
    let mut reset = false;
    while iters < budget {
        iters += 1;
        let mut d: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = identity();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                break;
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let fn_ = r(&xn);
            if fn_.is_finite() && fn_ <= fx + ARMIJO * t * slope {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            if reset {
                break;
            }
            // retry once along steepest descent
            reset = true;
            h = identity();
            continue;
        };
        reset = false;
        let gn = gradient(r, &xn, cons);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
                .collect();
            let yhy = dot(&y, &hy);
            let mut next = h.clone();
            for i in 0..n {
                for j in 0..n {
                    next[i * n + j] +=
                        -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            h = next;
        }
        if step < STEP_CUTOFF || improvement <= 0.0 {
            break;
        }
    }
    (x, fx, iters)
}

/// Minimise `f` subject to `cons`, starting from a strictly feasible `x0`.
pub fn adaptive_barrier<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    cons: &[LinearConstraint],
    opts: &BarrierOptions,
) -> BarrierResult {
    debug_assert!(cons.iter().all(|k| k.slack(x0) > 0.0), "start must be interior");
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut inner_total = 0;
    let mut outer = 0;
    let mut converged = false;
    while outer < opts.max_outer && inner_total < opts.max_iters {
        outer += 1;
        let anchor: Vec<f64> = cons.iter().map(|k| k.slack(&x)).collect();
        let r = |z: &[f64]| {
            let mut pen = 0.0;
            for (k, &g0) in cons.iter().zip(&anchor) {
                let g = k.slack(z);
                if !(g > 0.0) {
                    return f64::INFINITY;
                }
                pen += g0 * g.ln() - dot(&k.u, z);
            }
            f(z) - opts.mu * pen
        };
        let (xn, _, used) = bfgs(&r, &x, cons, opts.max_iters - inner_total);
        inner_total += used;
        let fn_ = f(&xn);
        let moved = xn.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        if improvement.abs() < opts.objective_tol && moved < 1e-10 || moved == 0.0 {
            converged = true;
            break;
        }
    }
    BarrierResult {
        x,
        value: fx,
        outer_iterations: outer,
        inner_iterations: inner_total,
        converged,
    }
}
