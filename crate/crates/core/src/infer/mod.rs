//! Minimum-distance estimation of VND-MC parameters from a count trace.
//!
//! The estimator minimises `sum_{i,j} (q_ij(theta) - q_hat_ij)^2` over the
//! unit cube, skipping unvisited rows. Row `i` of `Q(theta)` depends only on
//! `(lambda_i, eta_i)`, so the objective splits into independent blocks:
//! `lambda_0` (row 0), `(lambda_i, eta_i)` for `0 < i < L`, and `eta_L`
//! (row `L`). Every block is initialised by an exhaustive scan of the grid
//! and refined with an adaptive barrier. For even `L` the block `L/2` is
//! only identified on one side of `lambda + eta = 1`.

pub mod optim;

use serde::{Deserialize, Serialize};

use crate::discretise::DiscreteTrace;
use crate::error::{Error, Result};
use crate::stats::binomial_table;
use crate::vnd::{
    classify_cooperativity, transition_row, Branch, CooperativityReport, ParamVector, TransitionMatrix,
};

use optim::{adaptive_barrier, BarrierOptions, LinearConstraint};

/// Which side of the even-`L` identifiability constraint to fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchChoice {
    /// Fit both sides; keep `Plus` unless `Minus` is better by more than `objective_tol`.
    #[default]
    Auto,
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdeOptions {
    /// Per-coordinate grid values; the initial grid is their `2L`-fold product.
    pub grid: Vec<f64>,
    pub max_iters: usize,
    pub objective_tol: f64,
    pub barrier_mu: f64,
    pub branch: BranchChoice,
}

impl Default for MdeOptions {
    fn default() -> Self {
        Self {
            grid: (1..=9).map(|k| f64::from(k) / 10.0).collect(),
            max_iters: 10_000,
            objective_tol: 1e-12,
            barrier_mu: 1e-4,
            branch: BranchChoice::Auto,
        }
    }
}

impl MdeOptions {
    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
            return Err(Error::InvalidParam(
                "grid values must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(self.objective_tol > 0.0) || !(self.barrier_mu > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParam(
                "tolerances and iteration limits must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Count transitions `i -> j` of a trace. Unvisited rows are masked.
pub fn empirical_transition_matrix(trace: &DiscreteTrace) -> Result<TransitionMatrix> {
    let v = trace.values();
    if v.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: v.len(),
        });
    }
    let dim = trace.channels() + 1;
    let mut counts = vec![0u64; dim * dim];
    for w in v.windows(2) {
        counts[w[0] as usize * dim + w[1] as usize] += 1;
    }
    let mut rows = vec![0u64; dim];
    let mut entries = vec![0.0; dim * dim];
    for i in 0..dim {
        rows[i] = counts[i * dim..(i + 1) * dim].iter().sum();
        if rows[i] > 0 {
            for j in 0..dim {
                entries[i * dim + j] = counts[i * dim + j] as f64 / rows[i] as f64;
            }
        }
    }
    Ok(TransitionMatrix::empirical(dim, entries, rows))
}

/// Squared Frobenius distance over observed rows.
pub fn mde_objective(theta: &ParamVector, q_hat: &TransitionMatrix) -> Result<f64> {
    let l = theta.channels();
    if q_hat.dim() != l + 1 {
        return Err(Error::DimMismatch {
            expected: l + 1,
            got: q_hat.dim(),
        });
    }
    let binom = binomial_table(l);
    Ok((0..=l)
        .filter(|&i| q_hat.is_observed(i))
        .map(|i| {
            let (lam, eta) = block_params(theta, i);
            row_distance(l, i, lam, eta, q_hat.row(i), &binom)
        })
        .sum())
}

fn block_params(theta: &ParamVector, i: usize) -> (f64, f64) {
    let l = theta.channels();
    let lam = if i < l { theta.lambda(i) } else { 1.0 };
    let eta = if i > 0 { theta.eta(i) } else { 1.0 };
    (lam, eta)
}

fn row_distance(l: usize, i: usize, lam: f64, eta: f64, target: &[f64], binom: &[Vec<f64>]) -> f64 {
    transition_row(l, i, lam, eta, binom)
        .iter()
        .zip(target)
        .map(|(q, t)| (q - t) * (q - t))
        .sum()
}

/// Free coordinates of block `i`: `lambda_i` if `i < L`, `eta_i` if `i > 0`.
struct Block<'a> {
    l: usize,
    i: usize,
    target: &'a [f64],
    binom: &'a [Vec<f64>],
}

impl Block<'_> {
    fn has_lambda(&self) -> bool {
        self.i < self.l
    }

    fn has_eta(&self) -> bool {
        self.i > 0
    }

    fn dim(&self) -> usize {
        usize::from(self.has_lambda()) + usize::from(self.has_eta())
    }

    fn unpack(&self, x: &[f64]) -> (f64, f64) {
        match (self.has_lambda(), self.has_eta()) {
            (true, true) => (x[0], x[1]),
            (true, false) => (x[0], 1.0),
            (false, true) => (1.0, x[0]),
            (false, false) => unreachable!("L >= 1"),
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (lam, eta) = self.unpack(x);
        row_distance(self.l, self.i, lam, eta, self.target, self.binom)
    }

    /// Whether this block carries the even-`L` symmetry.
    fn is_symmetric(&self) -> bool {
        self.l.is_multiple_of(2) && 2 * self.i == self.l
    }
}

/// Region of a block's grid scan relative to `lambda + eta = 1`.
#[derive(Clone, Copy)]
enum Side {
    Any,
    /// Closed half-plane of the branch.
    Closed(Branch),
    /// Open half-plane, for interior starting points.
    Strict(Branch),
}

impl Side {
    fn admits(self, x: &[f64]) -> bool {
        let s = || x[0] + x[1] - 1.0;
        match self {
            Side::Any => true,
            Side::Closed(Branch::Plus) => s() >= -1e-12,
            Side::Closed(Branch::Minus) => s() <= 1e-12,
            Side::Strict(Branch::Plus) => s() > 1e-12,
            Side::Strict(Branch::Minus) => s() < -1e-12,
        }
    }
}

/// Grid point minimising the block objective (or, when `informative` is
/// false, the first admissible point); ties go to the smallest `lambda`, then
/// the smallest `eta`.
fn block_grid_argmin(block: &Block, grid: &[f64], side: Side, informative: bool) -> Option<(Vec<f64>, f64)> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let side = if block.is_symmetric() { side } else { Side::Any };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |x: Vec<f64>| {
        if !side.admits(&x) {
            return;
        }
        let v = if informative { block.value(&x) } else { 0.0 };
        if best.as_ref().is_none_or(|(_, bv)| strictly_below(v, *bv)) {
            best = Some((x, v));
        }
    };
    if block.dim() == 2 {
        for &a in &sorted {
            for &b in &sorted {
                consider(vec![a, b]);
            }
        }
    } else {
        for &a in &sorted {
            consider(vec![a]);
        }
    }
    best
}

/// Points of the grid refined by its midpoints that are no worse than their
/// admissible neighbours (eight-neighbourhood), best first.
/// Blocks can have near-twin basins, so each is a refinement start.
fn block_grid_minima(block: &Block, grid: &[f64], side: Side, cap: usize) -> Vec<(Vec<f64>, f64)> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    // midpoints resolve basins narrower than the grid step
    let mids: Vec<f64> = sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    sorted.extend(mids);
    sorted.sort_by(f64::total_cmp);
    let side = if block.is_symmetric() { side } else { Side::Any };
    let g = sorted.len();
    let point = |a: usize, b: usize| -> Vec<f64> {
        if block.dim() == 2 {
            vec![sorted[a], sorted[b]]
        } else {
            vec![sorted[a]]
        }
    };
    let nb = if block.dim() == 2 { g } else { 1 };
    let value = |a: usize, b: usize| -> Option<f64> {
        let x = point(a, b);
        side.admits(&x).then(|| block.value(&x))
    };
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    for a in 0..g {
        for b in 0..nb {
            let Some(v) = value(a, b) else { continue };
            let mut is_min = true;
            for da in -1i64..=1 {
                for db in -1i64..=1 {
                    let (na, nbb) = (a as i64 + da, b as i64 + db);
                    if (da, db) == (0, 0) || na < 0 || nbb < 0 || na >= g as i64 || nbb >= nb as i64 {
                        continue;
                    }
                    if let Some(w) = value(na as usize, nbb as usize) {
                        is_min &= !strictly_below(w, v);
                    }
                }
            }
            if is_min {
                out.push((point(a, b), v));
            }
        }
    }
    // stable, so equal values keep the scan order of the argmin
    out.sort_by(|x, y| x.1.total_cmp(&y.1));
    out.truncate(cap);
    out
}

/// `a < b` beyond rounding noise; the even-`L` twins of a grid point differ
/// only by rounding and must count as ties.
pub(crate) fn strictly_below(a: f64, b: f64) -> bool {
    a < b - 1e-12 * a.abs().max(b.abs()) - 1e-300
}

fn assemble(l: usize, blocks: &[Vec<f64>]) -> Result<ParamVector> {
    let mut lambda = vec![0.0; l];
    let mut eta = vec![0.0; l];
    for (i, x) in blocks.iter().enumerate() {
        match (i < l, i > 0) {
            (true, true) => {
                lambda[i] = x[0];
                eta[i - 1] = x[1];
            }
            (true, false) => lambda[i] = x[0],
            (false, true) => eta[i - 1] = x[0],
            (false, false) => unreachable!("L >= 1"),
        }
    }
    ParamVector::new(l, lambda, eta)
}

fn check_dims(q_hat: &TransitionMatrix, l: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::InvalidParam("L must be at least 1".into()));
    }
    if q_hat.dim() != l + 1 {
        return Err(Error::DimMismatch {
            expected: l + 1,
            got: q_hat.dim(),
        });
    }
    Ok(())
}

/// Exact argmin of the objective over the product grid. For even `L` the
/// twins `(lambda, eta)` and `(1 - eta, 1 - lambda)` of block `L/2` tie, and
/// the scan keeps to the closed `Plus` side `lambda + eta >= 1`.
pub fn grid_init(q_hat: &TransitionMatrix, l: usize, grid: &[f64]) -> Result<ParamVector> {
    grid_init_on(q_hat, l, grid, Branch::Plus)
}

/// [`grid_init`] with the symmetric block restricted to `branch`.
pub fn grid_init_on(q_hat: &TransitionMatrix, l: usize, grid: &[f64], branch: Branch) -> Result<ParamVector> {
    check_dims(q_hat, l)?;
    let binom = binomial_table(l);
    let blocks = (0..=l)
        .map(|i| {
            let block = Block {
                l,
                i,
                target: q_hat.row(i),
                binom: &binom,
            };
            block_grid_argmin(&block, grid, Side::Closed(branch), q_hat.is_observed(i))
                .map(|(x, _)| x)
                .ok_or_else(|| Error::InvalidParam("grid has no admissible point".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(l, &blocks)
}

/// Fit of one side of the symmetric block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFit {
    pub branch: Branch,
    pub lambda: f64,
    pub eta: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDiagnostics {
    pub chosen: Branch,
    pub fits: Vec<BranchFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdeDiagnostics {
    pub theta_init: ParamVector,
    pub init_objective: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub masked_rows: Vec<usize>,
    /// Parameters with no observed row, left at their grid start.
    pub undetermined: Vec<String>,
    /// Fewer than two observed rows: the fit is essentially unconstrained.
    pub degenerate: bool,
    pub branch: Option<BranchDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdeFit {
    pub theta_hat: ParamVector,
    pub objective: f64,
    pub diagnostics: MdeDiagnostics,
}

struct BlockFit {
    x: Vec<f64>,
    value: f64,
    outer: usize,
    inner: usize,
    converged: bool,
}

/// Damped Gauss-Newton on the row residuals from the barrier's end point.
/// The barrier creeps along weakly identified directions; zero-residual
/// least squares converges there quadratically. Never raises the value.
fn polish(block: &Block, mut fit: BlockFit, side: Option<Branch>) -> BlockFit {
    let n = block.dim();
    let feasible = |x: &[f64]| {
        x.iter().all(|&v| v > 0.0 && v < 1.0)
            && match side {
                Some(Branch::Plus) => x[0] + x[1] >= 1.0,
                Some(Branch::Minus) => x[0] + x[1] <= 1.0,
                None => true,
            }
    };
    let residuals = |x: &[f64]| -> Vec<f64> {
        let (lam, eta) = block.unpack(x);
        transition_row(block.l, block.i, lam, eta, block.binom)
            .iter()
            .zip(block.target)
            .map(|(q, t)| q - t)
            .collect()
    };
    if !feasible(&fit.x) {
        return fit;
    }
    let mut damping = 1e-6;
    for _ in 0..200 {
        if fit.value == 0.0 {
            break;
        }
        let r = residuals(&fit.x);
        let mut jac = Vec::with_capacity(n);
        for j in 0..n {
            let h = 1e-7f64.min(0.5 * fit.x[j]).min(0.5 * (1.0 - fit.x[j]));
            let (mut xp, mut xm) = (fit.x.clone(), fit.x.clone());
            xp[j] += h;
            xm[j] -= h;
            let col: Vec<f64> = residuals(&xp)
                .iter()
                .zip(residuals(&xm))
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            jac.push(col);
        }
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| dot(&jac[i], &jac[j])).collect())
            .collect();
        let g: Vec<f64> = (0..n).map(|i| dot(&jac[i], &r)).collect();
        let mut accepted = false;
        while damping < 1e12 {
            let m: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| a[i][j] + if i == j { damping * (a[i][i] + 1e-12) } else { 0.0 })
                        .collect()
                })
                .collect();
            let step = solve_small(&m, &g);
            let xn: Vec<f64> = fit.x.iter().zip(&step).map(|(x, d)| x - d).collect();
            if feasible(&xn) {
                let v = block.value(&xn);
                if v < fit.value {
                    let moved = step.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                    fit.x = xn;
                    fit.value = v;
                    damping = (damping / 10.0).max(1e-12);
                    accepted = moved > 1e-16;
                    break;
                }
            }
            damping *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    fit
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solution of a 1x1 or 2x2 linear system (zero if singular).
fn solve_small(m: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    if m.len() == 1 {
        return vec![if m[0][0] != 0.0 { b[0] / m[0][0] } else { 0.0 }];
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 {
        return vec![0.0, 0.0];
    }
    vec![
        (m[1][1] * b[0] - m[0][1] * b[1]) / det,
        (m[0][0] * b[1] - m[1][0] * b[0]) / det,
    ]
}

/// Method-of-moments points for a block: the row is the law of
/// `Bin(L - i, 1 - lambda) + Bin(i, eta)`, so its mean and variance fix
/// `(lambda, eta)` up to the two roots of a quadratic.
fn moment_starts(block: &Block) -> Vec<Vec<f64>> {
    let (k, o) = ((block.l - block.i) as f64, block.i as f64);
    let m: f64 = block.target.iter().enumerate().map(|(j, t)| j as f64 * t).sum();
    let v: f64 = block
        .target
        .iter()
        .enumerate()
        .map(|(j, t)| (j as f64).powi(2) * t)
        .sum::<f64>()
        - m * m;
    let inside = |x: f64| x.clamp(1e-4, 1.0 - 1e-4);
    match (block.has_lambda(), block.has_eta()) {
        (true, false) => vec![vec![inside(1.0 - m / k)]],
        (false, true) => vec![vec![inside(m / o)]],
        _ => {
            let (qa, qb, qc) = (-k * (1.0 + k / o), 2.0 * m * k / o, m - m * m / o - v);
            let disc = qb * qb - 4.0 * qa * qc;
            let roots = if disc > 0.0 {
                vec![(-qb + disc.sqrt()) / (2.0 * qa), (-qb - disc.sqrt()) / (2.0 * qa)]
            } else {
                vec![-qb / (2.0 * qa)]
            };
            roots
                .into_iter()
                .filter(|a| (0.0..=1.0).contains(a))
                .map(|a| vec![inside(1.0 - a), inside((m - k * a) / o)])
                .collect()
        }
    }
}

/// Most grid minima refined per block.
const MAX_STARTS: usize = 8;

/// Refine from `first`, from the moment points and from the grid's other
/// local minima; keep the best.
fn refine_multi(
    block: &Block,
    first: Vec<f64>,
    grid_side: Side,
    side: Option<Branch>,
    opts: &MdeOptions,
) -> BlockFit {
    let mut best = refine(block, first.clone(), side, opts);
    let admissible = if block.is_symmetric() {
        grid_side
    } else {
        Side::Any
    };
    let moments = moment_starts(block).into_iter().filter(|x| admissible.admits(x));
    let minima = block_grid_minima(block, &opts.grid, grid_side, MAX_STARTS)
        .into_iter()
        .map(|(x, _)| x);
    for x0 in moments.chain(minima) {
        if x0 == first {
            continue;
        }
        let fit = refine(block, x0, side, opts);
        let (outer, inner) = (best.outer + fit.outer, best.inner + fit.inner);
        if strictly_below(fit.value, best.value) {
            best = fit;
        }
        best.outer = outer;
        best.inner = inner;
    }
    best
}

fn refine(block: &Block, start: Vec<f64>, side: Option<Branch>, opts: &MdeOptions) -> BlockFit {
    let n = block.dim();
    let mut cons = LinearConstraint::unit_box(n);
    match side {
        Some(Branch::Plus) => cons.push(LinearConstraint::new(vec![1.0, 1.0], 1.0)),
        Some(Branch::Minus) => cons.push(LinearConstraint::new(vec![-1.0, -1.0], -1.0)),
        None => {}
    }
    let bopts = BarrierOptions {
        mu: opts.barrier_mu,
        objective_tol: opts.objective_tol,
        max_iters: opts.max_iters,
        ..BarrierOptions::default()
    };
    let start_value = block.value(&start);
    let res = adaptive_barrier(|x| block.value(x), &start, &cons, &bopts);
    let fit = if res.value <= start_value {
        BlockFit {
            x: res.x,
            value: res.value,
            outer: res.outer_iterations,
            inner: res.inner_iterations,
            converged: res.converged,
        }
    } else {
        BlockFit {
            x: start,
            value: start_value,
            outer: res.outer_iterations,
            inner: res.inner_iterations,
            converged: false,
        }
    };
    polish(block, fit, side)
}

/// Minimum-distance estimate of `theta` for `L` channels.
pub fn mde_fit(q_hat: &TransitionMatrix, l: usize, opts: &MdeOptions) -> Result<MdeFit> {
    check_dims(q_hat, l)?;
    opts.validate()?;
    let binom = binomial_table(l);
    let init_branch = match opts.branch {
        BranchChoice::Minus => Branch::Minus,
        BranchChoice::Auto | BranchChoice::Plus => Branch::Plus,
    };
    let theta_init = grid_init_on(q_hat, l, &opts.grid, init_branch)?;
    let init_objective = mde_objective(&theta_init, q_hat)?;
    let masked_rows = q_hat.masked_rows();

    let mut blocks = Vec::with_capacity(l + 1);
    let mut undetermined = Vec::new();
    let (mut outer, mut inner, mut converged) = (0, 0, true);
    let mut branch_diag = None;
    for i in 0..=l {
        let block = Block {
            l,
            i,
            target: q_hat.row(i),
            binom: &binom,
        };
        let (lam0, eta0) = block_params(&theta_init, i);
        let start = block_start(&block, lam0, eta0);
        if !q_hat.is_observed(i) {
            if block.has_lambda() {
                undetermined.push(format!("lambda_{i}"));
            }
            if block.has_eta() {
                undetermined.push(format!("eta_{i}"));
            }
            blocks.push(start);
            continue;
        }
        let fit = if block.is_symmetric() {
            let sides: Vec<Branch> = match opts.branch {
                BranchChoice::Auto => vec![Branch::Plus, Branch::Minus],
                BranchChoice::Plus => vec![Branch::Plus],
                BranchChoice::Minus => vec![Branch::Minus],
            };
            let mut fits: Vec<(Branch, BlockFit)> = Vec::new();
            for side in sides {
                let Some((x0, _)) = block_grid_argmin(&block, &opts.grid, Side::Strict(side), true) else {
                    continue;
                };
                fits.push((
                    side,
                    refine_multi(&block, x0, Side::Strict(side), Some(side), opts),
                ));
            }
            if fits.is_empty() {
                return Err(Error::InvalidParam(
                    "grid has no point strictly inside the requested branch".into(),
                ));
            }
            let plus = fits.iter().position(|(b, _)| *b == Branch::Plus);
            let minus = fits.iter().position(|(b, _)| *b == Branch::Minus);
            let pick = match (plus, minus) {
                (Some(p), Some(m)) => {
                    if fits[m].1.value < fits[p].1.value - opts.objective_tol {
                        m
                    } else {
                        p
                    }
                }
                (Some(p), None) => p,
                (None, Some(m)) => m,
                (None, None) => unreachable!("fits is non-empty"),
            };
            branch_diag = Some(BranchDiagnostics {
                chosen: fits[pick].0,
                fits: fits
                    .iter()
                    .map(|(b, f)| BranchFit {
                        branch: *b,
                        lambda: f.x[0],
                        eta: f.x[1],
                        objective: f.value,
                    })
                    .collect(),
            });
            let mut chosen = fits.swap_remove(pick).1;
            for (_, f) in &fits {
                chosen.outer += f.outer;
                chosen.inner += f.inner;
            }
            chosen
        } else {
            refine_multi(&block, start, Side::Any, None, opts)
        };
        outer += fit.outer;
        inner += fit.inner;
        converged &= fit.converged;
        blocks.push(fit.x);
    }
    let theta_hat = assemble(l, &blocks)?;
    let objective = mde_objective(&theta_hat, q_hat)?;
    let observed = l + 1 - masked_rows.len();
    Ok(MdeFit {
        theta_hat,
        objective,
        diagnostics: MdeDiagnostics {
            theta_init,
            init_objective,
            outer_iterations: outer,
            inner_iterations: inner,
            converged,
            masked_rows,
            undetermined,
            degenerate: observed < 2,
            branch: branch_diag,
        },
    })
}

fn block_start(block: &Block, lam: f64, eta: f64) -> Vec<f64> {
    match (block.has_lambda(), block.has_eta()) {
        (true, true) => vec![lam, eta],
        (true, false) => vec![lam],
        (false, true) => vec![eta],
        (false, false) => unreachable!("L >= 1"),
    }
}

/// Cooperativity verdict for an estimate.
pub fn cooperativity_report(theta_hat: &ParamVector, tol: f64) -> CooperativityReport {
    classify_cooperativity(theta_hat, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vnd::{is_identifiable, sum_transition_matrix, Identifiability, Verdict};
    use rand::Rng;

    fn theta(flat: &[f64]) -> ParamVector {
        ParamVector::from_flat(flat).unwrap()
    }

    fn trace(v: &[u32], l: usize) -> DiscreteTrace {
        DiscreteTrace::from_counts(v.to_vec(), l).unwrap()
    }

    #[test]
    fn alternating_trace_counts() {
        let q = empirical_transition_matrix(&trace(&[0, 1, 0, 1], 1)).unwrap();
        assert_eq!(q.get(0, 1), 1.0);
        assert_eq!(q.get(1, 0), 1.0);
        assert_eq!(q.row_counts().unwrap(), &[2, 1]);
    }

    #[test]
    fn constant_trace_masks_other_rows() {
        let q = empirical_transition_matrix(&trace(&[2; 10], 3)).unwrap();
        assert_eq!(q.get(2, 2), 1.0);
        assert_eq!(q.masked_rows(), vec![0, 1, 3]);
    }

    #[test]
    fn short_trace_is_rejected() {
        assert!(matches!(
            empirical_transition_matrix(&trace(&[1], 1)),
            Err(Error::TooShort { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn objective_is_zero_at_truth() {
        let t = theta(&[0.3, 0.8, 0.6, 0.2]);
        let q = sum_transition_matrix(&t);
        assert!(mde_objective(&t, &q).unwrap() < 1e-30);
    }

    #[test]
    fn single_channel_objective_by_hand() {
        let q = TransitionMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (a, b) = (0.3, 0.6);
        let want = 2.0 * (1.0 - a) * (1.0 - a) + 2.0 * (1.0 - b) * (1.0 - b);
        let got = mde_objective(&theta(&[a, b]), &q).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn masked_row_contributes_nothing() {
        let q = empirical_transition_matrix(&trace(&[0, 0, 0, 0], 1)).unwrap();
        let a = mde_objective(&theta(&[1.0, 0.2]), &q).unwrap();
        let b = mde_objective(&theta(&[1.0, 0.9]), &q).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(b, 0.0);
    }

    #[test]
    fn objective_dimension_mismatch() {
        let q = sum_transition_matrix(&theta(&[0.5, 0.5]));
        assert!(matches!(
            mde_objective(&theta(&[0.5, 0.5, 0.5, 0.5]), &q),
            Err(Error::DimMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn grid_init_hits_grid_truth() {
        let q = sum_transition_matrix(&theta(&[0.7, 0.3]));
        let init = grid_init(&q, 1, &MdeOptions::default().grid).unwrap();
        assert!((init.lambda(0) - 0.7).abs() < 1e-12 && (init.eta(1) - 0.3).abs() < 1e-12);
    }

    /// Full product-grid scan, independent of the block decomposition.
    fn full_grid_scan(q: &TransitionMatrix, l: usize, grid: &[f64]) -> (Vec<f64>, f64) {
        let d = 2 * l;
        let mut idx = vec![0usize; d];
        let mut best: Option<(Vec<f64>, f64)> = None;
        loop {
            let x: Vec<f64> = idx.iter().map(|&k| grid[k]).collect();
            let v = mde_objective(&ParamVector::from_flat(&x).unwrap(), q).unwrap();
            let plus_side = l % 2 == 1 || x[l / 2] + x[l + l / 2 - 1] >= 1.0 - 1e-12;
            if plus_side && best.as_ref().is_none_or(|(_, b)| strictly_below(v, *b)) {
                best = Some((x, v));
            }
            // odometer, last coordinate fastest: visits points in lexicographic order
            let mut p = d;
            loop {
                if p == 0 {
                    return best.unwrap();
                }
                p -= 1;
                idx[p] += 1;
                if idx[p] < grid.len() {
                    break;
                }
                idx[p] = 0;
            }
        }
    }

    #[test]
    fn grid_init_matches_full_scan() {
        let grid = MdeOptions::default().grid;
        let q = sum_transition_matrix(&theta(&[0.99, 0.99, 0.99, 0.99]));
        let init = grid_init(&q, 2, &grid).unwrap();
        assert_eq!(init.to_flat(), vec![0.9; 4]);
        let (x, v) = full_grid_scan(&q, 2, &grid);
        assert_eq!(init.to_flat(), x);
        assert!((mde_objective(&init, &q).unwrap() - v).abs() < 1e-15);

        let mut rng = crate::rng::stream(11, 0);
        for _ in 0..5 {
            let flat: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let q = sum_transition_matrix(&theta(&flat));
            let init = grid_init(&q, 2, &grid).unwrap();
            let (x, _) = full_grid_scan(&q, 2, &grid);
            assert_eq!(init.to_flat(), x);
        }
    }

    #[test]
    fn grid_ties_pick_lexicographically_smallest() {
        // an all-masked-but-row-0 matrix leaves eta_1 free: every eta ties
        let q = empirical_transition_matrix(&trace(&[0, 0, 0, 1], 1)).unwrap();
        let init = grid_init(&q, 1, &MdeOptions::default().grid).unwrap();
        assert_eq!(init.eta(1), 0.1);
        // row 0 = (2/3, 1/3): 0.6 and 0.7 are not tied; 0.7 is closer
        assert_eq!(init.lambda(0), 0.7);
        // target 0.5 is equidistant from 0.4 and 0.6
        let q = sum_transition_matrix(&theta(&[0.5, 0.5]));
        let init = grid_init(&q, 1, &[0.6, 0.4]).unwrap();
        assert_eq!(init.to_flat(), vec![0.4, 0.4]);
    }

    #[test]
    fn exact_input_recovery_odd_l() {
        let t = theta(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4]);
        let q = sum_transition_matrix(&t);
        let fit = mde_fit(&q, 3, &MdeOptions::default()).unwrap();
        let err = fit
            .theta_hat
            .to_flat()
            .iter()
            .zip(t.to_flat())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-4, "{err}");
        assert!(fit.objective < 1e-10, "{}", fit.objective);
        assert!(fit.objective <= fit.diagnostics.init_objective);
    }

    #[test]
    fn near_twin_basins_do_not_trap_the_fit() {
        // row 1 has a second local minimum 0.04 away with objective ~2e-11
        let t = theta(&[0.6865, 0.8955, 0.0916, 0.0772, 0.7179, 0.3098]);
        let fit = mde_fit(&sum_transition_matrix(&t), 3, &MdeOptions::default()).unwrap();
        let err = fit
            .theta_hat
            .to_flat()
            .iter()
            .zip(t.to_flat())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9, "{err}");
        assert!(fit.objective < 1e-20, "{}", fit.objective);
    }

    #[test]
    fn moment_starts_are_exact_on_exact_rows() {
        let t = theta(&[0.3, 0.8, 0.6, 0.45, 0.2, 0.7]);
        let q = sum_transition_matrix(&t);
        let binom = binomial_table(3);
        for i in 0..=3 {
            let block = Block {
                l: 3,
                i,
                target: q.row(i),
                binom: &binom,
            };
            let (lam, eta) = block_params(&t, i);
            let want = block_start(&block, lam, eta);
            let hit = moment_starts(&block)
                .iter()
                .any(|x| x.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9));
            assert!(hit, "row {i}: {:?} vs {want:?}", moment_starts(&block));
        }
    }

    #[test]
    fn even_l_recovers_truth_or_its_twin() {
        // (lambda_1, eta_1) and (1 - eta_1, 1 - lambda_1) give the same Q for L = 2
        let mut rng = crate::rng::stream(3, 0);
        for _ in 0..20 {
            let flat: Vec<f64> = (0..4).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect();
            let t = theta(&flat);
            let q = sum_transition_matrix(&t);
            let side = match is_identifiable(&t) {
                Identifiability::IdentifiableOnBranch(b) => b,
                Identifiability::Identifiable => unreachable!(),
            };
            let twin = theta(&[flat[0], 1.0 - flat[2], 1.0 - flat[1], flat[3]]);

            let auto = mde_fit(&q, 2, &MdeOptions::default()).unwrap();
            assert_eq!(auto.diagnostics.branch.as_ref().unwrap().chosen, Branch::Plus);
            let want = if side == Branch::Plus { &t } else { &twin };
            let err = auto
                .theta_hat
                .to_flat()
                .iter()
                .zip(want.to_flat())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-4, "{flat:?}: {err}");

            let forced = MdeOptions {
                branch: match side {
                    Branch::Plus => BranchChoice::Plus,
                    Branch::Minus => BranchChoice::Minus,
                },
                ..MdeOptions::default()
            };
            let fit = mde_fit(&q, 2, &forced).unwrap();
            let s = fit.theta_hat.lambda(1) + fit.theta_hat.eta(1) - 1.0;
            match side {
                Branch::Plus => assert!(s >= -1e-9),
                Branch::Minus => assert!(s <= 1e-9),
            }
            let err = fit
                .theta_hat
                .to_flat()
                .iter()
                .zip(t.to_flat())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-4 && fit.objective < 1e-10, "{flat:?}: {err}");
        }
    }

    #[test]
    fn one_observed_row_is_flagged_degenerate() {
        let q = empirical_transition_matrix(&trace(&[1, 1, 1, 1, 1], 2)).unwrap();
        let fit = mde_fit(&q, 2, &MdeOptions::default()).unwrap();
        assert!(fit.diagnostics.degenerate);
        assert_eq!(fit.diagnostics.undetermined, vec!["lambda_0", "eta_2"]);
    }

    #[test]
    fn report_delegates_to_classifier() {
        let r = cooperativity_report(&theta(&[0.99, 0.985, 0.985, 0.99]), 1e-3);
        assert_eq!(r.verdict, Verdict::Positive);
    }
}
