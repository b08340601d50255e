//! Vector-norm-dependent Markov chains (VND-MC).
//!
//! `L` binary channels evolve jointly. Given the current joint state with `r`
//! open channels, every channel moves independently: a closed channel stays
//! closed with probability `lambda_r`, an open one stays open with probability
//! `eta_r`. The number of open channels is then itself a Markov chain on
//! `0..=L` whose transition matrix is available in closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParamKind, Result};
use crate::rng;
use crate::stats::binomial_table;

/// Parameters `(lambda_0..lambda_{L-1}, eta_1..eta_L)` of a VND-MC.
///
/// Construction validates every entry, so a value of this type always
/// satisfies the model's invariants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ParamVector {
    lambda: Vec<f64>,
    eta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    channels: usize,
    lambda: Vec<f64>,
    eta: Vec<f64>,
}

impl TryFrom<RawParams> for ParamVector {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ParamVector::new(raw.channels, raw.lambda, raw.eta)
    }
}

impl From<ParamVector> for RawParams {
    fn from(p: ParamVector) -> Self {
        RawParams {
            channels: p.channels(),
            lambda: p.lambda,
            eta: p.eta,
        }
    }
}

/// Check arity and range of a candidate parameter vector for `channels` channels.
pub fn validate_theta(channels: usize, lambda: &[f64], eta: &[f64]) -> Result<()> {
    if channels == 0 || lambda.len() != channels || eta.len() != channels {
        return Err(Error::WrongArity {
            expected: channels,
            lambda: lambda.len(),
            eta: eta.len(),
        });
    }
    for (r, &v) in lambda.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange {
                kind: ParamKind::Lambda,
                index: r,
                value: v,
            });
        }
    }
    for (r, &v) in eta.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange {
                kind: ParamKind::Eta,
                index: r + 1,
                value: v,
            });
        }
    }
    Ok(())
}

impl ParamVector {
    pub fn new(channels: usize, lambda: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        validate_theta(channels, &lambda, &eta)?;
        Ok(Self { lambda, eta })
    }

    /// Build from the flat layout `(lambda_0..lambda_{L-1}, eta_1..eta_L)`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.is_empty() || !flat.len().is_multiple_of(2) {
            return Err(Error::WrongArity {
                expected: flat.len().div_ceil(2),
                lambda: flat.len().div_ceil(2),
                eta: flat.len() / 2,
            });
        }
        let l = flat.len() / 2;
        Self::new(l, flat[..l].to_vec(), flat[l..].to_vec())
    }

    /// Every `lambda_r` equal to `lambda` and every `eta_r` equal to `eta`.
    pub fn constant(channels: usize, lambda: f64, eta: f64) -> Result<Self> {
        Self::new(channels, vec![lambda; channels], vec![eta; channels])
    }

    pub fn channels(&self) -> usize {
        self.lambda.len()
    }

    /// `lambda_r` for `r` in `0..L`.
    pub fn lambda(&self, r: usize) -> f64 {
        self.lambda[r]
    }

    /// `eta_r` for `r` in `1..=L`.
    pub fn eta(&self, r: usize) -> f64 {
        self.eta[r - 1]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambda
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.lambda.iter().chain(&self.eta).copied().collect()
    }

    /// Per-coordinate stay probabilities when `r` channels are open:
    /// `(closed stays closed, open stays open)`. Entries that cannot matter
    /// (no open channel at `r = 0`, no closed channel at `r = L`) are 1.
    fn stay_probabilities(&self, r: usize) -> (f64, f64) {
        let l = self.channels();
        let lam = if r < l { self.lambda[r] } else { 1.0 };
        let eta = if r > 0 { self.eta[r - 1] } else { 1.0 };
        (lam, eta)
    }
}

/// Row-stochastic transition matrix of the open-channel count.
///
/// Empirical matrices carry per-row visit counts; a row with zero visits is
/// masked and its entries are meaningless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    dim: usize,
    entries: Vec<f64>,
    row_counts: Option<Vec<u64>>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            entries.extend(row);
        }
        Ok(Self {
            dim,
            entries,
            row_counts: None,
        })
    }

    pub(crate) fn empirical(dim: usize, entries: Vec<f64>, row_counts: Vec<u64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        Self {
            dim,
            entries,
            row_counts: Some(row_counts),
        }
    }

    /// Number of states, `L + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_counts(&self) -> Option<&[u64]> {
        self.row_counts.as_deref()
    }

    /// Whether row `i` carries information (always true for exact matrices).
    pub fn is_observed(&self, i: usize) -> bool {
        self.row_counts.as_ref().is_none_or(|c| c[i] > 0)
    }

    pub fn masked_rows(&self) -> Vec<usize> {
        (0..self.dim).filter(|&i| !self.is_observed(i)).collect()
    }

    /// Largest absolute entrywise difference over rows observed in both.
    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            if !(self.is_observed(i) && other.is_observed(i)) {
                continue;
            }
            for j in 0..self.dim {
                worst = worst.max((self.get(i, j) - other.get(i, j)).abs());
            }
        }
        worst
    }
}

/// Transition matrix `Q(theta)` of the open-channel count, in closed form.
///
/// From `i` open channels, `r` of them close and `j - i + r` of the `L - i`
/// closed ones open:
/// `q_ij = sum_r C(i, r) C(L-i, j-i+r) eta_i^(i-r) (1-eta_i)^r lambda_i^(L-j-r) (1-lambda_i)^(j-i+r)`.
pub fn sum_transition_matrix(theta: &ParamVector) -> TransitionMatrix {
    let l = theta.channels();
    let binom = binomial_table(l);
    let mut entries = Vec::with_capacity((l + 1) * (l + 1));
    for i in 0..=l {
        let (lam, eta) = theta.stay_probabilities(i);
        entries.extend(transition_row(l, i, lam, eta, &binom));
    }
    TransitionMatrix {
        dim: l + 1,
        entries,
        row_counts: None,
    }
}

/// Row `i` of `Q(theta)`; it depends on `theta` only through `(lambda_i, eta_i)`.
/// `binom` must hold Pascal's triangle up to row `l`.
pub(crate) fn transition_row(l: usize, i: usize, lam: f64, eta: f64, binom: &[Vec<f64>]) -> Vec<f64> {
    (0..=l)
        .map(|j| {
            let mut q = 0.0;
            for r in 0..=i {
                // closed channels that open: j - i + r, must lie in 0..=L-i
                if j + r < i || j + r > l {
                    continue;
                }
                let opened = j + r - i;
                let stayed_closed = l - j - r;
                q += binom[i][r]
                    * binom[l - i][opened]
                    * eta.powi((i - r) as i32)
                    * (1.0 - eta).powi(r as i32)
                    * lam.powi(stayed_closed as i32)
                    * (1.0 - lam).powi(opened as i32);
            }
            q
        })
        .collect()
}

/// Largest `L` accepted by [`sum_transition_matrix_bruteforce`].
pub const BRUTE_FORCE_MAX_CHANNELS: usize = 20;

/// Probability of moving from joint state `from` to `to` (bit `c` = channel `c` open).
pub fn joint_transition_probability(theta: &ParamVector, from: u64, to: u64) -> f64 {
    let l = theta.channels();
    let open = (from & mask(l)).count_ones() as usize;
    let (lam, eta) = theta.stay_probabilities(open);
    (0..l)
        .map(|c| {
            let was_open = from >> c & 1 == 1;
            let is_open = to >> c & 1 == 1;
            match (was_open, is_open) {
                (true, true) => eta,
                (true, false) => 1.0 - eta,
                (false, false) => lam,
                (false, true) => 1.0 - lam,
            }
        })
        .product()
}

fn mask(l: usize) -> u64 {
    if l >= 64 {
        u64::MAX
    } else {
        (1u64 << l) - 1
    }
}

/// `Q(theta)` by enumerating all `2^L` successor states of a canonical
/// representative (first `i` channels open) of each count `i`.
pub fn sum_transition_matrix_bruteforce(theta: &ParamVector) -> Result<TransitionMatrix> {
    let l = theta.channels();
    if l > BRUTE_FORCE_MAX_CHANNELS {
        return Err(Error::LTooLarge {
            got: l,
            max: BRUTE_FORCE_MAX_CHANNELS,
        });
    }
    let dim = l + 1;
    let mut entries = vec![0.0; dim * dim];
    for i in 0..=l {
        let from = mask(i);
        for to in 0..(1u64 << l) {
            entries[i * dim + to.count_ones() as usize] += joint_transition_probability(theta, from, to);
        }
    }
    Ok(TransitionMatrix {
        dim,
        entries,
        row_counts: None,
    })
}

/// Initial joint state of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    #[default]
    AllClosed,
    /// One flag per channel, `true` = open.
    Explicit(Vec<bool>),
}

/// Simulated joint channel states together with their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrace {
    channels: usize,
    /// Bit `c` of `states[k]` is channel `c` at step `k`.
    states: Vec<u64>,
    sum: Vec<u32>,
}

impl JointTrace {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    pub fn is_open(&self, step: usize, channel: usize) -> bool {
        self.states[step] >> channel & 1 == 1
    }

    pub fn state_bits(&self) -> &[u64] {
        &self.states
    }

    /// `S_k`, the number of open channels at each step.
    pub fn sum(&self) -> &[u32] {
        &self.sum
    }

    pub fn into_sum(self) -> Vec<u32> {
        self.sum
    }
}

/// Largest channel count [`simulate_vnd`] supports (states are stored as bit sets).
pub const MAX_SIMULATED_CHANNELS: usize = 64;

/// Simulate `n` steps of the VND-MC.
///
/// Channel `c` consumes one uniform per step from its own stream
/// ([`rng::coordinate_stream`]), so a channel's draws depend only on the seed.
pub fn simulate_vnd(theta: &ParamVector, n: usize, seed: u64, init: &InitialState) -> Result<JointTrace> {
    let l = theta.channels();
    if n == 0 {
        return Err(Error::InvalidParam("simulation length must be at least 1".into()));
    }
    if l > MAX_SIMULATED_CHANNELS {
        return Err(Error::InvalidParam(format!(
            "at most {MAX_SIMULATED_CHANNELS} channels can be simulated, got {l}"
        )));
    }
    let mut state = match init {
        InitialState::AllClosed => 0u64,
        InitialState::Explicit(flags) => {
            if flags.len() != l {
                return Err(Error::DimMismatch {
                    expected: l,
                    got: flags.len(),
                });
            }
            flags
                .iter()
                .enumerate()
                .fold(0u64, |acc, (c, &open)| acc | (u64::from(open) << c))
        }
    };
    let mut rngs: Vec<_> = (0..l).map(|c| rng::coordinate_stream(seed, c)).collect();
    let stay: Vec<(f64, f64)> = (0..=l).map(|r| theta.stay_probabilities(r)).collect();

    let mut states = Vec::with_capacity(n);
    let mut sum = Vec::with_capacity(n);
    states.push(state);
    sum.push(state.count_ones());
    for _ in 1..n {
        let (lam, eta) = stay[state.count_ones() as usize];
        let mut next = 0u64;
        for (c, rng) in rngs.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let open = if state >> c & 1 == 1 { u < eta } else { u >= lam };
            next |= u64::from(open) << c;
        }
        state = next;
        states.push(state);
        sum.push(state.count_ones());
    }
    Ok(JointTrace {
        channels: l,
        states,
        sum,
    })
}

/// Cooperativity class of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
    Zero,
    Indeterminate,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Positive => "positive",
            Verdict::Negative => "negative",
            Verdict::Zero => "zero",
            Verdict::Indeterminate => "indeterminate",
        };
        f.write_str(s)
    }
}

/// Default relative tolerance on cooperativity ratios.
pub const DEFAULT_RATIO_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooperativityReport {
    pub theta_hat: ParamVector,
    /// `lambda_0 / lambda_r` for `r = 1..L-1`.
    pub lambda_ratios: Vec<f64>,
    /// `eta_L / eta_r` for `r = 1..L-1`.
    pub eta_open_ratios: Vec<f64>,
    /// `eta_{r+1} / eta_1` for `r = 1..L-1`.
    pub eta_close_ratios: Vec<f64>,
    pub verdict: Verdict,
    pub tolerance: f64,
}

impl CooperativityReport {
    /// All ratios in one list (lambda, eta-open, eta-close order).
    pub fn all_ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.lambda_ratios
            .iter()
            .chain(&self.eta_open_ratios)
            .chain(&self.eta_close_ratios)
            .copied()
    }
}

/// Compare the stay probabilities across occupancy levels.
///
/// Positive: `lambda_0/lambda_r` and `eta_L/eta_r` all exceed `1 + tol`.
/// Negative: `lambda_0/lambda_r` and `eta_{r+1}/eta_1` all fall below `1 - tol`.
/// Zero: every ratio within `[1 - tol, 1 + tol]`. Anything else, a zero
/// denominator, or a single channel (no ratios at all) is `Indeterminate`.
pub fn classify_cooperativity(theta: &ParamVector, tol: f64) -> CooperativityReport {
    let l = theta.channels();
    let rs = 1..l;
    let lambda_ratios: Vec<f64> = rs.clone().map(|r| theta.lambda(0) / theta.lambda(r)).collect();
    let eta_open_ratios: Vec<f64> = rs.clone().map(|r| theta.eta(l) / theta.eta(r)).collect();
    let eta_close_ratios: Vec<f64> = rs.clone().map(|r| theta.eta(r + 1) / theta.eta(1)).collect();

    let degenerate = l < 2 || rs.clone().any(|r| theta.lambda(r) <= 0.0 || theta.eta(r) <= 0.0);
    let above = |v: &[f64]| v.iter().all(|&x| x > 1.0 + tol);
    let below = |v: &[f64]| v.iter().all(|&x| x < 1.0 - tol);
    let near = |v: &[f64]| v.iter().all(|&x| (x - 1.0).abs() <= tol);

    let verdict = if degenerate {
        Verdict::Indeterminate
    } else if above(&lambda_ratios) && above(&eta_open_ratios) {
        Verdict::Positive
    } else if below(&lambda_ratios) && below(&eta_close_ratios) {
        Verdict::Negative
    } else if near(&lambda_ratios) && near(&eta_open_ratios) && near(&eta_close_ratios) {
        Verdict::Zero
    } else {
        Verdict::Indeterminate
    };

    CooperativityReport {
        theta_hat: theta.clone(),
        lambda_ratios,
        eta_open_ratios,
        eta_close_ratios,
        verdict,
        tolerance: tol,
    }
}

/// Side of the identifiability constraint `lambda_{L/2} >= 1 - eta_{L/2}` (even `L`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `lambda_{L/2} >= 1 - eta_{L/2}`
    Plus,
    /// `lambda_{L/2} <= 1 - eta_{L/2}`
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Identifiability {
    /// Odd `L`: `theta -> Q(theta)` is injective on the whole cube.
    Identifiable,
    /// Even `L`: injective on the half of the cube given by the branch.
    IdentifiableOnBranch(Branch),
}

pub fn is_identifiable(theta: &ParamVector) -> Identifiability {
    let l = theta.channels();
    if l % 2 == 1 {
        return Identifiability::Identifiable;
    }
    let half = l / 2;
    if theta.lambda(half) >= 1.0 - theta.eta(half) {
        Identifiability::IdentifiableOnBranch(Branch::Plus)
    } else {
        Identifiability::IdentifiableOnBranch(Branch::Minus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::binomial_pmf;
    use proptest::prelude::*;

    fn theta(flat: &[f64]) -> ParamVector {
        ParamVector::from_flat(flat).unwrap()
    }

    #[test]
    fn validate_accepts_fig2_vector() {
        assert!(validate_theta(2, &[0.99, 0.99], &[0.99, 0.99]).is_ok());
    }

    #[test]
    fn validate_reports_out_of_range_entry() {
        match validate_theta(1, &[1.2], &[0.5]) {
            Err(Error::OutOfRange {
                kind: ParamKind::Lambda,
                index: 0,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match validate_theta(2, &[0.5, 0.5], &[0.5, -0.1]) {
            Err(Error::OutOfRange {
                kind: ParamKind::Eta,
                index: 2,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_reports_wrong_arity() {
        assert!(matches!(
            validate_theta(2, &[0.5], &[0.5, 0.5]),
            Err(Error::WrongArity { .. })
        ));
    }

    #[test]
    fn serde_rejects_invalid_vectors() {
        let ok: ParamVector = serde_json::from_str(r#"{"channels":1,"lambda":[0.3],"eta":[0.4]}"#).unwrap();
        assert_eq!(ok.to_flat(), vec![0.3, 0.4]);
        assert!(serde_json::from_str::<ParamVector>(r#"{"channels":1,"lambda":[1.3],"eta":[0.4]}"#).is_err());
    }

    #[test]
    fn single_channel_matrix_is_the_two_state_kernel() {
        let q = sum_transition_matrix(&theta(&[0.7, 0.2]));
        assert_eq!(q.row(0), &[0.7, 1.0 - 0.7]);
        assert_eq!(q.row(1), &[1.0 - 0.2, 0.2]);
    }

    #[test]
    fn two_channel_fig2_entries() {
        let q = sum_transition_matrix(&theta(&[0.99; 4]));
        assert!((q.get(0, 0) - 0.9801).abs() < 1e-14);
        assert!((q.get(1, 1) - (0.99 * 0.99 + 0.01 * 0.01)).abs() < 1e-14);
        assert!((q.get(1, 1) - 0.9802).abs() < 1e-14);
    }

    #[test]
    fn brute_force_rejects_large_l() {
        let t = ParamVector::constant(21, 0.5, 0.5).unwrap();
        assert!(matches!(
            sum_transition_matrix_bruteforce(&t),
            Err(Error::LTooLarge { got: 21, .. })
        ));
    }

    fn theta_strategy(max_l: usize) -> impl Strategy<Value = ParamVector> {
        (1..=max_l).prop_flat_map(|l| {
            proptest::collection::vec(0.0..=1.0f64, 2 * l).prop_map(|v| ParamVector::from_flat(&v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(t in theta_strategy(8)) {
            let q = sum_transition_matrix(&t);
            for i in 0..q.dim() {
                let s: f64 = q.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(q.row(i).iter().all(|&x| (0.0..=1.0 + 1e-15).contains(&x)));
            }
        }

        #[test]
        fn closed_form_matches_enumeration(t in theta_strategy(8)) {
            let exact = sum_transition_matrix(&t);
            let brute = sum_transition_matrix_bruteforce(&t).unwrap();
            prop_assert!(exact.max_abs_diff(&brute) < 1e-12);
        }

        #[test]
        fn independent_channels_give_binomial_convolution(
            l in 1usize..=6, lam in 0.0..=1.0f64, eta in 0.0..=1.0f64
        ) {
            let q = sum_transition_matrix(&ParamVector::constant(l, lam, eta).unwrap());
            for i in 0..=l {
                for j in 0..=l {
                    // open survivors ~ Bin(i, eta), new openings ~ Bin(L - i, 1 - lam)
                    let direct: f64 = (0..=i.min(j))
                        .map(|k| binomial_pmf(i, eta, k) * binomial_pmf(l - i, 1.0 - lam, j - k))
                        .sum();
                    prop_assert!((q.get(i, j) - direct).abs() < 1e-12);
                }
            }
        }
    }

    fn permute(bits: u64, perm: &[usize]) -> u64 {
        perm.iter()
            .enumerate()
            .fold(0, |acc, (dst, &src)| acc | ((bits >> src & 1) << dst))
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn joint_law_is_permutation_invariant() {
        let t = theta(&[0.9, 0.6, 0.3, 0.8, 0.1, 0.5, 0.7, 0.95]);
        for l in 1..=4usize {
            let t = ParamVector::new(l, t.lambdas()[..l].to_vec(), t.etas()[..l].to_vec()).unwrap();
            let perms = permutations(l);
            for from in 0..(1u64 << l) {
                for to in 0..(1u64 << l) {
                    let p = joint_transition_probability(&t, from, to);
                    for perm in &perms {
                        let q = joint_transition_probability(&t, permute(from, perm), permute(to, perm));
                        assert!((p - q).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn absorbing_chain_stays_closed() {
        let t = ParamVector::constant(3, 1.0, 1.0).unwrap();
        let tr = simulate_vnd(&t, 500, 1, &InitialState::AllClosed).unwrap();
        assert!(tr.sum().iter().all(|&s| s == 0));
    }

    #[test]
    fn flipping_chain_alternates() {
        let t = ParamVector::constant(3, 0.0, 0.0).unwrap();
        let init = InitialState::Explicit(vec![true, false, true]);
        let tr = simulate_vnd(&t, 50, 9, &init).unwrap();
        for k in 1..tr.len() {
            for c in 0..3 {
                assert_ne!(tr.is_open(k, c), tr.is_open(k - 1, c));
            }
        }
    }

    #[test]
    fn simulation_is_seed_deterministic_and_sum_consistent() {
        let t = theta(&[0.99; 4]);
        let a = simulate_vnd(&t, 1200, 42, &InitialState::AllClosed).unwrap();
        let b = simulate_vnd(&t, 1200, 42, &InitialState::AllClosed).unwrap();
        assert_eq!(a, b);
        for k in 0..a.len() {
            let s = (0..2).filter(|&c| a.is_open(k, c)).count() as u32;
            assert_eq!(a.sum()[k], s);
        }
        let c = simulate_vnd(&t, 1200, 43, &InitialState::AllClosed).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn simulation_rejects_bad_input() {
        let t = theta(&[0.5; 4]);
        assert!(simulate_vnd(&t, 0, 1, &InitialState::AllClosed).is_err());
        assert!(simulate_vnd(&t, 5, 1, &InitialState::Explicit(vec![true])).is_err());
    }

    #[test]
    fn paper_scenarios_classify() {
        let tol = DEFAULT_RATIO_TOLERANCE;
        assert_eq!(
            classify_cooperativity(&theta(&[0.99; 4]), tol).verdict,
            Verdict::Zero
        );
        assert_eq!(
            classify_cooperativity(&theta(&[0.99, 0.985, 0.985, 0.99]), tol).verdict,
            Verdict::Positive
        );
        assert_eq!(
            classify_cooperativity(&theta(&[0.985, 0.99, 0.99, 0.985]), tol).verdict,
            Verdict::Negative
        );
    }

    #[test]
    fn mixed_ratios_are_indeterminate() {
        // lambda ratio above the band, eta-open ratio below it
        let r = classify_cooperativity(&theta(&[0.99, 0.98, 0.99, 0.98]), 1e-3);
        assert_eq!(r.verdict, Verdict::Indeterminate);
        let r = classify_cooperativity(&theta(&[0.99, 0.0, 0.99, 0.99]), 1e-3);
        assert_eq!(r.verdict, Verdict::Indeterminate);
        let r = classify_cooperativity(&theta(&[0.5, 0.5]), 1e-3);
        assert_eq!(r.verdict, Verdict::Indeterminate);
    }

    proptest! {
        #[test]
        fn verdict_stable_below_smallest_gap(
            flat in proptest::collection::vec(0.05..=1.0f64, 6),
            frac_a in 0.01..0.99f64, frac_b in 0.01..0.99f64,
        ) {
            let t = ParamVector::from_flat(&flat).unwrap();
            let base = classify_cooperativity(&t, 1e-300);
            let gap = base
                .all_ratios()
                .map(|x| (x - 1.0).abs())
                .filter(|&g| g > 0.0)
                .fold(f64::INFINITY, f64::min);
            prop_assume!(gap.is_finite());
            let a = classify_cooperativity(&t, gap * frac_a).verdict;
            let b = classify_cooperativity(&t, gap * frac_b).verdict;
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn identifiability_rules() {
        assert_eq!(
            is_identifiable(&ParamVector::constant(3, 0.1, 0.2).unwrap()),
            Identifiability::Identifiable
        );
        assert_eq!(
            is_identifiable(&theta(&[0.5, 0.99, 0.5, 0.99])),
            Identifiability::IdentifiableOnBranch(Branch::Plus)
        );
        assert_eq!(
            is_identifiable(&theta(&[0.5, 0.2, 0.5, 0.5])),
            Identifiability::IdentifiableOnBranch(Branch::Minus)
        );
        // equality counts as Plus
        assert_eq!(
            is_identifiable(&theta(&[0.5, 0.25, 0.75, 0.5])),
            Identifiability::IdentifiableOnBranch(Branch::Plus)
        );
    }
}
