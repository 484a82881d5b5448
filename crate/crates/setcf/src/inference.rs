//! Split-sample likelihood-ratio confidence intervals for scalar functionals of θ.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::containment::{event_class, ContainmentError, Event, Functional, McSettings};
use crate::data::Table;
use crate::identify::{functional_value, CellMap, CellStats, IdentifyError, Kappa, Schema};
use crate::model::{ModelError, ModelSpec, ThetaPoint};
use crate::num::{keyed_rng, linspace};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("infeasible parameter: {0}")]
    Infeasible(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Identify(#[from] IdentifyError),
    #[error(transparent)]
    Containment(#[from] ContainmentError),
}

impl From<ModelError> for InferenceError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Infeasible(m) => InferenceError::Infeasible(m),
            e => InferenceError::Identify(e.into()),
        }
    }
}

/// Floor applied to probabilities inside logarithms.
pub const LOG_FLOOR: f64 = 1e-300;

const FEAS_TOL: f64 = 1e-12;

/// Seeded 50/50 partition of row indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitPlan {
    pub s0: Vec<usize>,
    pub s1: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn new(n: usize, seed: u64) -> Result<Self, InferenceError> {
        if n < 2 {
            return Err(InferenceError::Input("splitting needs at least two rows".into()));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut keyed_rng(seed, &[0x5911]));
        let mut s0 = idx[..n / 2].to_vec();
        let mut s1 = idx[n / 2..].to_vec();
        s0.sort_unstable();
        s1.sort_unstable();
        Ok(Self { s0, s1, seed })
    }

    pub fn swapped(&self) -> Self {
        Self {
            s0: self.s1.clone(),
            s1: self.s0.clone(),
            seed: self.seed,
        }
    }
}

/// Möbius inverse of a set function on the lattice.
pub fn mobius(lattice: &[f64]) -> Vec<f64> {
    let n = lattice.len();
    (0..n as u32)
        .map(|a| {
            let mut s = 0.0;
            // enumerate subsets b of a
            let mut b = a;
            loop {
                let sign = if (a & !b).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                s += sign * lattice[b as usize];
                if b == 0 {
                    break;
                }
                b = (b - 1) & a;
            }
            s
        })
        .collect()
}

/// Largest violation of `q(A) ≥ ℂ(A)` over the lattice, as `max ℂ(A) − q(A)`.
pub fn lattice_violation(lattice: &[f64], q: &[f64]) -> f64 {
    (1..lattice.len())
        .map(|m| {
            let qa: f64 = q.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, v)| v).sum();
            lattice[m] - qa
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Least-favorable density: maximizer of `Σ p(y) log q(y)` over `{q : q(A) ≥ ℂ(A) ∀A}`.
///
/// `lattice[mask]` holds `ℂ` on every subset of the support (empty set 0, full set 1).
pub fn lfp_density(lattice: &[f64], alt: &[f64]) -> Result<Vec<f64>, InferenceError> {
    let n = alt.len();
    if n < 2 || lattice.len() != 1 << n {
        return Err(InferenceError::Input("lattice size does not match the support".into()));
    }
    if alt.iter().any(|p| !(*p >= 0.0)) || (alt.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(InferenceError::Input("alternative density must be a probability vector".into()));
    }
    if n <= 3 {
        let full = (1usize << n) - 1;
        let lo: Vec<f64> = (0..n).map(|y| lattice[1 << y].max(0.0)).collect();
        let hi: Vec<f64> = (0..n).map(|y| (1.0 - lattice[full ^ (1 << y)]).min(1.0)).collect();
        boxed_lfp(&lo, &hi, alt)
    } else {
        exchange_lfp(lattice, alt)
    }
}

/// `q_y = clamp(p_y/τ, l_y, u_y)` with `τ` chosen so that `Σ q = 1`.
fn boxed_lfp(lo: &[f64], hi: &[f64], p: &[f64]) -> Result<Vec<f64>, InferenceError> {
    let n = p.len();
    if lo.iter().zip(hi).any(|(l, u)| l > &(u + FEAS_TOL)) {
        return Err(InferenceError::Infeasible("containment exceeds capacity".into()));
    }
    let (sl, su): (f64, f64) = (lo.iter().sum(), hi.iter().sum());
    if sl > 1.0 + FEAS_TOL || su < 1.0 - FEAS_TOL {
        return Err(InferenceError::Infeasible(format!(
            "no probability vector within bounds (sum lower {sl}, sum upper {su})"
        )));
    }
    let hi: Vec<f64> = lo.iter().zip(hi).map(|(l, u)| u.max(*l)).collect();
    let at = |tau: f64| -> Vec<f64> {
        (0..n)
            .map(|y| {
                let v = if p[y] > 0.0 { p[y] / tau } else { 0.0 };
                v.clamp(lo[y], hi[y])
            })
            .collect()
    };
    let sum_at_zero: f64 = (0..n).map(|y| if p[y] > 0.0 { hi[y] } else { lo[y] }).sum();
    let mut q = if sum_at_zero <= 1.0 {
        // zero-weight outcomes absorb the remainder in index order
        let mut q: Vec<f64> = (0..n).map(|y| if p[y] > 0.0 { hi[y] } else { lo[y] }).collect();
        let mut rest = 1.0 - sum_at_zero;
        for y in (0..n).filter(|&y| p[y] == 0.0) {
            let add = rest.min(hi[y] - q[y]);
            q[y] += add;
            rest -= add;
        }
        q
    } else {
        // Σq(τ) is nonincreasing; bisect on log τ
        let (mut a, mut b) = (-800.0f64, 800.0f64);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if at(m.exp()).iter().sum::<f64>() > 1.0 {
                a = m;
            } else {
                b = m;
            }
        }
        at(b.exp())
    };
    // absorb rounding in the coordinate with the most room
    let r = 1.0 - q.iter().sum::<f64>();
    let room = |y: usize| if r > 0.0 { hi[y] - q[y] } else { q[y] - lo[y] };
    if let Some(y) = (0..n).max_by(|&a, &b| room(a).total_cmp(&room(b))) {
        q[y] += r;
    }
    Ok(q)
}

/// Pairwise mass exchanges on the core, started from the pignistic point.
fn exchange_lfp(lattice: &[f64], p: &[f64]) -> Result<Vec<f64>, InferenceError> {
    let n = p.len();
    let m = mobius(lattice);
    if m.iter().any(|v| *v < -1e-9) {
        return Err(InferenceError::Input("containment lattice is not a belief function".into()));
    }
    let mut q = vec![0.0; n];
    for (a, &w) in m.iter().enumerate().skip(1) {
        let k = (a as u32).count_ones() as f64;
        for (y, qy) in q.iter_mut().enumerate() {
            if a >> y & 1 == 1 {
                *qy += w / k;
            }
        }
    }
    if lattice_violation(lattice, &q) > 1e-9 || (q.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(InferenceError::Infeasible("empty core".into()));
    }
    let masses = |q: &[f64]| -> Vec<f64> {
        (0..lattice.len())
            .map(|a| q.iter().enumerate().filter(|(i, _)| a >> i & 1 == 1).map(|(_, v)| v).sum())
            .collect()
    };
    for _ in 0..10_000 {
        let mut moved = 0.0f64;
        for a in 0..n {
            for b in (a + 1)..n {
                let pa_pb = p[a] + p[b];
                let qa_qb = q[a] + q[b];
                let qm = masses(&q);
                // t moves mass from b to a; limits from events separating the pair
                let mut up = q[b];
                let mut down = q[a];
                for (ev, (&qe, &ce)) in qm.iter().zip(lattice).enumerate().skip(1) {
                    let (ha, hb) = (ev >> a & 1 == 1, ev >> b & 1 == 1);
                    if hb && !ha {
                        up = up.min(qe - ce);
                    } else if ha && !hb {
                        down = down.min(qe - ce);
                    }
                }
                let (up, down) = (up.max(0.0), down.max(0.0));
                let target = if pa_pb > 0.0 { p[a] / pa_pb * qa_qb } else { q[a] };
                let t = (target - q[a]).clamp(-down, up);
                if t != 0.0 {
                    q[a] += t;
                    q[b] -= t;
                    moved = moved.max(t.abs());
                }
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    Ok(q)
}

/// `Σ_y counts[y] · log max(q[y], floor)`.
pub fn log_likelihood(counts: &[usize], q: &[f64]) -> f64 {
    counts
        .iter()
        .zip(q)
        .filter(|(c, _)| **c > 0)
        .map(|(&c, &v)| c as f64 * v.max(LOG_FLOOR).ln())
        .sum()
}

/// `log(e^a + e^b)`.
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::INFINITY {
        return m;
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log S_n = log((T + T_swap)/2)`.
pub fn log_s_n(log_t: f64, log_t_swap: f64) -> f64 {
    log_sum_exp(log_t, log_t_swap) - std::f64::consts::LN_2
}

/// Criterion `sup_A Σ_cells n_c [ℂ(A|c;θ) − P̂(A|c)]²₊`; `+∞` for infeasible θ.
pub fn criterion(
    spec: &ModelSpec,
    theta: &ThetaPoint,
    cells: &CellStats,
    events: &[Event],
    mc: &McSettings,
) -> Result<f64, InferenceError> {
    let mut per_event = vec![0.0; events.len()];
    for c in &cells.cells {
        let f = match Functional::new(spec, &c.cell, theta, mc) {
            Ok(f) => f,
            Err(ContainmentError::Model(ModelError::Infeasible(_))) => return Ok(f64::INFINITY),
            Err(e) => return Err(e.into()),
        };
        for (k, &a) in events.iter().enumerate() {
            let v = (f.containment(a) - c.prob(a.mask)).max(0.0);
            per_event[k] += c.count as f64 * v * v;
        }
    }
    Ok(per_event.into_iter().fold(0.0, f64::max))
}

/// Full scan for the criterion minimizer; the first grid index wins ties.
pub fn unrestricted_estimator(
    spec: &ModelSpec,
    grid: &[ThetaPoint],
    cells: &CellStats,
    events: &[Event],
    mc: &McSettings,
) -> Result<(usize, f64), InferenceError> {
    if grid.is_empty() {
        return Err(InferenceError::Input("empty grid".into()));
    }
    let vals: Result<Vec<f64>, InferenceError> =
        grid.par_iter().map(|t| criterion(spec, t, cells, events, mc)).collect();
    let vals = vals?;
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v < vals[best] {
            best = i;
        }
    }
    Ok((best, vals[best]))
}

/// Add-one-half smoothed empirical law; uniform when the cell is absent.
fn smoothed(counts: Option<&Vec<usize>>, k: usize) -> Vec<f64> {
    match counts {
        Some(c) => {
            let n: usize = c.iter().sum();
            c.iter().map(|&v| (v as f64 + 0.5) / (n as f64 + 0.5 * k as f64)).collect()
        }
        None => vec![1.0 / k as f64; k],
    }
}

/// Containment lattices per (θ, cell id), computed once.
struct Lattices {
    by_cell: Vec<HashMap<usize, Option<Vec<f64>>>>,
}

impl Lattices {
    fn build(
        spec: &ModelSpec,
        grid: &[ThetaPoint],
        map: &CellMap,
        ids: &[usize],
        mc: &McSettings,
    ) -> Result<Self, InferenceError> {
        let by_cell: Result<Vec<HashMap<usize, Option<Vec<f64>>>>, InferenceError> = grid
            .par_iter()
            .map(|theta| {
                let mut out = HashMap::new();
                if theta.validate(spec).is_err() {
                    for &id in ids {
                        out.insert(id, None);
                    }
                    return Ok(out);
                }
                for &id in ids {
                    let lat = match Functional::new(spec, &map.cells[id], theta, mc) {
                        Ok(f) => Some(f.lattice()),
                        Err(ContainmentError::Model(ModelError::Infeasible(_))) => None,
                        Err(e) => return Err(e.into()),
                    };
                    out.insert(id, lat);
                }
                Ok(out)
            })
            .collect();
        Ok(Self { by_cell: by_cell? })
    }

    fn get(&self, theta: usize, cell: usize) -> Option<&Vec<f64>> {
        self.by_cell[theta].get(&cell).and_then(Option::as_ref)
    }
}

/// One direction of the split: fit on `fit`, evaluate on `eval`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfFit {
    pub theta_hat: usize,
    pub criterion: f64,
    /// `Σ log q_{θ̂}(Y_i)` on the evaluation half.
    pub log_numerator: f64,
    /// `Σ log q_θ(Y_i)` per grid point; `-∞` for infeasible θ.
    pub log_lik: Vec<f64>,
}

fn half_fit(
    spec: &ModelSpec,
    grid: &[ThetaPoint],
    lat: &Lattices,
    fit: &CellStats,
    eval: &CellStats,
    events: &[Event],
    mc: &McSettings,
) -> Result<HalfFit, InferenceError> {
    let k = spec.support.as_ref().map(Vec::len).unwrap_or(0);
    let (theta_hat, crit) = unrestricted_estimator(spec, grid, fit, events, mc)?;
    let fit_counts: HashMap<usize, &Vec<usize>> = fit
        .cells
        .iter()
        .map(|c| (c.id, c.counts.as_ref().expect("discrete")))
        .collect();
    // alternative density per evaluation cell
    let mut alt: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut log_num = 0.0;
    for c in &eval.cells {
        let sm = smoothed(fit_counts.get(&c.id).copied(), k);
        let p = match lat.get(theta_hat, c.id) {
            Some(l) => lfp_density(l, &sm)?,
            None => sm,
        };
        log_num += log_likelihood(c.counts.as_ref().expect("discrete"), &p);
        alt.insert(c.id, p);
    }
    let log_lik: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|t| {
            let mut s = 0.0;
            for c in &eval.cells {
                let Some(l) = lat.get(t, c.id) else {
                    return f64::NEG_INFINITY;
                };
                match lfp_density(l, &alt[&c.id]) {
                    Ok(q) => s += log_likelihood(c.counts.as_ref().expect("discrete"), &q),
                    Err(_) => return f64::NEG_INFINITY,
                }
            }
            s
        })
        .collect();
    Ok(HalfFit {
        theta_hat,
        criterion: crit,
        log_numerator: log_num,
        log_lik,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiSettings {
    pub alpha: f64,
    pub k: usize,
    pub seed: u64,
    pub mc: McSettings,
}

impl Default for CiSettings {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            k: 200,
            seed: 0,
            mc: McSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiResult {
    pub functional: String,
    pub alpha: f64,
    pub k: usize,
    /// Rejection threshold `1/α` for `S_n`.
    pub threshold: f64,
    pub phi_grid: Vec<f64>,
    pub log_s_n: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Grid values with no θ in the slice (rejected).
    pub empty_slice: Vec<bool>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Half-width of each slice `{θ: |φ(θ) − φ*| ≤ tolerance}`.
    pub tolerance: f64,
    pub theta_hat: [usize; 2],
}

impl CiResult {
    pub fn is_refuted(&self) -> bool {
        self.lower.is_none()
    }

    /// Whether `v` falls within the accepted hull widened by the slice tolerance.
    pub fn covers(&self, v: f64) -> bool {
        matches!((self.lower, self.upper), (Some(l), Some(u)) if l - self.tolerance <= v && v <= u + self.tolerance)
    }
}

/// Statistic `log T_n(φ*)` from one half: numerator minus the slice maximum.
pub fn log_t_n(fit: &HalfFit, slice: &[usize]) -> f64 {
    let den = slice.iter().map(|&i| fit.log_lik[i]).fold(f64::NEG_INFINITY, f64::max);
    if den == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        fit.log_numerator - den
    }
}

/// Cross-fit LR confidence interval for `κ(θ)` over a θ grid.
#[allow(clippy::too_many_arguments)]
pub fn confidence_interval(
    spec: &ModelSpec,
    kappa: &Kappa,
    table: &Table,
    schema: &Schema,
    map: &CellMap,
    grid: &[ThetaPoint],
    xdist: &[(Vec<f64>, f64)],
    settings: &CiSettings,
) -> Result<CiResult, InferenceError> {
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(InferenceError::Input(format!("alpha = {} outside (0, 1)", settings.alpha)));
    }
    if settings.k < 2 {
        return Err(InferenceError::Input("the functional grid needs K >= 2".into()));
    }
    let support = spec
        .support
        .as_ref()
        .ok_or_else(|| InferenceError::Input("confidence intervals need a discrete outcome".into()))?;
    let plan = SplitPlan::new(table.n_rows(), settings.seed)?;
    let h0 = CellStats::from_rows(map, table, schema, Some(support), &plan.s0, 1)?;
    let h1 = CellStats::from_rows(map, table, schema, Some(support), &plan.s1, 1)?;
    let events = event_class(spec.kind, support.len(), false)?;
    let ids: Vec<usize> = (0..map.cells.len()).collect();
    let lat = Lattices::build(spec, grid, map, &ids, &settings.mc)?;
    let fwd = half_fit(spec, grid, &lat, &h1, &h0, &events, &settings.mc)?;
    let swp = half_fit(spec, grid, &lat, &h0, &h1, &events, &settings.mc)?;

    let phis: Result<Vec<f64>, IdentifyError> =
        grid.par_iter().map(|t| functional_value(spec, t, kappa, xdist)).collect();
    let phis = phis?;
    let finite: Vec<f64> = phis.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(InferenceError::Input("functional undefined on the whole grid".into()));
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let phi_grid = linspace(lo, hi, settings.k);
    let tol = 0.5 * (hi - lo) / (settings.k - 1) as f64 + 1e-12 * (1.0 + hi.abs().max(lo.abs()));
    let threshold = 1.0 / settings.alpha;
    let log_thr = threshold.ln();
    let mut log_s = Vec::with_capacity(settings.k);
    let mut accepted = Vec::with_capacity(settings.k);
    let mut empty = Vec::with_capacity(settings.k);
    for &target in &phi_grid {
        let slice: Vec<usize> = (0..grid.len()).filter(|&i| (phis[i] - target).abs() <= tol).collect();
        let s = log_s_n(log_t_n(&fwd, &slice), log_t_n(&swp, &slice));
        empty.push(slice.is_empty());
        accepted.push(s <= log_thr);
        log_s.push(s);
    }
    let acc: Vec<f64> = phi_grid.iter().zip(&accepted).filter(|(_, a)| **a).map(|(v, _)| *v).collect();
    Ok(CiResult {
        functional: kappa.to_string(),
        alpha: settings.alpha,
        k: settings.k,
        threshold,
        phi_grid,
        log_s_n: log_s,
        accepted,
        empty_slice: empty,
        lower: acc.first().copied(),
        upper: acc.last().copied(),
        tolerance: tol,
        theta_hat: [fwd.theta_hat, swp.theta_hat],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_example() {
        // ℂ({0}) = 0.4, ℂ({1}) = 0.3
        let q = lfp_density(&[0.0, 0.4, 0.3, 1.0], &[0.1, 0.9]).unwrap();
        assert!((q[0] - 0.4).abs() < 1e-12 && (q[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn complete_model_is_unique() {
        let q = lfp_density(&[0.0, 0.25, 0.75, 1.0], &[0.9, 0.1]).unwrap();
        assert!((q[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn infeasible_lattice() {
        assert!(matches!(
            lfp_density(&[0.0, 0.6, 0.6, 1.0], &[0.5, 0.5]),
            Err(InferenceError::Infeasible(_))
        ));
    }

    #[test]
    fn split_is_a_partition() {
        let p = SplitPlan::new(11, 3).unwrap();
        let mut all = [p.s0.clone(), p.s1.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(p.s0.len(), 5);
    }

    #[test]
    fn s_n_of_ones() {
        assert!(log_s_n(0.0, 0.0).abs() < 1e-15);
    }
}
