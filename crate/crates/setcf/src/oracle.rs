//! Brute-force reference computations used to validate the analytic paths.
//!
//! Everything here works from the complete structural model evaluated on dense
//! grids, never from the closed forms in `model` or `containment`.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::inference::lattice_violation;
use crate::model::{
    control_set, location, multinomial_index, Location, multinomial_lines, Cell, ModelError, ModelKind, ModelSpec, PiTable,
    ThetaPoint,
};
use crate::num::{hash_reals, keyed_rng, linspace, phi, phi_inv};
use crate::rset::{sample_grid, SetError, SetExpr};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("{0}")]
    Unsupported(String),
    #[error("no feasible point: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleSettings {
    pub eta_draws: usize,
    /// Grid points per control dimension.
    pub v_resolution: usize,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            eta_draws: 100_000,
            v_resolution: 400,
            seed: 0,
        }
    }
}

/// Frequency and binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub value: f64,
    pub se: f64,
}

fn support_len(spec: &ModelSpec) -> Result<usize, OracleError> {
    spec.support
        .as_ref()
        .map(Vec::len)
        .ok_or_else(|| OracleError::Unsupported("oracle containment needs a discrete outcome".into()))
}

fn eta_dim(spec: &ModelSpec) -> usize {
    match spec.kind {
        ModelKind::Multinomial(j) => j,
        _ => 1,
    }
}

/// Containment by definition: for each η draw, union the outcomes over every grid
/// point of the control set, then count draws whose union lies inside each event.
///
/// Returns one entry per event mask. One-dimensional η is drawn stratified with jitter.
pub fn oracle_containment(
    spec: &ModelSpec,
    cell: &Cell,
    theta: &ThetaPoint,
    settings: &OracleSettings,
) -> Result<Vec<Frequency>, OracleError> {
    let k = support_len(spec)?;
    let cf = control_set(spec, cell, theta)?;
    let points = sample_grid(&cf, settings.v_resolution)?;
    let full = (1u32 << k) - 1;
    let m = eta_dim(spec);
    let n = settings.eta_draws.max(1);
    let mut rng = keyed_rng(settings.seed, &[hash_reals(&cell.z), hash_reals(&cell.d), theta.fingerprint()]);
    let mut hits = vec![0usize; 1 << k];
    let mut eta = vec![0.0; m];
    // per-point quantities that do not depend on η
    let loc = match spec.kind {
        ModelKind::Multinomial(_) => None,
        _ => Some(location(spec, theta)?),
    };
    let index: Vec<f64> = match &loc {
        None => points.iter().map(|v| multinomial_index(v)).collect(),
        Some(l) => points.iter().map(|v| l.g(v)).collect(),
    };
    // neighbours along a one-dimensional grid, where a skipped outcome can be bridged
    let line = points.iter().all(|p| p.len() == 1) && points.windows(2).all(|w| w[0][0] <= w[1][0]);
    let scalar = Scalar::new(spec, theta, cell)?;
    for i in 0..n {
        if m == 1 {
            eta[0] = (i as f64 + rng.random::<f64>()) / n as f64;
        } else {
            for e in eta.iter_mut() {
                *e = rng.random::<f64>();
            }
        }
        let mut set = 0u32;
        match spec.kind {
            ModelKind::Multinomial(j) => {
                let lines = multinomial_lines(theta, j, cell.d[0], &eta)?;
                for &s in &index {
                    let mut best = 0;
                    for (c, l) in lines.iter().enumerate().skip(1) {
                        if l.0 + l.1 * s > lines[best].0 + lines[best].1 * s {
                            best = c;
                        }
                    }
                    set |= 1 << best;
                    if set == full {
                        break;
                    }
                }
            }
            _ => {
                let q = scalar.sigma * phi_inv(eta[0]);
                let mut prev: Option<usize> = None;
                for (i, &g) in index.iter().enumerate() {
                    let o = scalar.outcome(g + q);
                    if let (Some(p), Some(l)) = (prev, &loc) {
                        if line && o.abs_diff(p) > 1 {
                            set |= scalar.bridge(l, q, points[i - 1][0], points[i][0], p);
                        }
                    }
                    set |= 1 << o;
                    prev = Some(o);
                    if set == full {
                        break;
                    }
                }
            }
        }
        for (a, h) in hits.iter_mut().enumerate() {
            if set & !(a as u32) == 0 {
                *h += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| {
            let p = h as f64 / n as f64;
            Frequency {
                value: p,
                se: (p * (1.0 - p) / n as f64).sqrt(),
            }
        })
        .collect())
}

/// Outcome map of the scalar-error kinds as a function of the latent error `u`.
struct Scalar {
    sigma: f64,
    cuts: Vec<f64>,
}

impl Scalar {
    fn new(spec: &ModelSpec, theta: &ThetaPoint, cell: &Cell) -> Result<Self, OracleError> {
        let (sigma, cuts) = match spec.kind {
            ModelKind::Multinomial(_) => (1.0, vec![]),
            ModelKind::OrderedChoice => {
                let (lo, hi) = theta
                    .cutoffs
                    .ok_or_else(|| ModelError::Infeasible("ordered model needs cutoffs".into()))?;
                let mu = crate::model::mu_roy(theta, cell.d[0], &cell.x);
                (location(spec, theta)?.sigma, vec![lo - mu, hi - mu])
            }
            _ => (
                location(spec, theta)?.sigma,
                vec![crate::model::binary_index(spec, theta, &cell.d, &cell.x)?],
            ),
        };
        Ok(Self { sigma, cuts })
    }

    /// Outcomes strictly between those at `a` and `b`, found by bisecting `v` until the
    /// prediction at the midpoint leaves both ends' outcomes.
    fn bridge(&self, loc: &Location, q: f64, mut a: f64, mut b: f64, at_a: usize) -> u32 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let o = self.outcome(loc.g(&[m]) + q);
            match o.abs_diff(at_a) {
                0 => a = m,
                1 => return 1 << o,
                _ => b = m,
            }
        }
        0
    }

    fn outcome(&self, u: f64) -> usize {
        match self.cuts.as_slice() {
            [t] => usize::from(u <= *t),
            [a, b] => {
                if u <= *a {
                    0
                } else if u > *b {
                    2
                } else {
                    1
                }
            }
            _ => 0,
        }
    }
}

/// Sorted disjoint half-open intervals `(lo, hi]` of the real line.
type Cover = Vec<(f64, f64)>;

fn intersect(a: &Cover, b: &Cover) -> Cover {
    let mut out = Vec::new();
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let (lo, hi) = (a0.max(b0), a1.min(b1));
            if lo < hi {
                out.push((lo, hi));
            }
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

/// Values of the scalar outcome error `q = σΦ⁻¹(η)` mapping each grid point into each outcome.
fn outcome_pieces(spec: &ModelSpec, theta: &ThetaPoint, cell: &Cell, g: f64) -> Result<Vec<(f64, f64)>, OracleError> {
    let inf = f64::INFINITY;
    match spec.kind {
        ModelKind::BinaryRoy | ModelKind::RandomCoefSel | ModelKind::DynamicTwoPeriod => {
            let t = crate::model::binary_index(spec, theta, &cell.d, &cell.x)? - g;
            // outcome 0 when q > t, outcome 1 when q ≤ t
            Ok(vec![(t, inf), (-inf, t)])
        }
        ModelKind::OrderedChoice => {
            let (lo, hi) = theta
                .cutoffs
                .ok_or_else(|| ModelError::Infeasible("ordered model needs cutoffs".into()))?;
            let mu = crate::model::mu_roy(theta, cell.d[0], &cell.x);
            let (a, b) = (lo - mu - g, hi - mu - g);
            Ok(vec![(-inf, a), (a, b), (b, inf)])
        }
        _ => Err(OracleError::Unsupported("exact containment needs a scalar outcome error".into())),
    }
}

/// Exact containment for kinds with a scalar outcome error, by interval arithmetic on
/// the error's real line intersected over neighbouring grid points of the control set.
///
/// The control set is connected, so between two neighbouring values of the location
/// the prediction covers every outcome level in between.
pub fn exact_containment(
    spec: &ModelSpec,
    cell: &Cell,
    theta: &ThetaPoint,
    v_resolution: usize,
) -> Result<Vec<f64>, OracleError> {
    let k = support_len(spec)?;
    let cf = control_set(spec, cell, theta)?;
    let points = sample_grid(&cf, v_resolution)?;
    let loc = location(spec, theta)?;
    let mut gs: Vec<f64> = points.iter().map(|v| loc.g(v)).collect();
    gs.sort_by(f64::total_cmp);
    gs.dedup();
    let cdf = |q: f64| phi(q / loc.sigma);
    let mut out = vec![0.0; 1 << k];
    let pieces: Vec<Vec<(f64, f64)>> = gs
        .iter()
        .map(|&g| outcome_pieces(spec, theta, cell, g))
        .collect::<Result<_, _>>()?;
    // neighbouring grid values; between them the outcome sweeps every level in between
    let pairs: Vec<(usize, usize)> = if gs.len() == 1 {
        vec![(0, 0)]
    } else {
        (1..gs.len()).map(|i| (i - 1, i)).collect()
    };
    for (a, o) in out.iter_mut().enumerate() {
        let mut cover: Cover = vec![(f64::NEG_INFINITY, f64::INFINITY)];
        for &(l, r) in &pairs {
            let mut allowed: Cover = Vec::new();
            for (i, pi) in pieces[l].iter().enumerate() {
                for (j, pj) in pieces[r].iter().enumerate() {
                    if (i.min(j)..=i.max(j)).all(|y| a >> y & 1 == 1) {
                        let (lo, hi) = (pi.0.max(pj.0), pi.1.min(pj.1));
                        if lo < hi {
                            allowed.push((lo, hi));
                        }
                    }
                }
            }
            allowed.sort_by(|x, y| x.0.total_cmp(&y.0));
            cover = intersect(&cover, &allowed);
            if cover.is_empty() {
                break;
            }
        }
        *o = cover.iter().map(|&(lo, hi)| cdf(hi) - cdf(lo)).sum();
    }
    Ok(out)
}

/// `(min, max)` of `f` over the grid points of a set.
pub fn grid_range<F>(s: &SetExpr, f: F, resolution: usize) -> Result<(f64, f64), OracleError>
where
    F: Fn(&[f64]) -> f64,
{
    let pts = sample_grid(s, resolution)?;
    Ok(pts.iter().map(|p| f(p)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    }))
}

/// Acceptance mask of a small grid against population cell laws at slack `1e-9`.
///
/// `laws[i]` is the true outcome law of `cells[i]`; `pi0` the true selection indices.
pub fn oracle_region_small(
    spec: &ModelSpec,
    grid: &[ThetaPoint],
    cells: &[Cell],
    laws: &[Vec<f64>],
    pi0: &PiTable,
    v_resolution: usize,
) -> Result<Vec<bool>, OracleError> {
    const SLACK: f64 = 1e-9;
    let mut mask = Vec::with_capacity(grid.len());
    'theta: for theta in grid {
        if theta.validate(spec).is_err() {
            mask.push(false);
            continue;
        }
        if !spec.observed_control {
            for (key, p) in pi0.iter() {
                match theta.pi.get(key) {
                    Some(q) if (q - p).abs() <= SLACK => {}
                    _ => {
                        mask.push(false);
                        continue 'theta;
                    }
                }
            }
        }
        for (cell, law) in cells.iter().zip(laws) {
            let c = exact_containment(spec, cell, theta, v_resolution)?;
            if lattice_violation(&c, law) > SLACK {
                mask.push(false);
                continue 'theta;
            }
        }
        mask.push(true);
    }
    Ok(mask)
}

fn objective(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            if a == 0.0 {
                0.0
            } else if b <= 0.0 {
                f64::NEG_INFINITY
            } else {
                a * b.ln()
            }
        })
        .sum()
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step).ceil() as usize + 1;
    linspace(lo, hi, n.max(2))
}

/// Least-favorable density by exhaustive simplex-grid search with local refinement.
///
/// Grid step `1e-4` for two outcomes, `2e-3` for three, each axis spanning the
/// coordinate's feasible range so degenerate cores are still hit.
pub fn oracle_lfp(lattice: &[f64], alt: &[f64]) -> Result<Vec<f64>, OracleError> {
    let n = alt.len();
    if !(2..=3).contains(&n) || lattice.len() != 1 << n {
        return Err(OracleError::Unsupported("the LFP oracle handles two or three outcomes".into()));
    }
    let full = (1usize << n) - 1;
    let lo: Vec<f64> = (0..n).map(|y| lattice[1 << y].max(0.0)).collect();
    let hi: Vec<f64> = (0..n).map(|y| (1.0 - lattice[full ^ (1 << y)]).min(1.0)).collect();
    if (0..n).any(|y| lo[y] > hi[y] + 1e-12) {
        return Err(OracleError::Infeasible("containment exceeds capacity".into()));
    }
    let feasible = |q: &[f64]| lattice_violation(lattice, q) <= 1e-12 && q.iter().all(|v| *v >= -1e-15);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let consider = |q: Vec<f64>, best: &mut Option<(f64, Vec<f64>)>| {
        if feasible(&q) {
            let v = objective(alt, &q);
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                *best = Some((v, q));
            }
        }
    };
    if n == 2 {
        for a in axis(lo[0], hi[0], 1e-4) {
            consider(vec![a, 1.0 - a], &mut best);
        }
        let Some((_, q)) = best.clone() else {
            return Err(OracleError::Infeasible("empty core".into()));
        };
        // refine on a finer lattice around the best point
        let (a0, a1) = ((q[0] - 1e-4).max(lo[0]), (q[0] + 1e-4).min(hi[0]));
        for a in axis(a0, a1, 1e-7) {
            consider(vec![a, 1.0 - a], &mut best);
        }
    } else {
        let mut step = 2e-3;
        let (mut r0, mut r2) = ((lo[0], hi[0]), (lo[2], hi[2]));
        for _ in 0..4 {
            for a in axis(r0.0, r0.1, step) {
                for c in axis(r2.0, r2.1, step) {
                    consider(vec![a, 1.0 - a - c, c], &mut best);
                }
            }
            let Some((_, q)) = best.clone() else {
                return Err(OracleError::Infeasible("empty core".into()));
            };
            r0 = ((q[0] - 2.0 * step).max(lo[0]), (q[0] + 2.0 * step).min(hi[0]));
            r2 = ((q[2] - 2.0 * step).max(lo[2]), (q[2] + 2.0 * step).min(hi[2]));
            step /= 10.0;
        }
    }
    best.map(|(_, q)| q).ok_or_else(|| OracleError::Infeasible("empty core".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_lfp_is_the_alternative() {
        let mut lattice = [0.0; 8];
        lattice[7] = 1.0;
        let q = oracle_lfp(&lattice, &[0.2, 0.3, 0.5]).unwrap();
        for (a, b) in q.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn cover_intersection() {
        let a = vec![(f64::NEG_INFINITY, 1.0), (2.0, 3.0)];
        let b = vec![(0.5, 2.5)];
        assert_eq!(intersect(&a, &b), vec![(0.5, 1.0), (2.0, 2.5)]);
    }
}
