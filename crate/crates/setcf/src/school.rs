//! School assignment under constrained reports: local-preference control sets,
//! a matching data generator and cutoff bounds on school effects.
//!
//! Options are `0..=J` with `0` the outside option. A preference is a strict order
//! over all options, most preferred first. A report is an ordered list of schools.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Table};
use crate::num::{keyed_rng, phi_inv};
use crate::rset::{FiniteSet, SetError};

#[derive(Debug, Error)]
pub enum SchoolError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("score of school {0} ties its cutoff")]
    Tie(usize),
    #[error("no observations with reported local preference ({j}, {k}) on the {side} side within bandwidth {bandwidth}")]
    Empty {
        j: usize,
        k: usize,
        side: &'static str,
        bandwidth: f64,
    },
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Feasible options: the outside option and every school whose cutoff the score clears.
pub fn feasible(scores: &[f64], cutoffs: &[f64]) -> Result<Vec<usize>, SchoolError> {
    if scores.len() != cutoffs.len() {
        return Err(SchoolError::Input("one score per cutoff".into()));
    }
    let mut b = vec![0];
    for (i, (s, c)) in scores.iter().zip(cutoffs).enumerate() {
        if s == c {
            return Err(SchoolError::Tie(i + 1));
        }
        if s > c {
            b.push(i + 1);
        }
    }
    Ok(b)
}

/// Most preferred member of `set` under `order`; options missing from the order rank last.
pub fn best(order: &[usize], set: &[usize]) -> Option<usize> {
    order.iter().copied().find(|o| set.contains(o))
}

fn with(set: &[usize], j: usize) -> Vec<usize> {
    let mut s = set.to_vec();
    if !s.contains(&j) {
        s.push(j);
    }
    s
}

fn without(set: &[usize], j: usize) -> Vec<usize> {
    set.iter().copied().filter(|&o| o != j).collect()
}

/// Reported order with the outside option appended.
fn reported_order(report: &[usize]) -> Vec<usize> {
    let mut o = report.to_vec();
    o.push(0);
    o
}

/// Local preference `(best in B ∪ {j}, best in B ∖ {j})` under `order`.
pub fn local_preference(order: &[usize], b: &[usize], j: usize) -> (usize, usize) {
    let hi = best(order, &with(b, j)).unwrap_or(0);
    let lo = best(order, &without(b, j)).unwrap_or(0);
    (hi, lo)
}

fn check_report(report: &[usize], n_schools: usize) -> Result<(), SchoolError> {
    for (i, &r) in report.iter().enumerate() {
        if r == 0 || r > n_schools {
            return Err(SchoolError::Input(format!("reported school {r} outside 1..={n_schools}")));
        }
        if report[..i].contains(&r) {
            return Err(SchoolError::Input(format!("school {r} reported twice")));
        }
    }
    Ok(())
}

/// Set of local preferences for school `j` consistent with scores and a report.
pub fn cf_local_pref(scores: &[f64], report: &[usize], cutoffs: &[f64], j: usize) -> Result<FiniteSet, SchoolError> {
    let n = cutoffs.len();
    if j == 0 || j > n {
        return Err(SchoolError::Input(format!("school {j} outside 1..={n}")));
    }
    check_report(report, n)?;
    let b = feasible(scores, cutoffs)?;
    let order = reported_order(report);
    let (a, bb) = local_preference(&order, &b, j);
    let listed = |o: &usize| *o == 0 || report.contains(o);
    let n_minus: Vec<usize> = without(&b, j).into_iter().filter(|o| !listed(o)).collect();
    let n_plus: Vec<usize> = with(&b, j).into_iter().filter(|o| !listed(o)).collect();
    let mut el = vec![vec![a as i64, bb as i64]];
    if scores[j - 1] > cutoffs[j - 1] {
        if a != bb {
            el.extend(n_minus.iter().map(|&o| vec![a as i64, o as i64]));
        }
    } else {
        el.extend(
            n_plus
                .iter()
                .filter(|o| !n_minus.contains(o))
                .map(|&o| vec![o as i64, bb as i64]),
        );
    }
    el.sort();
    el.dedup();
    Ok(FiniteSet::new(el)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchoolConfig {
    pub n: usize,
    pub seed: u64,
    pub cutoffs: Vec<f64>,
    /// Longest report allowed.
    pub max_report: usize,
    /// Outcome level of each option `0..=J`.
    pub mu: Vec<f64>,
    /// School whose local preference shifts the outcome.
    pub focal: usize,
    /// Local-preference effects lie in `[-spread, spread]`; zero at `(focal, partner)`.
    pub spread: f64,
    pub partner: usize,
    pub slope: f64,
    pub noise_sd: f64,
    /// Every school acceptable and reported in true order.
    #[serde(default)]
    pub truthful: bool,
}

impl SchoolConfig {
    pub fn new(n_schools: usize, n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            cutoffs: vec![0.5; n_schools],
            max_report: 1,
            mu: (0..=n_schools).map(|o| o as f64 * 0.25).collect(),
            focal: 1,
            spread: 0.5,
            partner: 2.min(n_schools),
            slope: 0.5,
            noise_sd: 0.5,
            truthful: false,
        }
    }

    fn validate(&self) -> Result<(), SchoolError> {
        let j = self.cutoffs.len();
        let bad = |m: &str| Err(SchoolError::Input(m.to_string()));
        if j < 2 {
            return bad("need at least two schools");
        }
        if self.mu.len() != j + 1 {
            return bad("one outcome level per option, outside option included");
        }
        if self.focal == 0 || self.focal > j || self.partner > j || self.partner == self.focal {
            return bad("focal and partner must be distinct options with a school as focal");
        }
        if self.n == 0 || self.max_report == 0 || !(self.spread >= 0.0) || !(self.noise_sd >= 0.0) {
            return bad("n and max_report must be positive, spread and noise_sd nonnegative");
        }
        if self.cutoffs.iter().any(|c| !(0.0..1.0).contains(c) || *c == 0.0) {
            return bad("cutoffs must lie in (0, 1)");
        }
        Ok(())
    }

    /// Outcome shift of a true local preference of the focal school.
    pub fn effect(&self, q: (usize, usize)) -> f64 {
        if q == (self.focal, self.partner) {
            return 0.0;
        }
        let u: f64 = keyed_rng(self.seed, &[0x5c, q.0 as u64, q.1 as u64]).random();
        self.spread * (2.0 * u - 1.0)
    }
}

/// Simulated matching data.
#[derive(Debug, Clone, PartialEq)]
pub struct SchoolData {
    pub cutoffs: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
    pub reports: Vec<Vec<usize>>,
    pub y: Vec<f64>,
    /// Latent true preferences, for oracle checks only.
    pub truth: Vec<Vec<usize>>,
}

pub fn simulate_school(cfg: &SchoolConfig) -> Result<SchoolData, SchoolError> {
    cfg.validate()?;
    let nj = cfg.cutoffs.len();
    let mut rng = keyed_rng(cfg.seed, &[0x5c0001]);
    let mut out = SchoolData {
        cutoffs: cfg.cutoffs.clone(),
        scores: Vec::with_capacity(cfg.n),
        reports: Vec::with_capacity(cfg.n),
        y: Vec::with_capacity(cfg.n),
        truth: Vec::with_capacity(cfg.n),
    };
    while out.y.len() < cfg.n {
        let s: Vec<f64> = (0..nj).map(|_| rng.random::<f64>()).collect();
        let Ok(b) = feasible(&s, &cfg.cutoffs) else {
            continue;
        };
        let mut q: Vec<usize> = (0..=nj).collect();
        q.shuffle(&mut rng);
        if cfg.truthful {
            q.retain(|&o| o != 0);
            q.push(0);
        }
        let acceptable: Vec<usize> = q.iter().copied().take_while(|&o| o != 0).collect();
        let assigned = best(&q, &b).unwrap_or(0);
        let report = if cfg.truthful {
            acceptable.clone()
        } else {
            stable_report(&mut rng, &acceptable, &b, assigned, cfg.max_report)
        };
        let qj = local_preference(&q, &b, cfg.focal);
        let placed = best(&reported_order(&report), &b).unwrap_or(0);
        let sj = s[cfg.focal - 1] - cfg.cutoffs[cfg.focal - 1];
        let y = cfg.mu[placed] + cfg.effect(qj) + cfg.slope * sj + cfg.noise_sd * phi_inv(rng.random::<f64>());
        out.scores.push(s);
        out.reports.push(report);
        out.y.push(y);
        out.truth.push(q);
    }
    Ok(out)
}

/// Random ordered subset of the acceptable schools that places the student where the
/// true preference would; falls back to listing the assignment alone.
fn stable_report<R: Rng>(rng: &mut R, acceptable: &[usize], b: &[usize], assigned: usize, k: usize) -> Vec<usize> {
    for _ in 0..20 {
        let len = rng.random_range(0..=k.min(acceptable.len()));
        let mut idx: Vec<usize> = (0..acceptable.len()).collect();
        idx.shuffle(rng);
        let mut pick: Vec<usize> = idx[..len].to_vec();
        pick.sort_unstable();
        let report: Vec<usize> = pick.into_iter().map(|i| acceptable[i]).collect();
        if best(&reported_order(&report), b) == Some(assigned) {
            return report;
        }
    }
    if assigned == 0 {
        Vec::new()
    } else {
        vec![assigned]
    }
}

impl SchoolData {
    pub fn n_schools(&self) -> usize {
        self.cutoffs.len()
    }

    /// Observables as a table: `y`, `s1..sJ`, `p1..pK` with `0` padding.
    pub fn to_table(&self) -> Result<Table, SchoolError> {
        let nj = self.n_schools();
        let k = self.reports.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut names = vec!["y".to_string()];
        names.extend((1..=nj).map(|i| format!("s{i}")));
        names.extend((1..=k).map(|i| format!("p{i}")));
        let mut cols = vec![self.y.clone()];
        for i in 0..nj {
            cols.push(self.scores.iter().map(|s| s[i]).collect());
        }
        for i in 0..k {
            cols.push(self.reports.iter().map(|r| r.get(i).map_or(0.0, |&o| o as f64)).collect());
        }
        Ok(Table::new(names, cols)?)
    }

    pub fn from_table(t: &Table, cutoffs: Vec<f64>) -> Result<Self, SchoolError> {
        let nj = cutoffs.len();
        let y = t.column("y")?.to_vec();
        let n = y.len();
        let mut scores = vec![Vec::with_capacity(nj); n];
        for i in 1..=nj {
            for (row, v) in scores.iter_mut().zip(t.column(&format!("s{i}"))?) {
                row.push(*v);
            }
        }
        let mut reports = vec![Vec::new(); n];
        let mut i = 1;
        while t.has_column(&format!("p{i}")) {
            for (row, v) in reports.iter_mut().zip(t.column(&format!("p{i}"))?) {
                if *v != 0.0 {
                    row.push(v.round() as usize);
                }
            }
            i += 1;
        }
        Ok(Self {
            cutoffs,
            scores,
            reports,
            y,
            truth: Vec::new(),
        })
    }
}

/// Intercept at zero of a least-squares line and its standard error.
fn local_linear(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 3 {
        let m = ys.iter().sum::<f64>() / n;
        return (m, f64::NAN);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        let var = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / (n - 1.0);
        return (my, (var / n).sqrt());
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let a = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - slope * x).powi(2)).sum();
    let s2 = rss / (n - 2.0);
    (a, (s2 * (1.0 / n + mx * mx / sxx)).sqrt())
}

/// One side of the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Side {
    pub n: usize,
    /// Outcome limit at the cutoff.
    pub mean: f64,
    pub se: f64,
    /// Share of observations whose local-preference set is not a singleton.
    pub ambiguous: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchoolBounds {
    pub j: usize,
    pub k: usize,
    pub bandwidth: f64,
    pub spread: f64,
    pub above: Side,
    pub below: Side,
    pub lower: f64,
    pub upper: f64,
    /// Plain discontinuity contrast, valid under truthful reporting.
    pub rdd: f64,
}

/// Bounds on the effect of school `j` relative to `k` at `j`'s cutoff.
///
/// Uses students whose reported local preference is `(j, k)` within `bandwidth` of the
/// cutoff. Above it they attend `j`, below it `k`. Where the local-preference set has
/// other members the outcome carries an unknown shift in `[-spread, spread]`.
pub fn school_bounds(data: &SchoolData, j: usize, k: usize, bandwidth: f64, spread: f64) -> Result<SchoolBounds, SchoolError> {
    if !(bandwidth > 0.0) || !(spread >= 0.0) {
        return Err(SchoolError::Input("bandwidth must be positive and spread nonnegative".into()));
    }
    let nj = data.n_schools();
    if j == 0 || j > nj || k > nj || j == k {
        return Err(SchoolError::Input(format!("need distinct options j in 1..={nj} and k in 0..={nj}")));
    }
    let c = data.cutoffs[j - 1];
    let mut sides: [(Vec<f64>, Vec<f64>, usize); 2] = Default::default();
    for i in 0..data.y.len() {
        let dist = data.scores[i][j - 1] - c;
        if dist.abs() > bandwidth {
            continue;
        }
        let b = feasible(&data.scores[i], &data.cutoffs)?;
        if local_preference(&reported_order(&data.reports[i]), &b, j) != (j, k) {
            continue;
        }
        let set = cf_local_pref(&data.scores[i], &data.reports[i], &data.cutoffs, j)?;
        let side = &mut sides[usize::from(dist < 0.0)];
        side.0.push(dist);
        side.1.push(data.y[i]);
        side.2 += usize::from(set.elements().len() > 1);
    }
    let summarize = |s: &(Vec<f64>, Vec<f64>, usize), side: &'static str| -> Result<Side, SchoolError> {
        if s.0.is_empty() {
            return Err(SchoolError::Empty { j, k, side, bandwidth });
        }
        let (mean, se) = local_linear(&s.0, &s.1);
        Ok(Side {
            n: s.0.len(),
            mean,
            se,
            ambiguous: s.2 as f64 / s.0.len() as f64,
        })
    };
    let above = summarize(&sides[0], "upper")?;
    let below = summarize(&sides[1], "lower")?;
    let (h_up, h_dn) = (spread * above.ambiguous, spread * below.ambiguous);
    Ok(SchoolBounds {
        j,
        k,
        bandwidth,
        spread,
        above,
        below,
        lower: above.mean - h_up - below.mean - h_dn,
        upper: above.mean + h_up - below.mean + h_dn,
        rdd: above.mean - below.mean,
    })
}
