//! Empirical cells, sharp restrictions per θ, identified regions and functional bounds.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::containment::{event_class, ContainmentError, Event, Functional, McSettings};
use crate::data::{DataError, Table};
use crate::model::{self, Cell, ModelError, ModelKind, ModelSpec, PiTable, ThetaPoint};
use crate::num::{gauss_hermite_normal, gauss_legendre, linspace, phi, phi_inv};

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Containment(#[from] ContainmentError),
    #[error("schema: {0}")]
    Schema(String),
    #[error("outcome {value} in row {row} is outside the declared support")]
    OutsideSupport { row: usize, value: f64 },
    #[error("no cells at d = {d:?}, x = {x:?}")]
    NoCells { d: Vec<f64>, x: Vec<f64> },
    #[error("no cell retained after dropping cells below the minimum count")]
    NoData,
    #[error("grid: {0}")]
    Grid(String),
    #[error("model refuted at the given slack: the identified region is empty")]
    Refuted,
    #[error("functional {0} is not available for this model kind")]
    Functional(String),
}

/// Column roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub y: String,
    pub d: Vec<String>,
    #[serde(default)]
    pub x: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
}

impl Schema {
    pub fn check(&self, t: &Table) -> Result<(), IdentifyError> {
        for c in std::iter::once(&self.y).chain(&self.d).chain(&self.x).chain(&self.z) {
            t.column(c)?;
        }
        if self.d.is_empty() {
            return Err(IdentifyError::Schema("at least one treatment column is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMethod {
    Quantile,
    EqualWidth,
}

/// Discretization of one continuous conditioning column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub column: String,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_method")]
    pub method: BinMethod,
    /// Range for equal-width bins; defaults to the sample range.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
}

fn default_bins() -> usize {
    4
}

fn default_method() -> BinMethod {
    BinMethod::Quantile
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Binning {
    #[serde(default)]
    pub columns: Vec<BinSpec>,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_min_count() -> usize {
    1
}

impl Default for Binning {
    fn default() -> Self {
        Self {
            columns: Vec::new(),
            min_count: default_min_count(),
        }
    }
}

/// Interior cut points; a value maps to the number of cuts at or below it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cuts {
    pub column: String,
    pub cuts: Vec<f64>,
}

impl Cuts {
    pub fn resolve(spec: &BinSpec, values: &[f64]) -> Result<Self, IdentifyError> {
        if spec.bins == 0 {
            return Err(IdentifyError::Schema(format!("column {}: zero bins", spec.column)));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let cuts = match spec.method {
            BinMethod::EqualWidth => {
                let (lo, hi) = spec.range.unwrap_or((sorted[0], sorted[sorted.len() - 1]));
                let pts = linspace(lo, hi, spec.bins + 1);
                pts[1..spec.bins].to_vec()
            }
            BinMethod::Quantile => {
                let n = sorted.len();
                let mut c: Vec<f64> = (1..spec.bins)
                    .map(|k| sorted[((k * n) / spec.bins).min(n - 1)])
                    .collect();
                c.dedup();
                c
            }
        };
        Ok(Self {
            column: spec.column.clone(),
            cuts,
        })
    }

    pub fn bin(&self, v: f64) -> f64 {
        self.cuts.iter().filter(|&&c| c <= v).count() as f64
    }
}

/// Assignment of rows to conditioning cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMap {
    pub cells: Vec<Cell>,
    pub row_cell: Vec<usize>,
    pub cuts: Vec<Cuts>,
}

fn key_bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| (*x + 0.0).to_bits()).collect()
}

impl CellMap {
    /// Build cells from the full table; binned columns take their bin index as value.
    pub fn build(t: &Table, schema: &Schema, binning: &Binning) -> Result<Self, IdentifyError> {
        schema.check(t)?;
        if t.n_rows() == 0 {
            return Err(DataError::Empty.into());
        }
        let mut cuts = Vec::new();
        for b in &binning.columns {
            if !schema.x.contains(&b.column) && !schema.z.contains(&b.column) {
                return Err(IdentifyError::Schema(format!(
                    "binned column {} is not an instrument or covariate",
                    b.column
                )));
            }
            cuts.push(Cuts::resolve(b, t.column(&b.column)?)?);
        }
        let fetch = |names: &[String]| -> Result<Vec<&[f64]>, IdentifyError> {
            names.iter().map(|n| t.column(n).map_err(Into::into)).collect()
        };
        let (dc, xc, zc) = (fetch(&schema.d)?, fetch(&schema.x)?, fetch(&schema.z)?);
        let value = |name: &str, col: &[f64], i: usize| match cuts.iter().find(|c| c.column == name) {
            Some(c) => c.bin(col[i]),
            None => col[i],
        };
        let mut raw: Vec<Cell> = Vec::new();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut row_raw = Vec::with_capacity(t.n_rows());
        for i in 0..t.n_rows() {
            let cell = Cell::new(
                dc.iter().map(|c| c[i]).collect(),
                schema.x.iter().zip(&xc).map(|(n, c)| value(n, c, i)).collect(),
                schema.z.iter().zip(&zc).map(|(n, c)| value(n, c, i)).collect(),
            );
            let mut k = key_bits(&cell.d);
            k.push(u64::MAX);
            k.extend(key_bits(&cell.x));
            k.push(u64::MAX);
            k.extend(key_bits(&cell.z));
            let id = *index.entry(k).or_insert_with(|| {
                raw.push(cell);
                raw.len() - 1
            });
            row_raw.push(id);
        }
        // deterministic cell order: lexicographic in (d, x, z)
        let mut order: Vec<usize> = (0..raw.len()).collect();
        let flat = |c: &Cell| [c.d.clone(), c.x.clone(), c.z.clone()].concat();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (flat(&raw[a]), flat(&raw[b]));
            fa.iter()
                .zip(&fb)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut rank = vec![0; raw.len()];
        for (r, &o) in order.iter().enumerate() {
            rank[o] = r;
        }
        Ok(Self {
            cells: order.iter().map(|&o| raw[o].clone()).collect(),
            row_cell: row_raw.iter().map(|&r| rank[r]).collect(),
            cuts,
        })
    }
}

/// Empirical conditional law (discrete) or mean (continuous) of Y in one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStat {
    pub id: usize,
    pub cell: Cell,
    pub count: usize,
    /// Outcome counts over the support, for discrete outcomes.
    pub counts: Option<Vec<usize>>,
    pub mean: f64,
    pub var: f64,
}

impl CellStat {
    pub fn prob(&self, mask: u32) -> f64 {
        let c = self.counts.as_ref().expect("discrete cell");
        let hit: usize = c.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, n)| n).sum();
        hit as f64 / self.count as f64
    }

    pub fn dist(&self) -> Option<Vec<f64>> {
        self.counts
            .as_ref()
            .map(|c| c.iter().map(|&k| k as f64 / self.count as f64).collect())
    }

    /// Largest binomial standard error over events (discrete) or the mean's standard error.
    pub fn se(&self) -> f64 {
        let n = self.count as f64;
        match &self.counts {
            Some(c) => {
                let full = (1u32 << c.len()) - 1;
                (1..full)
                    .map(|m| {
                        let p = self.prob(m);
                        (p * (1.0 - p) / n).sqrt()
                    })
                    .fold(0.0, f64::max)
            }
            None => (self.var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    pub support: Option<Vec<f64>>,
    pub cells: Vec<CellStat>,
    pub warnings: Vec<String>,
}

fn support_index(support: &[f64], y: f64) -> Option<usize> {
    support.iter().position(|s| (s - y).abs() <= 1e-9 * s.abs().max(1.0))
}

impl CellStats {
    /// Statistics over `rows` of `t` with cells from `map`.
    pub fn from_rows(
        map: &CellMap,
        t: &Table,
        schema: &Schema,
        support: Option<&[f64]>,
        rows: &[usize],
        min_count: usize,
    ) -> Result<Self, IdentifyError> {
        let y = t.column(&schema.y)?;
        let nc = map.cells.len();
        let mut count = vec![0usize; nc];
        let mut counts = support.map(|s| vec![vec![0usize; s.len()]; nc]);
        // Welford running moments
        let mut mean = vec![0.0; nc];
        let mut m2 = vec![0.0; nc];
        for &i in rows {
            let c = map.row_cell[i];
            count[c] += 1;
            if let (Some(s), Some(cs)) = (support, counts.as_mut()) {
                let k = support_index(s, y[i]).ok_or(IdentifyError::OutsideSupport { row: i + 1, value: y[i] })?;
                cs[c][k] += 1;
            }
            let delta = y[i] - mean[c];
            mean[c] += delta / count[c] as f64;
            m2[c] += delta * (y[i] - mean[c]);
        }
        let mut cells = Vec::new();
        let mut warnings = Vec::new();
        for c in 0..nc {
            if count[c] == 0 {
                continue;
            }
            if count[c] < min_count.max(1) {
                warnings.push(format!(
                    "dropped cell {} with {} rows (minimum {})",
                    map.cells[c].label(),
                    count[c],
                    min_count
                ));
                continue;
            }
            cells.push(CellStat {
                id: c,
                cell: map.cells[c].clone(),
                count: count[c],
                counts: counts.as_ref().map(|cs| cs[c].clone()),
                mean: mean[c],
                var: if count[c] > 1 { m2[c] / (count[c] - 1) as f64 } else { 0.0 },
            });
        }
        if cells.is_empty() {
            return Err(IdentifyError::NoData);
        }
        Ok(Self {
            support: support.map(<[f64]>::to_vec),
            cells,
            warnings,
        })
    }

    pub fn max_se(&self) -> f64 {
        self.cells.iter().map(CellStat::se).fold(0.0, f64::max)
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.count).sum()
    }

    /// Empirical distribution of covariate profiles, weighted by cell counts.
    pub fn x_distribution(&self) -> Vec<(Vec<f64>, f64)> {
        let mut acc: Vec<(Vec<f64>, f64)> = Vec::new();
        let n = self.total() as f64;
        for c in &self.cells {
            match acc.iter_mut().find(|(x, _)| *x == c.cell.x) {
                Some((_, w)) => *w += c.count as f64 / n,
                None => acc.push((c.cell.x.clone(), c.count as f64 / n)),
            }
        }
        acc
    }
}

/// Cell statistics of a full table.
pub fn estimate_cells(
    t: &Table,
    schema: &Schema,
    binning: &Binning,
    support: Option<&[f64]>,
) -> Result<(CellMap, CellStats), IdentifyError> {
    let map = CellMap::build(t, schema, binning)?;
    let rows: Vec<usize> = (0..t.n_rows()).collect();
    let stats = CellStats::from_rows(&map, t, schema, support, &rows, binning.min_count)?;
    Ok((map, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityEntry {
    pub key: Vec<i64>,
    pub pi_hat: f64,
    pub count: usize,
    /// No treatment variation in the cell: reported, not used as a restriction.
    pub no_variation: bool,
}

/// Point-identified selection indices.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct PropensityTable {
    pub entries: Vec<PropensityEntry>,
}

impl PropensityTable {
    pub fn feasible(&self, theta: &ThetaPoint, slack: f64) -> bool {
        self.entries
            .iter()
            .filter(|e| !e.no_variation)
            .all(|e| theta.pi.get(&e.key).is_some_and(|p| (p - e.pi_hat).abs() <= slack))
    }

    /// Table of the estimated indices.
    pub fn pi_table(&self) -> PiTable {
        self.entries.iter().map(|e| (e.key.clone(), e.pi_hat)).collect()
    }

    pub fn get(&self, key: &[i64]) -> Option<&PropensityEntry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

/// Estimated selection indices for kinds where they are point identified.
pub fn pi_restricted(spec: &ModelSpec, cells: &CellStats) -> Result<PropensityTable, IdentifyError> {
    let mut acc: Vec<(Vec<i64>, usize, usize)> = Vec::new();
    let mut add = |key: Vec<i64>, treated: bool, n: usize| match acc.iter_mut().find(|(k, _, _)| *k == key) {
        Some(e) => {
            e.1 += n;
            if treated {
                e.2 += n;
            }
        }
        None => acc.push((key, n, if treated { n } else { 0 })),
    };
    let binary = |v: f64| -> Result<bool, IdentifyError> {
        match v {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            v => Err(IdentifyError::Schema(format!("selection needs a binary treatment, got {v}"))),
        }
    };
    let censored = spec.kind == ModelKind::CensoredSel;
    if spec.observed_control {
        return Ok(PropensityTable::default());
    }
    for c in &cells.cells {
        let cell = &c.cell;
        if spec.single_selection() {
            add(cell.zx_key(), binary(cell.d[0])?, c.count);
        } else if spec.kind == ModelKind::DynamicTwoPeriod {
            let mut k = vec![1, cell.z[0].round() as i64];
            k.extend(cell.x_key());
            add(k, binary(cell.d[1])?, c.count);
        } else if censored {
            add(cell.zx_key(), cell.d[0] > 0.0, c.count);
        }
    }
    acc.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(PropensityTable {
        entries: acc
            .into_iter()
            .map(|(key, n, t)| {
                let p = t as f64 / n as f64;
                PropensityEntry {
                    key,
                    pi_hat: if censored { phi_inv(p) } else { p },
                    count: n,
                    no_variation: t == 0 || t == n,
                }
            })
            .collect(),
    })
}

/// Outcome of testing one θ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub pass: bool,
    pub max_violation: f64,
    pub pi_feasible: bool,
    /// Cell label and event (or bound side) of the largest violation.
    pub worst: Option<(String, String)>,
}

impl Check {
    fn infeasible(reason: String) -> Self {
        Self {
            pass: false,
            max_violation: f64::INFINITY,
            pi_feasible: false,
            worst: Some((String::new(), reason)),
        }
    }
}

fn split_infeasible<T>(r: Result<T, ModelError>) -> Result<Result<T, String>, IdentifyError> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(ModelError::Infeasible(m)) => Ok(Err(m)),
        Err(e) => Err(e.into()),
    }
}

/// Artstein inequalities `ℂ(A|cell;θ) ≤ P̂(A|cell)` over cells and events.
#[allow(clippy::too_many_arguments)]
pub fn artstein_check(
    spec: &ModelSpec,
    theta: &ThetaPoint,
    cells: &CellStats,
    events: &[Event],
    slack: f64,
    propensity: Option<&PropensityTable>,
    pi_slack: f64,
    mc: &McSettings,
) -> Result<Check, IdentifyError> {
    if let Err(e) = theta.validate(spec) {
        return match e {
            ModelError::Infeasible(m) => Ok(Check::infeasible(m)),
            e => Err(e.into()),
        };
    }
    let support = cells
        .support
        .as_ref()
        .ok_or_else(|| IdentifyError::Schema("Artstein check needs a discrete outcome".into()))?;
    let mut worst = f64::NEG_INFINITY;
    let mut at = None;
    for c in &cells.cells {
        let f = match Functional::new(spec, &c.cell, theta, mc) {
            Ok(f) => f,
            Err(ContainmentError::Model(e)) => match split_infeasible::<()>(Err(e))? {
                Err(m) => return Ok(Check::infeasible(m)),
                Ok(()) => unreachable!(),
            },
            Err(e) => return Err(e.into()),
        };
        for &a in events {
            let v = f.containment(a) - c.prob(a.mask);
            if v > worst {
                worst = v;
                at = Some((c.cell.label(), a.label(support)));
            }
        }
    }
    let pi_feasible = propensity.is_none_or(|p| p.feasible(theta, pi_slack));
    Ok(Check {
        pass: worst <= slack && pi_feasible,
        max_violation: worst,
        pi_feasible,
        worst: at,
    })
}

/// `[λ_L, λ_U]` over the control set of a cell.
pub fn lambda_range(spec: &ModelSpec, theta: &ThetaPoint, cell: &Cell) -> Result<(f64, f64), ModelError> {
    let cf = model::control_set(spec, cell, theta)?;
    let (lambda, opts) = model::lambda_fn(spec, theta, &cell.d)?;
    let iv = model::predict_additive_mean_with((0.0, 0.0), &cf, lambda.as_ref(), &opts)?;
    Ok((iv.lo(), iv.hi()))
}

/// Aumann mean bounds `μ + λ_L ≤ Ȳ ≤ μ + λ_U` over cells.
pub fn aumann_check(
    spec: &ModelSpec,
    theta: &ThetaPoint,
    cells: &CellStats,
    slack: f64,
    propensity: Option<&PropensityTable>,
    pi_slack: f64,
) -> Result<Check, IdentifyError> {
    if let Err(e) = theta.validate(spec) {
        return match e {
            ModelError::Infeasible(m) => Ok(Check::infeasible(m)),
            e => Err(e.into()),
        };
    }
    let mut worst = f64::NEG_INFINITY;
    let mut at = None;
    for c in &cells.cells {
        let r = model::predict_additive_mean(spec, &c.cell.d, &c.cell.x, &model::control_set(spec, &c.cell, theta)?, theta);
        let iv = match split_infeasible(r)? {
            Ok(iv) => iv,
            Err(m) => return Ok(Check::infeasible(m)),
        };
        for (v, side) in [(iv.lo() - c.mean, "lower"), (c.mean - iv.hi(), "upper")] {
            if v > worst {
                worst = v;
                at = Some((c.cell.label(), side.to_string()));
            }
        }
    }
    let pi_feasible = propensity.is_none_or(|p| p.feasible(theta, pi_slack));
    Ok(Check {
        pass: worst <= slack && pi_feasible,
        max_violation: worst,
        pi_feasible,
        worst: at,
    })
}

/// Intersection bounds on `μ(d, x)` across instrument cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuBounds {
    pub lo: f64,
    pub hi: f64,
    pub n_cells: usize,
}

impl MuBounds {
    /// Empty bounds refute the maintained `(F, π)`.
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `[sup_z (Ȳ − c·se − λ_U), inf_z (Ȳ + c·se − λ_L)]` over cells at `(d, x)`.
pub fn intersection_bounds_mu(
    spec: &ModelSpec,
    d: &[f64],
    x: &[f64],
    theta: &ThetaPoint,
    cells: &CellStats,
    c_se: f64,
) -> Result<MuBounds, IdentifyError> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut n = 0;
    for c in cells.cells.iter().filter(|c| c.cell.d == d && c.cell.x == x) {
        let (ll, lu) = lambda_range(spec, theta, &c.cell)?;
        let pad = c_se * c.se();
        lo = lo.max(c.mean - pad - lu);
        hi = hi.min(c.mean + pad - ll);
        n += 1;
    }
    if n == 0 {
        return Err(IdentifyError::NoCells {
            d: d.to_vec(),
            x: x.to_vec(),
        });
    }
    Ok(MuBounds { lo, hi, n_cells: n })
}

/// Shape restrictions on θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Constraints {
    /// Monotone treatment selection: `ρ ≤ 0`.
    pub mts: bool,
    /// Monotone treatment response: `μ1 ≥ 0`.
    pub mtr: bool,
}

impl Constraints {
    pub fn admits(&self, theta: &ThetaPoint) -> bool {
        (!self.mts || theta.rho_at(0) <= 0.0) && (!self.mtr || theta.mu_at(1) >= 0.0)
    }
}

impl FromStr for Constraints {
    type Err = IdentifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut c = Constraints::default();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.to_ascii_lowercase().as_str() {
                "mts" => c.mts = true,
                "mtr" => c.mtr = true,
                "none" => {}
                other => return Err(IdentifyError::Schema(format!("unknown constraint {other:?}"))),
            }
        }
        Ok(c)
    }
}

impl fmt::Display for Constraints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.mts, self.mtr) {
            (false, false) => write!(f, "none"),
            (true, false) => write!(f, "mts"),
            (false, true) => write!(f, "mtr"),
            (true, true) => write!(f, "mts,mtr"),
        }
    }
}

/// Declared parameter grid; the product is expanded with the last coordinate fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub mu: Vec<Vec<f64>>,
    #[serde(default)]
    pub rho: Vec<Vec<f64>>,
    #[serde(default)]
    pub cutoffs: Vec<(f64, f64)>,
    /// Grids for individual selection indices; unlisted keys come from the plug-in table.
    #[serde(default)]
    pub pi: Vec<(Vec<i64>, Vec<f64>)>,
}

/// 41 points on `[-0.975, 0.975]`.
pub fn default_rho_grid() -> Vec<f64> {
    linspace(-0.975, 0.975, 41)
}

/// 21 points on `[-3 sd, 3 sd]`.
pub fn default_mu_grid(sd: f64) -> Vec<f64> {
    linspace(-3.0 * sd, 3.0 * sd, 21)
}

impl GridSpec {
    pub fn size(&self) -> usize {
        let mut n: usize = self.mu.iter().chain(&self.rho).map(Vec::len).product();
        if !self.cutoffs.is_empty() {
            n *= self.cutoffs.len();
        }
        n * self.pi.iter().map(|(_, v)| v.len()).product::<usize>()
    }

    pub fn expand(&self, plug_in: &PiTable) -> Result<Vec<ThetaPoint>, IdentifyError> {
        if self.mu.iter().chain(&self.rho).any(Vec::is_empty) || self.pi.iter().any(|(_, v)| v.is_empty()) {
            return Err(IdentifyError::Grid("every declared parameter needs at least one value".into()));
        }
        if self.cutoffs.iter().any(|(a, b)| !(a < b)) {
            return Err(IdentifyError::Grid("cutoff pairs must be increasing".into()));
        }
        let mut axes: Vec<Vec<f64>> = self.mu.clone();
        axes.extend(self.rho.iter().cloned());
        let n_cut = self.cutoffs.len();
        if n_cut > 0 {
            axes.push((0..n_cut).map(|i| i as f64).collect());
        }
        axes.extend(self.pi.iter().map(|(_, v)| v.clone()));
        let (nm, nr) = (self.mu.len(), self.rho.len());
        let mut out = Vec::with_capacity(self.size());
        let mut idx = vec![0usize; axes.len()];
        loop {
            let vals: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
            let mut pi = plug_in.clone();
            let off = nm + nr + usize::from(n_cut > 0);
            for (k, (key, _)) in self.pi.iter().enumerate() {
                pi.insert(key.clone(), vals[off + k]);
            }
            out.push(ThetaPoint {
                mu: vals[..nm].to_vec(),
                rho: vals[nm..nm + nr].to_vec(),
                pi,
                cutoffs: (n_cut > 0).then(|| self.cutoffs[vals[nm + nr] as usize]),
            });
            // odometer increment
            let mut k = axes.len();
            loop {
                if k == 0 {
                    return Ok(out);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FullIndependence,
    MeanIndependence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionSettings {
    /// Defaults to full independence for discrete outcomes and mean independence otherwise.
    pub method: Option<Method>,
    pub slack: f64,
    pub pi_slack: f64,
    pub constraints: Constraints,
    /// Events to test; defaults to the pruned class.
    pub events: Option<Vec<Event>>,
    pub mc: McSettings,
}

impl RegionSettings {
    pub fn new(slack: f64) -> Self {
        Self {
            method: None,
            slack,
            pi_slack: slack,
            constraints: Constraints::default(),
            events: None,
            mc: McSettings::default(),
        }
    }
}

/// Default slack: `c` times the largest cell standard error.
pub fn default_slack(cells: &CellStats, c: f64) -> f64 {
    c * cells.max_se()
}

/// Accepted subset of a θ grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiedRegion {
    pub grid: Vec<ThetaPoint>,
    pub accepted: Vec<bool>,
    /// `+∞` for points removed by constraints or infeasible.
    pub max_violation: Vec<f64>,
    pub admissible: Vec<bool>,
    pub slack: f64,
    pub constraints: Constraints,
}

impl IdentifiedRegion {
    pub fn accepted_points(&self) -> impl Iterator<Item = &ThetaPoint> {
        self.grid.iter().zip(&self.accepted).filter(|(_, a)| **a).map(|(t, _)| t)
    }

    pub fn accepted_indices(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| self.accepted[i]).collect()
    }

    pub fn n_accepted(&self) -> usize {
        self.accepted.iter().filter(|a| **a).count()
    }

    pub fn is_refuted(&self) -> bool {
        self.n_accepted() == 0
    }
}

pub fn identified_region(
    spec: &ModelSpec,
    grid: &[ThetaPoint],
    cells: &CellStats,
    propensity: Option<&PropensityTable>,
    settings: &RegionSettings,
) -> Result<IdentifiedRegion, IdentifyError> {
    if grid.is_empty() {
        return Err(IdentifyError::Grid("empty grid".into()));
    }
    if !(settings.slack >= 0.0) || !(settings.pi_slack >= 0.0) {
        return Err(IdentifyError::Grid("slack must be nonnegative".into()));
    }
    let method = settings.method.unwrap_or(if spec.is_discrete() {
        Method::FullIndependence
    } else {
        Method::MeanIndependence
    });
    let events = match (&settings.events, &cells.support) {
        (Some(e), _) => e.clone(),
        (None, Some(s)) => event_class(spec.kind, s.len(), true)?,
        (None, None) => Vec::new(),
    };
    let results: Result<Vec<(bool, f64, bool)>, IdentifyError> = grid
        .par_iter()
        .map(|theta| {
            if !settings.constraints.admits(theta) {
                return Ok((false, f64::INFINITY, false));
            }
            let chk = match method {
                Method::FullIndependence => artstein_check(
                    spec,
                    theta,
                    cells,
                    &events,
                    settings.slack,
                    propensity,
                    settings.pi_slack,
                    &settings.mc,
                )?,
                Method::MeanIndependence => {
                    aumann_check(spec, theta, cells, settings.slack, propensity, settings.pi_slack)?
                }
            };
            let v = if chk.pi_feasible { chk.max_violation } else { f64::INFINITY };
            Ok((chk.pass, v, true))
        })
        .collect();
    let results = results?;
    Ok(IdentifiedRegion {
        grid: grid.to_vec(),
        accepted: results.iter().map(|r| r.0).collect(),
        max_violation: results.iter().map(|r| r.1).collect(),
        admissible: results.iter().map(|r| r.2).collect(),
        slack: settings.slack,
        constraints: settings.constraints,
    })
}

/// Causal functionals with bounds over the identified region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kappa {
    /// Average structural function; `x0` fixes the first covariate.
    Asf { d: f64, #[serde(default)] x0: Option<f64> },
    /// `ASF(1) − ASF(0)`.
    Ate { #[serde(default)] x0: Option<f64> },
    /// `P(Y(d) ≤ y)`.
    Dsf { y: f64, d: f64 },
    /// `τ`-quantile of `Y(d)`.
    Qsf { tau: f64, d: f64 },
    /// Mean outcome when the instrument is set to `z` for everyone.
    Prsf { z: Vec<f64> },
    /// Share moving off the lowest outcome when treatment switches on.
    Switch { #[serde(default)] x0: Option<f64> },
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let x0 = |x: &Option<f64>| x.map(|v| format!(",x0={v}")).unwrap_or_default();
        match self {
            Kappa::Asf { d, x0: x } => write!(f, "ASF(d={d}{})", x0(x)),
            Kappa::Ate { x0: None } => write!(f, "ATE"),
            Kappa::Ate { x0: x } => write!(f, "ATE({})", x0(x).trim_start_matches(',')),
            Kappa::Dsf { y, d } => write!(f, "DSF(y={y},d={d})"),
            Kappa::Qsf { tau, d } => write!(f, "QSF(tau={tau},d={d})"),
            Kappa::Prsf { z } => write!(f, "PRSF(z={z:?})"),
            Kappa::Switch { x0: None } => write!(f, "SWITCH"),
            Kappa::Switch { x0: x } => write!(f, "SWITCH({})", x0(x).trim_start_matches(',')),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalBounds {
    pub functional: String,
    pub lower: f64,
    pub upper: f64,
    pub n_points: usize,
}

const QUAD_NODES: usize = 64;

/// Outcome law given the latent location value `g`: probabilities over the support
/// (discrete kinds) or the conditional mean (additive kinds, one entry).
fn law_given_g(spec: &ModelSpec, theta: &ThetaPoint, d: f64, x: &[f64], g: f64, sigma: f64) -> Result<Vec<f64>, IdentifyError> {
    let m = model::mu_roy(theta, d, x);
    match (spec.kind, spec.is_discrete()) {
        (ModelKind::BinaryRoy | ModelKind::RandomCoefSel, true) => {
            let p1 = phi((m - g) / sigma);
            Ok(vec![1.0 - p1, p1])
        }
        (ModelKind::OrderedChoice, _) => {
            let (cl, cu) = theta
                .cutoffs
                .ok_or_else(|| ModelError::Infeasible("ordered model needs cutoffs".into()))?;
            let p0 = phi((cl - m - g) / sigma);
            let p6 = 1.0 - phi((cu - m - g) / sigma);
            Ok(vec![p0, 1.0 - p0 - p6, p6])
        }
        (ModelKind::BinaryRoy | ModelKind::RandomCoefSel, false) => Ok(vec![m + g]),
        _ => Err(IdentifyError::Functional(format!("{:?}", spec.kind))),
    }
}

/// Loading of the outcome error on the normal score of the control.
fn location_scale(spec: &ModelSpec, theta: &ThetaPoint, d: f64) -> Result<(f64, f64), IdentifyError> {
    if spec.is_discrete() {
        let loc = model::location(spec, theta)?;
        let s = loc.w.iter().map(|w| w * w).sum::<f64>().sqrt();
        Ok((s, loc.sigma))
    } else {
        let r = if theta.rho.len() > 1 {
            theta.rho_at(d.round() as usize)
        } else {
            theta.rho_at(0)
        };
        Ok((r, 1.0))
    }
}

fn x_profiles(xdist: &[(Vec<f64>, f64)], x0: Option<f64>) -> Result<Vec<(Vec<f64>, f64)>, IdentifyError> {
    let base = if xdist.is_empty() {
        vec![(Vec::new(), 1.0)]
    } else {
        xdist.to_vec()
    };
    match x0 {
        None => Ok(base),
        Some(v) => base
            .into_iter()
            .map(|(mut x, w)| {
                if x.is_empty() {
                    return Err(IdentifyError::Functional("x0 given but the model has no covariates".into()));
                }
                x[0] = v;
                Ok((x, w))
            })
            .collect(),
    }
}

/// `E[law(Y(d)) | x]` averaged over the covariate profiles by Gauss–Hermite quadrature.
fn average_law(
    spec: &ModelSpec,
    theta: &ThetaPoint,
    d: f64,
    xdist: &[(Vec<f64>, f64)],
    x0: Option<f64>,
) -> Result<Vec<f64>, IdentifyError> {
    let rule = gauss_hermite_normal(QUAD_NODES);
    let (s, sigma) = location_scale(spec, theta, d)?;
    let mut acc: Vec<f64> = Vec::new();
    for (x, wx) in x_profiles(xdist, x0)? {
        for (t, wt) in rule.nodes.iter().zip(&rule.weights) {
            let law = law_given_g(spec, theta, d, &x, s * t, sigma)?;
            if acc.is_empty() {
                acc = vec![0.0; law.len()];
            }
            for (a, l) in acc.iter_mut().zip(&law) {
                *a += wx * wt * l;
            }
        }
    }
    Ok(acc)
}

fn mean_of(spec: &ModelSpec, law: &[f64]) -> f64 {
    match &spec.support {
        Some(s) => s.iter().zip(law).map(|(y, p)| y * p).sum(),
        None => law[0],
    }
}

/// Value of a functional at one θ.
pub fn functional_value(
    spec: &ModelSpec,
    theta: &ThetaPoint,
    kappa: &Kappa,
    xdist: &[(Vec<f64>, f64)],
) -> Result<f64, IdentifyError> {
    let discrete = || -> Result<&Vec<f64>, IdentifyError> {
        spec.support
            .as_ref()
            .ok_or_else(|| IdentifyError::Functional(format!("{kappa} needs a discrete outcome")))
    };
    match kappa {
        Kappa::Asf { d, x0 } => Ok(mean_of(spec, &average_law(spec, theta, *d, xdist, *x0)?)),
        Kappa::Ate { x0 } => {
            let a1 = mean_of(spec, &average_law(spec, theta, 1.0, xdist, *x0)?);
            let a0 = mean_of(spec, &average_law(spec, theta, 0.0, xdist, *x0)?);
            Ok(a1 - a0)
        }
        Kappa::Dsf { y, d } => {
            let s = discrete()?;
            let law = average_law(spec, theta, *d, xdist, None)?;
            Ok(s.iter().zip(&law).filter(|(v, _)| **v <= *y).map(|(_, p)| p).sum())
        }
        Kappa::Qsf { tau, d } => {
            if !(*tau > 0.0 && *tau < 1.0) {
                return Err(IdentifyError::Functional("QSF needs tau in (0, 1)".into()));
            }
            let s = discrete()?;
            let law = average_law(spec, theta, *d, xdist, None)?;
            let mut cdf = 0.0;
            for (y, p) in s.iter().zip(&law) {
                cdf += p;
                if cdf >= *tau - 1e-12 {
                    return Ok(*y);
                }
            }
            Ok(s[s.len() - 1])
        }
        Kappa::Prsf { z } => prsf(spec, theta, z, xdist),
        Kappa::Switch { x0 } => {
            discrete()?;
            let rule = gauss_hermite_normal(QUAD_NODES);
            let (s, sigma) = location_scale(spec, theta, 0.0)?;
            let mut acc = 0.0;
            for (x, wx) in x_profiles(xdist, *x0)? {
                for (t, wt) in rule.nodes.iter().zip(&rule.weights) {
                    let p0 = law_given_g(spec, theta, 0.0, &x, s * t, sigma)?[0];
                    let p1 = law_given_g(spec, theta, 1.0, &x, s * t, sigma)?[0];
                    acc += wx * wt * (p0 - p1).max(0.0);
                }
            }
            Ok(acc)
        }
    }
}

/// Policy-relevant mean: treated below `π(z, x)` on the control scale.
fn prsf(spec: &ModelSpec, theta: &ThetaPoint, z: &[f64], xdist: &[(Vec<f64>, f64)]) -> Result<f64, IdentifyError> {
    if !matches!(spec.kind, ModelKind::BinaryRoy | ModelKind::OrderedChoice) {
        return Err(IdentifyError::Functional("PRSF needs a scalar selection control".into()));
    }
    let mut acc = 0.0;
    for (x, wx) in x_profiles(xdist, None)? {
        let mut key: Vec<i64> = z.iter().map(|v| v.round() as i64).collect();
        key.extend(x.iter().map(|v| v.round() as i64));
        let p = theta.pi_at(&key)?.clamp(0.0, 1.0);
        for (d, a, b) in [(1.0, 0.0, p), (0.0, p, 1.0)] {
            if b <= a {
                continue;
            }
            let (s, sigma) = location_scale(spec, theta, d)?;
            let rule = gauss_legendre(QUAD_NODES, a, b);
            for (v, w) in rule.nodes.iter().zip(&rule.weights) {
                let law = law_given_g(spec, theta, d, &x, s * phi_inv(*v), sigma)?;
                acc += wx * w * mean_of(spec, &law);
            }
        }
    }
    Ok(acc)
}

/// Min and max of the functional over the accepted points.
pub fn kappa_bounds(
    spec: &ModelSpec,
    region: &IdentifiedRegion,
    kappa: &Kappa,
    xdist: &[(Vec<f64>, f64)],
) -> Result<FunctionalBounds, IdentifyError> {
    let vals: Result<Vec<f64>, IdentifyError> = region
        .accepted_points()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|t| functional_value(spec, t, kappa, xdist))
        .collect();
    let vals = vals?;
    if vals.is_empty() {
        return Err(IdentifyError::Refuted);
    }
    Ok(FunctionalBounds {
        functional: kappa.to_string(),
        lower: vals.iter().copied().fold(f64::INFINITY, f64::min),
        upper: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        n_points: vals.len(),
    })
}

/// Population probabilities of one two-period cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicCell {
    pub y1: f64,
    pub d1: f64,
    pub d2: f64,
    pub z: [f64; 2],
    pub x: Vec<f64>,
    /// `P(Y2 = 1 | y1, d1, d2, z, x)`.
    pub p_y2: f64,
    /// `P(D2 = 1 | y1, d1, z, x)`.
    pub p_d2: f64,
    /// `P(Y1 = 1 | d1, z1, x)`.
    pub p_y1: f64,
}

/// Largest violation of the three sequential blocks; each block is two-sided.
pub fn dynamic_check(theta: &ThetaPoint, cells: &[DynamicCell]) -> Result<f64, IdentifyError> {
    let mut worst = f64::NEG_INFINITY;
    for c in cells {
        let b = model::dynamic_bounds(c.y1, c.d1, c.d2, &c.z, &c.x, theta)?;
        for ((lo, hi), p) in [(b.y2, c.p_y2), (b.d2, c.p_d2), (b.y1, c.p_y1)] {
            worst = worst.max(lo - p).max(p - hi);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_cells() {
        let t = Table::new(
            vec!["y".into(), "d".into()],
            vec![vec![0.0, 0.0, 3.0, 6.0], vec![1.0; 4]],
        )
        .unwrap();
        let schema = Schema {
            y: "y".into(),
            d: vec!["d".into()],
            x: vec![],
            z: vec![],
        };
        let (_, st) = estimate_cells(&t, &schema, &Binning::default(), Some(&[0.0, 3.0, 6.0])).unwrap();
        assert_eq!(st.cells.len(), 1);
        assert_eq!(st.cells[0].dist().unwrap(), vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn equal_width_bins() {
        let spec = BinSpec {
            column: "z".into(),
            bins: 2,
            method: BinMethod::EqualWidth,
            range: Some((0.0, 1.0)),
        };
        let c = Cuts::resolve(&spec, &[0.1, 0.9]).unwrap();
        assert_eq!(c.bin(0.49), 0.0);
        assert_eq!(c.bin(0.51), 1.0);
    }

    #[test]
    fn constraints_parse() {
        let c: Constraints = "mts,mtr".parse().unwrap();
        assert!(c.mts && c.mtr);
        assert_eq!(c.to_string(), "mts,mtr");
        assert!("foo".parse::<Constraints>().is_err());
    }

    #[test]
    fn grid_expansion_order() {
        let g = GridSpec {
            mu: vec![vec![0.0, 1.0], vec![5.0]],
            rho: vec![vec![-0.5, 0.5]],
            ..Default::default()
        };
        let pts = g.expand(&PiTable::new()).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1].rho, vec![0.5]);
        assert_eq!(pts[2].mu, vec![1.0, 5.0]);
    }
}
