//! Containment and capacity functionals of the prediction set, plus event enumeration.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{
    self, Cell, ModelError, ModelKind, ModelSpec, OrderedThresholds, ThetaPoint,
};
use crate::num::keyed_rng;

#[derive(Debug, Error)]
pub enum ContainmentError {
    #[error("outcome support of size {0} is too large to enumerate; supply an event class")]
    SupportTooLarge(usize),
    #[error("event {0} is not a nonempty proper subset of the support")]
    BadEvent(u32),
    #[error("model kind {0:?} has no finite outcome support")]
    NotDiscrete(ModelKind),
    #[error("multinomial simulation needs at least 1000 draws, got {0}")]
    TooFewDraws(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Largest support that is enumerated automatically.
pub const MAX_SUPPORT: usize = 8;

/// Subset of the outcome support, stored as a bit mask over support indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Event {
    pub mask: u32,
    pub size: usize,
}

impl Event {
    pub fn new(mask: u32, size: usize) -> Result<Self, ContainmentError> {
        let full = (1u32 << size) - 1;
        if mask == 0 || mask & !full != 0 || mask == full {
            return Err(ContainmentError::BadEvent(mask));
        }
        Ok(Self { mask, size })
    }

    /// Event from support indices.
    pub fn from_indices(idx: &[usize], size: usize) -> Result<Self, ContainmentError> {
        Self::new(idx.iter().fold(0, |m, &i| m | (1 << i)), size)
    }

    pub fn complement(&self) -> Self {
        Self {
            mask: !self.mask & ((1u32 << self.size) - 1),
            size: self.size,
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask >> i & 1 == 1
    }

    pub fn cardinality(&self) -> u32 {
        self.mask.count_ones()
    }

    pub fn is_subset(&self, other: &Event) -> bool {
        self.mask & !other.mask == 0
    }

    /// Label with support values, e.g. `{0,3}`.
    pub fn label(&self, support: &[f64]) -> String {
        let parts: Vec<String> = (0..self.size)
            .filter(|&i| self.contains(i))
            .map(|i| format!("{}", support[i]))
            .collect();
        format!("{{{}}}", parts.join(","))
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = (0..self.size).filter(|&i| self.contains(i)).map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Nonempty proper subsets ordered by (size, mask); with `prune`, events whose
/// containment is a sum over sub-events are dropped for the ordered kind.
pub fn event_class(kind: ModelKind, support_len: usize, prune: bool) -> Result<Vec<Event>, ContainmentError> {
    if support_len > MAX_SUPPORT {
        return Err(ContainmentError::SupportTooLarge(support_len));
    }
    if support_len < 2 {
        return Err(ContainmentError::BadEvent(0));
    }
    let full = (1u32 << support_len) - 1;
    let mut out: Vec<Event> = (1..full)
        .map(|mask| Event { mask, size: support_len })
        .collect();
    out.sort_by_key(|e| (e.cardinality(), e.mask));
    if prune && kind == ModelKind::OrderedChoice && support_len == 3 {
        // {middle} and {low, high}: their Artstein inequalities are implied by the other four
        out.retain(|e| e.mask != 0b010 && e.mask != 0b101);
    }
    Ok(out)
}

/// Monte Carlo settings for simulated functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McSettings {
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            n_draws: 20_000,
            seed: 0,
        }
    }
}

/// Containment functional of one cell under one θ, for every event.
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// Binary threshold crossing: prediction {1} below `t_lo`, {0} above `t_hi`.
    Binary { t_lo: f64, t_hi: f64 },
    Ordered(OrderedThresholds),
    /// Prediction-set masks on seeded draws.
    Simulated { masks: Vec<u32>, size: usize },
}

impl Functional {
    pub fn new(spec: &ModelSpec, cell: &Cell, theta: &ThetaPoint, mc: &McSettings) -> Result<Self, ContainmentError> {
        let support = spec.support.as_ref().ok_or(ContainmentError::NotDiscrete(spec.kind))?;
        let cf = model::control_set(spec, cell, theta)?;
        match spec.kind {
            ModelKind::BinaryRoy | ModelKind::RandomCoefSel | ModelKind::DynamicTwoPeriod => {
                let (t_lo, t_hi) = model::predict_binary(spec, &cell.d, &cell.x, &cf, theta)?;
                Ok(Functional::Binary { t_lo, t_hi })
            }
            ModelKind::OrderedChoice => Ok(Functional::Ordered(model::predict_ordered(
                spec, cell.d[0], &cell.x, &cf, theta,
            )?)),
            ModelKind::Multinomial(j) => {
                if mc.n_draws < 1000 {
                    return Err(ContainmentError::TooFewDraws(mc.n_draws));
                }
                let (s_lo, s_hi) = model::multinomial_index_range(&cf)?;
                let mut rng = keyed_rng(mc.seed, &[crate::num::hash_reals(&cell_words(cell)), theta.fingerprint()]);
                let mut eta = vec![0.0; j];
                let mut masks = Vec::with_capacity(mc.n_draws);
                for _ in 0..mc.n_draws {
                    for e in eta.iter_mut() {
                        *e = rng.random::<f64>();
                    }
                    let lines = model::multinomial_lines(theta, j, cell.d[0], &eta)?;
                    let set = model::argmax_union(&lines, s_lo, s_hi);
                    masks.push(set.into_iter().fold(0u32, |m, k| m | (1 << k)));
                }
                Ok(Functional::Simulated {
                    masks,
                    size: support.len(),
                })
            }
            _ => Err(ContainmentError::NotDiscrete(spec.kind)),
        }
    }

    pub fn support_len(&self) -> usize {
        match self {
            Functional::Binary { .. } => 2,
            Functional::Ordered(_) => 3,
            Functional::Simulated { size, .. } => *size,
        }
    }

    /// `ℂ(A)` for any mask, including the empty set (0) and the full support (1).
    pub fn containment_mask(&self, mask: u32) -> f64 {
        let n = self.support_len();
        let full = (1u32 << n) - 1;
        let mask = mask & full;
        if mask == 0 {
            return 0.0;
        }
        if mask == full {
            return 1.0;
        }
        match self {
            Functional::Binary { t_lo, t_hi } => match mask {
                0b10 => *t_lo,
                _ => 1.0 - *t_hi,
            },
            Functional::Ordered(o) => ordered_containment(o, mask),
            Functional::Simulated { masks, .. } => {
                let hits = masks.iter().filter(|&&m| m & !mask == 0).count();
                hits as f64 / masks.len() as f64
            }
        }
    }

    pub fn containment(&self, a: Event) -> f64 {
        self.containment_mask(a.mask)
    }

    /// Hitting probability `P(prediction ∩ A ≠ ∅)`, computed directly.
    pub fn capacity_mask(&self, mask: u32) -> f64 {
        let n = self.support_len();
        let full = (1u32 << n) - 1;
        let mask = mask & full;
        if mask == 0 {
            return 0.0;
        }
        if mask == full {
            return 1.0;
        }
        match self {
            Functional::Binary { t_lo, t_hi } => match mask {
                0b10 => *t_hi,
                _ => 1.0 - *t_lo,
            },
            Functional::Ordered(o) => ordered_capacity(o, mask),
            Functional::Simulated { masks, .. } => {
                let hits = masks.iter().filter(|&&m| m & mask != 0).count();
                hits as f64 / masks.len() as f64
            }
        }
    }

    pub fn capacity(&self, a: Event) -> f64 {
        self.capacity_mask(a.mask)
    }

    /// Monte Carlo standard error of the containment value, if simulated.
    pub fn se(&self, a: Event) -> Option<f64> {
        match self {
            Functional::Simulated { masks, .. } => {
                let p = self.containment(a);
                Some((p * (1.0 - p) / masks.len() as f64).sqrt())
            }
            _ => None,
        }
    }

    /// `ℂ` on the whole event lattice, indexed by mask.
    pub fn lattice(&self) -> Vec<f64> {
        let n = self.support_len();
        (0..(1u32 << n)).map(|m| self.containment_mask(m)).collect()
    }
}

fn cell_words(cell: &Cell) -> Vec<f64> {
    let mut w = cell.d.clone();
    w.push(f64::NAN);
    w.extend(&cell.x);
    w.push(f64::NAN);
    w.extend(&cell.z);
    w
}

/// Closed forms for the three-point ordered outcome.
fn ordered_containment(o: &OrderedThresholds, mask: u32) -> f64 {
    let (lo, hi) = (o.c_lo - o.mu, o.c_hi - o.mu);
    match mask {
        0b001 => o.f(lo - o.g_hi),
        0b100 => 1.0 - o.f(hi - o.g_lo),
        0b010 => (o.f(hi - o.g_hi) - o.f(lo - o.g_lo)).max(0.0),
        0b011 => o.f(hi - o.g_hi),
        0b110 => 1.0 - o.f(lo - o.g_lo),
        0b101 => o.f(lo - o.g_hi) + 1.0 - o.f(hi - o.g_lo),
        _ => unreachable!("proper subsets of a three-point support"),
    }
}

fn ordered_capacity(o: &OrderedThresholds, mask: u32) -> f64 {
    let (lo, hi) = (o.c_lo - o.mu, o.c_hi - o.mu);
    match mask {
        0b001 => o.capacity0(),
        0b100 => o.capacity6(),
        0b010 => o.f(hi - o.g_lo) - o.f(lo - o.g_hi),
        0b011 => o.f(hi - o.g_lo),
        0b110 => 1.0 - o.f(lo - o.g_hi),
        0b101 => (o.f(lo - o.g_lo) + 1.0 - o.f(hi - o.g_hi)).min(1.0),
        _ => unreachable!("proper subsets of a three-point support"),
    }
}

fn require_kind(spec: &ModelSpec, ok: bool) -> Result<(), ContainmentError> {
    if ok {
        Ok(())
    } else {
        Err(ModelError::Unsupported {
            kind: spec.kind,
            what: "this containment evaluator".into(),
        }
        .into())
    }
}

/// `ℂ(A)` for binary-outcome kinds from the threshold pair.
pub fn containment_binary(a: Event, spec: &ModelSpec, cell: &Cell, theta: &ThetaPoint) -> Result<f64, ContainmentError> {
    require_kind(
        spec,
        matches!(
            spec.kind,
            ModelKind::BinaryRoy | ModelKind::RandomCoefSel | ModelKind::DynamicTwoPeriod
        ),
    )?;
    Ok(Functional::new(spec, cell, theta, &McSettings::default())?.containment(a))
}

pub fn containment_ordered(a: Event, spec: &ModelSpec, cell: &Cell, theta: &ThetaPoint) -> Result<f64, ContainmentError> {
    require_kind(spec, spec.kind == ModelKind::OrderedChoice)?;
    Ok(Functional::new(spec, cell, theta, &McSettings::default())?.containment(a))
}

/// Simulated `ℂ(A)` and its standard error.
pub fn containment_multinomial_mc(
    a: Event,
    spec: &ModelSpec,
    cell: &Cell,
    theta: &ThetaPoint,
    mc: &McSettings,
) -> Result<(f64, f64), ContainmentError> {
    require_kind(spec, matches!(spec.kind, ModelKind::Multinomial(_)))?;
    let f = Functional::new(spec, cell, theta, mc)?;
    Ok((f.containment(a), f.se(a).unwrap_or(0.0)))
}

/// Capacity `P(prediction ∩ A ≠ ∅)`.
pub fn capacity(a: Event, spec: &ModelSpec, cell: &Cell, theta: &ThetaPoint, mc: &McSettings) -> Result<f64, ContainmentError> {
    Ok(Functional::new(spec, cell, theta, mc)?.capacity(a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableEntry {
    pub cell: String,
    pub event: String,
    pub containment: f64,
    pub capacity: f64,
    pub se: Option<f64>,
}

/// Frozen table of containment and capacity values per (event, cell).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentTable {
    pub entries: Vec<TableEntry>,
}

impl ContainmentTable {
    /// Evaluate every event on every cell; cells are processed in parallel.
    pub fn build(
        spec: &ModelSpec,
        cells: &[Cell],
        theta: &ThetaPoint,
        events: &[Event],
        mc: &McSettings,
    ) -> Result<Self, ContainmentError> {
        let support = spec.support.clone().ok_or(ContainmentError::NotDiscrete(spec.kind))?;
        let per_cell: Result<Vec<Vec<TableEntry>>, ContainmentError> = cells
            .par_iter()
            .map(|cell| {
                let f = Functional::new(spec, cell, theta, mc)?;
                Ok(events
                    .iter()
                    .map(|&a| TableEntry {
                        cell: cell.label(),
                        event: a.label(&support),
                        containment: f.containment(a),
                        capacity: f.capacity(a),
                        se: f.se(a),
                    })
                    .collect())
            })
            .collect();
        Ok(Self {
            entries: per_cell?.into_iter().flatten().collect(),
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), ContainmentError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["cell", "event", "containment", "capacity", "se"])?;
        for e in &self.entries {
            let se = e.se.map(|s| s.to_string()).unwrap_or_default();
            wr.write_record([
                e.cell.as_str(),
                e.event.as_str(),
                &e.containment.to_string(),
                &e.capacity.to_string(),
                &se,
            ])?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_binary_and_three() {
        let ev = event_class(ModelKind::BinaryRoy, 2, false).unwrap();
        assert_eq!(ev.iter().map(|e| e.mask).collect::<Vec<_>>(), vec![0b01, 0b10]);
        assert_eq!(event_class(ModelKind::Multinomial(3), 3, false).unwrap().len(), 6);
        assert!(matches!(
            event_class(ModelKind::Multinomial(9), 9, false),
            Err(ContainmentError::SupportTooLarge(9))
        ));
    }

    #[test]
    fn complement_and_labels() {
        let e = Event::from_indices(&[0, 2], 3).unwrap();
        assert_eq!(e.complement().mask, 0b010);
        assert_eq!(e.label(&[0.0, 3.0, 6.0]), "{0,6}");
        assert!(Event::new(0b111, 3).is_err());
    }
}
