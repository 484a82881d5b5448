//! Structural models, control-set constructors and prediction sets.
//!
//! Parameter layouts by kind (missing coefficients read as zero):
//!
//! * Roy-type kinds (`BinaryRoy`, `RandomCoefSel`, `OrderedChoice`):
//!   `μ(d,x) = mu[0] + mu[1]·d + mu[2]·d·x[0] + Σ_k mu[3+k]·x[k]`,
//!   selection index keyed by `[z.., x..]`.
//! * `DynamicTwoPeriod` (probability scale): `μ1(d1) = mu[0] + mu[1]·d1`,
//!   `μ2(y1,d1,d2) = mu[2] + mu[3]·d2 + mu[4]·y1 + mu[5]·d1`; `rho = [a, b, r1, r2, r3]`
//!   with `a` the U1–V1 loading, `b` the V2–U1 loading and `r` the U2 loadings on
//!   `(U1, V1, V2)`; selection keys `[1, z1, x..]` and `[2, y1, d1, z2, x..]`.
//! * `EntryGame`: `μ(d,x) = mu[0] + mu[1]·d1 + mu[2]·d2 + mu[3]·d1·d2 + Σ_k mu[4+k]·x[k]`,
//!   `λ(v) = rho[0]·Φ⁻¹(v1) + rho[1]·Φ⁻¹(v2) + rho[2]·vs`; keys `[j, d_other, z_j, x..]`.
//! * `Multinomial(J)`: `μ_j(d) = mu[2(j-1)] + mu[2(j-1)+1]·d`, `rho[j-1]` loads
//!   `Q_j` on `(Φ⁻¹(v0) + Φ⁻¹(v1))/√2`.
//! * `CensoredSel`, `IntervalTreatment`: `μ(d,x) = mu[0] + mu[1]·d + Σ_k mu[2+k]·x[k]`,
//!   `λ(v) = rho[0]·v`, latent index `π*` keyed by `[z.., x..]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{phi, phi_inv};
use crate::rset::{
    extremize, ExtremizeOptions, HalfPlaneClip, Interval, Mode, Monotone, Sense, SetError, SetExpr,
    TaggedUnion,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("infeasible parameter: {0}")]
    Infeasible(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no selection index for key {0:?}")]
    MissingPi(Vec<i64>),
    #[error("{what} is not available for {kind:?}")]
    Unsupported { kind: ModelKind, what: String },
    #[error(transparent)]
    Set(#[from] SetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BinaryRoy,
    RandomCoefSel,
    OrderedChoice,
    DynamicTwoPeriod,
    EntryGame,
    Multinomial(usize),
    CensoredSel,
    IntervalTreatment,
    SchoolMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Finite outcome support for discrete kinds; `None` for additive-mean outcomes.
    pub support: Option<Vec<f64>>,
    /// The control value is observed: cell instruments carry `v` itself.
    #[serde(default)]
    pub observed_control: bool,
    /// Magnitude substituted for infinite endpoints of half-line control sets.
    #[serde(default = "default_truncation")]
    pub truncation: f64,
}

fn default_truncation() -> f64 {
    10.0
}

impl ModelSpec {
    pub fn new(kind: ModelKind, support: Option<Vec<f64>>) -> Result<Self, ModelError> {
        let spec = Self {
            kind,
            support,
            observed_control: false,
            truncation: default_truncation(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn binary_roy() -> Self {
        Self::new(ModelKind::BinaryRoy, Some(vec![0.0, 1.0])).expect("valid")
    }

    /// Roy selection with a continuous additive outcome.
    pub fn roy_mean() -> Self {
        Self::new(ModelKind::BinaryRoy, None).expect("valid")
    }

    pub fn ordered() -> Self {
        Self::new(ModelKind::OrderedChoice, Some(vec![0.0, 3.0, 6.0])).expect("valid")
    }

    pub fn random_coef() -> Self {
        Self::new(ModelKind::RandomCoefSel, Some(vec![0.0, 1.0])).expect("valid")
    }

    pub fn dynamic() -> Self {
        Self::new(ModelKind::DynamicTwoPeriod, Some(vec![0.0, 1.0])).expect("valid")
    }

    pub fn entry_game() -> Self {
        Self::new(ModelKind::EntryGame, None).expect("valid")
    }

    pub fn multinomial(j: usize) -> Result<Self, ModelError> {
        Self::new(ModelKind::Multinomial(j), Some((1..=j).map(|k| k as f64).collect()))
    }

    pub fn censored() -> Self {
        Self::new(ModelKind::CensoredSel, None).expect("valid")
    }

    pub fn interval_treatment() -> Self {
        Self::new(ModelKind::IntervalTreatment, None).expect("valid")
    }

    pub fn with_observed_control(mut self) -> Self {
        self.observed_control = true;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Input(msg.to_string()));
        if let Some(s) = &self.support {
            if s.len() < 2 || s.len() > 8 {
                return bad("outcome support must have between 2 and 8 points");
            }
            for i in 1..s.len() {
                if !(s[i] > s[i - 1]) {
                    return bad("outcome support must be strictly increasing");
                }
            }
        }
        match self.kind {
            ModelKind::OrderedChoice if self.support.as_ref().map(Vec::len) != Some(3) => {
                bad("ordered model needs a three-point support")
            }
            ModelKind::DynamicTwoPeriod if self.support.as_ref().map(Vec::len) != Some(2) => {
                bad("dynamic model needs a binary final outcome")
            }
            ModelKind::Multinomial(j) if j < 2 => bad("multinomial model needs J >= 2"),
            ModelKind::Multinomial(j) if self.support.as_ref().map(Vec::len) != Some(j) => {
                bad("multinomial support must list the J alternatives")
            }
            ModelKind::EntryGame | ModelKind::CensoredSel | ModelKind::IntervalTreatment
                if self.support.is_some() =>
            {
                bad("this kind has an additive-mean outcome")
            }
            ModelKind::BinaryRoy | ModelKind::RandomCoefSel
                if self.support.as_ref().is_some_and(|s| s.len() != 2) =>
            {
                bad("binary outcome support must have two points")
            }
            _ => Ok(()),
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.support.is_some()
    }

    /// Selection in these kinds is a single binary threshold node keyed by `[z.., x..]`.
    pub fn single_selection(&self) -> bool {
        matches!(
            self.kind,
            ModelKind::BinaryRoy | ModelKind::OrderedChoice | ModelKind::RandomCoefSel | ModelKind::Multinomial(_)
        )
    }

    fn unsupported<T>(&self, what: &str) -> Result<T, ModelError> {
        Err(ModelError::Unsupported {
            kind: self.kind,
            what: what.to_string(),
        })
    }
}

/// Selection-index table keyed by integer tuples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<PiEntry>", from = "Vec<PiEntry>")]
pub struct PiTable(BTreeMap<Vec<i64>, f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiEntry {
    pub key: Vec<i64>,
    pub value: f64,
}

impl From<PiTable> for Vec<PiEntry> {
    fn from(t: PiTable) -> Self {
        t.0.into_iter().map(|(key, value)| PiEntry { key, value }).collect()
    }
}

impl From<Vec<PiEntry>> for PiTable {
    fn from(v: Vec<PiEntry>) -> Self {
        Self(v.into_iter().map(|e| (e.key, e.value)).collect())
    }
}

impl PiTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: Vec<i64>, value: f64) {
        self.0.insert(key, value);
    }

    pub fn get(&self, key: &[i64]) -> Option<f64> {
        self.0.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<i64>, &f64)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(Vec<i64>, f64)> for PiTable {
    fn from_iter<I: IntoIterator<Item = (Vec<i64>, f64)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// One structural parameter candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaPoint {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub pi: PiTable,
    pub cutoffs: Option<(f64, f64)>,
}

impl ThetaPoint {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>, pi: PiTable) -> Self {
        Self {
            mu,
            rho,
            pi,
            cutoffs: None,
        }
    }

    pub fn with_cutoffs(mut self, lo: f64, hi: f64) -> Self {
        self.cutoffs = Some((lo, hi));
        self
    }

    pub fn mu_at(&self, i: usize) -> f64 {
        self.mu.get(i).copied().unwrap_or(0.0)
    }

    pub fn rho_at(&self, i: usize) -> f64 {
        self.rho.get(i).copied().unwrap_or(0.0)
    }

    pub fn pi_at(&self, key: &[i64]) -> Result<f64, ModelError> {
        self.pi.get(key).ok_or_else(|| ModelError::MissingPi(key.to_vec()))
    }

    /// Stable fingerprint used to key simulation streams.
    pub fn fingerprint(&self) -> u64 {
        let mut xs = self.mu.clone();
        xs.push(f64::NAN);
        xs.extend_from_slice(&self.rho);
        for (k, v) in self.pi.iter() {
            xs.extend(k.iter().map(|&i| i as f64));
            xs.push(*v);
        }
        if let Some((a, b)) = self.cutoffs {
            xs.extend([a, b]);
        }
        crate::num::hash_reals(&xs)
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<(), ModelError> {
        if let Some(r) = self.rho.iter().find(|r| !(r.abs() < 1.0)) {
            return Err(ModelError::Infeasible(format!("rho = {r} outside (-1, 1)")));
        }
        match (spec.kind, self.cutoffs) {
            (ModelKind::OrderedChoice, None) => {
                return Err(ModelError::Infeasible("ordered model needs cutoffs".into()))
            }
            (_, Some((lo, hi))) if !(lo < hi) => {
                return Err(ModelError::Infeasible(format!("cutoffs ({lo}, {hi}) not increasing")))
            }
            _ => {}
        }
        let threshold = !matches!(spec.kind, ModelKind::CensoredSel | ModelKind::IntervalTreatment);
        if threshold {
            if let Some((k, v)) = self.pi.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(ModelError::Infeasible(format!("pi{k:?} = {v} outside [0, 1]")));
            }
        }
        if spec.kind == ModelKind::DynamicTwoPeriod {
            let r2: f64 = (2..5).map(|i| self.rho_at(i).powi(2)).sum();
            if r2 >= 1.0 {
                return Err(ModelError::Infeasible("U2 loadings must have squared norm below 1".into()));
            }
        }
        Ok(())
    }
}

/// Observable coordinates of one conditioning cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub d: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl Cell {
    pub fn new(d: Vec<f64>, x: Vec<f64>, z: Vec<f64>) -> Self {
        Self { d, x, z }
    }

    pub fn x_key(&self) -> Vec<i64> {
        self.x.iter().map(|v| v.round() as i64).collect()
    }

    pub fn z_key(&self) -> Vec<i64> {
        self.z.iter().map(|v| v.round() as i64).collect()
    }

    /// Selection key `[z.., x..]`.
    pub fn zx_key(&self) -> Vec<i64> {
        let mut k = self.z_key();
        k.extend(self.x_key());
        k
    }

    pub fn label(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        format!("d={};x={};z={}", fmt(&self.d), fmt(&self.x), fmt(&self.z))
    }
}

fn binary(v: f64, name: &str) -> Result<bool, ModelError> {
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(ModelError::Input(format!("{name} must be 0 or 1, got {v}")))
    }
}

fn unit(v: f64, name: &str) -> Result<f64, ModelError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ModelError::Infeasible(format!("{name} = {v} outside [0, 1]")))
    }
}

fn key(head: &[i64], x: &[f64]) -> Vec<i64> {
    let mut k = head.to_vec();
    k.extend(x.iter().map(|v| v.round() as i64));
    k
}

/// `[0, π]` for treated, `[π, 1]` for untreated.
pub fn cf_binary_roy(d: f64, z: &[f64], x: &[f64], theta: &ThetaPoint) -> Result<SetExpr, ModelError> {
    let zk: Vec<i64> = z.iter().map(|v| v.round() as i64).collect();
    let p = unit(theta.pi_at(&key(&zk, x))?, "pi")?;
    Ok(if binary(d, "d")? {
        SetExpr::interval(0.0, p)?
    } else {
        SetExpr::interval(p, 1.0)?
    })
}

/// Half-plane clip of the unit square on `(v0, v1)`: treated iff `π̃ − (1−z)·v0 − z·v1 ≥ 0`.
pub fn cf_random_coef(d: f64, z: f64, x: &[f64], theta: &ThetaPoint) -> Result<SetExpr, ModelError> {
    let zb = binary(z, "z")?;
    let p0 = unit(theta.pi_at(&key(&[0], x))?, "pi(0)")?;
    let p1 = unit(theta.pi_at(&key(&[1], x))?, "pi(1)")?;
    let zf = if zb { 1.0 } else { 0.0 };
    let tilde = if zb { p1 } else { p0 };
    let sense = if binary(d, "d")? { Sense::Ge } else { Sense::Le };
    Ok(SetExpr::HalfPlane(HalfPlaneClip::unit_square(
        [tilde, -(1.0 - zf), -zf],
        sense,
    )?))
}

fn branch(flag: bool, idx: f64) -> Result<Interval, SetError> {
    if flag {
        Interval::new(0.0, idx)
    } else {
        Interval::new(idx, 1.0)
    }
}

pub fn dynamic_mu1(theta: &ThetaPoint, d1: f64) -> f64 {
    theta.mu_at(0) + theta.mu_at(1) * d1
}

pub fn dynamic_mu2(theta: &ThetaPoint, y1: f64, d1: f64, d2: f64) -> f64 {
    theta.mu_at(2) + theta.mu_at(3) * d2 + theta.mu_at(4) * y1 + theta.mu_at(5) * d1
}

/// Box `V_U1 × V_1 × V_2` for the two-period model; `z = (z1, z2)`.
pub fn cf_dynamic(
    y1: f64,
    d1: f64,
    d2: f64,
    z: &[f64],
    x: &[f64],
    theta: &ThetaPoint,
) -> Result<SetExpr, ModelError> {
    if z.len() != 2 {
        return Err(ModelError::Input("dynamic model needs instruments (z1, z2)".into()));
    }
    let (y1b, d1b, d2b) = (binary(y1, "y1")?, binary(d1, "d1")?, binary(d2, "d2")?);
    let mu1 = unit(dynamic_mu1(theta, d1), "mu1")?;
    let pi1 = unit(theta.pi_at(&key(&[1, z[0].round() as i64], x))?, "pi1")?;
    let pi2 = unit(
        theta.pi_at(&key(&[2, y1b as i64, d1b as i64, z[1].round() as i64], x))?,
        "pi2",
    )?;
    let dims = vec![branch(y1b, mu1)?, branch(d1b, pi1)?, branch(d2b, pi2)?];
    Ok(SetExpr::Box(crate::rset::BoxSet::new(dims)?))
}

/// The five regions of `(v1, v2)` space of the two-player entry game.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryRegions {
    pub s00: SetExpr,
    pub s01: SetExpr,
    pub s10: SetExpr,
    pub s11: SetExpr,
    pub multi: SetExpr,
}

impl EntryRegions {
    pub fn labelled(&self) -> [(&'static str, &SetExpr); 5] {
        [
            ("(0,0)", &self.s00),
            ("(0,1)", &self.s01),
            ("(1,0)", &self.s10),
            ("(1,1)", &self.s11),
            ("multi", &self.multi),
        ]
    }
}

/// Payoff thresholds `(π_j(1), π_j(0))` for both players.
pub fn entry_thresholds(z: &[f64], x: &[f64], theta: &ThetaPoint) -> Result<([f64; 2], [f64; 2]), ModelError> {
    if z.len() != 2 {
        return Err(ModelError::Input("entry game needs instruments (z1, z2)".into()));
    }
    let mut a = [0.0; 2];
    let mut b = [0.0; 2];
    for j in 0..2 {
        let zj = z[j].round() as i64;
        a[j] = unit(theta.pi_at(&key(&[j as i64 + 1, 1, zj], x))?, "pi_j(1)")?;
        b[j] = unit(theta.pi_at(&key(&[j as i64 + 1, 0, zj], x))?, "pi_j(0)")?;
        if a[j] > b[j] {
            return Err(ModelError::Infeasible(format!(
                "player {} has strategic complements: pi(1) = {} > pi(0) = {}",
                j + 1,
                a[j],
                b[j]
            )));
        }
    }
    Ok((a, b))
}

pub fn entry_regions(z: &[f64], x: &[f64], theta: &ThetaPoint) -> Result<EntryRegions, ModelError> {
    let (a, b) = entry_thresholds(z, x, theta)?;
    let bx = |x0: f64, x1: f64, y0: f64, y1: f64| SetExpr::boxed(&[(x0, x1), (y0, y1)]);
    Ok(EntryRegions {
        s00: bx(b[0], 1.0, b[1], 1.0)?,
        s11: bx(0.0, a[0], 0.0, a[1])?,
        s10: SetExpr::union(vec![bx(0.0, a[0], a[1], 1.0)?, bx(a[0], b[0], b[1], 1.0)?])?,
        s01: SetExpr::union(vec![bx(a[0], b[0], 0.0, a[1])?, bx(b[0], 1.0, 0.0, b[1])?])?,
        multi: bx(a[0], b[0], a[1], b[1])?,
    })
}

/// Control set for `(v1, v2, vs)` given observed entry decisions `d = (d1, d2)`.
pub fn cf_entry_game(d: &[f64], z: &[f64], x: &[f64], theta: &ThetaPoint) -> Result<SetExpr, ModelError> {
    if d.len() != 2 {
        return Err(ModelError::Input("entry decisions must be a pair".into()));
    }
    let r = entry_regions(z, x, theta)?;
    let both = |s: &SetExpr| vec![(s.clone(), 0), (s.clone(), 1)];
    let parts = match (binary(d[0], "d1")?, binary(d[1], "d2")?) {
        (false, false) => both(&r.s00),
        (true, true) => both(&r.s11),
        (false, true) => {
            let mut p = both(&r.s01);
            p.push((r.multi.clone(), 0));
            p
        }
        (true, false) => {
            let mut p = both(&r.s10);
            p.push((r.multi.clone(), 1));
            p
        }
    };
    Ok(SetExpr::Tagged(TaggedUnion::new(parts, vec![0, 1])?))
}

/// `{d − π*}` when `d > 0`, `(−∞, −π*]` at the corner `d = 0`.
pub fn cf_censored(d: f64, z: &[f64], x: &[f64], theta: &ThetaPoint) -> Result<SetExpr, ModelError> {
    if !(d >= 0.0) {
        return Err(ModelError::Input(format!("censored treatment must be >= 0, got {d}")));
    }
    let zk: Vec<i64> = z.iter().map(|v| v.round() as i64).collect();
    let p = theta.pi_at(&key(&zk, x))?;
    Ok(if d > 0.0 {
        SetExpr::interval(d - p, d - p)?
    } else {
        SetExpr::interval(f64::NEG_INFINITY, -p)?
    })
}

/// Control set for V and the bracket for the latent treatment D*.
pub fn cf_interval_treatment(
    dl: f64,
    du: f64,
    z: &[f64],
    x: &[f64],
    theta: &ThetaPoint,
) -> Result<(SetExpr, SetExpr), ModelError> {
    if !(dl <= du) {
        return Err(ModelError::Input(format!("interval treatment needs d_l <= d_u, got [{dl}, {du}]")));
    }
    let zk: Vec<i64> = z.iter().map(|v| v.round() as i64).collect();
    let p = theta.pi_at(&key(&zk, x))?;
    Ok((SetExpr::interval(dl - p, du - p)?, SetExpr::interval(dl, du)?))
}

/// Control set for a cell under the model kind.
pub fn control_set(spec: &ModelSpec, cell: &Cell, theta: &ThetaPoint) -> Result<SetExpr, ModelError> {
    if spec.observed_control {
        return Ok(SetExpr::point(&cell.z)?);
    }
    let d0 = cell.d.first().copied().unwrap_or(f64::NAN);
    match spec.kind {
        ModelKind::BinaryRoy | ModelKind::OrderedChoice => cf_binary_roy(d0, &cell.z, &cell.x, theta),
        ModelKind::RandomCoefSel | ModelKind::Multinomial(_) => {
            let z = cell.z.first().copied().ok_or_else(|| ModelError::Input("missing instrument".into()))?;
            cf_random_coef(d0, z, &cell.x, theta)
        }
        ModelKind::DynamicTwoPeriod => {
            if cell.d.len() != 3 {
                return Err(ModelError::Input("dynamic cells carry d = (y1, d1, d2)".into()));
            }
            cf_dynamic(cell.d[0], cell.d[1], cell.d[2], &cell.z, &cell.x, theta)
        }
        ModelKind::EntryGame => cf_entry_game(&cell.d, &cell.z, &cell.x, theta),
        ModelKind::CensoredSel => cf_censored(d0, &cell.z, &cell.x, theta),
        ModelKind::IntervalTreatment => {
            if cell.d.len() != 2 {
                return Err(ModelError::Input("interval cells carry d = (d_l, d_u)".into()));
            }
            Ok(cf_interval_treatment(cell.d[0], cell.d[1], &cell.z, &cell.x, theta)?.0)
        }
        ModelKind::SchoolMatch => spec.unsupported("cell-based control sets"),
    }
}

/// Location family: `U = Σ_k w_k Φ⁻¹(v_k) + σ Φ⁻¹(η)` with `σ = √(1 − Σ w_k²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub w: Vec<f64>,
    pub sigma: f64,
}

impl Location {
    pub fn new(w: Vec<f64>) -> Result<Self, ModelError> {
        let s2: f64 = w.iter().map(|x| x * x).sum();
        if !(s2 < 1.0) {
            return Err(ModelError::Infeasible(format!("loadings {w:?} have squared norm >= 1")));
        }
        Ok(Self {
            sigma: (1.0 - s2).sqrt(),
            w,
        })
    }

    pub fn g(&self, v: &[f64]) -> f64 {
        self.w.iter().zip(v).map(|(w, &x)| if *w == 0.0 { 0.0 } else { w * phi_inv(x) }).sum()
    }

    pub fn q(&self, eta: f64) -> f64 {
        self.sigma * phi_inv(eta)
    }

    /// Monotonicity of `g` in each coordinate; `extra` unhinted-but-constant trailing coordinates.
    pub fn hints(&self, dim: usize) -> Vec<Option<Monotone>> {
        (0..dim)
            .map(|k| {
                Some(if self.w.get(k).copied().unwrap_or(0.0) >= 0.0 {
                    Monotone::Increasing
                } else {
                    Monotone::Decreasing
                })
            })
            .collect()
    }

    /// `(inf g, sup g)` over `cf`.
    pub fn range(&self, cf: &SetExpr) -> Result<(f64, f64), ModelError> {
        let opts = ExtremizeOptions::with_hints(self.hints(cf.dim()));
        let f = |v: &[f64]| self.g(v);
        let lo = extremize(cf, &f, Mode::Inf, &opts)?.value;
        let hi = extremize(cf, &f, Mode::Sup, &opts)?.value;
        Ok((lo, hi))
    }
}

/// Latent law of the outcome unobservable given the control, by kind.
pub fn location(spec: &ModelSpec, theta: &ThetaPoint) -> Result<Location, ModelError> {
    if spec.observed_control && matches!(spec.kind, ModelKind::BinaryRoy | ModelKind::OrderedChoice) {
        return Location::new(vec![theta.rho_at(0)]);
    }
    match spec.kind {
        ModelKind::BinaryRoy | ModelKind::OrderedChoice => Location::new(vec![theta.rho_at(0)]),
        ModelKind::RandomCoefSel => {
            let w = theta.rho_at(0) / std::f64::consts::SQRT_2;
            Location::new(vec![w, w])
        }
        ModelKind::DynamicTwoPeriod => Location::new((2..5).map(|i| theta.rho_at(i)).collect()),
        _ => spec.unsupported("a scalar location family"),
    }
}

/// `μ(d, x)` for Roy-type kinds.
pub fn mu_roy(theta: &ThetaPoint, d: f64, x: &[f64]) -> f64 {
    let mut m = theta.mu_at(0) + theta.mu_at(1) * d;
    if let Some(&x0) = x.first() {
        m += theta.mu_at(2) * d * x0;
    }
    for (k, &xk) in x.iter().enumerate() {
        m += theta.mu_at(3 + k) * xk;
    }
    m
}

pub fn mu_entry(theta: &ThetaPoint, d: &[f64], x: &[f64]) -> f64 {
    let (d1, d2) = (d[0], d[1]);
    let mut m = theta.mu_at(0) + theta.mu_at(1) * d1 + theta.mu_at(2) * d2 + theta.mu_at(3) * d1 * d2;
    for (k, &xk) in x.iter().enumerate() {
        m += theta.mu_at(4 + k) * xk;
    }
    m
}

pub fn mu_linear(theta: &ThetaPoint, d: f64, x: &[f64]) -> f64 {
    let mut m = theta.mu_at(0) + theta.mu_at(1) * d;
    for (k, &xk) in x.iter().enumerate() {
        m += theta.mu_at(2 + k) * xk;
    }
    m
}

/// Range of the structural mean `μ(d, x)` over the observed treatment of additive-mean kinds.
///
/// Only the interval-treatment kind yields a nondegenerate range: `d = (d_l, d_u)` brackets
/// the latent treatment and `μ` is linear in it.
pub fn mu_additive(spec: &ModelSpec, theta: &ThetaPoint, d: &[f64], x: &[f64]) -> Result<(f64, f64), ModelError> {
    let point = |m: f64| Ok((m, m));
    match spec.kind {
        ModelKind::BinaryRoy | ModelKind::RandomCoefSel => point(mu_roy(theta, d[0], x)),
        ModelKind::EntryGame => point(mu_entry(theta, d, x)),
        ModelKind::CensoredSel => point(mu_linear(theta, d[0], x)),
        ModelKind::IntervalTreatment => {
            let (a, b) = (mu_linear(theta, d[0], x), mu_linear(theta, d[1], x));
            Ok((a.min(b), a.max(b)))
        }
        _ => spec.unsupported("an additive mean"),
    }
}

/// Threshold index `m` with `H(v) = Φ((m − g(v))/σ)`.
pub fn binary_index(spec: &ModelSpec, theta: &ThetaPoint, d: &[f64], x: &[f64]) -> Result<f64, ModelError> {
    match spec.kind {
        ModelKind::BinaryRoy | ModelKind::RandomCoefSel => Ok(mu_roy(theta, d[0], x)),
        ModelKind::DynamicTwoPeriod => {
            let m2 = unit(dynamic_mu2(theta, d[0], d[1], d[2]), "mu2")?;
            Ok(phi_inv(m2))
        }
        _ => spec.unsupported("a binary threshold outcome"),
    }
}

/// `(inf H, sup H)` over `cf`: below `t_lo` the model predicts {1}, above `t_hi` {0}.
pub fn predict_binary(
    spec: &ModelSpec,
    d: &[f64],
    x: &[f64],
    cf: &SetExpr,
    theta: &ThetaPoint,
) -> Result<(f64, f64), ModelError> {
    let m = binary_index(spec, theta, d, x)?;
    let loc = location(spec, theta)?;
    let (g_lo, g_hi) = loc.range(cf)?;
    Ok((phi((m - g_hi) / loc.sigma), phi((m - g_lo) / loc.sigma)))
}

/// `F_{V2|U1}(π2)` evaluated at `u1`.
pub fn h_d2(theta: &ThetaPoint, pi2: f64, u1: f64) -> Result<f64, ModelError> {
    let loc = Location::new(vec![theta.rho_at(1)])?;
    Ok(phi((phi_inv(pi2) - loc.g(&[u1])) / loc.sigma))
}

/// `F_{U1|V1}(μ1)` evaluated at `v1`.
pub fn h_y1(theta: &ThetaPoint, mu1: f64, v1: f64) -> Result<f64, ModelError> {
    let loc = Location::new(vec![theta.rho_at(0)])?;
    Ok(phi((phi_inv(mu1) - loc.g(&[v1])) / loc.sigma))
}

/// `F_{U2|U1,V1,V2}(μ2)` evaluated at `v = (u1, v1, v2)`.
pub fn h_y2(theta: &ThetaPoint, mu2: f64, v: &[f64]) -> Result<f64, ModelError> {
    let loc = Location::new((2..5).map(|i| theta.rho_at(i)).collect())?;
    Ok(phi((phi_inv(mu2) - loc.g(v)) / loc.sigma))
}

/// Threshold ranges `(inf, sup)` of the three sequential restrictions of the two-period model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicBounds {
    /// Final outcome over the full control box.
    pub y2: (f64, f64),
    /// Second-period treatment over `V_U1 × V_1`.
    pub d2: (f64, f64),
    /// First-period outcome over `V_1`.
    pub y1: (f64, f64),
}

pub fn dynamic_bounds(
    y1: f64,
    d1: f64,
    d2: f64,
    z: &[f64],
    x: &[f64],
    theta: &ThetaPoint,
) -> Result<DynamicBounds, ModelError> {
    let cf = cf_dynamic(y1, d1, d2, z, x, theta)?;
    let SetExpr::Box(b) = &cf else {
        unreachable!("dynamic control set is a box")
    };
    let (iu, iv1) = (b.dims()[0], b.dims()[1]);
    let spec = ModelSpec::dynamic();
    let y2 = predict_binary(&spec, &[y1, d1, d2], x, &cf, theta)?;
    let pi2 = theta.pi_at(&key(&[2, y1.round() as i64, d1.round() as i64, z[1].round() as i64], x))?;
    let mu1 = dynamic_mu1(theta, d1);
    // both are monotone in their single argument
    let range = |a: f64, b: f64| (a.min(b), a.max(b));
    let d2r = range(h_d2(theta, pi2, iu.lo())?, h_d2(theta, pi2, iu.hi())?);
    let y1r = range(h_y1(theta, mu1, iv1.lo())?, h_y1(theta, mu1, iv1.hi())?);
    Ok(DynamicBounds { y2, d2: d2r, y1: y1r })
}

/// Closed-form ingredients of the ordered model's containment functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderedThresholds {
    pub mu: f64,
    pub g_lo: f64,
    pub g_hi: f64,
    pub sigma: f64,
    pub c_lo: f64,
    pub c_hi: f64,
}

impl OrderedThresholds {
    /// CDF of `Q(η)`.
    pub fn f(&self, t: f64) -> f64 {
        phi(t / self.sigma)
    }

    pub fn contain0(&self) -> f64 {
        self.f(self.c_lo - self.mu - self.g_hi)
    }

    pub fn contain6(&self) -> f64 {
        1.0 - self.f(self.c_hi - self.mu - self.g_lo)
    }

    pub fn capacity0(&self) -> f64 {
        self.f(self.c_lo - self.mu - self.g_lo)
    }

    pub fn capacity6(&self) -> f64 {
        1.0 - self.f(self.c_hi - self.mu - self.g_hi)
    }
}

pub fn predict_ordered(
    spec: &ModelSpec,
    d: f64,
    x: &[f64],
    cf: &SetExpr,
    theta: &ThetaPoint,
) -> Result<OrderedThresholds, ModelError> {
    let (c_lo, c_hi) = theta
        .cutoffs
        .ok_or_else(|| ModelError::Infeasible("ordered model needs cutoffs".into()))?;
    if !(c_lo < c_hi) {
        return Err(ModelError::Infeasible("cutoffs must be increasing".into()));
    }
    let loc = location(spec, theta)?;
    let (g_lo, g_hi) = loc.range(cf)?;
    Ok(OrderedThresholds {
        mu: mu_roy(theta, d, x),
        g_lo,
        g_hi,
        sigma: loc.sigma,
        c_lo,
        c_hi,
    })
}

/// Index `s(v) = (Φ⁻¹(v0) + Φ⁻¹(v1))/√2` shared by the multinomial utilities.
pub fn multinomial_index(v: &[f64]) -> f64 {
    (phi_inv(v[0]) + phi_inv(v[1])) / std::f64::consts::SQRT_2
}

/// Utility lines `μ_j + ρ_j·s + σ_j Φ⁻¹(η_j)` as `(intercept, slope)` in `s`.
pub fn multinomial_lines(theta: &ThetaPoint, j: usize, d: f64, eta: &[f64]) -> Result<Vec<(f64, f64)>, ModelError> {
    if eta.len() != j {
        return Err(ModelError::Input(format!("eta has {} coordinates, expected {j}", eta.len())));
    }
    (0..j)
        .map(|k| {
            let r = theta.rho_at(k);
            if !(r.abs() < 1.0) {
                return Err(ModelError::Infeasible(format!("rho_{} = {r}", k + 1)));
            }
            let sigma = (1.0 - r * r).sqrt();
            let m = theta.mu_at(2 * k) + theta.mu_at(2 * k + 1) * d;
            Ok((m + sigma * phi_inv(eta[k]), r))
        })
        .collect()
}

/// Range of `s(v)` over the control set.
pub fn multinomial_index_range(cf: &SetExpr) -> Result<(f64, f64), ModelError> {
    let opts = ExtremizeOptions::all(Monotone::Increasing, cf.dim());
    let lo = extremize(cf, &multinomial_index, Mode::Inf, &opts)?.value;
    let hi = extremize(cf, &multinomial_index, Mode::Sup, &opts)?.value;
    Ok((lo, hi))
}

/// Alternatives (0-based) that maximize utility for some `s ∈ [s_lo, s_hi]`.
pub fn argmax_union(lines: &[(f64, f64)], s_lo: f64, s_hi: f64) -> Vec<usize> {
    let n = lines.len();
    let mut out = Vec::new();
    for j in 0..n {
        // h_j(s) = max_{k≠j} line_k(s) − line_j(s) is convex and piecewise linear.
        let h = |s: f64| {
            let own = lines[j].0 + lines[j].1 * s;
            (0..n)
                .filter(|&k| k != j)
                .map(|k| lines[k].0 + lines[k].1 * s)
                .fold(f64::NEG_INFINITY, f64::max)
                - own
        };
        let mut cands = vec![s_lo, s_hi];
        for a in 0..n {
            for b in (a + 1)..n {
                let ds = lines[a].1 - lines[b].1;
                if ds != 0.0 {
                    let s = (lines[b].0 - lines[a].0) / ds;
                    if s > s_lo && s < s_hi {
                        cands.push(s);
                    }
                }
            }
        }
        let hmin = cands.into_iter().map(h).fold(f64::INFINITY, f64::min);
        if hmin <= 0.0 {
            out.push(j);
        }
    }
    out
}

/// Prediction set (1-based labels) of the multinomial model at `η`.
pub fn predict_multinomial(
    eta: &[f64],
    d: f64,
    j: usize,
    cf: &SetExpr,
    theta: &ThetaPoint,
) -> Result<Vec<usize>, ModelError> {
    let lines = multinomial_lines(theta, j, d, eta)?;
    let (lo, hi) = multinomial_index_range(cf)?;
    let set: Vec<usize> = argmax_union(&lines, lo, hi).into_iter().map(|k| k + 1).collect();
    if set.is_empty() {
        return Err(ModelError::Input("empty multinomial prediction".into()));
    }
    Ok(set)
}

/// `[μ_lo + inf λ, μ_hi + sup λ]` for a caller-supplied conditional mean `λ`.
pub fn predict_additive_mean_with<L>(
    mu: (f64, f64),
    cf: &SetExpr,
    lambda: &L,
    opts: &ExtremizeOptions,
) -> Result<Interval, ModelError>
where
    L: Fn(&[f64]) -> f64 + ?Sized,
{
    let lo = extremize(cf, lambda, Mode::Inf, opts)?.value;
    let hi = extremize(cf, lambda, Mode::Sup, opts)?.value;
    Ok(Interval::new(mu.0 + lo, mu.1 + hi)?)
}

/// Conditional mean of the outcome error given the control, with its hints.
pub fn lambda_fn(
    spec: &ModelSpec,
    theta: &ThetaPoint,
    d: &[f64],
) -> Result<(Box<dyn Fn(&[f64]) -> f64 + Send + Sync>, ExtremizeOptions), ModelError> {
    let sign = |r: f64| {
        Some(if r >= 0.0 {
            Monotone::Increasing
        } else {
            Monotone::Decreasing
        })
    };
    match spec.kind {
        ModelKind::BinaryRoy => {
            let r = if theta.rho.len() > 1 {
                theta.rho_at(d[0].round() as usize)
            } else {
                theta.rho_at(0)
            };
            Ok((Box::new(move |v: &[f64]| r * phi_inv(v[0])), ExtremizeOptions::with_hints(vec![sign(r)])))
        }
        ModelKind::RandomCoefSel => {
            let r = if theta.rho.len() > 1 {
                theta.rho_at(d[0].round() as usize)
            } else {
                theta.rho_at(0)
            };
            Ok((
                Box::new(move |v: &[f64]| r * multinomial_index(v)),
                ExtremizeOptions::with_hints(vec![sign(r), sign(r)]),
            ))
        }
        ModelKind::EntryGame => {
            let (r1, r2, rs) = (theta.rho_at(0), theta.rho_at(1), theta.rho_at(2));
            Ok((
                Box::new(move |v: &[f64]| r1 * phi_inv(v[0]) + r2 * phi_inv(v[1]) + rs * v[2]),
                ExtremizeOptions::with_hints(vec![sign(r1), sign(r2), sign(rs)]),
            ))
        }
        ModelKind::CensoredSel | ModelKind::IntervalTreatment => {
            let r = theta.rho_at(0);
            Ok((
                Box::new(move |v: &[f64]| r * v[0]),
                ExtremizeOptions {
                    truncation: Some(spec.truncation),
                    ..ExtremizeOptions::with_hints(vec![sign(r)])
                },
            ))
        }
        _ => spec.unsupported("an additive-mean outcome"),
    }
}

pub fn predict_additive_mean(
    spec: &ModelSpec,
    d: &[f64],
    x: &[f64],
    cf: &SetExpr,
    theta: &ThetaPoint,
) -> Result<Interval, ModelError> {
    let mu = mu_additive(spec, theta, d, x)?;
    let (lambda, opts) = lambda_fn(spec, theta, d)?;
    predict_additive_mean_with(mu, cf, lambda.as_ref(), &opts)
}

/// Latent outcome errors at `(η, v)`: one entry per outcome equation.
pub fn adjustment_q(spec: &ModelSpec, theta: &ThetaPoint, eta: &[f64], v: &[f64]) -> Result<Vec<f64>, ModelError> {
    if eta.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(ModelError::Input("eta must lie in [0, 1]".into()));
    }
    match spec.kind {
        ModelKind::Multinomial(j) => {
            let s = multinomial_index(v);
            (0..j)
                .map(|k| {
                    let r = theta.rho_at(k);
                    Ok(r * s + (1.0 - r * r).sqrt() * phi_inv(eta[k]))
                })
                .collect()
        }
        _ => {
            let loc = location(spec, theta)?;
            Ok(vec![loc.g(v) + loc.q(eta[0])])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roy_theta(pi: f64) -> ThetaPoint {
        let pi: PiTable = [(vec![0], pi)].into_iter().collect();
        ThetaPoint::new(vec![0.2, 0.5], vec![0.5], pi)
    }

    #[test]
    fn roy_branches() {
        let t = roy_theta(0.6);
        assert_eq!(cf_binary_roy(1.0, &[0.0], &[], &t).unwrap(), SetExpr::interval(0.0, 0.6).unwrap());
        assert_eq!(cf_binary_roy(0.0, &[0.0], &[], &t).unwrap(), SetExpr::interval(0.6, 1.0).unwrap());
        assert!(matches!(
            cf_binary_roy(1.0, &[0.0], &[], &roy_theta(1.2)),
            Err(ModelError::Infeasible(_))
        ));
    }

    #[test]
    fn location_at_median() {
        let loc = Location::new(vec![0.5]).unwrap();
        assert_eq!(loc.g(&[0.5]) + loc.q(0.5), 0.0);
    }

    #[test]
    fn argmax_union_collects_switches() {
        // line 0 wins for s < 0, line 1 for s > 0
        let lines = [(0.0, -1.0), (0.0, 1.0), (-5.0, 0.0)];
        assert_eq!(argmax_union(&lines, -1.0, 1.0), vec![0, 1]);
        assert_eq!(argmax_union(&lines, 0.5, 1.0), vec![1]);
    }
}
