//! Seeded synthetic data for every model kind, and exact population cells.
//!
//! Observables go to `Dataset::table`; the latents that generated each row go to a
//! separate `Dataset::latent` table that estimation code never reads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Table};
use crate::identify::{CellStat, CellStats, DynamicCell, Schema};
use crate::model::{
    self, binary_index, dynamic_mu1, dynamic_mu2, location, mu_entry, mu_linear, mu_roy, Cell, ModelError,
    ModelKind, ModelSpec, ThetaPoint,
};
use crate::num::{gauss_legendre, keyed_rng, phi, phi_inv};

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("no pure-strategy equilibrium at v = ({0}, {1})")]
    NoEquilibrium(f64, f64),
}

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub spec: ModelSpec,
    pub theta: ThetaPoint,
    pub n: usize,
    pub seed: u64,
    /// Instrument support, drawn uniformly.
    pub z_values: Vec<Vec<f64>>,
    /// Covariate support, drawn uniformly; `[[]]` for no covariates.
    pub x_values: Vec<Vec<f64>>,
    /// Support of `V` when the control is observed; drawn uniformly.
    #[serde(default)]
    pub v_values: Option<Vec<f64>>,
    /// Probability that the multiplicity region resolves to (1, 0) in the entry game.
    #[serde(default = "half")]
    pub p_s: f64,
    /// Standard deviation of the mean-zero outcome noise of additive-mean kinds.
    #[serde(default = "one")]
    pub noise_sd: f64,
    /// Bracket width of the interval-observed treatment.
    #[serde(default = "one")]
    pub interval_width: f64,
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

/// Default instrument support by kind.
pub fn default_z_values(kind: ModelKind) -> Vec<Vec<f64>> {
    match kind {
        ModelKind::DynamicTwoPeriod | ModelKind::EntryGame => {
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]
        }
        _ => vec![vec![0.0], vec![1.0]],
    }
}

impl DgpConfig {
    pub fn new(spec: ModelSpec, theta: ThetaPoint, n: usize, seed: u64) -> Self {
        let z_values = default_z_values(spec.kind);
        Self {
            spec,
            theta,
            n,
            seed,
            z_values,
            x_values: vec![vec![]],
            v_values: None,
            p_s: 0.5,
            noise_sd: 1.0,
            interval_width: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        let bad = |m: &str| Err(DgpError::Config(m.to_string()));
        self.spec.validate()?;
        self.theta.validate(&self.spec)?;
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.z_values.is_empty() || self.x_values.is_empty() {
            return bad("instrument and covariate supports must be nonempty");
        }
        let zd = self.z_values[0].len();
        if self.z_values.iter().any(|z| z.len() != zd) || self.x_values.iter().any(|x| x.len() != self.x_values[0].len()) {
            return bad("support points must share one dimension");
        }
        let want = match self.spec.kind {
            ModelKind::DynamicTwoPeriod | ModelKind::EntryGame => 2,
            _ => 1,
        };
        if zd != want {
            return bad(&format!("this kind needs {want}-dimensional instruments"));
        }
        if matches!(self.spec.kind, ModelKind::RandomCoefSel | ModelKind::Multinomial(_))
            && self.z_values.iter().any(|z| z[0] != 0.0 && z[0] != 1.0)
        {
            return bad("random-coefficient instruments must be 0 or 1");
        }
        if !(0.0..=1.0).contains(&self.p_s) {
            return bad("p_s must lie in [0, 1]");
        }
        if !(self.noise_sd >= 0.0) || !(self.interval_width > 0.0) {
            return bad("noise_sd must be >= 0 and interval_width > 0");
        }
        if self.spec.kind == ModelKind::SchoolMatch {
            return bad("school matching data come from the school module");
        }
        if self.spec.observed_control {
            match &self.v_values {
                Some(v) if !v.is_empty() && v.iter().all(|x| (0.0..=1.0).contains(x)) => {}
                _ => return bad("observed control needs v_values in [0, 1]"),
            }
            if !matches!(self.spec.kind, ModelKind::BinaryRoy | ModelKind::OrderedChoice) {
                return bad("observed control is available for Roy and ordered kinds");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub table: Table,
    pub latent: Table,
    pub schema: Schema,
}

fn names(prefix: &str, k: usize) -> Vec<String> {
    if k == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=k).map(|i| format!("{prefix}{i}")).collect()
    }
}

/// Column roles of simulated data.
pub fn default_schema(spec: &ModelSpec, z_dim: usize, x_dim: usize) -> Schema {
    let d: Vec<String> = match spec.kind {
        ModelKind::DynamicTwoPeriod => vec!["y1".into(), "d1".into(), "d2".into()],
        ModelKind::EntryGame => vec!["d1".into(), "d2".into()],
        ModelKind::IntervalTreatment => vec!["dl".into(), "du".into()],
        _ => vec!["d".into()],
    };
    Schema {
        y: "y".into(),
        d,
        x: names("x", x_dim),
        z: if spec.observed_control {
            vec!["v".into()]
        } else {
            names("z", z_dim)
        },
    }
}

/// Latent columns holding the true control, in the coordinate order of the control set.
pub fn control_columns(spec: &ModelSpec) -> Vec<&'static str> {
    match spec.kind {
        ModelKind::RandomCoefSel | ModelKind::Multinomial(_) => vec!["v0", "v1"],
        ModelKind::DynamicTwoPeriod => vec!["u1", "v1", "v2"],
        ModelKind::EntryGame => vec!["v1", "v2", "vs"],
        _ => vec!["v"],
    }
}

fn latent_names(spec: &ModelSpec) -> Vec<String> {
    let v: Vec<&str> = match spec.kind {
        ModelKind::BinaryRoy | ModelKind::OrderedChoice => vec!["v", "eta", "u"],
        ModelKind::RandomCoefSel => vec!["v0", "v1", "eta", "u"],
        ModelKind::Multinomial(j) => {
            let mut n: Vec<String> = vec!["v0".into(), "v1".into()];
            n.extend((1..=j).map(|k| format!("eta{k}")));
            return n;
        }
        ModelKind::DynamicTwoPeriod => vec!["u1", "v1", "v2", "eta"],
        ModelKind::EntryGame => vec!["v1", "v2", "vs", "eps"],
        ModelKind::CensoredSel => vec!["v", "eps"],
        ModelKind::IntervalTreatment => vec!["v", "dstar", "eps"],
        ModelKind::SchoolMatch => vec![],
    };
    v.into_iter().map(String::from).collect()
}

/// Outcome index (0-based into the support) of the complete model at latent `(v, η)`.
pub fn outcome_index(
    spec: &ModelSpec,
    theta: &ThetaPoint,
    d: &[f64],
    x: &[f64],
    v: &[f64],
    eta: &[f64],
) -> Result<usize, ModelError> {
    match spec.kind {
        ModelKind::Multinomial(j) => {
            let lines = model::multinomial_lines(theta, j, d[0], eta)?;
            let s = model::multinomial_index(v);
            let mut best = 0;
            for k in 1..j {
                if lines[k].0 + lines[k].1 * s > lines[best].0 + lines[best].1 * s {
                    best = k;
                }
            }
            Ok(best)
        }
        ModelKind::OrderedChoice => {
            let (lo, hi) = theta
                .cutoffs
                .ok_or_else(|| ModelError::Infeasible("ordered model needs cutoffs".into()))?;
            let u = model::adjustment_q(spec, theta, eta, v)?[0];
            let y = mu_roy(theta, d[0], x) + u;
            Ok(if y <= lo {
                0
            } else if y > hi {
                2
            } else {
                1
            })
        }
        ModelKind::BinaryRoy | ModelKind::RandomCoefSel | ModelKind::DynamicTwoPeriod => {
            let u = model::adjustment_q(spec, theta, eta, v)?[0];
            Ok(usize::from(u <= binary_index(spec, theta, d, x)?))
        }
        _ => Err(ModelError::Unsupported {
            kind: spec.kind,
            what: "a discrete outcome".into(),
        }),
    }
}

fn key(head: &[f64], x: &[f64]) -> Vec<i64> {
    head.iter().chain(x).map(|v| v.round() as i64).collect()
}

fn bit(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    phi_inv(rng.random::<f64>())
}

/// One simulated row: observables after the (d.., x.., z..) layout, then latents.
struct Row {
    y: f64,
    d: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    v_obs: Option<f64>,
    latent: Vec<f64>,
}

fn draw_row(cfg: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<Row, DgpError> {
    let spec = &cfg.spec;
    let th = &cfg.theta;
    let z = cfg.z_values[rng.random_range(0..cfg.z_values.len())].clone();
    let x = cfg.x_values[rng.random_range(0..cfg.x_values.len())].clone();
    let support = spec.support.as_deref();
    let at = |i: usize| support.map_or(i as f64, |s| s[i]);
    let row = |y, d, latent, v_obs| Row {
        y,
        d,
        x: x.clone(),
        z: z.clone(),
        v_obs,
        latent,
    };
    match spec.kind {
        ModelKind::BinaryRoy | ModelKind::OrderedChoice => {
            let v = match &cfg.v_values {
                Some(vs) if spec.observed_control => vs[rng.random_range(0..vs.len())],
                _ => rng.random::<f64>(),
            };
            let eta = rng.random::<f64>();
            let d = bit(th.pi_at(&key(&z, &x))? >= v);
            let u = model::adjustment_q(spec, th, &[eta], &[v])?[0];
            let v_obs = spec.observed_control.then_some(v);
            if support.is_some() {
                let y = at(outcome_index(spec, th, &[d], &x, &[v], &[eta])?);
                Ok(row(y, vec![d], vec![v, eta, u], v_obs))
            } else {
                let (lambda, _) = model::lambda_fn(spec, th, &[d])?;
                let y = mu_roy(th, d, &x) + lambda(&[v]) + cfg.noise_sd * phi_inv(eta);
                Ok(row(y, vec![d], vec![v, eta, u], v_obs))
            }
        }
        ModelKind::RandomCoefSel | ModelKind::Multinomial(_) => {
            let v = [rng.random::<f64>(), rng.random::<f64>()];
            let zf = z[0];
            let tilde = th.pi_at(&key(&[zf], &x))?;
            let d = bit(tilde - (1.0 - zf) * v[0] - zf * v[1] >= 0.0);
            if let ModelKind::Multinomial(j) = spec.kind {
                let eta: Vec<f64> = (0..j).map(|_| rng.random::<f64>()).collect();
                let y = at(outcome_index(spec, th, &[d], &x, &v, &eta)?);
                let mut lat = v.to_vec();
                lat.extend(eta);
                return Ok(row(y, vec![d], lat, None));
            }
            let eta = rng.random::<f64>();
            let u = model::adjustment_q(spec, th, &[eta], &v)?[0];
            let y = if support.is_some() {
                at(outcome_index(spec, th, &[d], &x, &v, &[eta])?)
            } else {
                let (lambda, _) = model::lambda_fn(spec, th, &[d])?;
                mu_roy(th, d, &x) + lambda(&v) + cfg.noise_sd * phi_inv(eta)
            };
            Ok(row(y, vec![d], vec![v[0], v[1], eta, u], None))
        }
        ModelKind::DynamicTwoPeriod => {
            let (a, b) = (th.rho_at(0), th.rho_at(1));
            let v1 = rng.random::<f64>();
            let u1 = phi(a * phi_inv(v1) + (1.0 - a * a).sqrt() * normal(rng));
            let d1 = bit(th.pi_at(&key(&[1.0, z[0]], &x))? >= v1);
            let y1 = bit(u1 <= dynamic_mu1(th, d1));
            let v2 = phi(b * phi_inv(u1) + (1.0 - b * b).sqrt() * normal(rng));
            let d2 = bit(th.pi_at(&key(&[2.0, y1, d1, z[1]], &x))? >= v2);
            let eta = rng.random::<f64>();
            let y2 = outcome_index(spec, th, &[y1, d1, d2], &x, &[u1, v1, v2], &[eta])?;
            Ok(row(at(y2), vec![y1, d1, d2], vec![u1, v1, v2, eta], None))
        }
        ModelKind::EntryGame => {
            let (v1, v2) = (rng.random::<f64>(), rng.random::<f64>());
            let vs = bit(rng.random::<f64>() < cfg.p_s);
            let pi = |j: usize, other: f64| th.pi_at(&key(&[(j + 1) as f64, other, z[j]], &x));
            let mut eq = Vec::new();
            for (d1, d2) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                if d1 == bit(v1 <= pi(0, d2)?) && d2 == bit(v2 <= pi(1, d1)?) {
                    eq.push((d1, d2));
                }
            }
            let (d1, d2) = match eq.len() {
                0 => return Err(DgpError::NoEquilibrium(v1, v2)),
                1 => eq[0],
                _ if vs == 1.0 => (1.0, 0.0),
                _ => (0.0, 1.0),
            };
            let eps = normal(rng);
            let (lambda, _) = model::lambda_fn(spec, th, &[d1, d2])?;
            let y = mu_entry(th, &[d1, d2], &x) + lambda(&[v1, v2, vs]) + cfg.noise_sd * eps;
            Ok(row(y, vec![d1, d2], vec![v1, v2, vs, eps], None))
        }
        ModelKind::CensoredSel => {
            let p = th.pi_at(&key(&z, &x))?;
            let raw = normal(rng);
            let eps = normal(rng);
            let (d, v) = if p + raw > 0.0 {
                let d = p + raw;
                // recorded on the scale the control set reconstructs
                (d, d - p)
            } else {
                (0.0, raw)
            };
            let y = mu_linear(th, d, &x) + th.rho_at(0) * v + cfg.noise_sd * eps;
            Ok(row(y, vec![d], vec![v, eps], None))
        }
        ModelKind::IntervalTreatment => {
            let p = th.pi_at(&key(&z, &x))?;
            let v = normal(rng);
            let eps = normal(rng);
            let dstar = p + v;
            let w = cfg.interval_width;
            let dl = (dstar / w).floor() * w;
            let du = dl + w;
            let y = mu_linear(th, dstar, &x) + th.rho_at(0) * v + cfg.noise_sd * eps;
            Ok(row(y, vec![dl, du], vec![v, dstar, eps], None))
        }
        ModelKind::SchoolMatch => Err(DgpError::Config("school matching data come from the school module".into())),
    }
}

/// Simulated observables and latents; bit-identical for a fixed configuration.
pub fn simulate(cfg: &DgpConfig) -> Result<Dataset, DgpError> {
    cfg.validate()?;
    let n_chunks = cfg.n.div_ceil(CHUNK);
    let chunks: Result<Vec<Vec<Row>>, DgpError> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = keyed_rng(cfg.seed, &[0xd6, c as u64]);
            let len = CHUNK.min(cfg.n - c * CHUNK);
            (0..len).map(|_| draw_row(cfg, &mut rng)).collect()
        })
        .collect();
    let rows: Vec<Row> = chunks?.into_iter().flatten().collect();

    let z_dim = cfg.z_values[0].len();
    let x_dim = cfg.x_values[0].len();
    let schema = default_schema(&cfg.spec, z_dim, x_dim);
    let mut obs_names = vec![schema.y.clone()];
    obs_names.extend(schema.d.iter().cloned());
    obs_names.extend(schema.x.iter().cloned());
    let z_names = names("z", z_dim);
    obs_names.extend(z_names.iter().cloned());
    if cfg.spec.observed_control {
        obs_names.push("v".into());
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n); obs_names.len()];
    for r in &rows {
        let vals = std::iter::once(r.y)
            .chain(r.d.iter().copied())
            .chain(r.x.iter().copied())
            .chain(r.z.iter().copied())
            .chain(r.v_obs);
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    let lat_names = latent_names(&cfg.spec);
    let mut lat: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n); lat_names.len()];
    for r in &rows {
        for (c, v) in lat.iter_mut().zip(&r.latent) {
            c.push(*v);
        }
    }
    Ok(Dataset {
        table: Table::new(obs_names, cols)?,
        latent: Table::new(lat_names, lat)?,
        schema,
    })
}

/// Latent control of row `i`, ready for `SetExpr::contains`.
pub fn true_control(spec: &ModelSpec, latent: &Table, i: usize) -> Result<Vec<f64>, DgpError> {
    control_columns(spec)
        .into_iter()
        .map(|c| Ok(latent.column(c)?[i]))
        .collect()
}

/// `∫_a^b Φ((m − ρΦ⁻¹(v))/σ) dv` by quadrature on the normal scale.
fn threshold_mass(m: f64, rho: f64, a: f64, b: f64) -> f64 {
    let sigma = (1.0 - rho * rho).sqrt();
    let (ta, tb) = (phi_inv(a), phi_inv(b));
    if tb <= ta {
        return 0.0;
    }
    let rule = gauss_legendre(200, ta, tb);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&t, &w)| w * crate::num::normal_pdf(t) * phi((m - rho * t) / sigma))
        .sum()
}

/// Exact conditional outcome law of a Roy or ordered cell under `theta`.
pub fn population_law(spec: &ModelSpec, theta: &ThetaPoint, cell: &Cell) -> Result<Vec<f64>, DgpError> {
    if !matches!(spec.kind, ModelKind::BinaryRoy | ModelKind::OrderedChoice) || !spec.is_discrete() {
        return Err(DgpError::Config("population laws are available for discrete Roy and ordered kinds".into()));
    }
    let rho = location(spec, theta)?.w[0];
    let (a, b) = if spec.observed_control {
        (cell.z[0], cell.z[0])
    } else {
        let p = theta.pi_at(&cell.zx_key())?;
        if cell.d[0] == 1.0 {
            (0.0, p)
        } else {
            (p, 1.0)
        }
    };
    let m = mu_roy(theta, cell.d[0], &cell.x);
    // P(μ + U ≤ t | V ∈ [a, b])
    let below = |t: f64| {
        if a == b {
            let sigma = (1.0 - rho * rho).sqrt();
            phi((t - rho * phi_inv(a)) / sigma)
        } else {
            threshold_mass(t, rho, a, b) / (b - a)
        }
    };
    Ok(match spec.kind {
        ModelKind::BinaryRoy => {
            let p1 = below(m);
            vec![1.0 - p1, p1]
        }
        _ => {
            let (lo, hi) = theta
                .cutoffs
                .ok_or_else(|| ModelError::Infeasible("ordered model needs cutoffs".into()))?;
            let (f0, f1) = (below(lo - m), below(hi - m));
            vec![f0, f1 - f0, 1.0 - f1]
        }
    })
}

/// Cell statistics carrying an exact law, expressed as counts out of `scale`.
pub fn population_stats(
    spec: &ModelSpec,
    theta: &ThetaPoint,
    cells: &[Cell],
    scale: usize,
) -> Result<CellStats, DgpError> {
    let mut out = Vec::with_capacity(cells.len());
    for (id, cell) in cells.iter().enumerate() {
        let law = population_law(spec, theta, cell)?;
        let mut counts: Vec<usize> = law.iter().map(|p| (p * scale as f64).round() as usize).collect();
        // keep the total at `scale`
        let total: usize = counts.iter().sum();
        let k = (0..counts.len()).max_by(|&a, &b| law[a].total_cmp(&law[b])).unwrap_or(0);
        counts[k] = (counts[k] + scale).saturating_sub(total);
        let mean = law.iter().zip(spec.support.as_ref().expect("discrete")).map(|(p, y)| p * y).sum();
        out.push(CellStat {
            id,
            cell: cell.clone(),
            count: scale,
            counts: Some(counts),
            mean,
            var: 0.0,
        });
    }
    Ok(CellStats {
        support: spec.support.clone(),
        cells: out,
        warnings: Vec::new(),
    })
}

fn branch(flag: bool, idx: f64) -> (f64, f64) {
    if flag {
        (0.0, idx)
    } else {
        (idx, 1.0)
    }
}

/// Population cells of the two-period model by nested Gauss–Legendre quadrature.
///
/// Each probability is a ratio of weighted sums over nodes inside the cell's control
/// box, so it is a convex combination of the model's conditional probabilities.
pub fn dynamic_population(
    theta: &ThetaPoint,
    z_values: &[Vec<f64>],
    x: &[f64],
    nodes: usize,
) -> Result<Vec<DynamicCell>, DgpError> {
    theta.validate(&ModelSpec::dynamic())?;
    let (a, b) = (theta.rho_at(0), theta.rho_at(1));
    let (sa, sb) = ((1.0 - a * a).sqrt(), (1.0 - b * b).sqrt());
    let mut out = Vec::new();
    for z in z_values {
        if z.len() != 2 {
            return Err(DgpError::Config("dynamic instruments are pairs".into()));
        }
        for d1 in [0.0, 1.0] {
            let pi1 = theta.pi_at(&key(&[1.0, z[0]], x))?;
            let mu1 = dynamic_mu1(theta, d1);
            let (v1a, v1b) = branch(d1 == 1.0, pi1);
            let rv1 = gauss_legendre(nodes, v1a, v1b);
            // P(Y1 = 1 | d1): average of H_Y1 over V_1
            let mut num_y1 = 0.0;
            let mut den_y1 = 0.0;
            for (&v1, &w) in rv1.nodes.iter().zip(&rv1.weights) {
                num_y1 += w * model::h_y1(theta, mu1, v1)?;
                den_y1 += w;
            }
            let p_y1 = num_y1 / den_y1;
            for y1 in [0.0, 1.0] {
                let (ua, ub) = branch(y1 == 1.0, mu1);
                for d2 in [0.0, 1.0] {
                    let pi2 = theta.pi_at(&key(&[2.0, y1, d1, z[1]], x))?;
                    let mu2 = dynamic_mu2(theta, y1, d1, d2);
                    let (v2a, v2b) = branch(d2 == 1.0, pi2);
                    let (mut num_d2, mut den_d2) = (0.0, 0.0);
                    let (mut num_y2, mut den_y2) = (0.0, 0.0);
                    for (&v1, &w1) in rv1.nodes.iter().zip(&rv1.weights) {
                        let c1 = a * phi_inv(v1);
                        // u1 = Φ(c1 + sa Φ⁻¹(w)), w uniform
                        let wa = phi((phi_inv(ua) - c1) / sa);
                        let wb = phi((phi_inv(ub) - c1) / sa);
                        if wb <= wa {
                            continue;
                        }
                        let rw = gauss_legendre(nodes, wa, wb);
                        for (&wq, &w2) in rw.nodes.iter().zip(&rw.weights) {
                            let u1 = phi(c1 + sa * phi_inv(wq));
                            let wt = w1 * w2;
                            num_d2 += wt * model::h_d2(theta, pi2, u1)?;
                            den_d2 += wt;
                            let c2 = b * phi_inv(u1);
                            let ra = phi((phi_inv(v2a) - c2) / sb);
                            let rb = phi((phi_inv(v2b) - c2) / sb);
                            if rb <= ra {
                                continue;
                            }
                            let rr = gauss_legendre(nodes, ra, rb);
                            for (&rq, &w3) in rr.nodes.iter().zip(&rr.weights) {
                                let v2 = phi(c2 + sb * phi_inv(rq));
                                num_y2 += wt * w3 * model::h_y2(theta, mu2, &[u1, v1, v2])?;
                                den_y2 += wt * w3;
                            }
                        }
                    }
                    if den_d2 == 0.0 || den_y2 == 0.0 {
                        continue;
                    }
                    out.push(DynamicCell {
                        y1,
                        d1,
                        d2,
                        z: [z[0], z[1]],
                        x: x.to_vec(),
                        p_y2: num_y2 / den_y2,
                        p_d2: num_d2 / den_d2,
                        p_y1,
                    });
                }
            }
        }
    }
    Ok(out)
}
