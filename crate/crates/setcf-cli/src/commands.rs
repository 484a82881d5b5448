//! Subcommand bodies. Each writes its artifacts into the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use setcf::containment::{event_class, ContainmentTable, Event, McSettings};
use setcf::data::Table;
use setcf::dgp::simulate as run_dgp;
use setcf::identify::{
    default_slack, estimate_cells, identified_region, kappa_bounds, pi_restricted, CellMap, CellStats,
    FunctionalBounds, IdentifiedRegion, PropensityTable, RegionSettings, Schema,
};
use setcf::inference::{confidence_interval, CiSettings};
use setcf::model::ThetaPoint;

use crate::config::RunConfig;
use crate::report;
use crate::CliError;

/// Version of every JSON artifact layout.
pub const SCHEMA_VERSION: u32 = 1;

fn out_file(cfg: &RunConfig, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(&cfg.output.dir)?;
    Ok(BufWriter::new(File::create(cfg.output.dir.join(name))?))
}

fn write_json(cfg: &RunConfig, name: &str, command: &str, body: Value) -> Result<(), CliError> {
    let mut doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg,
    });
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    let mut w = out_file(cfg, name)?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate needs a [simulate] section".into()))?;
    let ds = run_dgp(&cfg.dgp(sim)).map_err(|e| CliError::Config(e.to_string()))?;
    let mut w = out_file(cfg, "dataset.csv")?;
    ds.table.write_csv(&mut w)?;
    w.flush()?;
    if sim.latent {
        let mut w = out_file(cfg, "latent.csv")?;
        ds.latent.write_csv(&mut w)?;
        w.flush()?;
    }
    eprintln!("wrote {} rows to {}", ds.table.n_rows(), cfg.output.dir.join("dataset.csv").display());
    Ok(())
}

struct Loaded {
    table: Table,
    schema: Schema,
    map: CellMap,
    cells: CellStats,
    propensity: PropensityTable,
}

fn load(cfg: &RunConfig) -> Result<Loaded, CliError> {
    let schema = cfg.schema()?;
    let path = cfg.data_path();
    let table = Table::read_path(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    schema.check(&table).map_err(|e| CliError::Config(format!("schema: {e}")))?;
    let (map, cells) = estimate_cells(&table, &schema, &cfg.binning, cfg.model.support.as_deref())?;
    for w in &cells.warnings {
        eprintln!("warning: {w}");
    }
    let propensity = pi_restricted(&cfg.model, &cells)?;
    Ok(Loaded {
        table,
        schema,
        map,
        cells,
        propensity,
    })
}

fn grid(cfg: &RunConfig, data: &Loaded) -> Result<Vec<ThetaPoint>, CliError> {
    let g = cfg
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a [grid] section".into()))?;
    g.expand(&data.propensity.pi_table())
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn containment(cfg: &RunConfig) -> Result<(), CliError> {
    let support = cfg
        .model
        .support
        .as_ref()
        .ok_or_else(|| CliError::Config("containment tables need a discrete outcome support".into()))?;
    let theta = cfg
        .containment
        .theta
        .clone()
        .or_else(|| cfg.simulate.as_ref().map(|s| s.theta.clone()))
        .ok_or_else(|| CliError::Config("set [containment.theta] or [simulate.theta]".into()))?;
    let data = load(cfg)?;
    let events: Vec<Event> = match &cfg.containment.events {
        Some(ev) => ev
            .iter()
            .map(|idx| Event::from_indices(idx, support.len()))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("containment events: {e}")))?,
        None => event_class(cfg.model.kind, support.len(), false)?,
    };
    let mc = McSettings {
        n_draws: cfg.containment.mc_draws.unwrap_or(cfg.identify.mc_draws),
        seed: cfg.containment.mc_seed,
    };
    let table = ContainmentTable::build(&cfg.model, &data.map.cells, &theta, &events, &mc)?;
    let mut w = out_file(cfg, "containment.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    eprintln!("{} rows over {} cells", table.entries.len(), data.map.cells.len());
    Ok(())
}

#[derive(Serialize)]
struct PointRecord<'a> {
    index: usize,
    theta: &'a ThetaPoint,
    accepted: bool,
    admissible: bool,
    max_violation: Option<f64>,
}

fn region(cfg: &RunConfig, data: &Loaded) -> Result<(IdentifiedRegion, Vec<ThetaPoint>), CliError> {
    let grid = grid(cfg, data)?;
    let slack = cfg
        .identify
        .slack
        .unwrap_or_else(|| default_slack(&data.cells, cfg.identify.slack_se));
    let mut s = RegionSettings::new(slack);
    s.pi_slack = cfg.identify.pi_slack.unwrap_or(slack);
    s.method = cfg.identify.method;
    s.constraints = cfg.constraints()?;
    s.mc = McSettings {
        n_draws: cfg.identify.mc_draws,
        seed: cfg.identify.mc_seed,
    };
    let r = identified_region(&cfg.model, &grid, &data.cells, Some(&data.propensity), &s)?;
    Ok((r, grid))
}

fn region_body(r: &IdentifiedRegion, data: &Loaded) -> Value {
    let points: Vec<PointRecord> = r
        .grid
        .iter()
        .enumerate()
        .map(|(i, t)| PointRecord {
            index: i,
            theta: t,
            accepted: r.accepted[i],
            admissible: r.admissible[i],
            // JSON has no infinity: removed points carry null
            max_violation: r.max_violation[i].is_finite().then_some(r.max_violation[i]),
        })
        .collect();
    json!({
        "slack": r.slack,
        "constraints": r.constraints.to_string(),
        "n_rows": data.table.n_rows(),
        "n_cells": data.cells.cells.len(),
        "propensity": data.propensity.entries,
        "n_grid": r.grid.len(),
        "n_accepted": r.n_accepted(),
        "refuted": r.is_refuted(),
        "points": points,
    })
}

fn refuted(what: &str, slack: f64) -> CliError {
    CliError::Refuted(format!("{what}: no parameter survives at slack {slack}"))
}

pub fn identify(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load(cfg)?;
    let (r, _) = region(cfg, &data)?;
    write_json(cfg, "region.json", "identify", region_body(&r, &data))?;
    eprintln!("{} of {} grid points accepted at slack {:.4}", r.n_accepted(), r.grid.len(), r.slack);
    if r.is_refuted() {
        return Err(refuted("identified region is empty", r.slack));
    }
    Ok(())
}

pub fn bounds(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load(cfg)?;
    let (r, _) = region(cfg, &data)?;
    let xdist = data.cells.x_distribution();
    let rows: Vec<FunctionalBounds> = if r.is_refuted() {
        Vec::new()
    } else {
        cfg.bounds
            .functionals
            .iter()
            .map(|k| kappa_bounds(&cfg.model, &r, k, &xdist))
            .collect::<Result<_, _>>()?
    };
    write_json(
        cfg,
        "bounds.json",
        "bounds",
        json!({
            "slack": r.slack,
            "constraints": r.constraints.to_string(),
            "n_accepted": r.n_accepted(),
            "refuted": r.is_refuted(),
            "bounds": rows,
        }),
    )?;
    let mut w = out_file(cfg, "bounds.csv")?;
    writeln!(w, "functional,lower,upper,n_points")?;
    for b in &rows {
        writeln!(w, "\"{}\",{},{},{}", b.functional, b.lower, b.upper, b.n_points)?;
        eprintln!("{}: [{:.4}, {:.4}]", b.functional, b.lower, b.upper);
    }
    w.flush()?;
    if r.is_refuted() {
        return Err(refuted("bounds undefined", r.slack));
    }
    Ok(())
}

pub fn ci(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load(cfg)?;
    let grid = grid(cfg, &data)?;
    let settings = CiSettings {
        alpha: cfg.ci.alpha,
        k: cfg.ci.k,
        seed: cfg.ci.seed,
        mc: McSettings {
            n_draws: cfg.ci.mc_draws,
            seed: cfg.identify.mc_seed,
        },
    };
    let xdist = data.cells.x_distribution();
    let res = confidence_interval(
        &cfg.model,
        &cfg.ci.functional,
        &data.table,
        &data.schema,
        &data.map,
        &grid,
        &xdist,
        &settings,
    )?;
    let finite = |v: &[f64]| -> Vec<Option<f64>> { v.iter().map(|x| x.is_finite().then_some(*x)).collect() };
    write_json(
        cfg,
        "ci.json",
        "ci",
        json!({
            "functional": res.functional,
            "alpha": res.alpha,
            "k": res.k,
            "threshold": res.threshold,
            "lower": res.lower,
            "upper": res.upper,
            "tolerance": res.tolerance,
            "theta_hat": res.theta_hat,
            "refuted": res.is_refuted(),
            "trace": {
                "phi": res.phi_grid,
                "log_s_n": finite(&res.log_s_n),
                "accepted": res.accepted,
                "empty_slice": res.empty_slice,
            },
        }),
    )?;
    match (res.lower, res.upper) {
        (Some(l), Some(u)) => {
            eprintln!("{} in [{l:.4}, {u:.4}] at alpha {}, K {}", res.functional, res.alpha, res.k);
            Ok(())
        }
        _ => Err(CliError::Refuted(format!(
            "every value of {} is rejected at alpha {}",
            res.functional, res.alpha
        ))),
    }
}

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let text = report::render(&cfg.output.dir)?;
    fs::create_dir_all(&cfg.output.dir)?;
    fs::write(cfg.output.dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn read_json(path: &Path) -> Result<Option<Value>, CliError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(serde_json::from_str(&s)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}
