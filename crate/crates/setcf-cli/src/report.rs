//! Plain-text summary of whatever artifacts the output directory holds.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::commands::read_json;
use crate::CliError;

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

fn csv_rows(path: &Path) -> Option<usize> {
    let s = std::fs::read_to_string(path).ok()?;
    Some(s.lines().count().saturating_sub(1))
}

pub fn render(dir: &Path) -> Result<String, CliError> {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "setcf report for {}", dir.display());
    let _ = writeln!(w);

    if let Some(n) = csv_rows(&dir.join("dataset.csv")) {
        let _ = writeln!(w, "dataset: {n} rows");
    }
    if let Some(n) = csv_rows(&dir.join("containment.csv")) {
        let _ = writeln!(w, "containment table: {n} rows");
    }

    let mut any = false;
    if let Some(r) = read_json(&dir.join("region.json"))? {
        any = true;
        let _ = writeln!(w);
        let _ = writeln!(w, "identified region");
        let _ = writeln!(w, "  model        {}", r["config"]["model"]["kind"]);
        let _ = writeln!(w, "  rows, cells  {}, {}", r["n_rows"], r["n_cells"]);
        let _ = writeln!(w, "  slack        {}", num(&r["slack"]));
        let _ = writeln!(w, "  constraints  {}", r["constraints"].as_str().unwrap_or("-"));
        let _ = writeln!(w, "  accepted     {} of {}", r["n_accepted"], r["n_grid"]);
        if r["refuted"].as_bool() == Some(true) {
            let _ = writeln!(w, "  REFUTED: no grid point satisfies the restrictions");
        }
        if let Some(p) = r["propensity"].as_array() {
            for e in p {
                let flag = if e["no_variation"].as_bool() == Some(true) { " (no variation)" } else { "" };
                let _ = writeln!(w, "  pi{}  {}  n={}{flag}", e["key"], num(&e["pi_hat"]), e["count"]);
            }
        }
    }

    if let Some(b) = read_json(&dir.join("bounds.json"))? {
        any = true;
        let _ = writeln!(w);
        let _ = writeln!(
            w,
            "bounds (constraints {}, slack {})",
            b["constraints"].as_str().unwrap_or("-"),
            num(&b["slack"])
        );
        match b["bounds"].as_array() {
            Some(rows) if !rows.is_empty() => {
                let width = rows
                    .iter()
                    .filter_map(|r| r["functional"].as_str())
                    .map(str::len)
                    .max()
                    .unwrap_or(10);
                for r in rows {
                    let _ = writeln!(
                        w,
                        "  {:<width$}  [{}, {}]  over {} points",
                        r["functional"].as_str().unwrap_or("-"),
                        num(&r["lower"]),
                        num(&r["upper"]),
                        r["n_points"]
                    );
                }
            }
            _ => {
                let _ = writeln!(w, "  none: the region is empty");
            }
        }
    }

    if let Some(c) = read_json(&dir.join("ci.json"))? {
        any = true;
        let _ = writeln!(w);
        let _ = writeln!(w, "confidence interval for {}", c["functional"].as_str().unwrap_or("-"));
        let _ = writeln!(w, "  alpha {}, K {}, threshold {}", c["alpha"], c["k"], num(&c["threshold"]));
        if c["refuted"].as_bool() == Some(true) {
            let _ = writeln!(w, "  REFUTED: every grid value rejected");
        } else {
            let _ = writeln!(w, "  [{}, {}]", num(&c["lower"]), num(&c["upper"]));
        }
    }

    if !any {
        return Err(CliError::Data(format!(
            "no region.json, bounds.json or ci.json in {}",
            dir.display()
        )));
    }
    Ok(out)
}
