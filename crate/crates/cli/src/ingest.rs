//! The panel CSV format.
//!
//! One row per unit and time point with the fixed header columns `unit`,
//! `t`, `y`, `T` and, optionally, `x_pre`, `z` (or `z1`, `z2`, ...) and `g`.
//! An empty `y` is a missing outcome. `x_pre` and `g` are per-unit values
//! and may be left empty on all but one of a unit's rows.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use dynfx::design::{GroupFactor, PanelDataset, Treatment};

use crate::config::OutcomeTransform;
use crate::error::{validation, CliError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOptions {
    /// Applied to `y` before anything is derived from it.
    pub transform: OutcomeTransform,
    /// When the file has no `x_pre` column, average each unit's observed
    /// (transformed) `y` over `t` in this closed window instead.
    pub x_pre_window: Option<(i64, i64)>,
}

struct Columns {
    unit: usize,
    t: usize,
    y: usize,
    treatment: usize,
    x_pre: Option<usize>,
    z: Vec<usize>,
    g: Option<usize>,
}

fn columns(header: &csv::StringRecord) -> Result<Columns> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (k, name) in header.iter().enumerate() {
        if index.insert(name, k).is_some() {
            return validation(format!("line 1: duplicate column {name:?}"));
        }
    }
    let z_numbered: Vec<usize> = (1..).map_while(|k| index.get(format!("z{k}").as_str()).copied()).collect();
    for name in index.keys() {
        let known = matches!(*name, "unit" | "t" | "y" | "T" | "x_pre" | "z" | "g")
            || name.strip_prefix('z').and_then(|k| k.parse::<usize>().ok()).is_some_and(|k| k >= 1 && k <= z_numbered.len());
        if !known {
            return validation(format!("line 1: unknown column {name:?}"));
        }
    }
    let need = |name: &str| index.get(name).copied().ok_or_else(|| CliError::Validation(format!("line 1: missing column {name:?}")));
    let z = match (index.get("z"), z_numbered.is_empty()) {
        (Some(_), false) => return validation("line 1: use either z or z1, z2, ..., not both"),
        (Some(&k), true) => vec![k],
        (None, _) => z_numbered,
    };
    Ok(Columns {
        unit: need("unit")?,
        t: need("t")?,
        y: need("y")?,
        treatment: need("T")?,
        x_pre: index.get("x_pre").copied(),
        z,
        g: index.get("g").copied(),
    })
}

fn number(field: &str, name: &str, line: u64) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => validation(format!("line {line}: {name} = {field:?} is not a finite number")),
    }
}

/// Per-unit value that must agree across the unit's non-empty rows.
fn set_unit_value<T: PartialEq + std::fmt::Debug>(
    slot: &mut Option<T>,
    value: T,
    name: &str,
    unit: &str,
    line: u64,
) -> Result<()> {
    match slot {
        Some(prev) if *prev != value => {
            validation(format!("line {line}: {name} of unit {unit} changes from {prev:?} to {value:?}"))
        }
        Some(_) => Ok(()),
        None => {
            *slot = Some(value);
            Ok(())
        }
    }
}

struct Row {
    unit: usize,
    t: i64,
    y: f64,
    treatment: f64,
    z: Vec<f64>,
    line: u64,
}

pub fn ingest_panel(path: &Path, opts: &IngestOptions) -> Result<PanelDataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_panel(file, opts).map_err(|e| match e {
        CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_panel<R: Read>(reader: R, opts: &IngestOptions) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::Validation(format!("line 1: {e}")))?.clone();
    let cols = columns(&header)?;

    let mut units: Vec<String> = vec![];
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut x_pre: Vec<Option<f64>> = vec![];
    let mut g: Vec<Option<String>> = vec![];
    let mut rows = vec![];
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Validation(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let name = &record[cols.unit];
        if name.is_empty() {
            return validation(format!("line {line}: empty unit"));
        }
        let unit = *unit_index.entry(name.to_string()).or_insert_with(|| {
            units.push(name.to_string());
            x_pre.push(None);
            g.push(None);
            units.len() - 1
        });
        let t = record[cols.t]
            .parse::<i64>()
            .map_err(|_| CliError::Validation(format!("line {line}: t = {:?} is not an integer", &record[cols.t])))?;
        let y = match &record[cols.y] {
            "" => f64::NAN,
            s => number(s, "y", line)?,
        };
        let treatment = number(&record[cols.treatment], "T", line)?;
        if treatment < 0.0 {
            return validation(format!("line {line}: T must be nonnegative"));
        }
        let z = cols
            .z
            .iter()
            .map(|&k| number(&record[k], &header[k], line))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(k) = cols.x_pre {
            if !record[k].is_empty() {
                let v = number(&record[k], "x_pre", line)?;
                set_unit_value(&mut x_pre[unit], v, "x_pre", name, line)?;
            }
        }
        if let Some(k) = cols.g {
            if !record[k].is_empty() {
                set_unit_value(&mut g[unit], record[k].to_string(), "g", name, line)?;
            }
        }
        rows.push(Row { unit, t, y, treatment, z, line });
    }
    if rows.is_empty() {
        return validation("panel has no data rows");
    }

    let mut times: Vec<i64> = rows.iter().map(|r| r.t).collect();
    times.sort_unstable();
    times.dedup();
    let (n, d) = (times.len(), units.len());
    let mut seen: Vec<Option<u64>> = vec![None; n * d];
    let mut outcome = DMatrix::from_element(n, d, f64::NAN);
    let mut tr = DMatrix::zeros(n, d);
    let mut z = vec![DMatrix::zeros(n, d); cols.z.len()];
    for r in &rows {
        let k = times.binary_search(&r.t).expect("time was collected");
        if let Some(prev) = seen[k * d + r.unit] {
            return validation(format!(
                "line {}: unit {} already has a row for t = {} (line {prev})",
                r.line, units[r.unit], r.t
            ));
        }
        seen[k * d + r.unit] = Some(r.line);
        outcome[(k, r.unit)] = r.y;
        tr[(k, r.unit)] = r.treatment;
        for (j, v) in r.z.iter().enumerate() {
            z[j][(k, r.unit)] = *v;
        }
    }
    for i in 0..d {
        if let Some(k) = (0..n).find(|&k| seen[k * d + i].is_none()) {
            return validation(format!(
                "unit {} has no row for t = {}; write the row with an empty y for a missing outcome",
                units[i], times[k]
            ));
        }
    }

    let treatment = match Treatment::PerTime(tr.clone()).per_unit() {
        Ok(v) => Treatment::PerUnit(v),
        Err(_) => Treatment::PerTime(tr),
    };
    if opts.transform == OutcomeTransform::Sqrt {
        if let Some(r) = rows.iter().find(|r| r.y < 0.0) {
            return validation(format!("line {}: the sqrt transform needs y >= 0, got {}", r.line, r.y));
        }
        outcome.apply(|v| *v = v.sqrt());
    }
    let mut ds = PanelDataset::new(units.clone(), times.clone(), outcome, treatment)?;
    for zk in z {
        ds = ds.with_z(zk)?;
    }
    if cols.x_pre.is_some() {
        if opts.x_pre_window.is_some() {
            return validation("the file has an x_pre column; drop the x_pre window option");
        }
        let values = x_pre
            .iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| CliError::Validation(format!("x_pre is empty on every row of unit {}", units[i]))))
            .collect::<Result<Vec<f64>>>()?;
        ds = ds.with_x_pre(values)?;
    } else if let Some((a, b)) = opts.x_pre_window {
        let values = window_average(&ds, a, b)?;
        ds = ds.with_x_pre(values)?;
    }
    if cols.g.is_some() {
        let labels = g
            .iter()
            .enumerate()
            .map(|(i, v)| v.clone().ok_or_else(|| CliError::Validation(format!("g is empty on every row of unit {}", units[i]))))
            .collect::<Result<Vec<String>>>()?;
        ds = ds.with_g(GroupFactor::from_labels(&labels)?)?;
    }
    ds.validate()?;
    Ok(ds)
}

/// Each unit's mean observed outcome over `a <= t <= b`.
pub fn window_average(ds: &PanelDataset, a: i64, b: i64) -> Result<Vec<f64>> {
    if a > b {
        return validation(format!("x_pre window {a}:{b} is empty"));
    }
    (0..ds.d())
        .map(|i| {
            let obs: Vec<f64> = (0..ds.n())
                .filter(|&k| ds.times[k] >= a && ds.times[k] <= b)
                .map(|k| ds.outcome[(k, i)])
                .filter(|v| !v.is_nan())
                .collect();
            if obs.is_empty() {
                return validation(format!("unit {} has no observed y in the x_pre window {a}:{b}", ds.units[i]));
            }
            Ok(obs.iter().sum::<f64>() / obs.len() as f64)
        })
        .collect()
}

/// Writes `ds` in the panel format, unit by unit. Observation weights are
/// not part of the format.
pub fn write_panel(ds: &PanelDataset) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header = vec!["unit".to_string(), "t".into(), "y".into(), "T".into()];
    if ds.x_pre.is_some() {
        header.push("x_pre".into());
    }
    match ds.z.len() {
        0 => {}
        1 => header.push("z".into()),
        k => header.extend((1..=k).map(|j| format!("z{j}"))),
    }
    if ds.g.is_some() {
        header.push("g".into());
    }
    w.write_record(&header).expect("writing to memory");
    let num = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    for i in 0..ds.d() {
        for k in 0..ds.n() {
            let mut rec = vec![
                ds.units[i].clone(),
                ds.times[k].to_string(),
                num(ds.outcome[(k, i)]),
                num(ds.treatment.at(k, i)),
            ];
            if let Some(x) = &ds.x_pre {
                rec.push(num(x[i]));
            }
            rec.extend(ds.z.iter().map(|z| num(z[(k, i)])));
            if let Some(g) = &ds.g {
                rec.push(g.levels[g.codes[i]].clone());
            }
            w.write_record(&rec).expect("writing to memory");
        }
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("CSV is UTF-8")
}
