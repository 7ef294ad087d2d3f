//! Long-format plot data: one `t,series,value` row per number.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use dynfx::effects::EffectSeries;

pub const PLOT_HEADER: &str = "t,series,value";

/// Rows `point`, `lower` and `upper` of every series point, named
/// `<prefix>point` and so on, where the prefix is `<method>.<estimand>.` when
/// several series are given and empty otherwise. `truth` adds a `truth` row
/// for each time point that has a value.
pub fn emit_plotdata(series: &[EffectSeries], truth: Option<&BTreeMap<i64, f64>>) -> String {
    let mut out = format!("{PLOT_HEADER}\n");
    let prefix = |s: &EffectSeries| {
        if series.len() > 1 {
            format!("{}.{}.", s.method, s.estimand)
        } else {
            String::new()
        }
    };
    for s in series {
        let p = prefix(s);
        for pt in &s.points {
            for (kind, v) in [("point", pt.point), ("lower", pt.lower), ("upper", pt.upper)] {
                let _ = writeln!(out, "{},{},{v}", pt.time, csv_field(&format!("{p}{kind}")));
            }
        }
    }
    if let Some(truth) = truth {
        let mut times: Vec<i64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.time)).collect();
        times.sort_unstable();
        times.dedup();
        for t in times {
            if let Some(v) = truth.get(&t) {
                let _ = writeln!(out, "{t},truth,{v}");
            }
        }
    }
    out
}

/// Quotes `s` when it contains CSV metacharacters; estimand labels such as
/// `CATE(x_pre=1,g=0)` carry commas.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
