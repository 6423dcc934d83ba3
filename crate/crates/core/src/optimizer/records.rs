use std::fmt::Write;

use super::IterationRecord;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Tab-separated history with a schema comment and a header row. Absent
/// values are written as `NA`.
pub fn records_table(history: &[IterationRecord]) -> String {
    let n = history.first().map_or(0, |r| r.candidate_location.len());
    let mut out = String::new();
    writeln!(out, "# dogs-record schema={RECORD_SCHEMA_VERSION}").unwrap();
    let mut header = vec![
        "iteration".to_string(),
        "branch".into(),
        "target".into(),
        "points".into(),
        "cumulative_samples".into(),
        "candidate_index".into(),
    ];
    header.extend((0..n).map(|j| format!("candidate_x{j}")));
    header.extend(
        [
            "candidate_y",
            "candidate_sigma",
            "regret",
            "min_regret",
            "reference_error",
            "alpha",
            "k",
            "level",
        ]
        .map(String::from),
    );
    writeln!(out, "{}", header.join("\t")).unwrap();
    for r in history {
        let mut row = vec![
            r.iteration.to_string(),
            r.branch.as_str().to_string(),
            opt(r.target),
            r.points.to_string(),
            r.cumulative_samples.to_string(),
            r.candidate_index.to_string(),
        ];
        row.extend(r.candidate_location.iter().map(|x| x.to_string()));
        row.extend([
            r.candidate_y.to_string(),
            r.candidate_sigma.to_string(),
            opt(r.regret),
            opt(r.min_regret),
            r.reference_error.to_string(),
            r.alpha.to_string(),
            r.k.to_string(),
            r.level.to_string(),
        ]);
        writeln!(out, "{}", row.join("\t")).unwrap();
    }
    out
}
