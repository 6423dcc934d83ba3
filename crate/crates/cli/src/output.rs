use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use dogs_core::{EvaluatedPoint, IterationRecord, StochasticObjective, UqFit};

/// Write `contents` to `dir/name` through a temporary file and a rename, so
/// readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

/// Final point set: location, sample count, averaging length, estimate,
/// uncertainty, and the true value where known.
pub fn points_table<O: StochasticObjective>(
    points: &[EvaluatedPoint<O::State>],
    obj: &O,
) -> String {
    let n = obj.dimension();
    let h = obj.uncertainty().sample_interval;
    let mut out = String::from("# dogs-points schema=1\nindex\t");
    for j in 0..n {
        write!(out, "x{j}\t").unwrap();
    }
    out.push_str("samples\taveraging_length\ty\tsigma\ttruth\n");
    for (i, p) in points.iter().enumerate() {
        write!(out, "{i}\t").unwrap();
        for x in p.location.coords() {
            write!(out, "{x}\t").unwrap();
        }
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            p.sample_count,
            p.sample_count as f64 * h,
            p.measurement,
            p.sigma,
            opt(obj.truth(&p.location)),
        )
        .unwrap();
    }
    out
}

/// One row of the ensemble aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub cumulative_samples: u64,
    pub regret: Option<[f64; 3]>,
    pub candidate_y: [f64; 3],
    pub reference_error: f64,
}

fn stats(v: &[f64]) -> [f64; 3] {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [mean, min, max]
}

/// Mean, min and max over members on the union of their sample counts.
///
/// Each member contributes its last record at or below the count. Counts
/// below some member's first record are skipped.
pub fn aggregate(
    members: &[Vec<IterationRecord>],
    reference: impl Fn(u64) -> f64,
) -> Vec<AggregateRow> {
    let start = members
        .iter()
        .filter_map(|h| h.first().map(|r| r.cumulative_samples))
        .max()
        .unwrap_or(0);
    let mut grid: Vec<u64> = members
        .iter()
        .flatten()
        .map(|r| r.cumulative_samples)
        .filter(|&s| s >= start)
        .collect();
    grid.sort_unstable();
    grid.dedup();
    grid.into_iter()
        .map(|s| {
            let at: Vec<&IterationRecord> = members
                .iter()
                .map(|h| {
                    let k = h.partition_point(|r| r.cumulative_samples <= s);
                    &h[k - 1]
                })
                .collect();
            let regrets: Option<Vec<f64>> = at.iter().map(|r| r.regret).collect();
            let ys: Vec<f64> = at.iter().map(|r| r.candidate_y).collect();
            AggregateRow {
                cumulative_samples: s,
                regret: regrets.map(|r| stats(&r)),
                candidate_y: stats(&ys),
                reference_error: reference(s),
            }
        })
        .collect()
}

pub fn aggregate_table(rows: &[AggregateRow], runs: usize) -> String {
    let mut out = String::from(
        "# dogs-aggregate schema=1\ncumulative_samples\truns\tmean_regret\tmin_regret\tmax_regret\t\
         mean_candidate_y\tmin_candidate_y\tmax_candidate_y\treference_error\n",
    );
    for r in rows {
        let [a, b, c] = r.regret.map_or([None; 3], |v| v.map(Some));
        let [d, e, f] = r.candidate_y;
        writeln!(
            out,
            "{}\t{runs}\t{}\t{}\t{}\t{d}\t{e}\t{f}\t{}",
            r.cumulative_samples,
            opt(a),
            opt(b),
            opt(c),
            r.reference_error
        )
        .unwrap();
    }
    out
}

pub fn uq_table(fit: &UqFit, ensemble: usize) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "# dogs-uq schema=1 A={} theta={} ensemble={ensemble} low_confidence={}",
        fit.model.scale, fit.model.theta, fit.low_confidence
    )
    .unwrap();
    out.push_str("samples\tlength\tempirical_std\tfitted\n");
    for r in &fit.rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.samples, r.length, r.empirical_std, r.fitted
        )
        .unwrap();
    }
    out
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either input is constant or shorter than two.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let m = (a.len() + 1) as f64 / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - m) * (y - m);
        saa += (x - m) * (x - m);
        sbb += (y - m) * (y - m);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spearman_reference_values() {
        // scipy.stats.spearmanr
        assert_relative_eq!(
            spearman(&[1., 2., 3., 4.], &[10., 20., 30., 40.]).unwrap(),
            1.0
        );
        assert_relative_eq!(
            spearman(&[1., 2., 3., 4.], &[4., 3., 2., 1.]).unwrap(),
            -1.0
        );
        assert_relative_eq!(
            spearman(&[1., 2., 2., 3.], &[1., 3., 2., 4.]).unwrap(),
            0.9486832980505138,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            spearman(&[3.1, 0.2, 5.0, 1.1, 2.2], &[1., 2., 3., 4., 5.]).unwrap(),
            -0.1,
            epsilon = 1e-12
        );
        assert_eq!(spearman(&[1., 1., 1.], &[1., 2., 3.]), None);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[5., 1., 5., 3.]), vec![3.5, 1., 3.5, 2.]);
    }

    fn rec(s: u64, regret: f64) -> IterationRecord {
        IterationRecord {
            iteration: 0,
            branch: dogs_core::Branch::Initial,
            target: None,
            points: 2,
            cumulative_samples: s,
            candidate_index: 0,
            candidate_location: vec![0.0],
            candidate_y: regret,
            candidate_sigma: 0.1,
            regret: Some(regret),
            min_regret: Some(regret),
            reference_error: 0.0,
            alpha: 0.0,
            k: 0.5,
            level: 3,
            rho: None,
        }
    }

    #[test]
    fn aggregate_takes_last_record_per_count() {
        let a = vec![rec(10, 1.0), rec(12, 0.5), rec(12, 0.4), rec(20, 0.1)];
        let b = vec![rec(11, 2.0), rec(15, 1.0)];
        let rows = aggregate(&[a, b], |_| 0.0);
        let counts: Vec<u64> = rows.iter().map(|r| r.cumulative_samples).collect();
        assert_eq!(counts, vec![11, 12, 15, 20]);
        assert_eq!(rows[0].regret, Some([1.5, 1.0, 2.0]));
        assert_eq!(rows[1].regret, Some([(0.4 + 2.0) / 2.0, 0.4, 2.0]));
        assert_eq!(rows[3].regret, Some([(0.1 + 1.0) / 2.0, 0.1, 1.0]));
    }
}
