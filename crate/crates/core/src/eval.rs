//! Seeded evaluation, result tables, curve CSVs and golden fixture checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::Backend;
use crate::error::{Error, Result};
use crate::intervention::{CurvePoint, IncompleteRow};
use crate::model::ActivationRecord;
use crate::pipeline::Pipeline;
use crate::probe::{train_probe, TrainConfig};
use crate::scalar::Scalar;

/// Mean and sample standard deviation (n - 1). A single value has std 0.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|v| *v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Retrain the probe with each seed before evaluating.
    pub retrain_probe: Option<TrainConfig>,
    /// Abort once more than this share of backend calls has failed.
    pub max_failure_rate: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            retrain_probe: None,
            max_failure_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub example_id: String,
    pub label: String,
    pub predicted: Option<String>,
    pub parse_ok: bool,
    pub correct: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub failures: usize,
    pub records: Vec<RecordOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<SeedResult>,
    /// Set when the run stopped early on backend failures; the statistics
    /// then cover only completed seeds.
    pub aborted: Option<String>,
}

impl EvalReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.accuracy).collect()
    }
}

/// Classifies every record once per seed and aggregates accuracy. Replies
/// that fail to parse or match count as wrong.
pub fn evaluate_split<F: Scalar, B: Backend + ?Sized>(
    pipeline: &Pipeline<F>,
    train: &[ActivationRecord<F>],
    records: &[ActivationRecord<F>],
    backend: &B,
    seeds: &[u64],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let mut per_seed = Vec::new();
    let mut aborted = None;
    let mut calls = 0usize;
    let mut failures = 0usize;
    'seeds: for &seed in seeds {
        let mut run = pipeline.with_seed(seed);
        if let Some(cfg) = &options.retrain_probe {
            let probe = train_probe(train, run.roster(), &TrainConfig { seed, ..cfg.clone() })?;
            run = run.with_probe(probe)?;
        }
        let mut result = SeedResult {
            seed,
            accuracy: 0.0,
            correct: 0,
            total: records.len(),
            failures: 0,
            records: Vec::with_capacity(records.len()),
        };
        for r in records {
            calls += 1;
            let outcome = match run.classify_activations(&r.activations, backend, None) {
                Ok(o) => RecordOutcome {
                    example_id: r.example_id.clone(),
                    label: r.label.clone(),
                    correct: o.predicted.as_deref() == Some(r.label.as_str()),
                    predicted: o.predicted,
                    parse_ok: o.parsed.parse_ok,
                    error: None,
                },
                Err(Error::Backend(e)) => {
                    failures += 1;
                    result.failures += 1;
                    log::warn!("{}: backend failure: {e}", r.example_id);
                    RecordOutcome {
                        example_id: r.example_id.clone(),
                        label: r.label.clone(),
                        predicted: None,
                        parse_ok: false,
                        correct: false,
                        error: Some(e.to_string()),
                    }
                }
                Err(e) => return Err(e),
            };
            if !outcome.parse_ok && outcome.error.is_none() {
                log::info!("{}: unparsed reply counted as wrong", r.example_id);
            }
            result.correct += usize::from(outcome.correct);
            result.records.push(outcome);
            if failures as f64 > options.max_failure_rate * calls as f64 && failures >= 3 {
                aborted = Some(format!(
                    "{failures} of {calls} backend calls failed (seed {seed})"
                ));
                break 'seeds;
            }
        }
        result.accuracy = result.correct as f64 / result.total as f64;
        per_seed.push(result);
    }
    let accs: Vec<f64> = per_seed.iter().map(|s| s.accuracy).collect();
    let (mean, std) = if accs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        mean_std(&accs)?
    };
    Ok(EvalReport {
        mean,
        std,
        per_seed,
        aborted,
    })
}

/// A grid of mean/std cells keyed by row and column label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: BTreeMap<(String, String), (f64, f64)>,
}

impl ResultTable {
    pub fn new<R: Into<String>, C: Into<String>>(
        rows: impl IntoIterator<Item = R>,
        columns: impl IntoIterator<Item = C>,
    ) -> Self {
        Self {
            rows: rows.into_iter().map(Into::into).collect(),
            columns: columns.into_iter().map(Into::into).collect(),
            cells: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, row: &str, column: &str, mean: f64, std: f64) {
        self.cells
            .insert((row.to_string(), column.to_string()), (mean, std));
    }

    fn cell(&self, row: &str, column: &str) -> Result<(f64, f64)> {
        self.cells
            .get(&(row.to_string(), column.to_string()))
            .copied()
            .ok_or_else(|| Error::Config(format!("missing table cell ({row}, {column})")))
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> Result<String> {
        let mut grid = vec![std::iter::once(String::new())
            .chain(self.columns.iter().cloned())
            .collect::<Vec<_>>()];
        for r in &self.rows {
            let mut line = vec![r.clone()];
            for c in &self.columns {
                let (m, s) = self.cell(r, c)?;
                line.push(format_cell(m, s));
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|l| l[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in grid {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        Ok(out)
    }

    /// Long-format CSV: `row,column,mean,std`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "column", "mean", "std"])?;
        for r in &self.rows {
            for c in &self.columns {
                let (m, s) = self.cell(r, c)?;
                w.write_record([r.as_str(), c.as_str(), &m.to_string(), &s.to_string()])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut table = Self::default();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |reason: &str| Error::Fixture {
                file: "table".into(),
                row: i + 2,
                reason: reason.into(),
            };
            if rec.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let m: f64 = rec[2].parse().map_err(|_| bad("bad mean"))?;
            let s: f64 = rec[3].parse().map_err(|_| bad("bad std"))?;
            if !table.rows.iter().any(|r| r == &rec[0]) {
                table.rows.push(rec[0].to_string());
            }
            if !table.columns.iter().any(|c| c == &rec[1]) {
                table.columns.push(rec[1].to_string());
            }
            table.set(&rec[0], &rec[1], m, s);
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSchema {
    Ratio,
    Steps,
    Grid,
}

impl CurveSchema {
    pub fn header(self) -> &'static str {
        match self {
            Self::Ratio => "ratio,accuracy",
            Self::Steps => "steps,accuracy",
            Self::Grid => "start,concepts,accuracy",
        }
    }
}

/// One row of a concept-count grid; `concepts` is `None` for the final
/// external-description column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub start: usize,
    pub concepts: Option<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Curve {
    Ratio(Vec<CurvePoint>),
    Steps(Vec<f64>),
    Grid(Vec<GridPoint>),
}

impl Curve {
    pub fn schema(&self) -> CurveSchema {
        match self {
            Self::Ratio(_) => CurveSchema::Ratio,
            Self::Steps(_) => CurveSchema::Steps,
            Self::Grid(_) => CurveSchema::Grid,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(self.schema().header());
        out.push('\n');
        match self {
            Self::Ratio(points) => {
                for p in points {
                    let _ = writeln!(out, "{:.4},{:.4}", p.x, p.accuracy);
                }
            }
            Self::Steps(acc) => {
                for (i, a) in acc.iter().enumerate() {
                    let _ = writeln!(out, "{i},{a:.4}");
                }
            }
            Self::Grid(points) => {
                for p in points {
                    let c = p.concepts.map_or("+wiki".to_string(), |c| c.to_string());
                    let _ = writeln!(out, "{},{c},{:.4}", p.start, p.accuracy);
                }
            }
        }
        out
    }

    pub fn parse(schema: CurveSchema, text: &str, file: &str) -> Result<Self> {
        let bad = |row: usize, reason: String| Error::Fixture {
            file: file.to_string(),
            row,
            reason,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == schema.header() => {}
            other => {
                return Err(bad(
                    1,
                    format!("expected header `{}`, found `{}`", schema.header(), other.unwrap_or("")),
                ))
            }
        }
        let width = schema.header().split(',').count();
        let mut ratio = Vec::new();
        let mut steps = Vec::new();
        let mut grid = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(bad(row, format!("expected {width} fields, found {}", fields.len())));
            }
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(row, format!("bad {what} `{s}`")))
            };
            let acc = num(fields[width - 1], "accuracy")?;
            if !(0.0..=1.0).contains(&acc) {
                return Err(bad(row, format!("accuracy {acc} outside [0, 1]")));
            }
            match schema {
                CurveSchema::Ratio => {
                    let x = num(fields[0], "ratio")?;
                    if !(0.0..=1.0).contains(&x) {
                        return Err(bad(row, format!("ratio {x} outside [0, 1]")));
                    }
                    ratio.push(CurvePoint { x, accuracy: acc });
                }
                CurveSchema::Steps => {
                    let s: usize = fields[0]
                        .parse()
                        .map_err(|_| bad(row, format!("bad step `{}`", fields[0])))?;
                    if s != steps.len() {
                        return Err(bad(row, format!("step {s} out of sequence")));
                    }
                    steps.push(acc);
                }
                CurveSchema::Grid => {
                    let start: usize = fields[0]
                        .parse()
                        .map_err(|_| bad(row, format!("bad start `{}`", fields[0])))?;
                    let concepts = match fields[1] {
                        "+wiki" => None,
                        c => Some(
                            c.parse()
                                .map_err(|_| bad(row, format!("bad concept count `{c}`")))?,
                        ),
                    };
                    grid.push(GridPoint {
                        start,
                        concepts,
                        accuracy: acc,
                    });
                }
            }
        }
        let curve = match schema {
            CurveSchema::Ratio => {
                if ratio.windows(2).any(|w| w[1].x <= w[0].x) {
                    return Err(bad(0, "ratios must be strictly increasing".into()));
                }
                Curve::Ratio(ratio)
            }
            CurveSchema::Steps => Curve::Steps(steps),
            CurveSchema::Grid => Curve::Grid(grid),
        };
        if curve.is_empty() {
            return Err(bad(0, "no data rows".into()));
        }
        Ok(curve)
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Self::Ratio(p) => p.is_empty(),
            Self::Steps(s) => s.is_empty(),
            Self::Grid(g) => g.is_empty(),
        }
    }

    /// Accuracy sequences that monotonicity applies to; a grid has one per
    /// starting size.
    fn series(&self) -> Vec<Vec<f64>> {
        match self {
            Self::Ratio(p) => vec![p.iter().map(|p| p.accuracy).collect()],
            Self::Steps(s) => vec![s.clone()],
            Self::Grid(g) => {
                let mut by_start: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                for p in g {
                    by_start.entry(p.start).or_default().push(p.accuracy);
                }
                by_start.into_values().collect()
            }
        }
    }

    pub fn monotonicity(&self) -> Monotone {
        let series = self.series();
        let all = |f: fn(f64, f64) -> bool| {
            series
                .iter()
                .all(|s| s.windows(2).all(|w| f(w[0], w[1])))
        };
        if all(|a, b| b > a) {
            Monotone::Strict
        } else if all(|a, b| b >= a) {
            Monotone::NonDecreasing
        } else {
            Monotone::None
        }
    }
}

impl From<&[IncompleteRow]> for Curve {
    fn from(rows: &[IncompleteRow]) -> Self {
        Curve::Grid(
            rows.iter()
                .flat_map(|r| {
                    r.points.iter().map(move |&(c, a)| GridPoint {
                        start: r.start_concepts,
                        concepts: Some(c),
                        accuracy: a,
                    })
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotone {
    None,
    NonDecreasing,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub file: String,
    pub schema: CurveSchema,
    pub monotone: Monotone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub fixtures: Vec<FixtureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureResult {
    pub file: String,
    pub rows: usize,
    pub ok: bool,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureReport {
    pub results: Vec<FixtureResult>,
}

impl FixtureReport {
    pub fn ok(&self) -> bool {
        self.results.iter().all(|r| r.ok)
    }
}

pub fn load_curve(path: &Path, schema: CurveSchema) -> Result<Curve> {
    let text = fs::read_to_string(path)?;
    Curve::parse(schema, &text, &path.display().to_string())
}

/// Validates every fixture listed in `dir/fixtures.json`: schema, value
/// ranges, declared monotonicity, and byte-identical re-emission.
pub fn check_golden_fixtures(dir: &Path) -> Result<FixtureReport> {
    let manifest_path = dir.join("fixtures.json");
    let manifest: FixtureManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.fixtures.is_empty() {
        return Err(Error::Fixture {
            file: manifest_path.display().to_string(),
            row: 0,
            reason: "manifest lists no fixtures".into(),
        });
    }
    let mut results = Vec::new();
    for spec in &manifest.fixtures {
        let path: PathBuf = dir.join(&spec.file);
        let text = fs::read_to_string(&path)?;
        let curve = Curve::parse(spec.schema, &text, &spec.file)?;
        let mut problems = Vec::new();
        let found = curve.monotonicity();
        if found < spec.monotone {
            problems.push(format!(
                "declared {:?} but data is {:?}",
                spec.monotone, found
            ));
        }
        if curve.to_csv() != text {
            problems.push("re-emitted CSV differs from the file".into());
        }
        results.push(FixtureResult {
            file: spec.file.clone(),
            rows: text.lines().count().saturating_sub(1),
            ok: problems.is_empty(),
            problems,
        });
    }
    Ok(FixtureReport { results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_closed_form() {
        let (m, s) = mean_std(&[0.8, 0.9]).unwrap();
        assert!((m - 0.85).abs() < 1e-12);
        assert!((s - (0.005f64).sqrt()).abs() < 1e-12);
        assert_eq!(format_cell(m, s), "0.850 ± 0.071");
        assert_eq!(mean_std(&[0.7, 0.7, 0.7]).unwrap().1, 0.0);
        assert_eq!(mean_std(&[0.4]).unwrap(), (0.4, 0.0));
        assert!(mean_std(&[]).is_err());
        assert_eq!(format_cell(0.815, 0.005), "0.815 ± 0.005");
    }

    #[test]
    fn table_csv_round_trip() {
        let mut t = ResultTable::new(["CUB", "AwA2"], ["Chat-CBM", "CBM"]);
        t.set("CUB", "Chat-CBM", 0.815, 0.005);
        t.set("CUB", "CBM", 0.1 + 0.2, 0.0);
        t.set("AwA2", "Chat-CBM", 0.9, 1.0 / 3.0);
        assert!(t.to_csv().is_err());
        t.set("AwA2", "CBM", 0.5, 0.25);
        let back = ResultTable::from_csv(&t.to_csv().unwrap()).unwrap();
        assert_eq!(back, t);
        let text = t.to_text().unwrap();
        assert!(text.contains("0.815 ± 0.005"));
        assert!(text.contains("0.300 ± 0.000"));
    }

    #[test]
    fn curve_round_trip_and_errors() {
        let text = "ratio,accuracy\n0.0000,0.7978\n0.5000,0.9874\n1.0000,0.9984\n";
        let c = Curve::parse(CurveSchema::Ratio, text, "t").unwrap();
        assert_eq!(c.to_csv(), text);
        assert_eq!(c.monotonicity(), Monotone::Strict);
        let err = Curve::parse(CurveSchema::Ratio, "ratio,accuracy\n0.0,0.5\n0.5,oops\n", "t")
            .unwrap_err();
        assert!(matches!(err, Error::Fixture { row: 3, .. }));
        assert!(Curve::parse(CurveSchema::Steps, text, "t").is_err());
        let grid = "start,concepts,accuracy\n5,112,0.7970\n5,+wiki,0.9450\n";
        let g = Curve::parse(CurveSchema::Grid, grid, "g").unwrap();
        assert_eq!(g.to_csv(), grid);
    }
}
