use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::stages::{evaluate_cell, load_prepared, load_synthetic, oversample_one, Prepared};
use super::{cmd_preprocess, write_file, write_json, Counts, ExperimentConfig, ExperimentError, Layout};
use crate::classifiers::ClassifierKind;
use crate::metrics::{MetricsReport, METRIC_NAMES};
use crate::oversample::Method;
use crate::par::Exec;

/// A grid cell (or a whole method when `classifier` is empty) that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub seed: u64,
    pub method: Method,
    pub classifier: Option<ClassifierKind>,
    pub error: String,
}

impl CellFailure {
    pub fn new(seed: u64, method: Method, classifier: Option<ClassifierKind>, e: &ExperimentError) -> Self {
        CellFailure {
            seed,
            method,
            classifier,
            error: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub version: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub classifiers: Vec<ClassifierKind>,
    pub threshold: f64,
    pub counts: Vec<Counts>,
    /// Kept out of `grid.json` so that file only depends on the config.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<CellFailure>,
    pub metadata: GridMetadata,
}

impl GridResult {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn reports_for(&self, method: Method, kind: ClassifierKind) -> Vec<&MetricsReport> {
        self.reports
            .iter()
            .filter(|r| r.method == method.name() && r.classifier == kind.name())
            .collect()
    }

    /// Lower median over seeds of one metric, with the report it came from.
    pub fn median(&self, metric: &str, method: Method, kind: ClassifierKind) -> Option<(f64, &MetricsReport)> {
        let cell = self.reports_for(method, kind);
        let values: Vec<(f64, &MetricsReport)> = cell.into_iter().filter_map(|r| Some((r.metric(metric)?, r))).collect();
        lower_median(values, |(v, r)| (*v, r.seed))
    }
}

/// Element at index `(n - 1) / 2` after sorting by `key`, so the result is
/// always one of the inputs.
pub fn lower_median<T, F>(mut items: Vec<T>, key: F) -> Option<T>
where
    F: Fn(&T) -> (f64, u64),
{
    if items.is_empty() {
        return None;
    }
    items.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1))
    });
    let mid = (items.len() - 1) / 2;
    Some(items.swap_remove(mid))
}

fn cell_order(cfg: &ExperimentConfig) -> (Vec<Method>, Vec<ClassifierKind>) {
    let methods = Method::BUILTIN
        .into_iter()
        .chain([Method::External])
        .filter(|m| cfg.methods.contains(m))
        .collect();
    let kinds = ClassifierKind::ALL.into_iter().filter(|k| cfg.classifiers.contains(k)).collect();
    (methods, kinds)
}

/// Runs preprocessing, every synthesizer and every grid cell, then writes
/// the comparison tables. Failed cells are recorded and the rest still run.
pub fn cmd_compare(cfg: &ExperimentConfig, exec: Exec) -> Result<GridResult, ExperimentError> {
    let started = Instant::now();
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    write_json(&layout.root().join("config.json"), cfg)?;
    let counts = cmd_preprocess(cfg)?;
    let (methods, kinds) = cell_order(cfg);

    let prepared: Vec<Prepared> = cfg.seeds.iter().map(|&s| load_prepared(&layout, s)).collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, Method)> = (0..cfg.seeds.len())
        .flat_map(|i| methods.iter().filter(|m| m.is_synthetic()).map(move |&m| (i, m)))
        .collect();
    let synth_results = exec.map_slice(&jobs, |&(i, m)| oversample_one(cfg, &layout, cfg.seeds[i], m, &prepared[i].train, exec));

    let mut failures = Vec::new();
    let mut failed_methods = Vec::new();
    for (&(i, m), r) in jobs.iter().zip(synth_results) {
        match r {
            Ok(_) => {}
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => {
                failures.push(CellFailure::new(cfg.seeds[i], m, None, &e));
                failed_methods.push((i, m));
            }
        }
    }

    let mut synthetic = BTreeMap::new();
    for (i, p) in prepared.iter().enumerate() {
        for &m in &methods {
            if !failed_methods.contains(&(i, m)) {
                synthetic.insert((i, m), load_synthetic(&layout, cfg.seeds[i], m, &p.train.feature_names)?);
            }
        }
    }
    let (methods_ref, kinds_ref) = (&methods, &kinds);
    let cells: Vec<(usize, Method, ClassifierKind)> = (0..cfg.seeds.len())
        .flat_map(|i| methods_ref.iter().flat_map(move |&m| kinds_ref.iter().map(move |&k| (i, m, k))))
        .filter(|(i, m, _)| synthetic.contains_key(&(*i, *m)))
        .collect();
    let results = exec.map_slice(&cells, |&(i, m, k)| {
        let x = synthetic[&(i, m)].as_ref();
        evaluate_cell(cfg, cfg.seeds[i], m, k, &prepared[i], x, exec)
    });

    let mut reports = Vec::new();
    for (&(i, m, k), r) in cells.iter().zip(results) {
        match r {
            Ok(rep) => {
                write_json(&layout.report_json(cfg.seeds[i], m, k), &rep)?;
                reports.push(rep);
            }
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => failures.push(CellFailure::new(cfg.seeds[i], m, Some(k), &e)),
        }
    }

    let grid = GridResult {
        reports,
        failures,
        metadata: GridMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: cfg.seeds.clone(),
            methods,
            classifiers: kinds,
            threshold: cfg.threshold,
            counts,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    };
    write_tables(&grid, &layout)?;
    Ok(grid)
}

const TABLE_TITLES: [(&str, &str); 5] = [
    ("auc", "ROC-AUC"),
    ("precision", "Precision"),
    ("recall", "Recall"),
    ("f1", "F1"),
    ("accuracy", "Accuracy"),
];

fn write_tables(grid: &GridResult, layout: &Layout) -> Result<(), ExperimentError> {
    let dir = layout.compare_dir();
    let meta = &grid.metadata;
    let mut cells = String::from("metric,classifier,method,value,report\n");
    let mut md = String::new();
    let _ = writeln!(
        md,
        "# Comparison\n\nMedian over seeds {:?} at threshold {}. Rows are classifiers, columns are oversampling methods.\n",
        meta.seeds, meta.threshold
    );
    for name in METRIC_NAMES {
        let title = TABLE_TITLES.iter().find(|(n, _)| *n == name).map_or(name, |(_, t)| t);
        let mut matrix = String::from("classifier");
        let mut plot = String::from("method,classifier,value\n");
        for m in &meta.methods {
            let _ = write!(matrix, ",{}", m.name());
        }
        matrix.push('\n');
        let _ = writeln!(md, "## {title}\n");
        let _ = writeln!(
            md,
            "| Classifier | {} |",
            meta.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(" | ")
        );
        let _ = writeln!(md, "|---|{}", "---|".repeat(meta.methods.len()));
        for &k in &meta.classifiers {
            matrix.push_str(k.name());
            let mut row = Vec::new();
            for &m in &meta.methods {
                match grid.median(name, m, k) {
                    Some((v, r)) => {
                        let report = layout
                            .report_json(r.seed, m, k)
                            .strip_prefix(layout.root())
                            .map(|p| p.display().to_string())
                            .unwrap_or_default();
                        let _ = write!(matrix, ",{v}");
                        let _ = writeln!(cells, "{name},{},{},{v},{report}", k.name(), m.name());
                        row.push(format!("{v:.2}"));
                    }
                    None => {
                        matrix.push_str(",NA");
                        row.push("NA".into());
                    }
                }
            }
            matrix.push('\n');
            let _ = writeln!(md, "| {} | {} |", k.label(), row.join(" | "));
        }
        for &m in &meta.methods {
            for &k in &meta.classifiers {
                if let Some((v, _)) = grid.median(name, m, k) {
                    let _ = writeln!(plot, "{},{},{v}", m.name(), k.name());
                }
            }
        }
        md.push('\n');
        write_file(&dir.join(format!("{name}.csv")), matrix)?;
        write_file(&dir.join(format!("plot_{name}.csv")), plot)?;
    }
    if !grid.failures.is_empty() {
        let _ = writeln!(md, "## Failed cells\n");
        for f in &grid.failures {
            let clf = f.classifier.map_or("all", |k| k.name());
            let _ = writeln!(md, "- seed {} / {} / {}: {}", f.seed, f.method.name(), clf, f.error);
        }
    }
    write_file(&dir.join("cells.csv"), cells)?;
    write_file(&dir.join("summary.md"), md)?;
    write_json(&dir.join("grid.json"), grid)?;
    write_json(
        &dir.join("timing.json"),
        &serde_json::json!({ "wall_time_secs": meta.wall_time_secs }),
    )
}
