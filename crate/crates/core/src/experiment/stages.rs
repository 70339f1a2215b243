use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create_dir, read_json, write_file, write_json, CellFailure, ExperimentConfig, ExperimentError, Layout};
use crate::checkpoint::{save_checkpoint, GenerativeModel};
use crate::classifiers::{self, ClassifierKind, Scorer};
use crate::data::{
    blob_fixture, class_counts, deduplicate, load_csv, minmax_fit, minmax_transform, row_fingerprint, stratified_split,
    write_csv, DataError, Dataset, Matrix, Schema, CREDITCARD_LABEL,
};
use crate::metrics::{self, MetricsReport};
use crate::oversample::{augment_dataset, gan_train, smote_generate, tvae_train, Method, OversampleError, TrainTrace};
use crate::par::Exec;
use crate::rng::derive_seed_str;

/// Row and class counts written by preprocessing, plus a digest of the
/// test split that evaluation checks before scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub seed: u64,
    pub source: String,
    pub rows_raw: usize,
    pub rows_kept: usize,
    pub train_negatives: usize,
    pub train_positives: usize,
    pub test_negatives: usize,
    pub test_positives: usize,
    pub test_digest: String,
}

/// Result of a stage that runs several independent jobs. Jobs that fail
/// are listed; the rest still ran.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub failures: Vec<CellFailure>,
}

impl ExperimentError {
    /// Errors that stop a whole command rather than one grid cell.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            ExperimentError::Io { .. }
                | ExperimentError::Json { .. }
                | ExperimentError::Config(_)
                | ExperimentError::MissingArtifact(_)
                | ExperimentError::Leakage(_)
        )
    }
}

/// Order-sensitive digest over row fingerprints and labels.
pub fn split_digest(d: &Dataset) -> String {
    let h = d.features.iter_rows().zip(&d.labels).fold(0xcbf2_9ce4_8422_2325u64, |h, (row, &l)| {
        (h ^ row_fingerprint(row)).wrapping_mul(0x0100_0000_01b3) ^ l as u64
    });
    format!("{h:016x}")
}

fn load_source(cfg: &ExperimentConfig) -> Result<(Dataset, String), ExperimentError> {
    match &cfg.dataset {
        Some(p) => {
            let d = load_csv(p, cfg.schema).map_err(|e| with_path(p, e))?;
            Ok((d, p.display().to_string()))
        }
        None => Ok((blob_fixture(&cfg.fixture), "blob_fixture".into())),
    }
}

fn with_path(p: &Path, e: DataError) -> ExperimentError {
    match e {
        DataError::Io { path, source } => ExperimentError::Io { path, source },
        other => ExperimentError::DataFile {
            path: p.to_path_buf(),
            source: other,
        },
    }
}

fn preprocess_seed(cfg: &ExperimentConfig, raw: &Dataset, source: &str, seed: u64, layout: &Layout) -> Result<Counts, ExperimentError> {
    let d = if cfg.deduplicate { deduplicate(raw) } else { raw.clone() };
    let split = stratified_split(&d, cfg.train_fraction, derive_seed_str(seed, "split"))?;
    let (train, test) = (d.subset(&split.train_idx), d.subset(&split.test_idx));
    let scaler = minmax_fit(&train, &cfg.normalization().columns(&d.feature_names))?;
    let train = minmax_transform(&train, &scaler)?;
    let test = minmax_transform(&test, &scaler)?;

    create_dir(&layout.seed_dir(seed))?;
    let (tr, te) = (layout.train_csv(seed), layout.test_csv(seed));
    write_csv(&train, &tr).map_err(|e| with_path(&tr, e))?;
    write_csv(&test, &te).map_err(|e| with_path(&te, e))?;
    write_json(&layout.scaler_json(seed), &scaler)?;
    let (train_negatives, train_positives) = class_counts(&train);
    let (test_negatives, test_positives) = class_counts(&test);
    let counts = Counts {
        seed,
        source: source.to_string(),
        rows_raw: raw.len(),
        rows_kept: d.len(),
        train_negatives,
        train_positives,
        test_negatives,
        test_positives,
        test_digest: split_digest(&test),
    };
    write_json(&layout.counts_json(seed), &counts)?;
    Ok(counts)
}

/// Cleans, splits and scales the data once per seed.
pub fn cmd_preprocess(cfg: &ExperimentConfig) -> Result<Vec<Counts>, ExperimentError> {
    cfg.validate()?;
    let (raw, source) = load_source(cfg)?;
    let layout = Layout::new(&cfg.out_dir);
    cfg.seeds.iter().map(|&s| preprocess_seed(cfg, &raw, &source, s, &layout)).collect()
}

fn load_split(p: &Path) -> Result<Dataset, ExperimentError> {
    if !p.exists() {
        return Err(ExperimentError::MissingArtifact(p.to_path_buf()));
    }
    load_csv(p, Schema::Generic).map_err(|e| with_path(p, e))
}

pub(crate) struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub counts: Counts,
}

pub(crate) fn load_prepared(layout: &Layout, seed: u64) -> Result<Prepared, ExperimentError> {
    Ok(Prepared {
        train: load_split(&layout.train_csv(seed))?,
        test: load_split(&layout.test_csv(seed))?,
        counts: read_json(&layout.counts_json(seed))?,
    })
}

const SYNTHETIC_COLUMN: &str = "synthetic";

/// Feature columns, then `Class` and `synthetic`, both 1 on every row.
pub fn write_synthetic_csv(x: &Matrix, feature_names: &[String], path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = feature_names.to_vec();
    header.extend([CREDITCARD_LABEL.to_string(), SYNTHETIC_COLUMN.to_string()]);
    let to_err = |e: csv::Error| ExperimentError::DataFile {
        path: path.to_path_buf(),
        source: DataError::Csv(e),
    };
    w.write_record(&header).map_err(to_err)?;
    for row in x.iter_rows() {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        fields.extend(["1".to_string(), "1".to_string()]);
        w.write_record(&fields).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| to_err(e.into_error().into()))?;
    write_file(path, bytes)
}

/// Reads synthetic rows for `feature_names`. The header must be the
/// features and `Class`, optionally followed by `synthetic`; every row must
/// be labeled 1.
pub fn read_synthetic_csv(path: &Path, feature_names: &[String]) -> Result<Matrix, ExperimentError> {
    let err = |source: DataError| ExperimentError::DataFile {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(r) => r.map_err(|e| err(e.into()))?.iter().map(|s| s.trim().to_string()).collect(),
        None => return Err(err(DataError::EmptyFile(path.to_path_buf()))),
    };
    let mut expected = feature_names.to_vec();
    expected.push(CREDITCARD_LABEL.into());
    let with_flag = header.len() == expected.len() + 1;
    if header[..header.len().min(expected.len())] != expected[..]
        || !(header.len() == expected.len() || with_flag && header.last().map(String::as_str) == Some(SYNTHETIC_COLUMN))
    {
        return Err(err(DataError::SchemaMismatch(format!(
            "expected {} feature columns then {CREDITCARD_LABEL} [, {SYNTHETIC_COLUMN}], found {:?}",
            feature_names.len(),
            header
        ))));
    }
    let width = feature_names.len();
    let mut m = Matrix::empty(width);
    let mut row = vec![0.0; width];
    for (r, rec) in records.enumerate() {
        let rec = rec.map_err(|e| err(e.into()))?;
        if rec.len() != header.len() {
            return Err(err(DataError::WidthMismatch {
                expected: header.len(),
                got: rec.len(),
            }));
        }
        for (c, field) in rec.iter().enumerate() {
            let v = field.trim().parse::<f64>().ok().filter(|v| v.is_finite());
            let bad = || {
                err(DataError::Parse {
                    row: r,
                    col: header[c].clone(),
                    value: field.to_string(),
                })
            };
            match v {
                Some(v) if c < width => row[c] = v,
                Some(1.0) => {}
                _ => return Err(bad()),
            }
        }
        m.push_row(&row).expect("width checked");
    }
    Ok(m)
}

fn write_trace(trace: &TrainTrace, path: &Path) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(|source| ExperimentError::DataFile {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, buf)
}

/// Trains one synthesizer on the training minority and writes its rows,
/// checkpoint and loss trace.
pub(crate) fn oversample_one(
    cfg: &ExperimentConfig,
    layout: &Layout,
    seed: u64,
    method: Method,
    train: &Dataset,
    exec: Exec,
) -> Result<usize, ExperimentError> {
    let dir = layout.method_dir(seed, method);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|source| ExperimentError::Io { path: dir.clone(), source })?;
    }
    create_dir(&dir)?;
    let minority = train.class_rows(1);
    let fit_seed = derive_seed_str(seed, method.name());
    let sample_seed = derive_seed_str(seed, &format!("{}.sample", method.name()));
    let trace_path = layout.trace_csv(seed, method);
    let diverged = |e: OversampleError| {
        if let OversampleError::DivergenceDetected { trace, .. } = &e {
            write_trace(trace, &trace_path)?;
        }
        Err(ExperimentError::Oversample(e))
    };
    let rows = match method {
        Method::Original => return Ok(0),
        Method::Smote => smote_generate(&minority, &cfg.smote, cfg.n_synthetic, sample_seed, exec)?,
        Method::GanTransformer | Method::Tvae => {
            let trained = match method {
                Method::GanTransformer => gan_train(&minority, &cfg.gan, fit_seed).map(|(m, t)| (GenerativeModel::Gan(m), t)),
                _ => tvae_train(&minority, &cfg.tvae, fit_seed).map(|(m, t)| (GenerativeModel::Tvae(m), t)),
            };
            let (model, trace) = match trained {
                Ok(v) => v,
                Err(e) => return diverged(e),
            };
            write_trace(&trace, &trace_path)?;
            save_checkpoint(&model, &layout.checkpoint(seed, method))?;
            model.sample(cfg.n_synthetic, sample_seed)?
        }
        Method::External => {
            let path = cfg
                .external_synthetic
                .as_ref()
                .ok_or_else(|| ExperimentError::Config("method external needs external_synthetic".into()))?;
            read_synthetic_csv(path, &train.feature_names)?
        }
    };
    if !rows.all_finite() {
        return Err(OversampleError::Config(format!("{} produced non-finite rows", method.name())).into());
    }
    write_synthetic_csv(&rows, &train.feature_names, &layout.synthetic_csv(seed, method))?;
    Ok(rows.rows())
}

/// Runs every synthesizer in `only` (or the config's methods) for each seed.
pub fn cmd_oversample(cfg: &ExperimentConfig, only: Option<Method>, exec: Exec) -> Result<Outcome, ExperimentError> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    let mut out = Outcome::default();
    for &seed in &cfg.seeds {
        let train = load_split(&layout.train_csv(seed))?;
        for &m in cfg.methods.iter().filter(|m| m.is_synthetic() && only.is_none_or(|o| o == **m)) {
            match oversample_one(cfg, &layout, seed, m, &train, exec) {
                Ok(_) => {}
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => out.failures.push(CellFailure::new(seed, m, None, &e)),
            }
        }
    }
    Ok(out)
}

/// Refuses to score a test split that carries synthetic rows or whose
/// rows differ from what preprocessing wrote.
pub(crate) fn assert_clean_test(test: &Dataset, counts: &Counts) -> Result<(), ExperimentError> {
    if test.n_synthetic() > 0 {
        return Err(ExperimentError::Leakage(format!("{} synthetic rows in the test split", test.n_synthetic())));
    }
    let digest = split_digest(test);
    if digest != counts.test_digest {
        return Err(ExperimentError::Leakage(format!(
            "test split digest {digest} does not match preprocessing ({})",
            counts.test_digest
        )));
    }
    Ok(())
}

/// Trains one classifier on train (plus synthetic rows) and scores the
/// untouched test split.
pub(crate) fn evaluate_cell(
    cfg: &ExperimentConfig,
    seed: u64,
    method: Method,
    kind: ClassifierKind,
    prepared: &Prepared,
    synthetic: Option<&Matrix>,
    exec: Exec,
) -> Result<MetricsReport, ExperimentError> {
    assert_clean_test(&prepared.test, &prepared.counts)?;
    let train = match synthetic {
        Some(x) => augment_dataset(&prepared.train, x)?,
        None => prepared.train.clone(),
    };
    let model = classifiers::train(kind, &train, &cfg.classifier_params, derive_seed_str(seed, kind.name()), exec)?;
    let scores = model.score(&prepared.test.features)?;
    Ok(metrics::report(method.name(), kind.name(), seed, &scores, &prepared.test.labels, cfg.threshold)?)
}

pub(crate) fn load_synthetic(layout: &Layout, seed: u64, method: Method, names: &[String]) -> Result<Option<Matrix>, ExperimentError> {
    if !method.is_synthetic() {
        return Ok(None);
    }
    let p = layout.synthetic_csv(seed, method);
    if !p.exists() {
        return Err(ExperimentError::MissingArtifact(p));
    }
    read_synthetic_csv(&p, names).map(Some)
}

/// Evaluates the selected methods and classifiers for each seed and writes
/// one report per cell.
pub fn cmd_train_eval(
    cfg: &ExperimentConfig,
    method: Option<Method>,
    classifier: Option<ClassifierKind>,
    exec: Exec,
) -> Result<Outcome, ExperimentError> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    let mut out = Outcome::default();
    for &seed in &cfg.seeds {
        let prepared = load_prepared(&layout, seed)?;
        for &m in cfg.methods.iter().filter(|m| method.is_none_or(|o| o == **m)) {
            let synthetic = load_synthetic(&layout, seed, m, &prepared.train.feature_names)?;
            for &k in cfg.classifiers.iter().filter(|k| classifier.is_none_or(|o| o == **k)) {
                match evaluate_cell(cfg, seed, m, k, &prepared, synthetic.as_ref(), exec) {
                    Ok(r) => write_json(&layout.report_json(seed, m, k), &r)?,
                    Err(e) if e.is_fatal() => return Err(e),
                    Err(e) => out.failures.push(CellFailure::new(seed, m, Some(k), &e)),
                }
            }
        }
    }
    Ok(out)
}
