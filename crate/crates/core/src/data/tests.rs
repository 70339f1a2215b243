use std::io::Cursor;
use std::path::Path;

use proptest::prelude::*;

use super::*;

fn creditcard_header() -> String {
    let mut h = Schema::creditcard_features();
    h.push("Class".into());
    h.join(",")
}

fn creditcard_row(base: f64, label: u8) -> String {
    let mut fields: Vec<String> = (0..30).map(|i| (base + i as f64 * 0.25).to_string()).collect();
    fields.push(label.to_string());
    fields.join(",")
}

fn toy(rows: &[&[f64]], labels: &[u8]) -> Dataset {
    let m = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
    let names = (0..m.cols()).map(|i| format!("c{i}")).collect();
    Dataset::new(m, labels.to_vec(), names).unwrap()
}

#[test]
fn three_row_fixture_parses_exactly() {
    let csv = format!(
        "{}\n{}\n{}\n{}\n",
        creditcard_header(),
        creditcard_row(0.0, 0),
        creditcard_row(-1.5, 1),
        creditcard_row(149.62, 0)
    );
    let d = read_csv(Cursor::new(csv), Schema::Creditcard, Path::new("fixture.csv")).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.n_features(), 30);
    assert_eq!(d.labels, vec![0, 1, 0]);
    assert_eq!(d.features.get(1, 0), -1.5);
    assert_eq!(d.features.get(1, 29), -1.5 + 29.0 * 0.25);
    assert_eq!(d.features.get(2, 0), 149.62);
    assert_eq!(d.feature_names[0], "Time");
    assert_eq!(d.feature_names[29], "Amount");
    assert!(d.synthetic_mask.iter().all(|&s| !s));
}

#[test]
fn wrong_header_is_rejected() {
    let csv = creditcard_header().replace("V7", "V77") + "\n";
    let err = read_csv(Cursor::new(csv), Schema::Creditcard, Path::new("x.csv")).unwrap_err();
    assert!(matches!(err, DataError::HeaderMismatch { .. }));

    // Order matters.
    let csv = creditcard_header().replacen("Time,V1", "V1,Time", 1) + "\n";
    let err = read_csv(Cursor::new(csv), Schema::Creditcard, Path::new("x.csv")).unwrap_err();
    assert!(matches!(err, DataError::HeaderMismatch { .. }));
}

#[test]
fn empty_file_and_bad_cells() {
    let err = read_csv(Cursor::new(""), Schema::Creditcard, Path::new("e.csv")).unwrap_err();
    assert!(matches!(err, DataError::EmptyFile(_)));

    let csv = "a,b,Class\n1,zz,0\n";
    match read_csv(Cursor::new(csv), Schema::Generic, Path::new("g.csv")).unwrap_err() {
        DataError::Parse { row, col, value } => {
            assert_eq!((row, col.as_str(), value.as_str()), (0, "b", "zz"));
        }
        other => panic!("{other}"),
    }
    let csv = "a,b,Class\n1,2,2\n";
    assert!(matches!(
        read_csv(Cursor::new(csv), Schema::Generic, Path::new("g.csv")),
        Err(DataError::Parse { .. })
    ));
    let csv = "a,b,Class\n1,NaN,1\n";
    assert!(matches!(
        read_csv(Cursor::new(csv), Schema::Generic, Path::new("g.csv")),
        Err(DataError::Parse { .. })
    ));
    let csv = "a,a,Class\n1,2,1\n";
    assert!(matches!(
        read_csv(Cursor::new(csv), Schema::Generic, Path::new("g.csv")),
        Err(DataError::HeaderMismatch { .. })
    ));
}

#[test]
fn missing_file_reports_path() {
    let err = load_csv(Path::new("/nonexistent/creditcard.csv"), Schema::Creditcard).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/creditcard.csv"));
}

#[test]
fn dedup_keeps_first_occurrence() {
    let d = toy(&[&[1.0, 2.0], &[3.0, 4.0], &[1.0, 2.0], &[1.0, 2.0]], &[0, 1, 0, 1]);
    let out = deduplicate(&d);
    // Row 3 differs from row 0 in its label, so it stays.
    assert_eq!(out.len(), 3);
    assert_eq!(out.labels, vec![0, 1, 1]);
    assert_eq!(out.features.row(2), &[1.0, 2.0]);

    let unique = toy(&[&[1.0], &[2.0]], &[0, 1]);
    assert_eq!(deduplicate(&unique), unique);

    let zeros = toy(&[&[0.0], &[-0.0]], &[0, 0]);
    assert_eq!(deduplicate(&zeros).len(), 1);
}

#[test]
fn minmax_examples() {
    let d = toy(&[&[10.0, 5.0], &[20.0, 5.0], &[30.0, 5.0]], &[0, 1, 0]);
    let cols = vec!["c0".to_string(), "c1".to_string()];
    let s = minmax_fit(&d, &cols).unwrap();
    assert_eq!((s.min[0], s.max[0]), (10.0, 30.0));
    assert_eq!(s.min[1], s.max[1]);

    let probe = toy(&[&[20.0, 5.0], &[40.0, 7.0]], &[0, 0]);
    let t = minmax_transform(&probe, &s).unwrap();
    assert_eq!(t.features.get(0, 0), 0.5);
    assert_eq!(t.features.get(1, 0), 1.5);
    assert_eq!(t.features.get(0, 1), 0.0);
    assert_eq!(t.features.get(1, 1), 0.0);
}

#[test]
fn minmax_errors() {
    let d = toy(&[&[1.0]], &[0]);
    assert!(matches!(
        minmax_fit(&d, &["nope".to_string()]),
        Err(DataError::SchemaMismatch(_))
    ));
    let empty = d.subset(&[]);
    assert!(matches!(minmax_fit(&empty, &["c0".to_string()]), Err(DataError::EmptyDataset)));
    let s = minmax_fit(&d, &["c0".to_string()]).unwrap();
    let other = Dataset::new(Matrix::zeros(1, 1), vec![0], vec!["z".into()]).unwrap();
    assert!(matches!(minmax_transform(&other, &s), Err(DataError::SchemaMismatch(_))));
}

#[test]
fn normalization_column_choices() {
    let names = Schema::creditcard_features();
    assert_eq!(Normalization::default().columns(&names), vec!["Amount", "Time"]);
    assert_eq!(Normalization::All.columns(&names).len(), 30);
    assert!(Normalization::None.columns(&names).is_empty());
}

#[test]
fn toy_split_ten_and_ten() {
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    let labels: Vec<u8> = (0..20).map(|i| (i >= 10) as u8).collect();
    let d = Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, vec!["x".into()]).unwrap();
    let s = stratified_split(&d, 0.8, 7).unwrap();
    assert_eq!(s.train_idx.len(), 16);
    assert_eq!(s.test_idx.len(), 4);
    let test_pos = s.test_idx.iter().filter(|&&i| d.labels[i] == 1).count();
    assert_eq!(test_pos, 2);
    assert_eq!(stratified_split(&d, 0.8, 7).unwrap(), s);
    assert_ne!(stratified_split(&d, 0.8, 8).unwrap().test_idx, s.test_idx);
}

#[test]
fn kaggle_scale_split_counts() {
    // Label-only dataset with the Kaggle class sizes.
    let n = 284_315 + 492;
    let labels: Vec<u8> = (0..n).map(|i| (i < 492) as u8).collect();
    let d = Dataset::new(Matrix::zeros(n, 0), labels, vec![]).unwrap();
    assert_eq!(class_counts(&d), (284_315, 492));
    let s = stratified_split(&d, 0.8, 1).unwrap();
    let pos = s.test_idx.iter().filter(|&&i| d.labels[i] == 1).count();
    assert_eq!(pos, 98);
    assert_eq!(s.test_idx.len() - pos, 56_863);
}

#[test]
fn split_errors() {
    let d = toy(&[&[1.0], &[2.0]], &[0, 0]);
    assert!(matches!(
        stratified_split(&d, 0.8, 0),
        Err(DataError::SingleClass { negatives: 2, positives: 0 })
    ));
    let d = toy(&[&[1.0], &[2.0]], &[0, 1]);
    for f in [0.0, 1.0, -0.5, f64::NAN] {
        assert!(matches!(stratified_split(&d, f, 0), Err(DataError::InvalidFraction(_))));
    }
}

#[test]
fn class_counts_of_empty_dataset() {
    let d = Dataset::new(Matrix::empty(3), vec![], vec!["a".into(), "b".into(), "c".into()]).unwrap();
    assert_eq!(class_counts(&d), (0, 0));
}

#[test]
fn dataset_rejects_inconsistent_parts() {
    assert!(Dataset::new(Matrix::zeros(2, 1), vec![0], vec!["a".into()]).is_err());
    assert!(Dataset::new(Matrix::zeros(1, 1), vec![2], vec!["a".into()]).is_err());
    assert!(Dataset::new(Matrix::zeros(1, 2), vec![0], vec!["a".into()]).is_err());
}

#[test]
fn fixture_csv_round_trips_bit_exactly() {
    let d = blob_fixture(&BlobFixture::default());
    let mut buf = Vec::new();
    write_csv_to(&d, &mut buf).unwrap();
    let back = read_csv(Cursor::new(&buf), Schema::Generic, Path::new("mem")).unwrap();
    assert_eq!(back.labels, d.labels);
    let same = back.features.data().iter().zip(d.features.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same);
    let mut again = Vec::new();
    write_csv_to(&back, &mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn blob_fixture_shape_and_means() {
    let cfg = BlobFixture::default();
    let d = blob_fixture(&cfg);
    assert_eq!(class_counts(&d), (10_000, 50));
    assert_eq!(d.n_features(), 8);
    let shift = cfg.positive_mean();
    let dist: f64 = shift.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((dist - 2.0).abs() < 1e-12);
    let neg = d.class_rows(0).column_means();
    assert!(neg.iter().all(|m| m.abs() < 0.05));
    assert_eq!(blob_fixture(&cfg), d);
}

#[test]
fn fingerprint_ignores_zero_sign() {
    assert_eq!(row_fingerprint(&[0.0, 1.0]), row_fingerprint(&[-0.0, 1.0]));
    assert_ne!(row_fingerprint(&[1.0, 0.0]), row_fingerprint(&[0.0, 1.0]));
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..4, 2usize..60).prop_flat_map(|(cols, rows)| {
        (
            proptest::collection::vec(proptest::collection::vec(-3i8..3, cols), rows),
            proptest::collection::vec(0u8..2, rows),
        )
            .prop_map(move |(vals, labels)| {
                let rows: Vec<Vec<f64>> =
                    vals.iter().map(|r| r.iter().map(|&v| v as f64 * 0.5).collect()).collect();
                let m = Matrix::from_rows(&rows).unwrap();
                let names = (0..cols).map(|i| format!("c{i}")).collect();
                Dataset::new(m, labels, names).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn split_partitions_rows(d in arb_dataset(), seed in any::<u64>()) {
        let (neg, pos) = class_counts(&d);
        prop_assume!(neg > 0 && pos > 0);
        let s = stratified_split(&d, 0.8, seed).unwrap();
        let mut all: Vec<usize> = s.train_idx.iter().chain(&s.test_idx).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
        for (label, n) in [(0u8, neg), (1u8, pos)] {
            let t = s.test_idx.iter().filter(|&&i| d.labels[i] == label).count() as f64;
            prop_assert!((t - 0.2 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn dedup_is_idempotent(d in arb_dataset()) {
        let once = deduplicate(&d);
        prop_assert_eq!(deduplicate(&once), once.clone());
        prop_assert!(once.len() <= d.len());
    }

    #[test]
    fn fitted_column_spans_unit_interval(d in arb_dataset()) {
        let cols = vec!["c0".to_string()];
        let s = minmax_fit(&d, &cols).unwrap();
        prop_assume!(s.max[0] > s.min[0]);
        let t = minmax_transform(&d, &s).unwrap();
        let c = t.features.column(0);
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn csv_round_trip(d in arb_dataset()) {
        let mut buf = Vec::new();
        write_csv_to(&d, &mut buf).unwrap();
        let back = read_csv(Cursor::new(buf), Schema::Generic, Path::new("mem")).unwrap();
        prop_assert_eq!(back, d);
    }
}
