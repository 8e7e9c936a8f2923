use reslab::data::{load_dataset, make_teacher, read_dataset, sample_dataset, save_dataset, write_dataset};
use reslab::model::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Arch, NetworkParams, NetworkShape};
use reslab::numkit::RngState;
use reslab::probes::{read_details, DetailTable, ProbeReport, Sense, Verdict};

#[test]
fn dataset_file_round_trip_is_exact() {
    let teacher = make_teacher::<f64>(RngState::root(1), 6, 16, 0.05).unwrap();
    let ds = sample_dataset(&teacher, RngState::root(2), 50).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.bin");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset::<f64>(&path).unwrap();
    assert_eq!(back, ds);
    back.validate().unwrap();
}

#[test]
fn truncated_dataset_is_a_format_error() {
    let teacher = make_teacher::<f64>(RngState::root(1), 4, 8, 0.05).unwrap();
    let ds = sample_dataset(&teacher, RngState::root(2), 20).unwrap();
    let mut bytes = Vec::new();
    write_dataset(&ds, &mut bytes).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(read_dataset::<f64, _>(bytes.as_slice()).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact_for_both_archs() {
    let dir = tempfile::tempdir().unwrap();
    for arch in [Arch::Residual, Arch::Plain] {
        let shape = NetworkShape::residual(5, 4, 12, 6).with_arch(arch);
        let p = NetworkParams::<f64>::init_gaussian(RngState::root(3), shape).unwrap();
        let path = dir.path().join(format!("{arch}.ckpt"));
        save_checkpoint(&p, Some(3), &path).unwrap();
        let (back, header) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(back, p);
        assert_eq!(header.seed, Some(3));
        assert_eq!(header.shape, shape);
    }
}

#[test]
fn checkpoint_bytes_are_deterministic() {
    let p = NetworkParams::<f64>::init_gaussian(RngState::root(4), NetworkShape::residual(3, 2, 8, 8)).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_checkpoint(&p, None, &mut a).unwrap();
    write_checkpoint(&p.clone(), None, &mut b).unwrap();
    assert_eq!(a, b);
    let mut corrupt = a.clone();
    corrupt.truncate(a.len() / 2);
    assert!(read_checkpoint::<f64, _>(corrupt.as_slice()).is_err());
}

#[test]
fn report_verdict_is_recomputable_from_the_details_file() {
    let mut details = DetailTable::new(&["tau"]);
    details.push("a", 0.5, 1.0, Sense::Upper, &[0.1]);
    details.push("b", 2.0, 1.5, Sense::Lower, &[0.2]);
    details.push("c", 1e300, f64::NAN, Sense::Info, &[0.3]);
    let mut report = ProbeReport::new("demo", &serde_json::json!({"k": 1}), 3, 0.5, Default::default(), details).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = report.write(dir.path()).unwrap();
    let table = read_details(&dir.path().join("demo.details.csv")).unwrap();
    assert_eq!(table.verdict(), report.verdict);
    assert_eq!(report.verdict, Verdict::Hold);
    let back = ProbeReport::load(&path).unwrap();
    assert_eq!(back.verdict, report.verdict);
    assert_eq!(back.details.rows.len(), 3);
    assert_eq!(back.bound_expr, report.bound_expr);
}
