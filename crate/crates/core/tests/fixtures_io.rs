use std::path::PathBuf;

use mvfi_core::mv::{parse_sidecar, select_vectors, sidecar_to_string, RefSource};
use mvfi_core::nnet::{Graph, OpKind, Src};
use mvfi_core::quant::{calibrate, WeightGranularity, INPUT_KEY};
use mvfi_core::synth::oracle::oracle_percentile;
use mvfi_core::Tensor;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn three_row_sidecar_fields() {
    let f = std::fs::File::open(fixture("three_rows.csv")).unwrap();
    let recs = parse_sidecar(std::io::BufReader::new(f)).unwrap();
    assert_eq!(recs.len(), 3);

    let r = &recs[0];
    assert_eq!((r.frame_index, r.source), (1, RefSource::Past));
    assert_eq!((r.block_w, r.block_h, r.src_x, r.src_y, r.dst_x, r.dst_y), (16, 16, -2, 1, 0, 0));
    assert_eq!((r.flags.as_str(), r.motion_x, r.motion_y, r.motion_scale, r.d_ref), ("0x0", -8, 4, 4, 1));

    let r = &recs[1];
    assert_eq!((r.source, r.block_w, r.block_h, r.dst_x, r.flags.as_str()), (RefSource::Future, 8, 16, 16, "0x4"));
    assert_eq!((r.motion_x, r.motion_y), (4, 0));

    let r = &recs[2];
    assert_eq!((r.frame_index, r.motion_x, r.motion_y, r.motion_scale, r.d_ref), (2, -2, 3, 2, 2));

    // Frame 1 keeps only the past-reference row; dx = -motion_x / scale.
    let v = select_vectors(&recs, 1, 1);
    assert_eq!(v.len(), 1);
    assert_eq!((v[0].dx, v[0].dy), (2.0, -1.0));
    // Frame 2's vector has d_ref 2, so the frame passes through.
    assert!(select_vectors(&recs, 2, 1).is_empty());

    let text = std::fs::read_to_string(fixture("three_rows.csv")).unwrap();
    assert_eq!(sidecar_to_string(&recs), text);
}

#[test]
fn calibration_amax_matches_sorted_percentile() {
    let text = std::fs::read_to_string(fixture("calib_10k.txt")).unwrap();
    let vals: Vec<f32> = text.lines().map(|l| l.trim().parse().unwrap()).collect();
    assert_eq!(vals.len(), 10_000);

    let mut g = Graph::new(1, 1);
    g.push("r", OpKind::Relu, &[Src::Input]).unwrap();
    let x = Tensor::new([1, 1, 100, 100], vals.clone()).unwrap();
    let spec = calibrate(&g, &[x], 99.99, WeightGranularity::PerTensor).unwrap();

    let abs: Vec<f32> = vals.iter().map(|v| v.abs()).collect();
    let amax = spec.activations[INPUT_KEY] as f64 * 127.0;
    let expect = oracle_percentile(&abs, 99.99);
    assert!((amax - expect).abs() <= 1e-6 * expect.max(1.0), "{amax} vs {expect}");
}
