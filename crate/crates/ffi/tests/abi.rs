use dynsplit::cascade::{augment, CascadeConfig, CascadeModel, Mode, TrainingHistory};
use dynsplit::nn::{save_checkpoint, SplitNetwork, Tensor};
use dynsplit_ffi::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ffi::{CStr, CString};
use std::ptr;

const T: usize = 5;
const D: usize = 3;
const K: usize = 4;

fn small_model() -> CascadeModel {
    let cfg = CascadeConfig {
        encoder_sizes: vec![6, 7],
        bottleneck: 2,
        decoder_sizes: vec![5],
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let network = SplitNetwork::new(T, D, K, &cfg.encoder_sizes, &cfg.decoder_sizes, &mut rng).unwrap();
    let m = CascadeModel {
        config: cfg.clone(),
        network,
        history: TrainingHistory::default(),
    };
    augment(m, &cfg).unwrap()
}

fn last_error() -> String {
    let p = ds_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Loaded {
    handle: *mut DsModel,
    model: CascadeModel,
    _dir: tempfile::TempDir,
}

impl Drop for Loaded {
    fn drop(&mut self) {
        unsafe { ds_model_free(self.handle) };
    }
}

fn load() -> Loaded {
    let model = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("phase2.json");
    save_checkpoint(&path, "cascade_phase2", &model).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ds_model_load(c.as_ptr(), &mut handle) }, DsStatus::Ok);
    assert!(ds_last_error().is_null());
    Loaded {
        handle,
        model,
        _dir: dir,
    }
}

fn window(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..T * D).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn load_reports_dims_and_payloads() {
    let m = load();
    let (mut t, mut d, mut k) = (0, 0, 0);
    assert_eq!(unsafe { ds_model_dims(m.handle, &mut t, &mut d, &mut k) }, DsStatus::Ok);
    assert_eq!((t, d, k), (T, D, K));
    let mut bytes = 0;
    assert_eq!(unsafe { ds_model_payload_bytes(m.handle, DsMode::Informative, &mut bytes) }, DsStatus::Ok);
    assert_eq!(bytes, 28);
    assert_eq!(unsafe { ds_model_payload_bytes(m.handle, DsMode::Compressed, &mut bytes) }, DsStatus::Ok);
    assert_eq!(bytes, 8);
}

#[test]
fn infer_matches_the_library() {
    let m = load();
    let x = window(1);
    let tensor = Tensor::from_vec(&[T, 1, D], x.clone()).unwrap();
    for (ds, mode) in [(DsMode::Informative, Mode::Informative), (DsMode::Compressed, Mode::Compressed)] {
        let mut probs = vec![0.0; T * K];
        let s = unsafe { ds_model_infer(m.handle, x.as_ptr(), x.len(), ds, probs.as_mut_ptr(), probs.len()) };
        assert_eq!(s, DsStatus::Ok);
        let expect = m.model.network.forward(&tensor, mode).unwrap();
        assert_eq!(probs, expect.values());
    }
}

#[test]
fn encode_then_decode_across_the_wire() {
    let m = load();
    let x = window(2);
    let mut msg = vec![0u8; 64];
    let mut written = 0;
    let s = unsafe {
        ds_model_encode(m.handle, x.as_ptr(), x.len(), DsMode::Compressed, msg.as_mut_ptr(), msg.len(), &mut written)
    };
    assert_eq!(s, DsStatus::Ok);
    assert_eq!(written, ds_wire_header_bytes() + 8);
    assert_eq!(msg[0], 1);

    let mut probs = vec![0.0; T * K];
    let s = unsafe { ds_model_decode(m.handle, msg.as_ptr(), written, probs.as_mut_ptr(), probs.len()) };
    assert_eq!(s, DsStatus::Ok);
    for row in probs.chunks(K) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    let mut tiny = [0u8; 4];
    let s = unsafe {
        ds_model_encode(m.handle, x.as_ptr(), x.len(), DsMode::Compressed, tiny.as_mut_ptr(), tiny.len(), &mut written)
    };
    assert_eq!(s, DsStatus::BufferTooSmall);
}

#[test]
fn shape_and_buffer_errors() {
    let m = load();
    let x = window(3);
    let mut probs = vec![0.0; T * K];
    let s = unsafe {
        ds_model_infer(m.handle, x.as_ptr(), x.len() - 1, DsMode::Informative, probs.as_mut_ptr(), probs.len())
    };
    assert_eq!(s, DsStatus::Shape);
    assert!(last_error().contains("expected 15"));
    let s = unsafe { ds_model_infer(m.handle, x.as_ptr(), x.len(), DsMode::Informative, probs.as_mut_ptr(), 3) };
    assert_eq!(s, DsStatus::BufferTooSmall);
}

#[test]
fn null_pointers_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ds_model_load(ptr::null(), &mut out) }, DsStatus::NullPointer);
    assert!(last_error().contains("path"));
    let mut bits = 0.0;
    assert_eq!(unsafe { ds_gcmi(ptr::null(), 1, ptr::null(), 1, 10, &mut bits) }, DsStatus::NullPointer);
    assert_eq!(unsafe { ds_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, DsStatus::NullPointer);
    unsafe { ds_model_free(ptr::null_mut()) };
}

#[test]
fn missing_and_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut out = ptr::null_mut();
    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ds_model_load(missing.as_ptr(), &mut out) }, DsStatus::Io);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ds_model_load(bad.as_ptr(), &mut out) }, DsStatus::Parse);
    assert!(out.is_null());
}

#[test]
fn wire_round_trip_and_malformed() {
    let code = [1.0, -2.5, 0.125];
    let mut msg = [0u8; 32];
    let mut written = 0;
    let s = unsafe { ds_wire_encode(DsMode::Informative, code.as_ptr(), 3, msg.as_mut_ptr(), msg.len(), &mut written) };
    assert_eq!(s, DsStatus::Ok);
    assert_eq!(written, 17);

    let mut mode = DsMode::Compressed;
    let mut out = [0f32; 3];
    let mut len = 0;
    let s = unsafe { ds_wire_decode(msg.as_ptr(), written, &mut mode, out.as_mut_ptr(), 3, &mut len) };
    assert_eq!(s, DsStatus::Ok);
    assert_eq!((mode, len, out), (DsMode::Informative, 3, [1.0, -2.5, 0.125]));

    let s = unsafe { ds_wire_decode(msg.as_ptr(), written - 1, &mut mode, out.as_mut_ptr(), 3, &mut len) };
    assert_eq!(s, DsStatus::Wire);
    msg[0] = 9;
    let s = unsafe { ds_wire_decode(msg.as_ptr(), written, &mut mode, out.as_mut_ptr(), 3, &mut len) };
    assert_eq!(s, DsStatus::Wire);
}

#[test]
fn estimators_through_the_abi() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 4000;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v * v * v + 0.1 * rng.random_range(-1.0..1.0)).collect();
    let mut bits = 0.0;
    assert_eq!(unsafe { ds_gcmi(x.as_ptr(), 1, y.as_ptr(), 1, n, &mut bits) }, DsStatus::Ok);
    assert!(bits > 1.0);
    assert_eq!(unsafe { ds_gcmi(x.as_ptr(), 1, y.as_ptr(), 1, 2, &mut bits) }, DsStatus::InsufficientSamples);

    let xs: Vec<i64> = (0..64).map(|i| i % 4).collect();
    assert_eq!(unsafe { ds_plugin_mi(xs.as_ptr(), xs.as_ptr(), 64, &mut bits) }, DsStatus::Ok);
    assert_eq!(bits, 2.0);
}
