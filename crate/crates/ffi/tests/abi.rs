use std::ffi::{CStr, CString};
use std::ptr;

use velab_ffi::*;

fn last_error() -> String {
    let p = velab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_mixture() -> *mut VelabMixture {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { velab_mixture_fractal(3, 4, 7, &mut m) },
        VelabStatus::Ok
    );
    assert!(!m.is_null());
    m
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(velab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn mixture_sampling_is_seeded_and_density_finite() {
    let m = small_mixture();
    assert!(unsafe { velab_mixture_len(m) } > 0);
    let n = 256;
    let mut a = vec![0.0; 2 * n];
    let mut b = vec![0.0; 2 * n];
    unsafe {
        assert_eq!(
            velab_mixture_sample(m, n, 3, a.as_mut_ptr()),
            VelabStatus::Ok
        );
        assert_eq!(
            velab_mixture_sample(m, n, 3, b.as_mut_ptr()),
            VelabStatus::Ok
        );
    }
    assert_eq!(a, b);
    let mut ld = vec![0.0; n];
    let mut score = vec![0.0; 2 * n];
    unsafe {
        assert_eq!(
            velab_mixture_log_density(m, 0.0, a.as_ptr(), n, ld.as_mut_ptr()),
            VelabStatus::Ok
        );
        assert_eq!(
            velab_mixture_score(m, 0.1, a.as_ptr(), n, score.as_mut_ptr()),
            VelabStatus::Ok
        );
        velab_mixture_free(m);
    }
    assert!(ld.iter().all(|v| v.is_finite()));
    assert!(score.iter().all(|v| v.is_finite()));
}

#[test]
fn errors_are_reported_not_unwound() {
    let m = small_mixture();
    let mut out = [0.0; 2];
    unsafe {
        assert_eq!(
            velab_mixture_sample(ptr::null(), 1, 0, out.as_mut_ptr()),
            VelabStatus::NullPointer
        );
        assert!(last_error().contains("mixture"));
        assert_eq!(
            velab_mixture_sample(m, 1, 0, ptr::null_mut()),
            VelabStatus::NullPointer
        );
        let p = [0.0, 0.0];
        assert_eq!(
            velab_mixture_log_density(m, -1.0, p.as_ptr(), 1, out.as_mut_ptr()),
            VelabStatus::InvalidArgument
        );
        // a successful call clears the message
        assert_eq!(
            velab_mixture_sample(m, 1, 0, out.as_mut_ptr()),
            VelabStatus::Ok
        );
        assert!(velab_last_error().is_null());
        velab_mixture_free(m);
        velab_mixture_free(ptr::null_mut());
    }
}

#[test]
fn missing_checkpoint_is_io_error() {
    let path = CString::new("/nonexistent/velab/checkpoint.bin").unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { velab_tokenizer_load(path.as_ptr(), &mut t) },
        VelabStatus::Io
    );
    assert!(t.is_null());
    let mut f = ptr::null_mut();
    assert_eq!(
        unsafe { velab_flow_load(path.as_ptr(), &mut f) },
        VelabStatus::Io
    );
}

#[test]
fn trained_checkpoints_round_trip_through_handles() {
    use velab::harness::experiments;
    use velab::harness::{Profile, TrainingConfig};
    use velab::tokenizer::{LossConfig, LossMode};

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainingConfig::for_profile(Profile::Desk, 1);
    for s in [&mut cfg.tokenizer.train, &mut cfg.flow.train] {
        s.iterations = 20;
        s.batch_size = 64;
        s.hidden = 16;
    }
    let mixture = velab::mixture::MixtureModel::fractal(3, 4, 7, Default::default()).unwrap();
    let tok =
        experiments::train_tokenizer(&mixture, &cfg, LossConfig::new(LossMode::ve(1e-2))).unwrap();
    let source = velab::flow::LatentSource::tokenizer(tok.model.clone(), &tok.loss, None);
    let fl = experiments::train_flow(&mixture, &cfg, source).unwrap();

    let tok_path = dir.path().join("tok.bin");
    let flow_path = dir.path().join("flow.bin");
    let mut ck = velab::checkpoint::Checkpoint::new(velab::tokenizer::CHECKPOINT_KIND, "t", 0);
    ck.add_network("encoder", &tok.model.encoder);
    ck.add_network("decoder", &tok.model.decoder);
    ck.save(&tok_path).unwrap();
    let mut fck = velab::checkpoint::Checkpoint::new(velab::flow::CHECKPOINT_KIND, "f", 0);
    fck.add_network("flow", &fl.flow.net);
    fck.save(&flow_path).unwrap();

    let tp = CString::new(tok_path.to_str().unwrap()).unwrap();
    let fp = CString::new(flow_path.to_str().unwrap()).unwrap();
    let (mut t, mut f) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(velab_tokenizer_load(tp.as_ptr(), &mut t), VelabStatus::Ok);
        assert_eq!(velab_flow_load(fp.as_ptr(), &mut f), VelabStatus::Ok);
    }
    let x = mixture.sample(8, 2);
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let (mut mu, mut lv, mut rec) = (vec![0.0; 16], vec![0.0; 16], vec![0.0; 16]);
    unsafe {
        assert_eq!(
            velab_tokenizer_encode(t, flat.as_ptr(), 8, mu.as_mut_ptr(), lv.as_mut_ptr()),
            VelabStatus::Ok
        );
        assert_eq!(
            velab_tokenizer_decode(t, mu.as_ptr(), 8, rec.as_mut_ptr()),
            VelabStatus::Ok
        );
    }
    let enc = tok.model.encode(&velab::Matrix::from_points(&x)).unwrap();
    assert_eq!(mu, enc.mu.as_slice());
    assert_eq!(lv, enc.log_var.as_slice());
    assert_eq!(rec, tok.model.decode(&enc.mu).unwrap().as_slice());

    let (mut a, mut b) = (vec![0.0; 20], vec![0.0; 20]);
    unsafe {
        assert_eq!(
            velab_flow_sample(f, t, 10, 5, 9, a.as_mut_ptr()),
            VelabStatus::Ok
        );
        assert_eq!(
            velab_flow_sample(f, t, 10, 5, 9, b.as_mut_ptr()),
            VelabStatus::Ok
        );
        assert_eq!(
            velab_flow_sample(f, t, 10, 0, 9, b.as_mut_ptr()),
            VelabStatus::InvalidArgument
        );
        velab_tokenizer_free(t);
        velab_flow_free(f);
    }
    assert_eq!(a[..], b[..]);
    assert!(a.iter().all(|v| v.is_finite()));
}
