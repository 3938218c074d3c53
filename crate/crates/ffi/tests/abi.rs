use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use vla_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        vla_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn config(d: usize) -> VlaConfig {
    let mut cfg = std::mem::MaybeUninit::<VlaConfig>::uninit();
    assert_eq!(unsafe { vla_config_default(cfg.as_mut_ptr()) }, VlaStatus::Ok);
    let mut cfg = unsafe { cfg.assume_init() };
    cfg.d_h = d;
    cfg
}

fn new_head(kernel: VlaKernel, cfg: &VlaConfig) -> *mut VlaHead {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { vla_head_new(kernel as u32, cfg, &mut h) }, VlaStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn defaults_round_trip() {
    let cfg = config(32);
    assert_eq!(cfg.lambda0, 0.1);
    assert_eq!(cfg.epsilon, 1e-4);
    assert_eq!(cfg.refresh_period, 20);
    assert_eq!(cfg.refresh_eta, 1e-3);
    assert!(cfg.normalize_alpha);
    assert_eq!(cfg.penalty_direction, VlaPenaltyDirection::UnitKey as u32);
    assert_eq!(cfg.delta_beta, 0.9);
}

#[test]
fn matches_core_memory() {
    use vla_core::kernels::{HeadConfig, KernelKind, Key};
    use vla_core::stream::StreamSpec;

    let d = 16;
    for (kernel, kind) in [
        (VlaKernel::Vla, KernelKind::Vla),
        (VlaKernel::Linear, KernelKind::Linear),
        (VlaKernel::DeltaNet, KernelKind::DeltaNet),
        (VlaKernel::Softmax, KernelKind::Softmax),
    ] {
        let h = new_head(kernel, &config(d));
        let mut core = kind.build(&HeadConfig::with_dim(d)).unwrap();
        let mut out = vec![0.0; d];
        for tok in StreamSpec::Gaussian.generate(d, 50, 3) {
            let mut stats = VlaWriteStats::default();
            let st = unsafe { vla_head_step(h, tok.k.as_ptr(), tok.v.as_ptr(), tok.q.as_ptr(), d, out.as_mut_ptr(), &mut stats) };
            assert_eq!(st, VlaStatus::Ok, "{}", last_error());
            let rec = core.write(Key::Raw(&tok.k), &tok.v).unwrap();
            let o = core.read(Key::Raw(&tok.q)).unwrap();
            assert_eq!(&out[..], &o[..]);
            assert_eq!(stats.delta, rec.delta);
            assert_eq!(stats.update_norm, rec.update_norm);
        }
        if let Some(s) = core.state() {
            let mut buf = vec![0.0; d * d];
            assert_eq!(unsafe { vla_head_state(h, buf.as_mut_ptr(), buf.len()) }, VlaStatus::Ok);
            assert_eq!(buf, s.as_slice());
        } else {
            let mut buf = vec![0.0; d * d];
            assert_eq!(unsafe { vla_head_state(h, buf.as_mut_ptr(), buf.len()) }, VlaStatus::Unsupported);
        }
        unsafe { vla_head_free(h) };
    }
}

#[test]
fn penalty_inverse_and_reset() {
    let d = 4;
    let h = new_head(VlaKernel::Vla, &config(d));
    let mut a = vec![0.0; d * d];
    assert_eq!(unsafe { vla_head_penalty_inverse(h, a.as_mut_ptr(), a.len()) }, VlaStatus::Ok);
    for i in 0..d {
        assert_eq!(a[i * d + i], 10.0);
    }
    let (k, v) = ([1.0, 0.0, 0.0, 0.0], [1.0, 2.0, 3.0, 4.0]);
    assert_eq!(unsafe { vla_head_write(h, k.as_ptr(), v.as_ptr(), d, true, ptr::null_mut()) }, VlaStatus::Ok);
    assert_eq!(unsafe { vla_head_penalty_inverse(h, a.as_mut_ptr(), a.len()) }, VlaStatus::Ok);
    assert!((a[0] - 10.0 / 11.0).abs() < 1e-14);
    assert_eq!(unsafe { vla_head_reset(h) }, VlaStatus::Ok);
    let mut s = vec![1.0; d * d];
    assert_eq!(unsafe { vla_head_state(h, s.as_mut_ptr(), s.len()) }, VlaStatus::Ok);
    assert!(s.iter().all(|&x| x == 0.0));
    assert_eq!(unsafe { vla_head_penalty_inverse(h, a.as_mut_ptr(), 3) }, VlaStatus::DimensionMismatch);
    unsafe { vla_head_free(h) };
}

#[test]
fn errors_set_status_and_message() {
    let cfg = config(8);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { vla_head_new(42, &cfg, &mut h) }, VlaStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(last_error().contains("unknown kernel"));

    let mut bad = cfg;
    bad.penalty_direction = 17;
    assert_eq!(unsafe { vla_head_new(0, &bad, &mut h) }, VlaStatus::InvalidArgument);
    assert!(last_error().contains("penalty direction"));

    let mut bad = cfg;
    bad.lambda0 = -1.0;
    assert_ne!(unsafe { vla_head_new(0, &bad, &mut h) }, VlaStatus::Ok);
    assert!(h.is_null());

    assert_eq!(unsafe { vla_head_new(0, &cfg, ptr::null_mut()) }, VlaStatus::NullPointer);

    let h = new_head(VlaKernel::Vla, &cfg);
    let x = [0.5; 8];
    let mut out = [0.0; 8];
    assert_eq!(unsafe { vla_head_read(h, x.as_ptr(), 7, false, out.as_mut_ptr()) }, VlaStatus::DimensionMismatch);
    assert!(last_error().contains("dimension mismatch"));
    assert_eq!(unsafe { vla_head_write(h, ptr::null(), x.as_ptr(), 8, false, ptr::null_mut()) }, VlaStatus::NullPointer);
    assert_eq!(unsafe { vla_head_read(ptr::null(), x.as_ptr(), 8, false, out.as_mut_ptr()) }, VlaStatus::NullPointer);
    let nan = [f64::NAN; 8];
    assert_ne!(unsafe { vla_head_write(h, nan.as_ptr(), x.as_ptr(), 8, false, ptr::null_mut()) }, VlaStatus::Ok);
    unsafe { vla_head_free(h) };
    unsafe { vla_head_free(ptr::null_mut()) };
    assert_eq!(unsafe { vla_head_dim(ptr::null()) }, 0);
}

#[test]
fn error_buffer_truncates() {
    let mut h = ptr::null_mut();
    unsafe { vla_head_new(7, ptr::null(), &mut h) };
    let full = unsafe { vla_last_error(ptr::null_mut(), 0) };
    let mut buf = [1 as std::ffi::c_char; 5];
    assert_eq!(unsafe { vla_last_error(buf.as_mut_ptr(), buf.len()) }, full);
    assert_eq!(buf[4], 0);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes().len(), 4);
}

#[test]
fn scalar_helpers() {
    let mut s = 0.0;
    assert_eq!(unsafe { vla_jacobian_sigma(1.0, &mut s) }, VlaStatus::Ok);
    assert_eq!(s, 1.0);
    assert_eq!(unsafe { vla_jacobian_sigma(-1.0, &mut s) }, VlaStatus::Ok);
    assert!((s - 2.0).abs() < 1e-12);
    assert_eq!(unsafe { vla_jacobian_sigma(1.5, &mut s) }, VlaStatus::InvalidArgument);

    // A = 10 I, u = e_0: the (0,0) entry becomes 10/11 with δ = 11.
    let d = 3;
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        a[i * d + i] = 10.0;
    }
    let u = [1.0, 0.0, 0.0];
    let mut delta = 0.0;
    assert_eq!(unsafe { vla_sm_update(a.as_mut_ptr(), d, u.as_ptr(), 1e-4, &mut delta) }, VlaStatus::Ok);
    assert_eq!(delta, 11.0);
    assert!((a[0] - 10.0 / 11.0).abs() < 1e-15);
    assert_eq!(a[4], 10.0);

    let version = unsafe { CStr::from_ptr(vla_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn artifact_dir() -> PathBuf {
    // target/<profile>/deps/abi-<hash> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_is_current_and_c_program_links() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(crate_dir.join("include/vla.h")).unwrap();
    for sym in ["vla_head_new", "vla_head_free", "vla_head_step", "vla_sm_update", "vla_last_error", "VLA_STATUS_OK"] {
        assert!(header.contains(sym), "header lacks {sym}");
    }

    let lib = artifact_dir().join("libvla_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping C link check: no C compiler or {} missing", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-std=c11", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
