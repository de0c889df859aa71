//! C ABI over `audiosplat`.
//!
//! Every fallible call returns an [`AsStatus`]; on failure the message is
//! available from [`as_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use audiosplat::field::{load_checkpoint, save_checkpoint, GaussianField};
use audiosplat::metrics::evaluate;
use audiosplat::oracle::generate_synthetic_scene;
use audiosplat::render::render_waveform;
use audiosplat::scene_io::{load_scene, RunConfig, Scene};
use audiosplat::spectral::{stft, StftConfig, Waveform};
use audiosplat::train::train;
use audiosplat::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Numeric = 6,
    UnknownPose = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A fitted (or fresh) field.
pub struct AsField {
    inner: GaussianField,
}

/// A loaded scene together with the run configuration it was loaded with.
pub struct AsScene {
    scene: Scene,
    config: RunConfig,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AsMetrics {
    pub mag: f64,
    pub env: f64,
    pub lre_db: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> AsStatus {
    match e {
        Error::Io { .. } | Error::MissingAudio(_) => AsStatus::Io,
        Error::MalformedWav { .. }
        | Error::UnsupportedFormat(_)
        | Error::CorruptCheckpoint(_)
        | Error::PoseParse { .. } => AsStatus::Format,
        Error::InvalidConfig(_) | Error::Config(_) => AsStatus::Config,
        Error::NonFinite(_) | Error::NonFiniteLoss { .. } | Error::UndefinedLre => AsStatus::Numeric,
        Error::UnknownPose { .. } => AsStatus::UnknownPose,
        _ => AsStatus::InvalidArgument,
    }
}

struct Fail(AsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from this thread.
#[no_mangle]
pub extern "C" fn as_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn as_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the scene in `dir`. `config` may be null to use `dir/config.toml`
/// when present, else defaults.
///
/// # Safety
/// `dir` and `config` (if non-null) must be NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn as_scene_load(dir: *const c_char, config: *const c_char, out: *mut *mut AsScene) -> AsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = path_arg(dir, "dir")?;
        let config = if config.is_null() {
            let default = dir.join(audiosplat::oracle::CONFIG_FILE);
            if default.exists() {
                RunConfig::load(&default)?
            } else {
                RunConfig::default()
            }
        } else {
            RunConfig::load(&path_arg(config, "config")?)?
        };
        let scene = load_scene(&dir, &config)?;
        *out = Box::into_raw(Box::new(AsScene { scene, config }));
        Ok(())
    })
}

/// Generates a synthetic scene in memory with default settings.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn as_scene_synthesize(n_poses: u32, seed: u64, out: *mut *mut AsScene) -> AsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let synth = generate_synthetic_scene(n_poses as usize, seed, &RunConfig::default())?;
        *out = Box::into_raw(Box::new(AsScene {
            scene: synth.scene,
            config: synth.config,
        }));
        Ok(())
    })
}

/// Overrides the number of training epochs used by [`as_train`].
///
/// # Safety
/// `scene` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn as_scene_set_epochs(scene: *mut AsScene, epochs: u32) -> AsStatus {
    guard(|| {
        let s = scene.as_mut().ok_or_else(|| null("scene"))?;
        s.config.train.epochs = epochs as usize;
        Ok(())
    })
}

/// Samples in the scene's source clip (the length of every render).
///
/// # Safety
/// `scene` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn as_scene_clip_len(scene: *const AsScene, out: *mut usize) -> AsStatus {
    guard(|| {
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = s.scene.source_clip.len();
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn as_scene_free(scene: *mut AsScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Trains a field on `scene` with its configuration.
///
/// # Safety
/// `scene` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn as_train(scene: *const AsScene, out: *mut *mut AsField) -> AsStatus {
    guard(|| {
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (field, _) = train(&s.scene, &s.config.train, &s.config.field)?;
        *out = Box::into_raw(Box::new(AsField { inner: field }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn as_field_load(path: *const c_char, out: *mut *mut AsField) -> AsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let field = load_checkpoint(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AsField { inner: field }));
        Ok(())
    })
}

/// # Safety
/// `field` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn as_field_save(field: *const AsField, path: *const c_char) -> AsStatus {
    guard(|| {
        let f = field.as_ref().ok_or_else(|| null("field"))?;
        save_checkpoint(&f.inner, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Grid size of a field.
///
/// # Safety
/// `field` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn as_field_dims(field: *const AsField, n_bins: *mut usize, n_frames: *mut usize) -> AsStatus {
    guard(|| {
        let f = field.as_ref().ok_or_else(|| null("field"))?;
        let (b, t) = f.inner.layout().dims();
        *n_bins.as_mut().ok_or_else(|| null("n_bins"))? = b;
        *n_frames.as_mut().ok_or_else(|| null("n_frames"))? = t;
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn as_field_free(field: *mut AsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Renders the scene's source clip at pose `pose_id` into `left` and
/// `right`, each with room for `capacity` samples. The rendered length is
/// written to `n_samples`; pass null buffers to query it only.
///
/// # Safety
/// Handles must be live, `pose_id` NUL-terminated, buffers (if non-null)
/// valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn as_render(
    field: *const AsField,
    scene: *const AsScene,
    pose_id: *const c_char,
    left: *mut f64,
    right: *mut f64,
    capacity: usize,
    n_samples: *mut usize,
) -> AsStatus {
    guard(|| {
        let f = field.as_ref().ok_or_else(|| null("field"))?;
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        let n_out = n_samples.as_mut().ok_or_else(|| null("n_samples"))?;
        let n = s.scene.source_clip.len();
        *n_out = n;
        if left.is_null() && right.is_null() {
            return Ok(());
        }
        if left.is_null() || right.is_null() {
            return Err(null("output buffer"));
        }
        if capacity < n {
            return Err(Fail(AsStatus::BufferTooSmall, format!("need {n} samples, got {capacity}")));
        }
        let pose = s.scene.pose(str_arg(pose_id, "pose_id")?)?;
        let src = stft(&s.scene.source_clip, &s.scene.stft)?;
        let y = render_waveform(&f.inner, &src, &pose, s.config.train.toggles, &s.config.field)?;
        std::slice::from_raw_parts_mut(left, n).copy_from_slice(y.channel(0));
        std::slice::from_raw_parts_mut(right, n).copy_from_slice(y.channel(1));
        Ok(())
    })
}

/// MAG, ENV and LRE between two stereo signals of `n` samples each, using
/// the default STFT settings.
///
/// # Safety
/// The four input pointers must be valid for `n` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn as_metrics(
    pred_left: *const f64,
    pred_right: *const f64,
    ref_left: *const f64,
    ref_right: *const f64,
    n: usize,
    sample_rate: u32,
    out: *mut AsMetrics,
) -> AsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let wave = |l: *const f64, r: *const f64| -> Result<Waveform, Fail> {
            let (l, r) = (slice_arg(l, n, "left")?, slice_arg(r, n, "right")?);
            Ok(Waveform::stereo(sample_rate, l.to_vec(), r.to_vec())?)
        };
        let pred = wave(pred_left, pred_right)?;
        let gt = wave(ref_left, ref_right)?;
        let cfg = StftConfig {
            sample_rate,
            ..StftConfig::default()
        };
        let r = evaluate(&pred, &gt, &cfg)?;
        *out = AsMetrics {
            mag: r.mag,
            env: r.env,
            lre_db: r.lre_db,
        };
        Ok(())
    })
}
