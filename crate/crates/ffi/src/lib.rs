//! C interface to the semlink simulator.
//!
//! Every fallible function returns an [`SlkStatus`]; on failure a message is
//! available from [`slk_last_error_message`] until the next failing call on
//! the same thread. Scenes and models are opaque handles released with their
//! `_free` functions. Output buffers are caller-allocated and their lengths
//! are checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use semlink::channel::{Channel, ChannelConfig, ChannelKind};
use semlink::codec::SemanticModel;
use semlink::mask::{sample_mask, PatchGrid};
use semlink::metrics::{psnr, ssim};
use semlink::mss::{bandwidth_savings, partition, MultiUserSemantics, PairMode};
use semlink::numeric::{RngStream, Tensor};
use semlink::pipeline::{paired_trial, score};
use semlink::scene::{generate_scene, locate, Label, Loc, Scene, SceneConfig};
use semlink::Error;

/// Result codes shared by every function of the interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlkStatus {
    Ok = 0,
    NullPointer = 1,
    BufferTooSmall = 2,
    InvalidArgument = 3,
    Dimension = 4,
    Contract = 5,
    Config = 6,
    Vocabulary = 7,
    Parse = 8,
    Numeric = 9,
    Io = 10,
    Panic = 11,
}

/// Channel model selector for [`slk_model_transmit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlkChannelKind {
    Awgn = 0,
    Rayleigh = 1,
    Rician = 2,
}

/// Opaque generated or loaded scene.
pub struct SlkScene {
    scene: Scene,
}

/// Opaque trained semantic model.
pub struct SlkModel {
    model: SemanticModel,
}

/// Region scores of one adaptive/random transmission pair.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlkTrialScores {
    pub adaptive_region_psnr_db: f64,
    pub random_region_psnr_db: f64,
    pub adaptive_region_ssim: f64,
    pub random_region_ssim: f64,
    pub keep_count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SlkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Dimension(_) => SlkStatus::Dimension,
            Error::Contract(_) => SlkStatus::Contract,
            Error::Config(_) => SlkStatus::Config,
            Error::Vocabulary(_) => SlkStatus::Vocabulary,
            Error::Parse { .. } => SlkStatus::Parse,
            Error::Numeric(_) => SlkStatus::Numeric,
            Error::Io { .. } => SlkStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SlkStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SlkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlkStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SlkStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(SlkStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Borrows `len` elements, allowing a null pointer only for an empty slice.
unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, need: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len < need {
        return Err(fail(
            SlkStatus::BufferTooSmall,
            format!("`{name}` holds {len} elements, need {need}"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts_mut(p, need))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SlkStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn write_out<T>(p: *mut T, value: T, name: &str) -> Result<(), Failure> {
    non_null(p, name)?;
    *p = value;
    Ok(())
}

fn image(data: &[f64], channels: usize, height: usize, width: usize) -> Result<Tensor, Failure> {
    Ok(Tensor::new([channels, height, width], data.to_vec())?)
}

/// Message of the last failure on this thread, or null if none occurred.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn slk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates the synthetic scene `(seed, stream)` with the default 3×32×32
/// configuration.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn slk_scene_generate(seed: u64, stream: u64, out: *mut *mut SlkScene) -> SlkStatus {
    guard(|| {
        non_null(out, "out")?;
        let scene = generate_scene(&RngStream::new(seed, stream), &SceneConfig::default())?;
        *out = Box::into_raw(Box::new(SlkScene { scene }));
        Ok(())
    })
}

/// Writes the scene's channel, height and width.
///
/// # Safety
/// `scene` must be a live handle and each output pointer valid for writing.
#[no_mangle]
pub unsafe extern "C" fn slk_scene_dims(
    scene: *const SlkScene,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> SlkStatus {
    guard(|| {
        non_null(scene, "scene")?;
        let s = &(*scene).scene;
        write_out(channels, s.channels(), "channels")?;
        write_out(height, s.height(), "height")?;
        write_out(width, s.width(), "width")
    })
}

/// Copies the scene's pixels in channel-major order into `out`.
///
/// # Safety
/// `scene` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn slk_scene_pixels(scene: *const SlkScene, out: *mut f64, len: usize) -> SlkStatus {
    guard(|| {
        non_null(scene, "scene")?;
        let data = (*scene).scene.image.data();
        output(out, len, data.len(), "out")?.copy_from_slice(data);
        Ok(())
    })
}

/// Patch indices covered by objects labelled `label` on a grid of
/// `patch`-pixel patches. `out_len` receives the count; `out` must hold
/// at least that many entries.
///
/// # Safety
/// `scene` must be a live handle, `label` a NUL-terminated string, `out`
/// valid for `cap` writes and `out_len` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn slk_scene_locate(
    scene: *const SlkScene,
    label: *const c_char,
    patch: usize,
    out: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> SlkStatus {
    guard(|| {
        non_null(scene, "scene")?;
        let s = &(*scene).scene;
        let label: Label = c_str(label, "label")?.parse()?;
        let grid = PatchGrid::for_image(&s.image, patch)?;
        let loc = locate(s, label, &grid)?;
        write_out(out_len, loc.len(), "out_len")?;
        output(out, cap, loc.len(), "out")?.copy_from_slice(&loc.patch_indices);
        Ok(())
    })
}

/// Releases a scene. Null is ignored.
///
/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slk_scene_free(scene: *mut SlkScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Loads a checkpoint written by `semlink train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn slk_model_load(path: *const c_char, out: *mut *mut SlkModel) -> SlkStatus {
    guard(|| {
        non_null(out, "out")?;
        let model = SemanticModel::load(Path::new(c_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(SlkModel { model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slk_model_free(model: *mut SlkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sends `scene` through the model with adaptive and with random masking
/// under identical channel randomness and scores both on the patches of
/// the scene's first object.
///
/// # Safety
/// `model` and `scene` must be live handles and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn slk_model_transmit(
    model: *const SlkModel,
    scene: *const SlkScene,
    p_r: f64,
    kind: SlkChannelKind,
    snr_db: f64,
    seed: u64,
    trial: u64,
    out: *mut SlkTrialScores,
) -> SlkStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(scene, "scene")?;
        non_null(out, "out")?;
        let m = &(*model).model;
        let s = &(*scene).scene;
        let cc = m.config.codec;
        let per_pixel = cc.patch_dim / s.channels().max(1);
        let patch = (per_pixel as f64).sqrt().round() as usize;
        let grid = PatchGrid::for_image(&s.image, patch.max(1))?;
        if grid.patch_dim() != cc.patch_dim || grid.num_patches() != cc.num_patches {
            return Err(fail(
                SlkStatus::Dimension,
                "scene does not match the model's patch grid",
            ));
        }
        let label = s
            .primary_label()
            .ok_or_else(|| fail(SlkStatus::InvalidArgument, "scene has no objects"))?;
        let loc = locate(s, label, &grid)?;
        let kind = match kind {
            SlkChannelKind::Awgn => ChannelKind::Awgn,
            SlkChannelKind::Rayleigh => ChannelKind::Rayleigh,
            SlkChannelKind::Rician => ChannelKind::Rician,
        };
        let channel = Channel::new(ChannelConfig {
            kind,
            snr_db,
            ..ChannelConfig::default()
        })?;
        let (a, r) = paired_trial(m, s, &loc, &grid, p_r, &channel, &RngStream::new(seed, trial))?;
        let keep_count = a.plan.keep_count();
        let (sa, sr) = (score(s, &a, &loc, &grid)?, score(s, &r, &loc, &grid)?);
        *out = SlkTrialScores {
            adaptive_region_psnr_db: sa.region_psnr_db,
            random_region_psnr_db: sr.region_psnr_db,
            adaptive_region_ssim: sa.region_ssim,
            random_region_ssim: sr.region_ssim,
            keep_count,
        };
        Ok(())
    })
}

/// Draws a location-informed mask over an image of `channels × height ×
/// width` split into `patch`-pixel patches. Patches listed in `loc` are
/// masked with probability `p_r`, the rest with `1 − p_r`. `out_masked`
/// receives one byte per patch, 1 for masked.
///
/// # Safety
/// `loc` must be valid for `loc_len` reads and `out_masked` for `out_len`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn slk_sample_mask(
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
    loc: *const usize,
    loc_len: usize,
    p_r: f64,
    seed: u64,
    stream: u64,
    out_masked: *mut u8,
    out_len: usize,
) -> SlkStatus {
    guard(|| {
        let grid = PatchGrid::new(channels, height, width, patch)?;
        let loc = Loc::from_indices(&grid, input(loc, loc_len, "loc")?.iter().copied())?;
        let plan = sample_mask(&grid, &loc, p_r, &mut RngStream::new(seed, stream))?;
        let out = output(out_masked, out_len, grid.num_patches(), "out_masked")?;
        for (o, &m) in out.iter_mut().zip(plan.masked()) {
            *o = m as u8;
        }
        Ok(())
    })
}

/// PSNR in dB of two `channels × height × width` images.
///
/// # Safety
/// `a` and `b` must be valid for `channels·height·width` reads and `out`
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn slk_psnr(
    a: *const f64,
    b: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    max_val: f64,
    out: *mut f64,
) -> SlkStatus {
    guard(|| {
        let n = channels * height * width;
        let ta = image(input(a, n, "a")?, channels, height, width)?;
        let tb = image(input(b, n, "b")?, channels, height, width)?;
        write_out(out, psnr(&ta, &tb, max_val)?, "out")
    })
}

/// Mean SSIM of two `channels × height × width` images.
///
/// # Safety
/// As for [`slk_psnr`].
#[no_mangle]
pub unsafe extern "C" fn slk_ssim(
    a: *const f64,
    b: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    max_val: f64,
    out: *mut f64,
) -> SlkStatus {
    guard(|| {
        let n = channels * height * width;
        let ta = image(input(a, n, "a")?, channels, height, width)?;
        let tb = image(input(b, n, "b")?, channels, height, width)?;
        write_out(out, ssim(&ta, &tb, max_val)?, "out")
    })
}

/// Splits `k` users' `seq_len × dim` semantics, stored user after user in
/// `users`, into shared and private rows. `out_shared` receives one byte
/// per row, 1 for shared; `out_l_pub` and `out_savings` receive the shared
/// row count and the resulting bandwidth savings.
///
/// # Safety
/// `users` must be valid for `k·seq_len·dim` reads, `out_shared` for
/// `out_len` writes, and the two scalar outputs for one write each.
#[no_mangle]
pub unsafe extern "C" fn slk_partition(
    users: *const f64,
    k: usize,
    seq_len: usize,
    dim: usize,
    epsilon: f64,
    all_pairs: bool,
    out_shared: *mut u8,
    out_len: usize,
    out_l_pub: *mut usize,
    out_savings: *mut f64,
) -> SlkStatus {
    guard(|| {
        let per = seq_len * dim;
        let data = input(users, k * per, "users")?;
        let tensors = (0..k)
            .map(|u| Tensor::new([seq_len, dim], data[u * per..(u + 1) * per].to_vec()))
            .collect::<semlink::Result<Vec<_>>>()?;
        let mode = if all_pairs {
            PairMode::AllPairs
        } else {
            PairMode::Consecutive
        };
        let p = partition(&MultiUserSemantics::new(tensors)?, epsilon, mode)?;
        let out = output(out_shared, out_len, seq_len, "out_shared")?;
        out.fill(0);
        for &i in &p.shared_idx {
            out[i] = 1;
        }
        write_out(out_l_pub, p.l_pub(), "out_l_pub")?;
        write_out(out_savings, bandwidth_savings(&p, k), "out_savings")
    })
}
