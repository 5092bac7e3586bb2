//! C interface to the spatial adaptation layer, the bilinear sampler and
//! the BSAC1 container reader.
//!
//! Every function returns a [`SalnetStatus`]. On failure a message is kept
//! per thread and can be fetched with [`salnet_last_error_message`]. Objects
//! are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use salnet::error::ContainerError;
use salnet::geometry::{compose_affine, Axis, GridSpec, SalParams, SamplingGrid, N_AFFINE};
use salnet::io::read_container;
use salnet::protocol::SessionDataset;
use salnet::resampler::{bilinear_sample, Frame, SamplerConfig};
use salnet::sal::{FreezeMask, SalLayer};
use salnet::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SalnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    Io = 5,
    Format = 6,
    Panic = 7,
}

/// Adaptation layer handle.
pub struct SalnetLayer {
    inner: SalLayer,
}

/// Decoded recording session handle.
pub struct SalnetDataset {
    inner: SessionDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SalnetStatus {
    match e {
        Error::InvalidParameter(_) | Error::LabelOutOfRange { .. } => SalnetStatus::InvalidArgument,
        Error::Dimension { .. } | Error::SignalTooShort { .. } | Error::Empty(_) | Error::InsufficientData(_) => {
            SalnetStatus::Dimension
        }
        Error::DegenerateGrid(_) | Error::FilterDesign(_) | Error::NonFinite(_) | Error::Numerical(_) => {
            SalnetStatus::Numerical
        }
        Error::Io { .. } | Error::Container(ContainerError::Io(_)) => SalnetStatus::Io,
        Error::Container(_) | Error::Report { .. } => SalnetStatus::Format,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, recording failures and turning panics into a status.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> SalnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SalnetStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SalnetStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SalnetStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidParameter(format!("{what} is not UTF-8"))))
}

fn axis_code(code: i32) -> Result<Option<Axis>, Fail> {
    match code {
        -1 => Ok(None),
        0 => Ok(Some(Axis::X)),
        1 => Ok(Some(Axis::Y)),
        _ => Err(Fail::Lib(Error::InvalidParameter(format!("wrap axis must be -1, 0 or 1, got {code}")))),
    }
}

fn params_from(p: &[f64]) -> Result<SalParams, Fail> {
    let mut a = [0.0; N_AFFINE];
    a.copy_from_slice(p);
    let params = SalParams::from_array(a);
    params.validate()?;
    Ok(params)
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn salnet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Writes the row-major 2x3 affine matrix for the seven coefficients
/// `tx, ty, phi, sx, sy, shx, shy`.
///
/// # Safety
/// `params` must point to 7 doubles and `out` to 6 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn salnet_compose_affine(params: *const f64, out: *mut f64) -> SalnetStatus {
    guard(|| {
        let p = params_from(slice(params, N_AFFINE, "params")?)?;
        let out = slice_mut(out, 6, "out")?;
        let a = compose_affine(&p)?;
        for r in 0..2 {
            out[r * 3..r * 3 + 3].copy_from_slice(&a.theta[r]);
        }
        Ok(())
    })
}

/// Samples the `height x width` image `input` at `height * width`
/// normalized coordinates given as interleaved `x, y` pairs. `wrap_axis`
/// is -1 for zero padding, 0 to wrap columns, 1 to wrap rows.
///
/// # Safety
/// `input` and `out` hold `height * width` doubles, `coords` twice that.
#[no_mangle]
pub unsafe extern "C" fn salnet_bilinear_sample(
    input: *const f64,
    height: usize,
    width: usize,
    coords: *const f64,
    wrap_axis: i32,
    out: *mut f64,
) -> SalnetStatus {
    guard(|| {
        let n = height
            .checked_mul(width)
            .ok_or(Fail::Lib(Error::InvalidParameter("image size overflows".into())))?;
        let u = Frame::new(height, width, slice(input, n, "input")?.to_vec())?;
        let xy = slice(coords, 2 * n, "coords")?;
        let grid = SamplingGrid { coords: xy.chunks_exact(2).map(|c| (c[0], c[1])).collect() };
        let cfg = SamplerConfig { wrap: axis_code(wrap_axis)? };
        let v = bilinear_sample(&u, &grid, &cfg)?;
        slice_mut(out, n, "out")?.copy_from_slice(&v.values);
        Ok(())
    })
}

/// Creates an identity layer with zero baseline for a `height x width`
/// array with electrode spacing `ied_mm`. `circumferential_axis` is the
/// axis that wraps around the limb, 0 for columns or 1 for rows.
///
/// # Safety
/// `out` must be a valid pointer; the handle is released with [`salnet_layer_free`].
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_new(
    height: usize,
    width: usize,
    ied_mm: f64,
    circumferential_axis: i32,
    out: *mut *mut SalnetLayer,
) -> SalnetStatus {
    guard(|| {
        let slot = handle_mut(out, "out")?;
        *slot = ptr::null_mut();
        let axis = axis_code(circumferential_axis)?
            .ok_or(Fail::Lib(Error::InvalidParameter("circumferential axis must be 0 or 1".into())))?;
        let grid = GridSpec::new(height, width, ied_mm, axis)?;
        *slot = Box::into_raw(Box::new(SalnetLayer { inner: SalLayer::new(grid) }));
        Ok(())
    })
}

/// Releases a layer. Null is ignored.
///
/// # Safety
/// `layer` must come from [`salnet_layer_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_free(layer: *mut SalnetLayer) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// Number of image pixels the layer expects.
///
/// # Safety
/// `layer` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_len(layer: *const SalnetLayer) -> usize {
    layer.as_ref().map_or(0, |l| l.inner.grid.len())
}

/// # Safety
/// `layer` must be live and `params` point to 7 doubles.
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_set_params(layer: *mut SalnetLayer, params: *const f64) -> SalnetStatus {
    guard(|| {
        let l = handle_mut(layer, "layer")?;
        l.inner.params = params_from(slice(params, N_AFFINE, "params")?)?;
        Ok(())
    })
}

/// # Safety
/// `layer` must be live and `out` point to 7 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_get_params(layer: *const SalnetLayer, out: *mut f64) -> SalnetStatus {
    guard(|| {
        let l = handle(layer, "layer")?;
        slice_mut(out, N_AFFINE, "out")?.copy_from_slice(&l.inner.params.to_array());
        Ok(())
    })
}

/// # Safety
/// `layer` must be live and `bias` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_set_bias(layer: *mut SalnetLayer, bias: *const f64, len: usize) -> SalnetStatus {
    guard(|| {
        let l = handle_mut(layer, "layer")?;
        let b = slice(bias, len, "bias")?;
        l.inner = l.inner.clone().with_baseline(b.to_vec())?;
        Ok(())
    })
}

/// # Safety
/// `layer` must be live and `out` hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_get_bias(layer: *const SalnetLayer, out: *mut f64, len: usize) -> SalnetStatus {
    guard(|| {
        let l = handle(layer, "layer")?;
        if len != l.inner.bias.len() {
            return Err(Error::Dimension { expected: l.inner.bias.len(), got: len }.into());
        }
        slice_mut(out, len, "out")?.copy_from_slice(&l.inner.bias);
        Ok(())
    })
}

/// Freezes the comma-separated groups in `names` (from `tx`, `ty`, `phi`,
/// `sx`, `sy`, `shx`, `shy`, `bias`); all others become trainable.
///
/// # Safety
/// `layer` must be live and `names` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_set_frozen(layer: *mut SalnetLayer, names: *const c_char) -> SalnetStatus {
    guard(|| {
        let l = handle_mut(layer, "layer")?;
        let mask: FreezeMask = str_arg(names, "names")?.parse()?;
        l.inner.freeze = mask;
        Ok(())
    })
}

/// Enables or disables wrapping along the circumferential axis.
///
/// # Safety
/// `layer` must be live.
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_set_wrap(layer: *mut SalnetLayer, wrap: bool) -> SalnetStatus {
    guard(|| {
        let l = handle_mut(layer, "layer")?;
        l.inner.sampler = SamplerConfig::circumferential(&l.inner.grid, wrap);
        Ok(())
    })
}

/// Subtracts the baseline from `input` and resamples it into `out`.
///
/// # Safety
/// `layer` must be live; `input` and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_forward(
    layer: *const SalnetLayer,
    input: *const f64,
    out: *mut f64,
    len: usize,
) -> SalnetStatus {
    guard(|| {
        let l = handle(layer, "layer")?;
        let a = Frame::for_grid(&l.inner.grid, slice(input, len, "input")?.to_vec())?;
        let v = l.inner.prepare()?.forward(&a)?;
        slice_mut(out, len, "out")?.copy_from_slice(&v.values);
        Ok(())
    })
}

/// Backpropagates `upstream` (the loss gradient at the layer output).
/// Writes 7 affine gradients, `len` baseline gradients and `len` input
/// gradients; frozen groups receive zeros. Any output pointer may be null
/// to skip it.
///
/// # Safety
/// `layer` must be live; `input` and `upstream` hold `len` doubles; non-null
/// outputs hold 7, `len` and `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn salnet_layer_backward(
    layer: *const SalnetLayer,
    input: *const f64,
    upstream: *const f64,
    len: usize,
    d_affine: *mut f64,
    d_bias: *mut f64,
    d_input: *mut f64,
) -> SalnetStatus {
    guard(|| {
        let l = handle(layer, "layer")?;
        let g = &l.inner.grid;
        let a = Frame::for_grid(g, slice(input, len, "input")?.to_vec())?;
        let up = Frame::for_grid(g, slice(upstream, len, "upstream")?.to_vec())?;
        let grads = l.inner.prepare()?.backward(&a, &up)?;
        if !d_affine.is_null() {
            slice_mut(d_affine, N_AFFINE, "d_affine")?.copy_from_slice(&grads.affine);
        }
        if !d_bias.is_null() {
            slice_mut(d_bias, len, "d_bias")?.copy_from_slice(&grads.bias);
        }
        if !d_input.is_null() {
            slice_mut(d_input, len, "d_input")?.copy_from_slice(&grads.input);
        }
        Ok(())
    })
}

/// Reads a BSAC1 container from `path`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid; release the handle with
/// [`salnet_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn salnet_dataset_read(path: *const c_char, out: *mut *mut SalnetDataset) -> SalnetStatus {
    guard(|| {
        let slot = handle_mut(out, "out")?;
        *slot = ptr::null_mut();
        let ds = read_container(Path::new(str_arg(path, "path")?))?;
        *slot = Box::into_raw(Box::new(SalnetDataset { inner: ds }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from [`salnet_dataset_read`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn salnet_dataset_free(ds: *mut SalnetDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Array shape, sampling rate, electrode spacing and segment count.
///
/// # Safety
/// `ds` must be live; every output pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn salnet_dataset_info(
    ds: *const SalnetDataset,
    height: *mut usize,
    width: *mut usize,
    fs: *mut f64,
    ied_mm: *mut f64,
    n_segments: *mut usize,
) -> SalnetStatus {
    guard(|| {
        let d = &handle(ds, "ds")?.inner;
        *handle_mut(height, "height")? = d.grid.height;
        *handle_mut(width, "width")? = d.grid.width;
        *handle_mut(fs, "fs")? = d.fs;
        *handle_mut(ied_mm, "ied_mm")? = d.grid.ied_mm;
        *handle_mut(n_segments, "n_segments")? = d.segments.len();
        Ok(())
    })
}

/// Borrows segment `index`: its label (65535 marks rest), the number of
/// time samples, and a pointer to `n_samples * height * width` floats laid
/// out time-major. The pointer lives as long as the dataset.
///
/// # Safety
/// `ds` must be live; every output pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn salnet_dataset_segment(
    ds: *const SalnetDataset,
    index: usize,
    label: *mut u16,
    n_samples: *mut usize,
    samples: *mut *const f32,
) -> SalnetStatus {
    guard(|| {
        let d = &handle(ds, "ds")?.inner;
        let seg = d.segments.get(index).ok_or_else(|| {
            Fail::Lib(Error::InvalidParameter(format!(
                "segment {index} out of range for {} segments",
                d.segments.len()
            )))
        })?;
        *handle_mut(label, "label")? = seg.label;
        *handle_mut(n_samples, "n_samples")? = seg.n_samples(&d.grid);
        *handle_mut(samples, "samples")? = seg.samples.as_ptr();
        Ok(())
    })
}
