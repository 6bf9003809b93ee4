//! C ABI over the fieldcast pipeline.
//!
//! Objects cross the boundary as opaque handles created by `fc_*_load`,
//! `fc_*_make` or `fc_*_place` and released with the matching `fc_*_free`.
//! Every fallible call returns an [`FcStatus`]; on failure the message is
//! available from [`fc_last_error`] on the same thread.
//!
//! # Safety
//!
//! Handle arguments must be null or a live handle of the right type from
//! this library. Buffers must be valid for the stated length and paths must
//! be NUL-terminated. A handle is invalid after it is freed.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fieldcast::features::{FeatureMaps, N_FEATURES};
use fieldcast::forest::{load_forest, ForestModel};
use fieldcast::geometry::place_pair;
use fieldcast::linmodel::LinearModel;
use fieldcast::oracle::{field_magnitude, solve_potential, SolveParams};
use fieldcast::phantom::make_phantom;
use fieldcast::vvol::{load_labels, load_scalar, save_volume};
use fieldcast::{
    Axis, ElectrodeLayout, Error, GridMeta, LabelVolume, PhantomSpec, ScalarField, TissueTable, Unit,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A file could not be read or written.
    Io = 2,
    /// A file or buffer was malformed.
    Format = 3,
    /// Inputs were well-formed but unusable.
    InvalidInput = 4,
    /// The solver or a fit failed numerically.
    Numerical = 5,
    /// An internal panic was caught.
    Panic = 6,
}

/// Electrode placement axis.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcAxis {
    AP = 0,
    LR = 1,
}

/// Labelled head volume.
pub struct FcVolume(LabelVolume);
/// Scalar field on a grid, e.g. field magnitude in V/cm.
pub struct FcField(ScalarField);
/// Electrode pair placed on a volume.
pub struct FcLayout(ElectrodeLayout);
/// Trained random-forest surrogate.
pub struct FcForest(ForestModel);
/// Trained multilinear baseline.
pub struct FcLinear(LinearModel);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn status_of(e: &Error) -> FcStatus {
    match e {
        Error::InCase { source, .. } => status_of(source),
        Error::Io { .. } | Error::MissingInputs(_) => FcStatus::Io,
        Error::Header(_) | Error::PayloadLength { .. } | Error::CorruptModel(_) | Error::Json(_) => {
            FcStatus::Format
        }
        e if e.is_numerical() => FcStatus::Numerical,
        _ => FcStatus::InvalidInput,
    }
}

struct Fail(FcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FcStatus::NullArgument, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            FcStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FcStatus::InvalidInput, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

unsafe fn meta_arg(dims: *const usize, spacing: *const f64) -> Result<GridMeta, Fail> {
    if dims.is_null() || spacing.is_null() {
        return Err(null("dims or spacing"));
    }
    let d = std::slice::from_raw_parts(dims, 3);
    let s = std::slice::from_raw_parts(spacing, 3);
    Ok(GridMeta::new([d[0], d[1], d[2]], [s[0], s[1], s[2]])?)
}

/// Copy the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator; pass a null `buf` to query it.
#[no_mangle]
pub unsafe extern "C" fn fc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a VVOL1 label volume.
#[no_mangle]
pub unsafe extern "C" fn fc_volume_load(path: *const c_char, out: *mut *mut FcVolume) -> FcStatus {
    guard(|| emit(out, FcVolume(load_labels(&path_arg(path)?)?)))
}

/// Build a volume from `n` x-fastest labels on a `dims` grid with
/// `spacing` in mm.
#[no_mangle]
pub unsafe extern "C" fn fc_volume_from_labels(
    dims: *const usize,
    spacing: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut *mut FcVolume,
) -> FcStatus {
    guard(|| {
        let meta = meta_arg(dims, spacing)?;
        if labels.is_null() {
            return Err(null("labels"));
        }
        let labels = std::slice::from_raw_parts(labels, n).to_vec();
        emit(out, FcVolume(LabelVolume::new(meta, labels)?))
    })
}

/// Generate the default synthetic head on the given grid. `seed` draws
/// the shape jitter.
#[no_mangle]
pub unsafe extern "C" fn fc_phantom_make(
    dims: *const usize,
    spacing: *const f64,
    seed: u64,
    out: *mut *mut FcVolume,
) -> FcStatus {
    guard(|| {
        let spec = PhantomSpec {
            meta: meta_arg(dims, spacing)?,
            seed,
            ..PhantomSpec::default()
        };
        emit(out, FcVolume(make_phantom(&spec)?))
    })
}

/// Grid dimensions of a volume.
#[no_mangle]
pub unsafe extern "C" fn fc_volume_dims(volume: *const FcVolume, dims: *mut usize) -> FcStatus {
    guard(|| {
        let v = borrow(volume, "volume")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        ptr::copy_nonoverlapping(v.0.meta().dims.as_ptr(), dims, 3);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fc_volume_free(volume: *mut FcVolume) {
    free(volume)
}

/// Place an electrode pair with disc patches of `radius_mm` on the head
/// surface along `axis`.
#[no_mangle]
pub unsafe extern "C" fn fc_layout_place(
    volume: *const FcVolume,
    axis: FcAxis,
    radius_mm: f64,
    out: *mut *mut FcLayout,
) -> FcStatus {
    guard(|| {
        let v = borrow(volume, "volume")?;
        let axis = match axis {
            FcAxis::AP => Axis::AP,
            FcAxis::LR => Axis::LR,
        };
        emit(out, FcLayout(place_pair(&v.0, axis, radius_mm)?))
    })
}

/// Load a layout JSON file.
#[no_mangle]
pub unsafe extern "C" fn fc_layout_load(path: *const c_char, out: *mut *mut FcLayout) -> FcStatus {
    guard(|| emit(out, FcLayout(ElectrodeLayout::load(&path_arg(path)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn fc_layout_free(layout: *mut FcLayout) {
    free(layout)
}

/// Reference solve with the default tissue table and solver settings;
/// yields the field magnitude in V/cm.
#[no_mangle]
pub unsafe extern "C" fn fc_solve_field(
    volume: *const FcVolume,
    layout: *const FcLayout,
    out: *mut *mut FcField,
) -> FcStatus {
    guard(|| {
        let v = borrow(volume, "volume")?;
        let l = borrow(layout, "layout")?;
        l.0.validate(&v.0)?;
        let sol = solve_potential(&v.0, &TissueTable::default(), &l.0, &SolveParams::default())?;
        emit(out, FcField(field_magnitude(&sol, v.0.meta())?))
    })
}

/// Load a VVOL1 scalar field.
#[no_mangle]
pub unsafe extern "C" fn fc_field_load(path: *const c_char, out: *mut *mut FcField) -> FcStatus {
    guard(|| emit(out, FcField(load_scalar(&path_arg(path)?)?)))
}

/// Number of voxels in a field.
#[no_mangle]
pub unsafe extern "C" fn fc_field_len(field: *const FcField) -> usize {
    field.as_ref().map_or(0, |f| f.0.values().len())
}

/// Copy the field's x-fastest values into `buf`, which must hold
/// `fc_field_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fc_field_values(field: *const FcField, buf: *mut f64, len: usize) -> FcStatus {
    guard(|| {
        let f = borrow(field, "field")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let v = f.0.values();
        if len < v.len() {
            return Err(Fail(
                FcStatus::InvalidInput,
                format!("buffer holds {len} values, field has {}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Write a field as VVOL1.
#[no_mangle]
pub unsafe extern "C" fn fc_field_save(field: *const FcField, path: *const c_char) -> FcStatus {
    guard(|| Ok(save_volume(&path_arg(path)?, &borrow(field, "field")?.0)?))
}

#[no_mangle]
pub unsafe extern "C" fn fc_field_free(field: *mut FcField) {
    free(field)
}

/// Load a forest model file.
#[no_mangle]
pub unsafe extern "C" fn fc_forest_load(path: *const c_char, out: *mut *mut FcForest) -> FcStatus {
    guard(|| emit(out, FcForest(load_forest(&path_arg(path)?)?)))
}

/// Number of trees in a forest.
#[no_mangle]
pub unsafe extern "C" fn fc_forest_n_trees(forest: *const FcForest) -> usize {
    forest.as_ref().map_or(0, |f| f.0.trees.len())
}

/// Copy the five feature importances (sigma, eps, d_e, d_c, d_l) into
/// `out`.
#[no_mangle]
pub unsafe extern "C" fn fc_forest_importances(forest: *const FcForest, out: *mut f64) -> FcStatus {
    guard(|| {
        let f = borrow(forest, "forest")?;
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(f.0.importances.as_ptr(), out, N_FEATURES);
        Ok(())
    })
}

unsafe fn predict_rows(
    rows: *const f64,
    n_rows: usize,
    out: *mut f64,
    f: impl Fn(&[[f64; N_FEATURES]]) -> Vec<f64>,
) -> Result<(), Fail> {
    if n_rows == 0 {
        return Ok(());
    }
    if rows.is_null() || out.is_null() {
        return Err(null("rows or out"));
    }
    let flat = std::slice::from_raw_parts(rows, n_rows * N_FEATURES);
    let x: Vec<[f64; N_FEATURES]> = flat
        .chunks_exact(N_FEATURES)
        .map(|c| c.try_into().unwrap())
        .collect();
    if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
        return Err(Fail(FcStatus::InvalidInput, format!("non-finite feature in row {}", i / N_FEATURES)));
    }
    let y = f(&x);
    ptr::copy_nonoverlapping(y.as_ptr(), out, n_rows);
    Ok(())
}

unsafe fn predict_volume(
    volume: *const FcVolume,
    layout: *const FcLayout,
    out: *mut *mut FcField,
    f: impl Fn(&[[f64; N_FEATURES]]) -> Vec<f64>,
) -> Result<(), Fail> {
    let v = borrow(volume, "volume")?;
    let l = borrow(layout, "layout")?;
    l.0.validate(&v.0)?;
    let x = FeatureMaps::compute(&v.0, &TissueTable::default(), &l.0)?.matrix();
    emit(out, FcField(ScalarField::new(*v.0.meta(), f(&x), Unit::VoltPerCm)?))
}

/// Predict `n_rows` row-major feature rows (sigma, eps, d_e, d_c, d_l)
/// into `out`.
#[no_mangle]
pub unsafe extern "C" fn fc_forest_predict_rows(
    forest: *const FcForest,
    rows: *const f64,
    n_rows: usize,
    out: *mut f64,
) -> FcStatus {
    guard(|| {
        let m = borrow(forest, "forest")?;
        predict_rows(rows, n_rows, out, |x| m.0.predict(x))
    })
}

/// Compute features for every voxel and predict the field magnitude.
#[no_mangle]
pub unsafe extern "C" fn fc_forest_predict_volume(
    forest: *const FcForest,
    volume: *const FcVolume,
    layout: *const FcLayout,
    out: *mut *mut FcField,
) -> FcStatus {
    guard(|| {
        let m = borrow(forest, "forest")?;
        predict_volume(volume, layout, out, |x| m.0.predict(x))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fc_forest_free(forest: *mut FcForest) {
    free(forest)
}

/// Load a linear model JSON file.
#[no_mangle]
pub unsafe extern "C" fn fc_linear_load(path: *const c_char, out: *mut *mut FcLinear) -> FcStatus {
    guard(|| emit(out, FcLinear(LinearModel::load(&path_arg(path)?)?)))
}

/// As [`fc_forest_predict_rows`] for the linear model.
#[no_mangle]
pub unsafe extern "C" fn fc_linear_predict_rows(
    model: *const FcLinear,
    rows: *const f64,
    n_rows: usize,
    out: *mut f64,
) -> FcStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        predict_rows(rows, n_rows, out, |x| m.0.predict(x))
    })
}

/// As [`fc_forest_predict_volume`] for the linear model.
#[no_mangle]
pub unsafe extern "C" fn fc_linear_predict_volume(
    model: *const FcLinear,
    volume: *const FcVolume,
    layout: *const FcLayout,
    out: *mut *mut FcField,
) -> FcStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        predict_volume(volume, layout, out, |x| m.0.predict(x))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fc_linear_free(model: *mut FcLinear) {
    free(model)
}
