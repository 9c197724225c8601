//! C ABI over the recpoison core.
//!
//! Datasets and models are opaque heap handles released with the matching
//! `*_free` function. Every fallible call returns an [`RpStatus`]; on failure
//! a message is kept per thread and read with [`rp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use recpoison::attack::{inject, run_attack, wmw, AttackPlan, Variant};
use recpoison::eval::hit_ratio;
use recpoison::influence::{influence_report, InfluenceConfig};
use recpoison::{Error, FactorModel, RatingDataset, Scorer, SynthSpec, TrainConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    Singular = 5,
    NotConverged = 6,
    Degenerate = 7,
    Config = 8,
    Io = 9,
    Utf8 = 10,
    Panic = 11,
    BufferTooSmall = 12,
}

/// Opaque rating dataset.
pub struct RpDataset(RatingDataset);

/// Opaque factor model.
pub struct RpModel(FactorModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RpStatus {
    match e {
        Error::Parse { .. } => RpStatus::Parse,
        Error::Validation(_) => RpStatus::Validation,
        Error::InvalidArgument(_) => RpStatus::InvalidArgument,
        Error::Singular(_) => RpStatus::Singular,
        Error::NotConverged { .. } => RpStatus::NotConverged,
        Error::Degenerate(_) => RpStatus::Degenerate,
        Error::Config(_) => RpStatus::Config,
        Error::Io(_) => RpStatus::Io,
    }
}

struct Fail(RpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RpStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RpStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(RpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RpStatus::Utf8, format!("{what} is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn check_user(ds: &RatingDataset, u: usize) -> Result<(), Fail> {
    if u >= ds.n_users() {
        return Err(Fail(RpStatus::InvalidArgument, format!("user {u} out of range")));
    }
    Ok(())
}

fn check_item(ds: &RatingDataset, i: usize) -> Result<(), Fail> {
    if i >= ds.n_items() {
        return Err(Fail(RpStatus::InvalidArgument, format!("item {i} out of range")));
    }
    Ok(())
}

fn check_pair(m: &FactorModel, ds: &RatingDataset) -> Result<(), Fail> {
    if m.n_users() != ds.n_users() || m.n_items() != ds.n_items() {
        return Err(Fail(RpStatus::InvalidArgument, "model and dataset shapes differ".into()));
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a `user item rating` text file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_ds` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_load(path: *const c_char, r_max: u8, out_ds: *mut *mut RpDataset) -> RpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_ds, "out_ds")?;
        let ds = recpoison::ingest(path, r_max)?;
        *slot = Box::into_raw(Box::new(RpDataset(ds)));
        Ok(())
    })
}

/// Parses dataset text held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out_ds` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_parse(text: *const c_char, r_max: u8, out_ds: *mut *mut RpDataset) -> RpStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let slot = out(out_ds, "out_ds")?;
        let ds = recpoison::dataset::parse(text, r_max, std::path::Path::new("<memory>"))?;
        *slot = Box::into_raw(Box::new(RpDataset(ds)));
        Ok(())
    })
}

/// Generates a synthetic low-rank dataset.
///
/// # Safety
/// `out_ds` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_synth(
    seed: u64,
    n_users: usize,
    n_items: usize,
    density: f64,
    latent_rank: usize,
    out_ds: *mut *mut RpDataset,
) -> RpStatus {
    guard(|| {
        let slot = out(out_ds, "out_ds")?;
        let ds = recpoison::synth(SynthSpec { seed, n_users, n_items, density, latent_rank })?;
        *slot = Box::into_raw(Box::new(RpDataset(ds)));
        Ok(())
    })
}

/// Writes user, item and rating counts. Any output pointer may be null.
///
/// # Safety
/// `ds` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_shape(
    ds: *const RpDataset,
    n_users: *mut usize,
    n_items: *mut usize,
    n_edges: *mut usize,
) -> RpStatus {
    guard(|| {
        let ds = &obj(ds, "ds")?.0;
        if let Some(p) = n_users.as_mut() {
            *p = ds.n_users();
        }
        if let Some(p) = n_items.as_mut() {
            *p = ds.n_items();
        }
        if let Some(p) = n_edges.as_mut() {
            *p = ds.n_edges();
        }
        Ok(())
    })
}

/// Internal id of an item by its external name.
///
/// # Safety
/// `ds` must come from this library; `name` NUL-terminated; `out_item` writable.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_find_item(ds: *const RpDataset, name: *const c_char, out_item: *mut usize) -> RpStatus {
    guard(|| {
        let ds = &obj(ds, "ds")?.0;
        let name = str_arg(name, "name")?;
        let slot = out(out_item, "out_item")?;
        *slot = ds
            .find_item(name)
            .ok_or_else(|| Fail(RpStatus::InvalidArgument, format!("unknown item '{name}'")))?;
        Ok(())
    })
}

/// Writes the dataset in its text format.
///
/// # Safety
/// `ds` must come from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_save(ds: *const RpDataset, path: *const c_char) -> RpStatus {
    guard(|| {
        let ds = &obj(ds, "ds")?.0;
        ds.write(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_free(ds: *mut RpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains a factor model by alternating least squares.
///
/// # Safety
/// `ds` must come from this library; `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn rp_model_train(
    ds: *const RpDataset,
    d: usize,
    lambda: f64,
    sweeps: usize,
    seed: u64,
    out_model: *mut *mut RpModel,
) -> RpStatus {
    guard(|| {
        let ds = &obj(ds, "ds")?.0;
        let slot = out(out_model, "out_model")?;
        let cfg = TrainConfig { d, lambda, sweeps, seed, ..Default::default() };
        let m = recpoison::train(ds, &cfg)?;
        *slot = Box::into_raw(Box::new(RpModel(m)));
        Ok(())
    })
}

/// Predicted rating of `item` for `user`.
///
/// # Safety
/// `model` must come from this library; `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn rp_model_predict(model: *const RpModel, user: usize, item: usize, out_score: *mut f64) -> RpStatus {
    guard(|| {
        let m = &obj(model, "model")?.0;
        let slot = out(out_score, "out_score")?;
        if user >= m.n_users() || item >= m.n_items() {
            return Err(Fail(RpStatus::InvalidArgument, format!("({user},{item}) out of range")));
        }
        *slot = m.predict(user, item);
        Ok(())
    })
}

/// Top-`n` unrated items for `user`. Writes at most `capacity` ids into
/// `items` and the list length into `out_len`; fails with
/// `BufferTooSmall` (after setting `out_len`) if the list does not fit.
///
/// # Safety
/// `model` and `ds` must come from this library; `items` must hold
/// `capacity` entries; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn rp_model_top_n(
    model: *const RpModel,
    ds: *const RpDataset,
    user: usize,
    n: usize,
    items: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> RpStatus {
    guard(|| {
        let m = &obj(model, "model")?.0;
        let ds = &obj(ds, "ds")?.0;
        let len = out(out_len, "out_len")?;
        check_pair(m, ds)?;
        check_user(ds, user)?;
        let list = m.top_n(ds, user, n);
        *len = list.items.len();
        if list.items.len() > capacity {
            return Err(Fail(RpStatus::BufferTooSmall, format!("need {} slots", list.items.len())));
        }
        if !list.items.is_empty() {
            if items.is_null() {
                return Err(null("items"));
            }
            std::slice::from_raw_parts_mut(items, list.items.len()).copy_from_slice(&list.items);
        }
        Ok(())
    })
}

/// Fraction of the first `normal_users` users with `target` in their top-`n`.
///
/// # Safety
/// `model` and `ds` must come from this library; `out_hr` writable.
#[no_mangle]
pub unsafe extern "C" fn rp_hit_ratio(
    model: *const RpModel,
    ds: *const RpDataset,
    target: usize,
    n: usize,
    normal_users: usize,
    out_hr: *mut f64,
) -> RpStatus {
    guard(|| {
        let m = &obj(model, "model")?.0;
        let ds = &obj(ds, "ds")?.0;
        let slot = out(out_hr, "out_hr")?;
        check_pair(m, ds)?;
        check_item(ds, target)?;
        *slot = hit_ratio(m, ds, target, n, normal_users.min(ds.n_users()));
        Ok(())
    })
}

/// Per-user influence on `target`'s predictions, one value per user
/// written to `out_values` (which must hold `n_users` entries).
///
/// # Safety
/// `model` and `ds` must come from this library; `out_values` must hold
/// `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn rp_user_influence(
    model: *const RpModel,
    ds: *const RpDataset,
    target: usize,
    out_values: *mut f64,
    capacity: usize,
) -> RpStatus {
    guard(|| {
        let m = &obj(model, "model")?.0;
        let ds = &obj(ds, "ds")?.0;
        check_pair(m, ds)?;
        check_item(ds, target)?;
        if capacity < ds.n_users() {
            return Err(Fail(RpStatus::BufferTooSmall, format!("need {} slots", ds.n_users())));
        }
        if out_values.is_null() {
            return Err(null("out_values"));
        }
        let r = influence_report(m, ds, target, &InfluenceConfig::default())?;
        std::slice::from_raw_parts_mut(out_values, ds.n_users()).copy_from_slice(&r.user_influence);
        Ok(())
    })
}

/// Runs one attack variant (`"s-tna-inf"`, `"random"`, ...) with default
/// settings and returns the dataset with the fake users appended.
///
/// # Safety
/// `ds` must come from this library; `variant` NUL-terminated; `out_ds` writable.
#[no_mangle]
pub unsafe extern "C" fn rp_attack(
    ds: *const RpDataset,
    target: usize,
    variant: *const c_char,
    m: usize,
    n: usize,
    seed: u64,
    out_ds: *mut *mut RpDataset,
) -> RpStatus {
    guard(|| {
        let ds = &obj(ds, "ds")?.0;
        let variant: Variant = str_arg(variant, "variant")?
            .parse()
            .map_err(|e: Error| Fail(status_of(&e), e.to_string()))?;
        let slot = out(out_ds, "out_ds")?;
        check_item(ds, target)?;
        let plan = AttackPlan { variant, m, n, seed, ..Default::default() };
        let outcome = run_attack(ds, target, &plan)?;
        *slot = Box::into_raw(Box::new(RpDataset(inject(ds, &outcome.profiles)?)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn rp_model_free(model: *mut RpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// The ranking surrogate `1 / (1 + exp(-x/b))`; NaN when `b <= 0`.
#[no_mangle]
pub extern "C" fn rp_wmw(x: f64, b: f64) -> f64 {
    if b > 0.0 {
        wmw(x, b)
    } else {
        f64::NAN
    }
}
