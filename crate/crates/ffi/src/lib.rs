//! C ABI over the core valuation primitives, so party agents can be built
//! in other languages against the same bit-exact pseudonymization, binning
//! and CMI reconstruction.
//!
//! Conventions: opaque handles with paired `_free` functions, status codes
//! for every fallible call, caller-owned output buffers. The header is
//! generated into `include/shapcmi.h` at build time.

use std::os::raw::c_char;

use shapcmi_core::binning::{make_bins, BinningSpec};
use shapcmi_core::cmi::{cmi_from_quads, PsiQuad};
use shapcmi_core::ident::{encrypt_id, SecretKey};

/// Status code returned by every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapcmiStatus {
    Ok = 0,
    /// Null pointer or zero-length buffer where data was required.
    InvalidArgument = 1,
    /// Key shorter than the 16-byte minimum.
    InvalidKey = 2,
    /// Input rejected (empty column, non-finite value, bad bin count).
    InputError = 3,
    /// Intersection counts violate the quad ordering invariant.
    ProtocolCorruption = 4,
}

/// Opaque handle to a session secret key.
pub struct ShapcmiKey {
    inner: SecretKey,
}

/// The four intersection cardinalities for one observed value combination.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ShapcmiQuad {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

/// Creates a key handle from `len` raw bytes. On success writes the handle
/// to `out_key`; release it with `shapcmi_key_free`.
#[no_mangle]
pub unsafe extern "C" fn shapcmi_key_new(
    bytes: *const u8,
    len: usize,
    out_key: *mut *mut ShapcmiKey,
) -> ShapcmiStatus {
    if bytes.is_null() || out_key.is_null() {
        return ShapcmiStatus::InvalidArgument;
    }
    let material = std::slice::from_raw_parts(bytes, len);
    match SecretKey::from_bytes(material.to_vec()) {
        Ok(inner) => {
            *out_key = Box::into_raw(Box::new(ShapcmiKey { inner }));
            ShapcmiStatus::Ok
        }
        Err(_) => ShapcmiStatus::InvalidKey,
    }
}

#[no_mangle]
pub unsafe extern "C" fn shapcmi_key_free(key: *mut ShapcmiKey) {
    if !key.is_null() {
        drop(Box::from_raw(key));
    }
}

/// Double keyed hash of a raw ID. `out_digest` must have room for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn shapcmi_encrypt_id(
    key: *const ShapcmiKey,
    raw_id: *const u8,
    raw_id_len: usize,
    out_digest: *mut u8,
) -> ShapcmiStatus {
    if key.is_null() || raw_id.is_null() || out_digest.is_null() {
        return ShapcmiStatus::InvalidArgument;
    }
    let id = std::slice::from_raw_parts(raw_id, raw_id_len);
    let digest = encrypt_id(&(*key).inner, id);
    std::ptr::copy_nonoverlapping(digest.as_bytes().as_ptr(), out_digest, 32);
    ShapcmiStatus::Ok
}

fn bins_into(
    values: *const f64,
    len: usize,
    spec: BinningSpec,
    out_bins: *mut u32,
) -> ShapcmiStatus {
    if values.is_null() || out_bins.is_null() || len == 0 {
        return ShapcmiStatus::InvalidArgument;
    }
    let values = unsafe { std::slice::from_raw_parts(values, len) };
    match make_bins(values, &spec) {
        Ok(bins) => {
            unsafe { std::ptr::copy_nonoverlapping(bins.as_ptr(), out_bins, len) };
            ShapcmiStatus::Ok
        }
        Err(_) => ShapcmiStatus::InputError,
    }
}

/// Equal-width binning over the column's own min/max. `out_bins` must have
/// room for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn shapcmi_bins_equal_width(
    values: *const f64,
    len: usize,
    bin_count: usize,
    out_bins: *mut u32,
) -> ShapcmiStatus {
    let spec = match BinningSpec::equal_width(bin_count) {
        Ok(s) => s,
        Err(_) => return ShapcmiStatus::InputError,
    };
    bins_into(values, len, spec, out_bins)
}

/// One bin per distinct value, indexed by ascending rank.
#[no_mangle]
pub unsafe extern "C" fn shapcmi_bins_categorical(
    values: *const f64,
    len: usize,
    out_bins: *mut u32,
) -> ShapcmiStatus {
    bins_into(values, len, BinningSpec::categorical(), out_bins)
}

/// CMI in nats reconstructed from `len` intersection quads with `n` common
/// IDs.
#[no_mangle]
pub unsafe extern "C" fn shapcmi_cmi_from_quads(
    quads: *const ShapcmiQuad,
    len: usize,
    n: u64,
    out_cmi: *mut f64,
) -> ShapcmiStatus {
    if quads.is_null() || out_cmi.is_null() {
        return ShapcmiStatus::InvalidArgument;
    }
    let quads: Vec<PsiQuad> = std::slice::from_raw_parts(quads, len)
        .iter()
        .map(|q| PsiQuad { a: q.a, b: q.b, c: q.c, d: q.d })
        .collect();
    match cmi_from_quads(&quads, n) {
        Ok(v) => {
            *out_cmi = v;
            ShapcmiStatus::Ok
        }
        Err(shapcmi_core::Error::Corruption(_)) => ShapcmiStatus::ProtocolCorruption,
        Err(_) => ShapcmiStatus::InputError,
    }
}

/// Arithmetic mean of per-permutation CMIs: the Shapley estimate for one
/// feature.
#[no_mangle]
pub unsafe extern "C" fn shapcmi_shapley_mean(
    cmis: *const f64,
    len: usize,
    out_value: *mut f64,
) -> ShapcmiStatus {
    if cmis.is_null() || out_value.is_null() || len == 0 {
        return ShapcmiStatus::InvalidArgument;
    }
    let cmis = std::slice::from_raw_parts(cmis, len);
    *out_value = cmis.iter().sum::<f64>() / len as f64;
    ShapcmiStatus::Ok
}

#[no_mangle]
pub extern "C" fn shapcmi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
