//! Links the BLAS implementation selected by feature.
#![no_std]

#[cfg(feature = "openblas")]
extern crate openblas_src as raw;
