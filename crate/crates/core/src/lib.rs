//! Smoothing via adaptive shrinkage.
//!
//! Multiscale empirical-Bayes denoising of 1-D signals observed with
//! heteroskedastic Gaussian noise ([`gauss`]) or Poisson noise ([`pois`]).
//! Both pipelines transform the data into a translation-invariant multiscale
//! table, shrink every resolution level with [`ash`], and invert.

pub mod ash;
pub mod wavelet;
pub mod gauss;
pub mod pois;
pub mod bench;
pub mod io;
