//! Reference implementations shared by the integration and acceptance
//! tests. Each is written from the definitions, not from the library code.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod conse_oracle;
pub mod gradcheck;
pub mod hog_oracle;
