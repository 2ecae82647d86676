//! Exact and numerical tools for quasi-periodic solutions of the
//! Degasperis–Procesi equation on the circle.

pub mod error;
pub mod polyham;
pub mod qmat;
pub mod measure;
pub mod scalar;
pub mod sites;
pub mod spectrum;
pub mod torus;
pub mod twist;
pub mod wbnf;
