//! Poincaré flows of three dimensional vector fields, their rescaled
//! versions near singularities, the blowup that extends them to the
//! singularities themselves, and numerical checks of singular hyperbolicity
//! on sampled attractors.
//!
//! ```
//! use shflow_core::field::{Point, VectorFieldDef};
//! use shflow_core::flow::IntegratorConfig;
//! use shflow_core::poincare::{rescaled_linear_poincare, PoincareConfig};
//!
//! let f = VectorFieldDef::lorenz_classic();
//! let c = rescaled_linear_poincare(&f, &Point::new(-5.0, -6.0, 20.0), 1.0, &IntegratorConfig::default(), &PoincareConfig::default())?;
//! assert!(c.mat.determinant().abs() > 0.0);
//! # Ok::<(), shflow_core::Error>(())
//! ```
//!
//! The guide in `book/` walks through each module; its snippets run as
//! doctests of this crate.

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod error;
pub mod field;
pub mod flow;
pub mod hyperbolicity;
pub mod poincare;

pub use error::{Error, Result};

// Book chapters, so `cargo test --doc` runs their code blocks.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fields.md")]
    mod fields {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/poincare.md")]
    mod poincare {}
    #[doc = include_str!("../../../book/src/blowup.md")]
    mod blowup {}
    #[doc = include_str!("../../../book/src/hyperbolicity.md")]
    mod hyperbolicity {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
