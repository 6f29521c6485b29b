//! Two-image virtual viewpoint synthesis.
//!
//! The crate takes a pair of photographs of the same scene, brings them onto
//! a common image plane ([`registration`]), matches their colors
//! ([`color`]), estimates dense bidirectional optical flow ([`flow`]) and
//! then renders either an intermediate viewpoint ([`synthesis`]) or a
//! parallax-aware close-up that uses flow magnitude as an inverse-depth cue
//! ([`closeup`]).
//!
//! Row loops run on rayon when the `parallel` feature is enabled (the
//! default). Every parallel path is bit-identical to the sequential one.

pub mod closeup;
pub mod color;
pub mod flow;
pub mod par;
pub mod raster;
pub mod registration;
pub mod synth;
pub mod synthesis;

pub use closeup::{CloseupError, CloseupParams, CloseupResult, LayerMask, Tau};
pub use color::{ColorError, TransferCurve};
pub use flow::{FlowError, FlowParams};
pub use raster::{FlowField, GrayImage, Image, Mask, RasterError, ScalarField};
pub use registration::{Correspondence, Homography, RegistrationError};
pub use synthesis::{SynthesisError, ViewResult};


