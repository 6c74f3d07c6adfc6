//! Finite-dimensional operator-space machinery at desk scale.
//!
//! The crate models ∞-sums of rectangular matrix blocks together with
//! their completely bounded maps, computes cb norms through a dense
//! Hermitian SDP solver, checks operator-system duality (trace-preserving
//! completely positive quotients against unital complete positivity),
//! enumerates rigid surjections and net-based quotient encodings, and runs
//! approximate amalgamation and distance searches over those structures.
//!
//! Modules are layered bottom-up:
//!
//! * [`linalg`]: dense complex matrices, SVD, Hermitian eigenproblem.
//! * [`sdp`]: homogeneous self-dual interior-point solver for Hermitian
//!   PSD blocks.
//! * [`space`]: block descriptors, matrix levels, amplification, Ruan-type
//!   axiom checks.
//! * [`cbnorm`]: Choi matrices, cb-norm certificates, completely
//!   contractive extension, embedding defects.
//! * [`ramsey`]: rigid surjections, dual-Ramsey instances, quotient nets
//!   and the induced pair surjections.
//! * [`duality`]: trace pairing, dualization, structure checks for
//!   trace-preserving quotient maps, unitality repair.
//! * [`fraisse`]: approximate amalgamation, distance estimates,
//!   embedding nets, oscillation and partition searches.
//! * [`report`]: canonical JSON/CSV emission and run manifests.

pub mod cbnorm;
pub mod duality;
pub mod error;
pub mod fraisse;
pub mod linalg;
pub mod ramsey;
pub mod report;
pub mod sdp;
pub mod space;

pub use error::{Error, Result};
