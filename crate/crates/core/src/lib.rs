//! Generalized multiscale finite elements for the nonlinear high-contrast
//! problem `-div(exp(kappa(x) u) grad u) = f` on the unit square with
//! homogeneous Dirichlet data.
//!
//! The solver linearizes with a Picard iteration. Per-subdomain averages of
//! the previous iterate parameterize local spectral problems. Local
//! snapshot, offline and online spaces are built from those problems and
//! coupled globally either by a continuous Galerkin formulation (partition of
//! unity times online eigenfunctions) or by a symmetric interior penalty
//! discontinuous Galerkin formulation on coarse elements.
//!
//! Module map:
//!
//! * [`grid`]: fine and coarse Cartesian meshes, neighborhoods, coarse edges
//! * [`coeff`]: synthetic permeability fields and the exponential coefficient
//! * [`fem`]: Q1 assembly, Dirichlet elimination, sparse SPD solves
//! * [`eig`]: dense generalized symmetric eigensolver
//! * [`spaces`]: partition of unity, spectral weight, snapshot/offline/online spaces
//! * [`cg`] / [`dg`]: coarse CG and SIPG couplings
//! * [`picard`]: fine and multiscale nonlinear drivers
//! * [`post`]: error norms, reports and images
//! * [`config`] / [`study`]: run configuration and the batch commands

pub mod cg;
pub mod coeff;
pub mod config;
pub mod dg;
pub mod eig;
pub mod fem;
pub mod grid;
pub mod picard;
pub mod post;
pub mod spaces;
pub mod study;

use std::path::PathBuf;

pub use grid::{build_grids, CoarseGrid, FineGrid, Subdomain};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("eigensolver failure: {0}")]
    Eigen(String),
    #[error("Picard iteration did not converge in {iterations} iterations (last residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        trace: Box<picard::IterationTrace>,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
