//! Optimal-transport domain adaptation on the cone of symmetric positive
//! definite matrices.
//!
//! The crate has three layers:
//!
//! * [`spd`] — geometry of the cone under the log-Euclidean and
//!   affine-invariant metrics (distances, Fréchet means, geodesics, parallel
//!   transport), on top of the [`eig`] Jacobi eigensolver and the [`mat`]
//!   dense-matrix type;
//! * [`ot`] — exact discrete optimal transport (transportation simplex),
//!   log-domain barycentric maps, and affine/congruence recovery checks;
//! * [`net`], [`train`] — a small SPD network (Bi-Map, ReEig, LogEig layers
//!   with exact structured backpropagation) and the distribution-adaptation
//!   losses and training loops that align a source and a target domain;
//!
//! plus [`data`] for synthetic dataset generation and file I/O, and
//! [`gradcheck`] for the finite-difference verification suite.
//!
//! The narrative guide lives in `book/`; its code snippets compile and run as
//! doc-tests of this crate.

pub mod data;
pub mod eig;
pub mod error;
pub mod gradcheck;
pub mod mat;
pub mod net;
pub mod ot;
pub mod spd;
pub mod train;

pub use eig::{sym_eig, EigDecomp};
pub use error::{DataError, GeometryError, NetError, TrainError, TransportError};
pub use mat::Mat;
pub use spd::{Metric, SpdMatrix, SymMatrix};

#[cfg(doctest)]
mod book {
    //! Runs every code snippet in the mdbook guide as a doc-test.
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(geometry, "../../../book/src/geometry.md");
    chapter!(transport, "../../../book/src/transport.md");
    chapter!(network, "../../../book/src/network.md");
    chapter!(training, "../../../book/src/training.md");
    chapter!(synthetic_data, "../../../book/src/synthetic-data.md");
    chapter!(cli, "../../../book/src/cli.md");
    chapter!(formats, "../../../book/src/formats.md");
}
