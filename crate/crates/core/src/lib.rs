//! Meta Mobile Block and iRMB primitives, EMO model assembly, and the
//! cost / path-length / gradient analyses built on top of them.

pub mod analysis;
pub mod container;
pub mod emo;
pub mod error;
pub mod exec;
pub mod init;
pub mod irmb;
pub mod mmb;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use emo::{build_emo, EmoVariantConfig, Model, Variant};
pub use error::{Error, Result};
pub use exec::{Eval, Exec, TraceCounts};
pub use init::Init;
pub use irmb::{equivalence_check, ew_mhsa, irmb_forward, EquivReport, IrmbConfig};
pub use mmb::{mmb_forward, mmb_instantiate, Block, BlockPlan, MmbConfig, OperatorKind, Preset};
pub use rng::Rng;
pub use tape::{Gradients, Tape};
pub use tensor::{Param, Precision, Scalar, Shape, Tensor};
