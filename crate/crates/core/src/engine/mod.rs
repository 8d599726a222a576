//! Network graph, parameter storage, batch forward/backward and gradient
//! checking.

pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod params;

pub use exec::{BatchLoss, Forward, Lambdas, NodeTape, SampleTrace, GRAD_CHUNKS};
pub use gradcheck::{finite_diff_check, GradcheckEntry, GradcheckReport};
pub use graph::{BlockInfo, BlockKind, EncoderSlots, Graph, Node, NodeId, Op};
pub use params::{Param, ParamId, ParamKind, ParamStore};
