//! Offline tooling around the negotiation engine: simulated humans and
//! dimensionality sweeps.

pub mod batch;
pub mod policy;

pub use batch::{run_batch, write_outputs, BatchConfig, BatchError, BatchOutput, MetricsRow, SummaryRow};
pub use policy::{HumanPolicy, SimulatedHuman};
