//! Lockstep co-simulation: a master clock in the V2X coordinator steps the
//! traffic, world and V2X roles tick by tick and assembles one frame per tick.

mod protocol;
mod roles;
mod session;
mod sink;

pub use protocol::{
    decode, encode, MessageKind, Payload, ProtocolError, RoleName, RoleReport, SensedFrame,
    TickMessage, V2xBatch,
};
pub use roles::{sync_states, Role, SyncError, TrafficRole, V2xRole, WorldRole};
pub use session::{
    run_session, run_session_with, Execution, Session, SessionError, SessionOptions,
    SessionState, SessionSummary, TraceEvent,
};
pub use sink::{DatasetSink, FrameSink, MemorySink, SinkError, TickOutput, ADVERSARIAL_DIR};
