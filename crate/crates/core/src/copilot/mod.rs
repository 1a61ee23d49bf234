//! Live guardian sessions: a console replaces the scripted guardian and
//! its takeovers feed the same training pipeline.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{EpisodeStats, FrameMsg, InputMsg, Message, ProtocolError, PROTOCOL_VERSION};
pub use server::{serve, serve_on, Pacing, ServeOptions, ServeReport};
pub use session::{replay_session, InputVerdict, Session, SessionEntry, SessionLog};
