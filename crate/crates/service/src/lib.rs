//! Live control service for the hybrid depth-of-field renderer.
//!
//! One WebSocket client at a time receives a stream of binary frame
//! payloads and may steer the session with JSON control messages. Updates
//! are queued and applied only at frame boundaries, so every frame is
//! rendered under a single parameter snapshot. See `docs/protocol.md` for
//! the wire schema.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{decode_frame, encode_frame, ControlMessage, DecodedFrame, Envelope, FrameMeta, Reply};
pub use server::{bind_address, serve, Server, ServiceError, BIND_ENV, DEFAULT_PORT};
pub use session::{ControlError, Session};
