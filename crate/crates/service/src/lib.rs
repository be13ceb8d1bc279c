//! Live service for meta-Turing tournaments: the frame protocol carried over
//! a plain socket and over WebSocket, the session hub that writes the event
//! log, and a scripted bot client.

pub mod client;
pub mod server;
pub mod transport;

pub use server::{connect_tcp, connect_ws, Enrollment, ServeConfig, Server};
