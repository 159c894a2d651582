//! TiD: a TCP event bus for brain-computer interface event markers.
//!
//! * [`message`]: the `<tid .../>` message model and codec
//! * [`wire`]: newline-delimited framing on the byte stream
//! * [`server`]: the dispatch hub that stamps and fans out events
//! * [`client`]: client SDK
//! * [`acqsim`]: simulated acquisition block clock
//! * [`bench`]: latency benchmark, histograms and jitter transfer function
//! * [`cli`]: the `tid` command line

pub mod acqsim;
pub mod bench;
pub mod cli;
pub mod client;
pub mod message;
pub mod server;
pub mod wire;

pub use acqsim::SimAcquisition;
pub use client::{ClientError, TidClient};
pub use message::{
    parse_message, serialize_message, MessageError, MicroDuration, MicroTime, ProtocolVersion,
    TidMessage,
};
pub use server::{BlockSource, DispatchHub, ServerConfig, ServerHandle};
