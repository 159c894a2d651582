//! Client side of the bus.
//!
//! A [`TidClient`] owns one TCP connection to the server. Outbound messages
//! are written whole under a lock, so concurrent senders never interleave
//! partial frames. Inbound messages are decoded on a dedicated reader thread
//! and either queued for [`TidClient::receive`] or handed to a sink callback.

use std::io;
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, PoisonError};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use crate::message::{
    parse_message, serialize_message, MessageError, MicroTime, ProtocolVersion, TidMessage,
    LIBRARY_VERSION, UNKNOWN_BLOCK,
};
use crate::wire::{write_frame, FrameReader, WireError, DEFAULT_MAX_FRAME_BYTES};

pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("timed out connecting to {0}")]
    Timeout(String),
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error("connection failed: {0}")]
    Io(#[from] io::Error),
    #[error("not connected")]
    Disconnected,
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("block must be non-negative, got {0}")]
    NegativeBlock(i64),
    #[error(transparent)]
    Message(MessageError),
}

impl From<MessageError> for ClientError {
    fn from(e: MessageError) -> Self {
        match e {
            MessageError::EmptyField(name) => ClientError::EmptyField(name),
            other => ClientError::Message(other),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub connect_timeout: Duration,
    pub max_frame_bytes: usize,
    pub library_version: ProtocolVersion,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
            max_frame_bytes: DEFAULT_MAX_FRAME_BYTES,
            library_version: LIBRARY_VERSION,
        }
    }
}

type Sink = Box<dyn FnMut(TidMessage) + Send>;

pub struct TidClient {
    writer: Mutex<TcpStream>,
    inbox: Mutex<Receiver<TidMessage>>,
    closed: AtomicBool,
    library_version: ProtocolVersion,
    last_known_block: AtomicI64,
    version_warnings: Arc<AtomicU64>,
    peer: SocketAddr,
    reader: Option<JoinHandle<()>>,
}

impl TidClient {
    pub fn connect(host: &str, port: u16) -> Result<Self, ClientError> {
        Self::connect_with(host, port, ClientOptions::default())
    }

    pub fn connect_with(
        host: &str,
        port: u16,
        options: ClientOptions,
    ) -> Result<Self, ClientError> {
        Self::establish(host, port, options, None)
    }

    /// Connects and delivers every inbound message to `sink`, in arrival
    /// order, on the reader thread. [`TidClient::receive`] then only reports
    /// timeouts and disconnection.
    pub fn connect_with_sink<F>(
        host: &str,
        port: u16,
        options: ClientOptions,
        sink: F,
    ) -> Result<Self, ClientError>
    where
        F: FnMut(TidMessage) + Send + 'static,
    {
        Self::establish(host, port, options, Some(Box::new(sink)))
    }

    fn establish(
        host: &str,
        port: u16,
        options: ClientOptions,
        sink: Option<Sink>,
    ) -> Result<Self, ClientError> {
        let target = format!("{host}:{port}");
        let stream = open_stream(&target, options.connect_timeout)?;
        stream.set_nodelay(true)?;
        let peer = stream.peer_addr()?;
        let read_half = stream.try_clone()?;

        let (tx, rx) = mpsc::channel();
        let version_warnings = Arc::new(AtomicU64::new(0));
        let reader = {
            let warnings = Arc::clone(&version_warnings);
            let version = options.library_version;
            let max = options.max_frame_bytes;
            thread::Builder::new()
                .name("tid-client-rx".into())
                .spawn(move || read_loop(read_half, max, version, warnings, tx, sink))?
        };

        Ok(Self {
            writer: Mutex::new(stream),
            inbox: Mutex::new(rx),
            closed: AtomicBool::new(false),
            library_version: options.library_version,
            last_known_block: AtomicI64::new(UNKNOWN_BLOCK),
            version_warnings,
            peer,
            reader: Some(reader),
        })
    }

    pub fn peer_addr(&self) -> SocketAddr {
        self.peer
    }

    pub fn library_version(&self) -> ProtocolVersion {
        self.library_version
    }

    pub fn last_known_block(&self) -> i64 {
        self.last_known_block.load(Ordering::Relaxed)
    }

    /// Inbound messages whose version was incompatible with ours.
    pub fn version_warnings(&self) -> u64 {
        self.version_warnings.load(Ordering::Relaxed)
    }

    /// Records the block the caller is processing; later events carry it.
    pub fn set_current_block(&self, block: i64) -> Result<(), ClientError> {
        if block < 0 {
            return Err(ClientError::NegativeBlock(block));
        }
        self.last_known_block.store(block, Ordering::Relaxed);
        Ok(())
    }

    /// Builds an event stamped with the local wall clock. The block is the
    /// last one set via [`set_current_block`](Self::set_current_block), or
    /// -1 so the server fills it in. The relative timestamp is left to the
    /// server.
    pub fn new_event(
        &self,
        description: &str,
        family: &str,
        event_code: i64,
    ) -> Result<TidMessage, ClientError> {
        Ok(TidMessage::new(description, family, event_code)?
            .with_version(self.library_version)
            .with_block(self.last_known_block())?
            .with_absolute(MicroTime::now()))
    }

    /// Writes the message's canonical frame. Returns once the bytes are
    /// handed to the transport.
    pub fn send(&self, msg: &TidMessage) -> Result<(), ClientError> {
        self.send_raw(&serialize_message(msg))
    }

    fn send_raw(&self, serialized: &str) -> Result<(), ClientError> {
        if self.is_closed() {
            return Err(ClientError::Disconnected);
        }
        let mut stream = self.writer.lock().unwrap_or_else(PoisonError::into_inner);
        write_frame(&mut *stream, serialized).map_err(|e| match e {
            WireError::Io(e) => {
                debug!("send failed: {e}");
                ClientError::Disconnected
            }
            other => ClientError::Message(MessageError::MalformedXml(other.to_string())),
        })
    }

    /// Oldest undelivered message, or `None` if nothing arrives within
    /// `timeout`. Fails with `Disconnected` once the connection is gone and
    /// the queue is drained, and always after [`close`](Self::close).
    pub fn receive(&self, timeout: Duration) -> Result<Option<TidMessage>, ClientError> {
        if self.is_closed() {
            return Err(ClientError::Disconnected);
        }
        let inbox = self.inbox.lock().unwrap_or_else(PoisonError::into_inner);
        match inbox.recv_timeout(timeout) {
            Ok(msg) => Ok(Some(msg)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ClientError::Disconnected),
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    pub fn close(&self) {
        if !self.closed.swap(true, Ordering::AcqRel) {
            let stream = self.writer.lock().unwrap_or_else(PoisonError::into_inner);
            let _ = stream.shutdown(Shutdown::Both);
        }
    }

    /// Blocks until the server side of the connection goes away.
    pub fn wait_closed(mut self) {
        if let Some(reader) = self.reader.take() {
            let _ = reader.join();
        }
    }
}

impl Drop for TidClient {
    fn drop(&mut self) {
        self.close();
        if let Some(reader) = self.reader.take() {
            let _ = reader.join();
        }
    }
}

fn open_stream(target: &str, timeout: Duration) -> Result<TcpStream, ClientError> {
    let addrs: Vec<SocketAddr> = target
        .to_socket_addrs()
        .map_err(|_| ClientError::Resolve(target.to_owned()))?
        .collect();
    let mut last = ClientError::Resolve(target.to_owned());
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(stream) => return Ok(stream),
            Err(e) => {
                last = match e.kind() {
                    io::ErrorKind::ConnectionRefused => {
                        ClientError::ConnectionRefused(target.to_owned())
                    }
                    io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => {
                        ClientError::Timeout(target.to_owned())
                    }
                    _ => ClientError::Io(e),
                }
            }
        }
    }
    Err(last)
}

fn read_loop(
    stream: TcpStream,
    max_frame_bytes: usize,
    version: ProtocolVersion,
    warnings: Arc<AtomicU64>,
    queue: Sender<TidMessage>,
    mut sink: Option<Sink>,
) {
    let mut frames = FrameReader::new(stream, max_frame_bytes);
    loop {
        let line = match frames.next_frame() {
            Ok(Some(line)) => line,
            Ok(None) => break,
            Err(WireError::Io(e)) => {
                debug!("client connection ended: {e}");
                break;
            }
            Err(e) => {
                warn!("closing connection after framing error: {e}");
                break;
            }
        };
        let msg = match parse_message(&line) {
            Ok(msg) => msg,
            Err(e) => {
                warn!("closing connection after malformed message: {e}");
                break;
            }
        };
        if !msg.version().is_compatible_with(&version) {
            warnings.fetch_add(1, Ordering::Relaxed);
            warn!(
                "received version {} incompatible with {version}",
                msg.version()
            );
        }
        match sink.as_mut() {
            Some(sink) => sink(msg),
            None => {
                if queue.send(msg).is_err() {
                    break;
                }
            }
        }
    }
    let _ = frames.get_ref().shutdown(Shutdown::Both);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::FAMILY_BIOSIG;
    use crate::server::{DispatchHub, FixedBlockSource, ServerConfig, ServerHandle};
    use std::net::TcpListener;

    fn server(block: u64) -> ServerHandle {
        let config = ServerConfig {
            port: 0,
            ..ServerConfig::default()
        };
        DispatchHub::new(config, FixedBlockSource(block))
            .start()
            .unwrap()
    }

    #[test]
    fn connect_refused_on_closed_port() {
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        assert!(matches!(
            TidClient::connect("127.0.0.1", port),
            Err(ClientError::ConnectionRefused(_))
        ));
    }

    #[test]
    fn new_event_defaults_and_block_forwarding() {
        let srv = server(0);
        let c = TidClient::connect("127.0.0.1", srv.port()).unwrap();
        let m = c.new_event("beep", FAMILY_BIOSIG, 785).unwrap();
        assert_eq!(m.block(), -1);
        assert_eq!(m.version(), LIBRARY_VERSION);
        assert!(m.absolute().is_some());
        assert!(m.relative().is_none());
        assert!(m.source().is_none() && m.value().is_none());

        c.set_current_block(0).unwrap();
        assert_eq!(c.new_event("x", "custom", 1).unwrap().block(), 0);
        c.set_current_block(1732).unwrap();
        assert_eq!(c.new_event("x", "custom", 1).unwrap().block(), 1732);
        assert!(matches!(
            c.set_current_block(-5),
            Err(ClientError::NegativeBlock(-5))
        ));
        assert!(matches!(
            c.new_event("", FAMILY_BIOSIG, 1),
            Err(ClientError::EmptyField("description"))
        ));
    }

    #[test]
    fn send_receive_no_echo_and_order() {
        let srv = server(3);
        let a = TidClient::connect("127.0.0.1", srv.port()).unwrap();
        let b = TidClient::connect("127.0.0.1", srv.port()).unwrap();
        assert!(srv.hub().wait_for_clients(2, Duration::from_secs(2)));
        assert_eq!(srv.hub().client_count(), 2);

        for code in 0..100 {
            a.send(&a.new_event("tick", "custom", code).unwrap())
                .unwrap();
        }
        for code in 0..100 {
            let m = b.receive(Duration::from_secs(2)).unwrap().unwrap();
            assert_eq!(m.event(), code);
            assert_eq!(m.block(), 3);
            assert!(m.is_fully_stamped());
        }
        assert!(a.receive(Duration::from_millis(20)).unwrap().is_none());
        assert!(b.receive(Duration::from_millis(10)).unwrap().is_none());
        assert_eq!(srv.hub().event_count(), 100);
    }

    #[test]
    fn closed_client_fails_deterministically() {
        let srv = server(0);
        let c = TidClient::connect("127.0.0.1", srv.port()).unwrap();
        c.close();
        let m = TidMessage::new("x", "custom", 1).unwrap();
        assert!(matches!(c.send(&m), Err(ClientError::Disconnected)));
        assert!(matches!(
            c.receive(Duration::from_millis(5)),
            Err(ClientError::Disconnected)
        ));
    }

    #[test]
    fn server_shutdown_surfaces_as_disconnect() {
        let srv = server(0);
        let c = TidClient::connect("127.0.0.1", srv.port()).unwrap();
        assert!(srv.hub().wait_for_clients(1, Duration::from_secs(2)));
        srv.shutdown();
        let mut result = c.receive(Duration::from_secs(2));
        while let Ok(None) = result {
            result = c.receive(Duration::from_secs(2));
        }
        assert!(matches!(result, Err(ClientError::Disconnected)));
    }

    #[test]
    fn sink_receives_in_order() {
        let srv = server(0);
        let (tx, rx) = mpsc::channel();
        let sink = TidClient::connect_with_sink(
            "127.0.0.1",
            srv.port(),
            ClientOptions::default(),
            move |m| {
                let _ = tx.send(m.event());
            },
        )
        .unwrap();
        let sender = TidClient::connect("127.0.0.1", srv.port()).unwrap();
        assert!(srv.hub().wait_for_clients(2, Duration::from_secs(2)));
        for code in 0..20 {
            sender
                .send(&sender.new_event("x", "custom", code).unwrap())
                .unwrap();
        }
        let got: Vec<i64> = (0..20)
            .map(|_| rx.recv_timeout(Duration::from_secs(2)).unwrap())
            .collect();
        assert_eq!(got, (0..20).collect::<Vec<_>>());
        assert!(sink.receive(Duration::from_millis(5)).unwrap().is_none());
    }
}
