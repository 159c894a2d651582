//! The TiD bus.
//!
//! Clients connect over TCP and send messages. The hub fills in whatever the
//! sender left out (block number, absolute and relative timestamps), records
//! the stamped message and forwards it to every other connected client. The
//! sender never gets its own event back.
//!
//! Every connection is served by a reader thread and a writer thread. The
//! writer drains a bounded queue; a client whose queue overflows or whose
//! stream fails is disconnected without affecting anyone else.
//!
//! Ordering: stamping, recording and enqueueing happen under one lock, so
//! every recipient observes the same global order, and in particular each
//! sender's messages arrive in the order sent.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::{Arc, Mutex, MutexGuard, PoisonError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use thiserror::Error;

use crate::message::{
    parse_message, serialize_message, MessageError, MicroDuration, MicroTime, ProtocolVersion,
    TidMessage, LIBRARY_VERSION,
};
use crate::wire::{encode_frame, FrameReader, DEFAULT_MAX_FRAME_BYTES};

pub const DEFAULT_PORT: u16 = 9001;
pub const DEFAULT_OUTBOUND_QUEUE: usize = 1024;
pub const DEFAULT_EVENT_STORE_CAP: usize = 1_000_000;

/// Authority for the block currently being acquired.
///
/// Implementations must be non-decreasing over time.
pub trait BlockSource: Send + Sync {
    fn current_block(&self) -> u64;
}

impl<T: BlockSource + ?Sized> BlockSource for Arc<T> {
    fn current_block(&self) -> u64 {
        (**self).current_block()
    }
}

/// Always reports the same block. Mostly useful in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedBlockSource(pub u64);

impl BlockSource for FixedBlockSource {
    fn current_block(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("failed to bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub max_frame_bytes: usize,
    /// Frames buffered per client before it is dropped as too slow.
    pub outbound_queue: usize,
    /// Oldest events are discarded beyond this many.
    pub event_store_cap: usize,
    pub server_version: ProtocolVersion,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".to_owned(),
            port: DEFAULT_PORT,
            max_frame_bytes: DEFAULT_MAX_FRAME_BYTES,
            outbound_queue: DEFAULT_OUTBOUND_QUEUE,
            event_store_cap: DEFAULT_EVENT_STORE_CAP,
            server_version: LIBRARY_VERSION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientId(u64);

impl ClientId {
    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "client#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DisconnectCause {
    PeerClosed,
    Framing(String),
    Malformed(MessageError),
    WriteFailed(String),
    QueueOverflow,
    Requested,
    Shutdown,
}

impl fmt::Display for DisconnectCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PeerClosed => f.write_str("peer closed the connection"),
            Self::Framing(e) => write!(f, "framing error: {e}"),
            Self::Malformed(e) => write!(f, "malformed message: {e}"),
            Self::WriteFailed(e) => write!(f, "write failed: {e}"),
            Self::QueueOverflow => f.write_str("outbound queue overflow"),
            Self::Requested => f.write_str("disconnect requested"),
            Self::Shutdown => f.write_str("server shutting down"),
        }
    }
}

type Frame = Arc<[u8]>;

struct ClientSlot {
    peer: Option<SocketAddr>,
    outbound: SyncSender<Frame>,
    stream: Option<TcpStream>,
}

struct Ledger {
    relative_reference: Instant,
    events: VecDeque<String>,
}

struct HubInner {
    config: ServerConfig,
    block_source: Box<dyn BlockSource>,
    ledger: Mutex<Ledger>,
    clients: Mutex<HashMap<ClientId, ClientSlot>>,
    next_id: AtomicU64,
    version_warnings: AtomicU64,
    dropped_events: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

/// Shared server state. Cloning yields another handle to the same hub.
#[derive(Clone)]
pub struct DispatchHub {
    inner: Arc<HubInner>,
}

impl fmt::Debug for DispatchHub {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DispatchHub")
            .field("port", &self.inner.config.port)
            .field("clients", &self.client_count())
            .field("events", &self.event_count())
            .finish()
    }
}

impl DispatchHub {
    pub fn new(config: ServerConfig, block_source: impl BlockSource + 'static) -> Self {
        Self {
            inner: Arc::new(HubInner {
                config,
                block_source: Box::new(block_source),
                ledger: Mutex::new(Ledger {
                    relative_reference: Instant::now(),
                    events: VecDeque::new(),
                }),
                clients: Mutex::new(HashMap::new()),
                next_id: AtomicU64::new(1),
                version_warnings: AtomicU64::new(0),
                dropped_events: AtomicU64::new(0),
            }),
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.inner.config
    }

    /// Binds the listener and starts accepting clients. The relative
    /// timestamp reference is reset to now.
    pub fn start(&self) -> Result<ServerHandle, ServerError> {
        let config = &self.inner.config;
        let addr = format!("{}:{}", config.host, config.port);
        let listener = TcpListener::bind((config.host.as_str(), config.port)).map_err(|e| {
            if e.kind() == io::ErrorKind::AddrInUse {
                ServerError::PortInUse(config.port)
            } else {
                ServerError::BindFailure {
                    addr: addr.clone(),
                    source: e,
                }
            }
        })?;
        let local_addr = listener
            .local_addr()
            .map_err(|source| ServerError::BindFailure { addr, source })?;
        self.reset_relative_reference();
        info!("tid server listening on {local_addr}");

        let stopping = Arc::new(AtomicBool::new(false));
        let accept_thread = {
            let hub = self.clone();
            let stopping = Arc::clone(&stopping);
            thread::Builder::new()
                .name("tid-accept".into())
                .spawn(move || hub.accept_loop(listener, &stopping))
                .expect("spawn accept thread")
        };
        Ok(ServerHandle {
            hub: self.clone(),
            local_addr,
            stopping,
            accept_thread: Some(accept_thread),
        })
    }

    fn accept_loop(&self, listener: TcpListener, stopping: &AtomicBool) {
        for stream in listener.incoming() {
            if stopping.load(Ordering::Acquire) {
                break;
            }
            match stream {
                Ok(stream) => {
                    if let Err(e) = self.serve_connection(stream) {
                        warn!("failed to set up connection: {e}");
                    }
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
        debug!("accept loop finished");
    }

    fn serve_connection(&self, stream: TcpStream) -> io::Result<()> {
        stream.set_nodelay(true)?;
        let peer = stream.peer_addr().ok();
        let write_half = stream.try_clone()?;
        let control = stream.try_clone()?;
        let (id, outbound) = self.register(peer, Some(control));
        info!("{id} connected from {}", fmt_peer(peer));

        let hub = self.clone();
        thread::Builder::new()
            .name(format!("tid-tx-{}", id.0))
            .spawn(move || hub.write_loop(id, write_half, outbound))?;
        let hub = self.clone();
        thread::Builder::new()
            .name(format!("tid-rx-{}", id.0))
            .spawn(move || hub.read_loop(id, stream))?;
        Ok(())
    }

    fn read_loop(&self, id: ClientId, stream: TcpStream) {
        let mut frames = FrameReader::new(stream, self.inner.config.max_frame_bytes);
        let cause = loop {
            match frames.next_frame() {
                Ok(Some(line)) => match parse_message(&line) {
                    Ok(msg) => {
                        if !self.is_registered(id) {
                            return;
                        }
                        self.on_message(id, msg);
                    }
                    Err(e) => break DisconnectCause::Malformed(e),
                },
                Ok(None) => break DisconnectCause::PeerClosed,
                Err(e) => break DisconnectCause::Framing(e.to_string()),
            }
        };
        self.disconnect(id, cause);
    }

    fn write_loop(&self, id: ClientId, mut stream: TcpStream, outbound: Receiver<Frame>) {
        for frame in outbound {
            if let Err(e) = stream.write_all(&frame) {
                self.disconnect(id, DisconnectCause::WriteFailed(e.to_string()));
                return;
            }
        }
    }

    fn register(
        &self,
        peer: Option<SocketAddr>,
        stream: Option<TcpStream>,
    ) -> (ClientId, Receiver<Frame>) {
        let id = ClientId(self.inner.next_id.fetch_add(1, Ordering::Relaxed));
        let (outbound, rx) = mpsc::sync_channel(self.inner.config.outbound_queue);
        lock(&self.inner.clients).insert(
            id,
            ClientSlot {
                peer,
                outbound,
                stream,
            },
        );
        (id, rx)
    }

    /// Registers an in-process client that receives dispatched messages
    /// through a channel instead of a socket.
    pub fn attach_local(&self) -> LocalClient {
        let (id, rx) = self.register(None, None);
        LocalClient {
            hub: self.clone(),
            id,
            rx,
        }
    }

    /// Stamps, records and dispatches one message from `sender`.
    ///
    /// A `-1` block takes the block source's current block; absent
    /// timestamps take the server's wall clock and the time elapsed since
    /// the relative reference. Present values are never overwritten.
    pub fn on_message(&self, sender: ClientId, mut msg: TidMessage) -> TidMessage {
        let inner = &*self.inner;
        let mut overflowed = Vec::new();
        {
            let mut ledger = lock(&inner.ledger);
            if !msg.has_known_block() {
                let block = i64::try_from(inner.block_source.current_block()).unwrap_or(i64::MAX);
                msg.set_block(block)
                    .expect("block source yields non-negative blocks");
            }
            if msg.absolute().is_none() {
                msg.set_absolute(MicroTime::now());
            }
            if msg.relative().is_none() {
                let elapsed = Instant::now().saturating_duration_since(ledger.relative_reference);
                msg.set_relative(MicroDuration::from(elapsed));
            }
            if !msg
                .version()
                .is_compatible_with(&inner.config.server_version)
            {
                inner.version_warnings.fetch_add(1, Ordering::Relaxed);
                warn!(
                    "{sender} sent version {} incompatible with server version {}",
                    msg.version(),
                    inner.config.server_version
                );
            }

            let line = serialize_message(&msg);
            let frame: Frame = encode_frame(&line)
                .expect("serialized messages are single-line")
                .into();
            if inner.config.event_store_cap > 0 {
                if ledger.events.len() >= inner.config.event_store_cap {
                    ledger.events.pop_front();
                    inner.dropped_events.fetch_add(1, Ordering::Relaxed);
                }
                ledger.events.push_back(line);
            }

            let clients = lock(&inner.clients);
            for (&id, slot) in clients.iter() {
                if id == sender {
                    continue;
                }
                match slot.outbound.try_send(Arc::clone(&frame)) {
                    Ok(()) => {}
                    Err(TrySendError::Full(_)) => {
                        overflowed.push((id, DisconnectCause::QueueOverflow))
                    }
                    Err(TrySendError::Disconnected(_)) => {
                        overflowed.push((id, DisconnectCause::PeerClosed))
                    }
                }
            }
        }
        for (id, cause) in overflowed {
            self.disconnect(id, cause);
        }
        msg
    }

    /// Restarts relative timestamps from zero at the current instant.
    pub fn reset_relative_reference(&self) {
        lock(&self.inner.ledger).relative_reference = Instant::now();
    }

    pub fn relative_reference(&self) -> Instant {
        lock(&self.inner.ledger).relative_reference
    }

    /// Closes the client's connection and removes it from the registry.
    /// Unknown ids are ignored.
    pub fn disconnect(&self, id: ClientId, cause: DisconnectCause) {
        let Some(slot) = lock(&self.inner.clients).remove(&id) else {
            return;
        };
        match cause {
            DisconnectCause::PeerClosed
            | DisconnectCause::Requested
            | DisconnectCause::Shutdown => {
                info!("{id} ({}) disconnected: {cause}", fmt_peer(slot.peer))
            }
            _ => warn!("{id} ({}) disconnected: {cause}", fmt_peer(slot.peer)),
        }
        if let Some(stream) = slot.stream {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }

    pub fn is_registered(&self, id: ClientId) -> bool {
        lock(&self.inner.clients).contains_key(&id)
    }

    pub fn client_count(&self) -> usize {
        lock(&self.inner.clients).len()
    }

    pub fn client_ids(&self) -> Vec<ClientId> {
        let mut ids: Vec<_> = lock(&self.inner.clients).keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Polls until at least `n` clients are registered.
    pub fn wait_for_clients(&self, n: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if self.client_count() >= n {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(2));
        }
    }

    pub fn event_count(&self) -> usize {
        lock(&self.inner.ledger).events.len()
    }

    /// Canonical serializations of the recorded events, oldest first.
    pub fn events(&self) -> Vec<String> {
        lock(&self.inner.ledger).events.iter().cloned().collect()
    }

    pub fn version_warnings(&self) -> u64 {
        self.inner.version_warnings.load(Ordering::Relaxed)
    }

    /// Events discarded because the store hit its cap.
    pub fn dropped_events(&self) -> u64 {
        self.inner.dropped_events.load(Ordering::Relaxed)
    }

    /// Writes one recorded event per line; returns the number written.
    pub fn save_events<W: Write>(&self, mut destination: W) -> io::Result<usize> {
        let events = self.events();
        for line in &events {
            destination.write_all(line.as_bytes())?;
            destination.write_all(b"\n")?;
        }
        destination.flush()?;
        Ok(events.len())
    }

    pub fn save_events_to(&self, path: impl AsRef<Path>) -> io::Result<usize> {
        self.save_events(BufWriter::new(File::create(path)?))
    }

    fn disconnect_all(&self, cause: DisconnectCause) {
        for id in self.client_ids() {
            self.disconnect(id, cause.clone());
        }
    }
}

fn fmt_peer(peer: Option<SocketAddr>) -> String {
    peer.map_or_else(|| "local".to_owned(), |p| p.to_string())
}

/// Running server. Dropping it stops the acceptor and closes every client.
pub struct ServerHandle {
    hub: DispatchHub,
    local_addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn port(&self) -> u16 {
        self.local_addr.port()
    }

    pub fn hub(&self) -> &DispatchHub {
        &self.hub
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let Some(acceptor) = self.accept_thread.take() else {
            return;
        };
        self.stopping.store(true, Ordering::Release);
        // Wake the blocking accept() so it observes the flag.
        let mut wake = self.local_addr;
        if wake.ip().is_unspecified() {
            wake.set_ip(match wake.ip() {
                IpAddr::V4(_) => IpAddr::V4(Ipv4Addr::LOCALHOST),
                IpAddr::V6(_) => IpAddr::V6(Ipv6Addr::LOCALHOST),
            });
        }
        let _ = TcpStream::connect_timeout(&wake, Duration::from_secs(1));
        let _ = acceptor.join();
        self.hub.disconnect_all(DisconnectCause::Shutdown);
        info!("tid server on {} stopped", self.local_addr);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// In-process bus participant created by [`DispatchHub::attach_local`].
pub struct LocalClient {
    hub: DispatchHub,
    id: ClientId,
    rx: Receiver<Frame>,
}

impl LocalClient {
    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn send(&self, msg: TidMessage) -> TidMessage {
        self.hub.on_message(self.id, msg)
    }

    /// Next dispatched message, `None` on timeout or once disconnected.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<TidMessage> {
        match self.rx.recv_timeout(timeout) {
            Ok(frame) => {
                let line = std::str::from_utf8(&frame[..frame.len() - 1]).ok()?;
                parse_message(line).ok()
            }
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => None,
        }
    }
}

impl Drop for LocalClient {
    fn drop(&mut self) {
        self.hub.disconnect(self.id, DisconnectCause::Requested);
    }
}
