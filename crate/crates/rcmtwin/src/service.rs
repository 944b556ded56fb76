//! Real-time service: ticks the twin against the wall clock and streams
//! state to connected clients.
//!
//! Threads:
//! - an acceptor polls the listener and spawns one handler per connection;
//! - handlers decode commands, check roles and seq order, and push accepted
//!   commands into a bounded queue;
//! - the tick thread owns the [`Twin`], drains the queue at each tick
//!   boundary, steps, and fans the encoded snapshot out to every client.
//!
//! A connection whose first bytes are `GET ` is upgraded to a WebSocket
//! (one JSON object per text frame); anything else is newline-delimited
//! JSON over the raw stream. The first client to connect while no
//! controller is attached becomes the controller; all others observe.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, Sender, TrySendError};
use crossbeam::queue::ArrayQueue;
use log::{debug, info, warn};
use tungstenite::Message;

use crate::error::{Error, Result};
use crate::protocol::{
    CommandMessage, DecodeError, Gap, Hello, Nack, NackReason, Role, SceneConfig, ServerMessage, MAX_LINE,
};
use crate::session::Twin;

/// Time left to the deadline below which the tick thread spins instead
/// of sleeping.
const SPIN_WINDOW: Duration = Duration::from_micros(1000);
const POLL: Duration = Duration::from_millis(20);
const WS_POLL: Duration = Duration::from_millis(1);
/// How long a new connection may stay silent before it is treated as a
/// raw stream.
const SNIFF_TIMEOUT: Duration = Duration::from_millis(100);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: String,
    /// Static file server for the browser console, `(bind, root)`.
    pub http: Option<(String, PathBuf)>,
    /// Commands buffered between ticks before clients get `overloaded`.
    pub queue_capacity: usize,
    /// Messages buffered per client before snapshots are dropped for it.
    pub outbox_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:7878".into(), http: None, queue_capacity: 1024, outbox_capacity: 512 }
    }
}

/// Timing summary of the tick thread.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickReport {
    pub ticks: u64,
    /// Mean interval between snapshots, s.
    pub mean_period: f64,
    pub max_period: f64,
    /// Ticks that started more than one period after their deadline.
    pub late_ticks: u64,
    pub commands_applied: u64,
    pub commands_rejected: u64,
}

type Outbox = Sender<Arc<str>>;

enum Inbound {
    Command { client: u64, received: Instant, msg: CommandMessage },
    Subscribe { client: u64, outbox: Outbox },
    Disconnected { client: u64, was_controller: bool },
}

struct Shared {
    stop: AtomicBool,
    /// Client id of the controller, 0 when none is attached.
    controller: AtomicU64,
    next_id: AtomicU64,
    queue: ArrayQueue<Inbound>,
    scene: SceneConfig,
    outbox_capacity: usize,
}

impl Shared {
    /// Control messages must not be lost; retry until the tick drains.
    fn push_reliable(&self, mut item: Inbound) {
        while let Err(back) = self.queue.push(item) {
            if self.stop.load(Ordering::Relaxed) {
                return;
            }
            item = back;
            thread::sleep(Duration::from_micros(200));
        }
    }
}

pub struct ServiceHandle {
    pub addr: SocketAddr,
    pub http_addr: Option<SocketAddr>,
    shared: Arc<Shared>,
    tick: Option<JoinHandle<TickReport>>,
    others: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn is_running(&self) -> bool {
        self.tick.as_ref().is_some_and(|t| !t.is_finished())
    }

    /// Stops all threads and returns the tick timing summary.
    pub fn shutdown(mut self) -> TickReport {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    /// Blocks until the service stops.
    pub fn wait(mut self) -> TickReport {
        self.join()
    }

    fn join(&mut self) -> TickReport {
        let report = self.tick.take().map(|t| t.join().unwrap_or_default()).unwrap_or_default();
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.others.drain(..) {
            let _ = t.join();
        }
        report
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }
}

/// Binds the listeners and starts the service threads.
pub fn start(twin: Twin, cfg: &ServiceConfig) -> Result<ServiceHandle> {
    if cfg.queue_capacity == 0 || cfg.outbox_capacity == 0 {
        return Err(Error::Config("queue capacities must be positive".into()));
    }
    let listener = TcpListener::bind(&cfg.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;

    let shared = Arc::new(Shared {
        stop: AtomicBool::new(false),
        controller: AtomicU64::new(0),
        next_id: AtomicU64::new(1),
        queue: ArrayQueue::new(cfg.queue_capacity),
        scene: twin.scene(),
        outbox_capacity: cfg.outbox_capacity,
    });

    let mut others = Vec::new();
    let mut http_addr = None;
    if let Some((bind, root)) = &cfg.http {
        let server = tiny_http::Server::http(bind).map_err(|e| Error::Config(format!("http bind {bind}: {e}")))?;
        http_addr = server.server_addr().to_ip();
        let (s, root) = (shared.clone(), root.clone());
        others.push(thread::Builder::new().name("http".into()).spawn(move || http_loop(server, &root, &s))?);
    }

    let s = shared.clone();
    others.push(thread::Builder::new().name("accept".into()).spawn(move || accept_loop(listener, &s))?);
    let s = shared.clone();
    let tick = thread::Builder::new().name("tick".into()).spawn(move || tick_loop(twin, &s))?;
    info!("serving on {addr}");
    Ok(ServiceHandle { addr, http_addr, shared, tick: Some(tick), others })
}

fn sleep_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > SPIN_WINDOW {
            thread::sleep(left - SPIN_WINDOW);
        } else {
            std::hint::spin_loop();
        }
    }
}

fn tick_loop(mut twin: Twin, shared: &Shared) -> TickReport {
    let period = Duration::from_secs_f64(twin.world().dt());
    let mut clients: Vec<(u64, Outbox)> = Vec::new();
    let mut report = TickReport::default();
    let mut last_seq = None;
    let mut start = Instant::now();
    let mut n: u32 = 0;
    let mut first_emit: Option<Instant> = None;
    let mut prev_emit: Option<Instant> = None;

    while !shared.stop.load(Ordering::Relaxed) {
        n += 1;
        let deadline = start + period * n;
        sleep_until(deadline);
        if Instant::now() > deadline + period {
            report.late_ticks += 1;
            // Far behind (host stalled): restart the schedule rather than burst.
            if Instant::now() > deadline + period * 5 {
                start = Instant::now();
                n = 0;
            }
        }

        let mut oldest: Option<Instant> = None;
        while let Some(item) = shared.queue.pop() {
            match item {
                Inbound::Subscribe { client, outbox } => clients.push((client, outbox)),
                Inbound::Disconnected { client, was_controller } => {
                    clients.retain(|(id, _)| *id != client);
                    // A vanished controller must not leave keys held down.
                    if was_controller {
                        twin.release_inputs();
                    }
                }
                Inbound::Command { client, received, msg } => match twin.apply(&msg) {
                    Ok(()) => {
                        report.commands_applied += 1;
                        last_seq = Some(msg.seq);
                        oldest = Some(oldest.map_or(received, |o: Instant| o.min(received)));
                    }
                    Err(r) => {
                        report.commands_rejected += 1;
                        let nack = Nack { seq: Some(msg.seq), reason: r.reason, detail: r.detail, field: None };
                        if let Some((_, out)) = clients.iter().find(|(id, _)| *id == client) {
                            let _ = out.try_send(ServerMessage::Nack(nack).encode().into());
                        }
                    }
                },
            }
        }

        twin.step();
        let now = Instant::now();
        let latency_ms = oldest.map(|t| (now - t).as_secs_f64() * 1e3);
        let line: Arc<str> = ServerMessage::State(twin.snapshot(last_seq, latency_ms)).encode().into();
        clients.retain(|(id, out)| match out.try_send(line.clone()) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                debug!("client {id}: outbox full, snapshot dropped");
                true
            }
            Err(TrySendError::Disconnected(_)) => false,
        });

        report.ticks += 1;
        if let Some(p) = prev_emit {
            report.max_period = report.max_period.max((now - p).as_secs_f64());
        }
        first_emit.get_or_insert(now);
        prev_emit = Some(now);
    }
    if let (Some(a), Some(b)) = (first_emit, prev_emit) {
        if report.ticks > 1 {
            report.mean_period = (b - a).as_secs_f64() / (report.ticks - 1) as f64;
        }
    }
    report
}

fn accept_loop(listener: TcpListener, shared: &Arc<Shared>) {
    while !shared.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = shared.next_id.fetch_add(1, Ordering::SeqCst);
                let s = shared.clone();
                let spawned = thread::Builder::new().name(format!("client-{id}")).spawn(move || {
                    if let Err(e) = handle_client(stream, id, &s) {
                        debug!("client {id}: {e}");
                    }
                });
                match spawned {
                    Ok(_) => debug!("client {id} connected from {peer}"),
                    Err(e) => warn!("could not start handler for {peer}: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

/// Per-connection ingress state: role and seq tracking.
struct Ingress<'a> {
    id: u64,
    role: Role,
    last_seq: Option<u64>,
    outbox: Outbox,
    shared: &'a Shared,
}

impl Ingress<'_> {
    fn send(&self, msg: ServerMessage) {
        let _ = self.outbox.try_send(msg.encode().into());
    }

    fn nack(&self, seq: Option<u64>, reason: NackReason, detail: impl Into<String>, field: Option<&str>) {
        self.send(ServerMessage::Nack(Nack { seq, reason, detail: detail.into(), field: field.map(Into::into) }));
    }

    fn line(&mut self, line: &str, received: Instant) {
        let line = line.trim();
        if line.is_empty() {
            return;
        }
        let msg = match CommandMessage::decode(line) {
            Ok(m) => m,
            Err(e) => {
                let seq = serde_json::from_str::<serde_json::Value>(line).ok().and_then(|v| v.get("seq")?.as_u64());
                self.decode_error(seq, &e);
                return;
            }
        };
        if self.role != Role::Controller {
            self.nack(Some(msg.seq), NackReason::ReadOnly, "another client controls this session", None);
            return;
        }
        if let Some(last) = self.last_seq {
            if msg.seq <= last {
                self.nack(Some(msg.seq), NackReason::StaleSeq, format!("seq must exceed {last}"), None);
                return;
            }
            if msg.seq > last + 1 {
                self.send(ServerMessage::Gap(Gap { expected: last + 1, received: msg.seq }));
            }
        }
        let item = Inbound::Command { client: self.id, received, msg };
        if self.shared.queue.push(item).is_err() {
            self.nack(Some(msg.seq), NackReason::Overloaded, "command queue full", None);
            return;
        }
        self.last_seq = Some(msg.seq);
    }

    fn decode_error(&self, seq: Option<u64>, e: &DecodeError) {
        self.nack(seq, NackReason::DecodeError, e.to_string(), e.field());
    }
}

impl Drop for Ingress<'_> {
    fn drop(&mut self) {
        let was_controller = self.role == Role::Controller;
        // Queue the release before freeing the slot so a new controller's
        // first commands cannot be overtaken by it.
        self.shared.push_reliable(Inbound::Disconnected { client: self.id, was_controller });
        if was_controller {
            let _ = self.shared.controller.compare_exchange(self.id, 0, Ordering::SeqCst, Ordering::SeqCst);
        }
    }
}

fn handle_client(stream: TcpStream, id: u64, shared: &Arc<Shared>) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(SNIFF_TIMEOUT))?;
    let mut head = [0u8; 4];
    let websocket = match stream.peek(&mut head) {
        Ok(n) => n == 4 && &head == b"GET ",
        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => false,
        Err(e) => return Err(e.into()),
    };

    let role = match shared.controller.compare_exchange(0, id, Ordering::SeqCst, Ordering::SeqCst) {
        Ok(_) => Role::Controller,
        Err(_) => Role::Observer,
    };
    info!("client {id}: {:?} over {}", role, if websocket { "websocket" } else { "tcp" });
    let (tx, rx) = channel::bounded::<Arc<str>>(shared.outbox_capacity);
    let hello: Arc<str> = ServerMessage::Hello(Hello { role, config: shared.scene.clone() }).encode().into();
    tx.send(hello).expect("receiver held locally");
    let mut ingress = Ingress { id, role, last_seq: None, outbox: tx.clone(), shared };
    shared.push_reliable(Inbound::Subscribe { client: id, outbox: tx });

    if websocket {
        stream.set_read_timeout(None)?;
        let ws = tungstenite::accept(stream).map_err(|e| Error::Config(format!("websocket handshake: {e}")))?;
        websocket_loop(ws, &mut ingress, &rx, shared)
    } else {
        raw_loop(stream, &mut ingress, rx, shared)
    }
}

fn raw_loop(stream: TcpStream, ingress: &mut Ingress, rx: Receiver<Arc<str>>, shared: &Arc<Shared>) -> Result<()> {
    stream.set_read_timeout(Some(POLL))?;
    let mut writer = stream.try_clone()?;
    let closed = Arc::new(AtomicBool::new(false));
    let (c, s) = (closed.clone(), shared.clone());
    let writer_thread = thread::spawn(move || {
        while !c.load(Ordering::Relaxed) && !s.stop.load(Ordering::Relaxed) {
            match rx.recv_timeout(POLL) {
                Ok(line) => {
                    if writer.write_all(line.as_bytes()).is_err() {
                        break;
                    }
                }
                Err(channel::RecvTimeoutError::Timeout) => {}
                Err(channel::RecvTimeoutError::Disconnected) => break,
            }
        }
        c.store(true, Ordering::Relaxed);
        let _ = writer.shutdown(Shutdown::Both);
    });

    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    while !closed.load(Ordering::Relaxed) && !shared.stop.load(Ordering::Relaxed) {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) if buf.last() != Some(&b'\n') => {
                if buf.len() > MAX_LINE {
                    ingress.decode_error(None, &DecodeError::Json(format!("line longer than {MAX_LINE} bytes")));
                    buf.clear();
                }
            }
            Ok(_) => {
                let received = Instant::now();
                match std::str::from_utf8(&buf) {
                    Ok(line) => ingress.line(line, received),
                    Err(_) => ingress.decode_error(None, &DecodeError::Json("line is not valid UTF-8".into())),
                }
                buf.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {
                if buf.len() > MAX_LINE {
                    ingress.decode_error(None, &DecodeError::Json(format!("line longer than {MAX_LINE} bytes")));
                    buf.clear();
                }
            }
            Err(_) => break,
        }
    }
    closed.store(true, Ordering::Relaxed);
    let _ = reader.get_ref().shutdown(Shutdown::Both);
    let _ = writer_thread.join();
    Ok(())
}

fn websocket_loop(
    mut ws: tungstenite::WebSocket<TcpStream>,
    ingress: &mut Ingress,
    rx: &Receiver<Arc<str>>,
    shared: &Shared,
) -> Result<()> {
    ws.get_mut().set_read_timeout(Some(WS_POLL))?;
    while !shared.stop.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let received = Instant::now();
                for line in text.lines() {
                    ingress.line(line, received);
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        while let Ok(line) = rx.try_recv() {
            if ws.send(Message::Text(line.trim_end().to_owned())).is_err() {
                return Ok(());
            }
        }
    }
    let _ = ws.close(None);
    Ok(())
}

fn http_loop(server: tiny_http::Server, root: &Path, shared: &Shared) {
    while !shared.stop.load(Ordering::Relaxed) {
        let req = match server.recv_timeout(POLL) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => {
                warn!("http: {e}");
                return;
            }
        };
        let resp = match static_path(root, req.url()) {
            Some(path) => match std::fs::File::open(&path) {
                Ok(f) => {
                    let ct = content_type(&path);
                    let header = tiny_http::Header::from_bytes("Content-Type", ct).expect("static header");
                    req.respond(tiny_http::Response::from_file(f).with_header(header))
                }
                Err(_) => req.respond(tiny_http::Response::from_string("not found").with_status_code(404)),
            },
            None => req.respond(tiny_http::Response::from_string("bad path").with_status_code(400)),
        };
        if let Err(e) = resp {
            debug!("http: {e}");
        }
    }
}

/// Maps a request URL onto the static root; refuses anything that would
/// leave it.
fn static_path(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("");
    let rel = Path::new(path.trim_start_matches('/'));
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut full = root.join(rel);
    if path.ends_with('/') || rel.as_os_str().is_empty() || full.is_dir() {
        full.push("index.html");
    }
    Some(full)
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Blocking line client for the raw stream transport.
pub struct Client {
    stream: TcpStream,
    reader: BufReader<TcpStream>,
    buf: String,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self { stream, reader, buf: String::new() })
    }

    pub fn send(&mut self, msg: &CommandMessage) -> Result<()> {
        self.send_raw(&msg.encode())
    }

    pub fn send_raw(&mut self, text: &str) -> Result<()> {
        self.stream.write_all(text.as_bytes())?;
        Ok(())
    }

    /// Next message, or `None` on timeout. Partial lines survive a timeout.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<ServerMessage>> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.reader.get_ref().set_read_timeout(Some(left))?;
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return Err(Error::Net(ErrorKind::UnexpectedEof.into())),
                Ok(_) if self.buf.ends_with('\n') => {
                    let msg = ServerMessage::decode(&self.buf);
                    self.buf.clear();
                    return msg.map(Some).map_err(|e| Error::Config(format!("server sent a bad line: {e}")));
                }
                Ok(_) => {}
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Waits for a message matching `pred`, discarding others.
    pub fn recv_until<T>(
        &mut self,
        timeout: Duration,
        mut pred: impl FnMut(&ServerMessage) -> Option<T>,
    ) -> Result<Option<T>> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.recv(left)? {
                None => return Ok(None),
                Some(m) => {
                    if let Some(t) = pred(&m) {
                        return Ok(Some(t));
                    }
                }
            }
        }
    }

    pub fn close(self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}
