//! Threaded TCP aggregator.
//!
//! Each connection has a reader thread that forwards frames to its session
//! and a writer thread fed by a channel, so a slow worker never stalls
//! aggregation. A session owns all its state on one thread.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{read_message, ChunkFrame, Hello, Message, MAX_CHUNK};
use super::{aggregate_chunk, AGGREGATOR_ID};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ServerConfig {
    pub n_workers: u16,
    pub seed: u64,
    /// How long a partially received chunk may wait for its missing frames.
    pub timeout: Duration,
}

impl ServerConfig {
    pub fn new(n_workers: u16, seed: u64) -> Self {
        Self {
            n_workers,
            seed,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Counters shared by all sessions of a server.
#[derive(Debug, Default)]
pub struct ServerStats {
    pub sessions_completed: AtomicU64,
    pub sessions_aborted: AtomicU64,
    pub chunks: AtomicU64,
    pub saturated: AtomicU64,
    pub clipped: AtomicU64,
}

pub struct InaServer {
    listener: TcpListener,
    config: ServerConfig,
    stats: Arc<ServerStats>,
}

enum Event {
    Join { hello: Hello, out: Sender<Arc<Vec<u8>>> },
    Frame(ChunkFrame),
    Left { worker_id: u16, graceful: bool, reason: String },
}

type Registry = Arc<Mutex<HashMap<u64, Sender<Event>>>>;

impl InaServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, config: ServerConfig) -> Result<Self> {
        if config.n_workers == 0 {
            return Err(Error::Config("aggregator needs at least one worker".into()));
        }
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            config,
            stats: Arc::default(),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn stats(&self) -> Arc<ServerStats> {
        Arc::clone(&self.stats)
    }

    /// Accepts connections until the listener fails.
    pub fn serve(self) -> Result<()> {
        let registry: Registry = Arc::default();
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(_) => continue,
            };
            let (config, registry, stats) = (self.config, Arc::clone(&registry), Arc::clone(&self.stats));
            thread::spawn(move || handle_connection(stream, config, registry, stats));
        }
        Ok(())
    }

    /// Serves on a background thread; returns the bound address.
    pub fn spawn(self) -> Result<SocketAddr> {
        let addr = self.local_addr()?;
        thread::spawn(move || self.serve());
        Ok(addr)
    }
}

fn send_abort(stream: &TcpStream, session_id: u64, reason: &str) {
    let mut w = stream;
    let _ = w.write_all(
        &Message::Abort {
            session_id,
            reason: reason.to_string(),
        }
        .encode(),
    );
    let _ = w.flush();
    let _ = stream.shutdown(Shutdown::Write);
}

fn spawn_writer(stream: TcpStream) -> Sender<Arc<Vec<u8>>> {
    let (tx, rx) = mpsc::channel::<Arc<Vec<u8>>>();
    thread::spawn(move || {
        let mut w = BufWriter::new(&stream);
        'outer: while let Ok(buf) = rx.recv() {
            if w.write_all(&buf).is_err() {
                break;
            }
            while let Ok(buf) = rx.try_recv() {
                if w.write_all(&buf).is_err() {
                    break 'outer;
                }
            }
            if w.flush().is_err() {
                break;
            }
        }
        let _ = w.flush();
        drop(w);
        let _ = stream.shutdown(Shutdown::Write);
    });
    tx
}

fn handle_connection(stream: TcpStream, config: ServerConfig, registry: Registry, stats: Arc<ServerStats>) {
    let _ = stream.set_nodelay(true);
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let hello = match read_message(&mut reader) {
        Ok(Some(Message::Hello(h))) => h,
        _ => return send_abort(&stream, 0, "expected hello"),
    };
    if hello.n_workers != config.n_workers {
        return send_abort(
            &stream,
            hello.session_id,
            &format!("aggregator serves {} workers, hello says {}", config.n_workers, hello.n_workers),
        );
    }
    if hello.worker_id >= hello.n_workers || hello.chunk_size == 0 || hello.chunk_size as usize > MAX_CHUNK {
        return send_abort(&stream, hello.session_id, "invalid worker id or chunk size");
    }
    let Ok(write_half) = stream.try_clone() else { return };
    let out = spawn_writer(write_half);
    let session = {
        let mut reg = registry.lock().expect("registry lock");
        reg.entry(hello.session_id)
            .or_insert_with(|| {
                let (tx, rx) = mpsc::channel();
                let (registry, stats) = (Arc::clone(&registry), Arc::clone(&stats));
                let id = hello.session_id;
                thread::spawn(move || run_session(id, rx, config, registry, stats));
                tx
            })
            .clone()
    };
    if session.send(Event::Join { hello, out }).is_err() {
        return send_abort(&stream, hello.session_id, "session already closed");
    }
    let worker_id = hello.worker_id;
    let left = |graceful: bool, reason: String| Event::Left {
        worker_id,
        graceful,
        reason,
    };
    loop {
        let ev = match read_message(&mut reader) {
            Ok(Some(Message::Chunk(f))) if f.session_id == hello.session_id && f.worker_id == worker_id => {
                Event::Frame(f)
            }
            Ok(Some(Message::Chunk(_))) => left(false, format!("worker {worker_id} sent a frame with foreign ids")),
            Ok(Some(Message::Bye)) => left(true, String::new()),
            Ok(Some(other)) => left(false, format!("worker {worker_id} sent unexpected {other:?}")),
            Ok(None) => left(false, format!("worker {worker_id} disconnected")),
            Err(e) => left(false, format!("worker {worker_id}: {e}")),
        };
        let stop = matches!(ev, Event::Left { .. });
        if session.send(ev).is_err() || stop {
            break;
        }
    }
}

struct Pending {
    frames: Vec<Option<ChunkFrame>>,
    got: usize,
    since: Instant,
}

fn run_session(
    session_id: u64,
    rx: Receiver<Event>,
    config: ServerConfig,
    registry: Registry,
    stats: Arc<ServerStats>,
) {
    let n = config.n_workers as usize;
    let rng = RngStream::new(config.seed, session_id);
    let mut params: Option<Hello> = None;
    let mut writers: Vec<Option<Sender<Arc<Vec<u8>>>>> = vec![None; n];
    let mut finished = 0usize;
    let mut pending: HashMap<u64, Pending> = HashMap::new();
    let mut ready: BTreeMap<u64, Arc<Vec<u8>>> = BTreeMap::new();
    let mut next_out = 0u64;
    let tick = config.timeout.min(Duration::from_millis(100));

    let outcome: std::result::Result<(), String> = loop {
        match rx.recv_timeout(tick) {
            Ok(Event::Join { hello, out }) => {
                let p = *params.get_or_insert(hello);
                if (p.d, p.chunk_size) != (hello.d, hello.chunk_size) {
                    break Err(format!("worker {} disagrees on dimension or chunk size", hello.worker_id));
                }
                let slot = &mut writers[hello.worker_id as usize];
                if slot.is_some() {
                    let _ = out.send(Arc::new(
                        Message::Abort {
                            session_id,
                            reason: format!("worker id {} already joined", hello.worker_id),
                        }
                        .encode(),
                    ));
                    continue;
                }
                *slot = Some(out);
            }
            Ok(Event::Frame(f)) => {
                let p = params.expect("frames follow a join");
                let w = f.worker_id as usize;
                if f.chunk_index < next_out {
                    break Err(format!("worker {w} resent finished chunk {}", f.chunk_index));
                }
                let chunks_per_vector = p.d.div_ceil(p.chunk_size as u64).max(1);
                let offset = (f.chunk_index % chunks_per_vector) * p.chunk_size as u64;
                let expected = (p.d - offset.min(p.d)).min(p.chunk_size as u64) as usize;
                if f.payload.len() != expected {
                    break Err(format!(
                        "worker {w} chunk {} carries {} elements, expected {expected}",
                        f.chunk_index,
                        f.payload.len()
                    ));
                }
                let c = f.chunk_index;
                let entry = pending.entry(c).or_insert_with(|| Pending {
                    frames: vec![None; n],
                    got: 0,
                    since: Instant::now(),
                });
                if entry.frames[w].is_some() {
                    break Err(format!("worker {w} sent chunk {c} twice"));
                }
                entry.frames[w] = Some(f);
                entry.got += 1;
                if entry.got == n {
                    let done = pending.remove(&c).expect("present");
                    let frames: Vec<ChunkFrame> = done.frames.into_iter().flatten().collect();
                    match aggregate_chunk(&frames, &rng) {
                        Ok(o) => {
                            stats.chunks.fetch_add(1, Ordering::Relaxed);
                            stats.saturated.fetch_add(o.saturated, Ordering::Relaxed);
                            stats.clipped.fetch_add(o.clipped, Ordering::Relaxed);
                            debug_assert_eq!(o.frame.worker_id, AGGREGATOR_ID);
                            ready.insert(c, Arc::new(Message::Result(o.frame).encode()));
                        }
                        Err(e) => break Err(e.to_string()),
                    }
                    while let Some(bytes) = ready.remove(&next_out) {
                        for out in writers.iter().flatten() {
                            let _ = out.send(Arc::clone(&bytes));
                        }
                        next_out += 1;
                    }
                }
            }
            Ok(Event::Left {
                worker_id,
                graceful,
                reason,
            }) => {
                let w = worker_id as usize;
                writers[w] = None;
                if !graceful {
                    break Err(reason);
                }
                if pending.values().any(|p| p.frames[w].is_none()) {
                    break Err(format!("worker {w} left with chunks outstanding"));
                }
                finished += 1;
                if finished == n {
                    break Ok(());
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break Ok(()),
        }
        if let Some((c, p)) = pending.iter().find(|(_, p)| p.since.elapsed() > config.timeout) {
            let missing: Vec<usize> = (0..n).filter(|&w| p.frames[w].is_none()).collect();
            break Err(format!(
                "chunk {c}: no frame from workers {missing:?} within {:?}",
                config.timeout
            ));
        }
    };

    registry.lock().expect("registry lock").remove(&session_id);
    match outcome {
        Ok(()) => {
            stats.sessions_completed.fetch_add(1, Ordering::Relaxed);
        }
        Err(reason) => {
            stats.sessions_aborted.fetch_add(1, Ordering::Relaxed);
            let bytes = Arc::new(Message::Abort { session_id, reason }.encode());
            for out in writers.iter().flatten() {
                let _ = out.send(Arc::clone(&bytes));
            }
        }
    }
}
