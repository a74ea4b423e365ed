//! Worker side of the aggregation protocol.

use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::wire::{read_message, write_message, ChunkFrame, Hello, Message, MAX_CHUNK};
use crate::codec::nat8c;
use crate::error::{Error, Result};
use crate::vector::DenseVector;

/// One worker connection. Vector number `round` occupies chunk indices
/// `round · chunks_per_vector ..`.
pub struct InaWorker {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    hello: Hello,
}

/// Aggregated vector and how many of this worker's inputs were clipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Reduced {
    pub values: DenseVector,
    pub clipped_inputs: usize,
}

impl InaWorker {
    pub fn connect<A: ToSocketAddrs>(addr: A, hello: Hello, timeout: Duration) -> Result<Self> {
        if hello.chunk_size == 0 || hello.chunk_size as usize > MAX_CHUNK {
            return Err(Error::Config(format!("chunk size must be 1..={MAX_CHUNK}")));
        }
        if hello.worker_id >= hello.n_workers {
            return Err(Error::Config("worker id must be below the worker count".into()));
        }
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        let mut w = Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            hello,
        };
        write_message(&mut w.writer, &Message::Hello(hello))?;
        w.writer.flush()?;
        Ok(w)
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    pub fn chunks_per_vector(&self) -> u64 {
        self.hello.d.div_ceil(self.hello.chunk_size as u64).max(1)
    }

    pub fn send_codes(&mut self, round: u64, codes: &[u8]) -> Result<()> {
        if codes.len() as u64 != self.hello.d {
            return Err(Error::InvalidInput(format!(
                "vector has {} elements, session dimension is {}",
                codes.len(),
                self.hello.d
            )));
        }
        let cpv = self.chunks_per_vector();
        let size = self.hello.chunk_size as usize;
        for c in 0..cpv {
            let lo = (c as usize * size).min(codes.len());
            let hi = (lo + size).min(codes.len());
            let frame = ChunkFrame {
                session_id: self.hello.session_id,
                chunk_index: round * cpv + c,
                worker_id: self.hello.worker_id,
                payload: codes[lo..hi].to_vec(),
            };
            write_message(&mut self.writer, &Message::Chunk(frame))?;
        }
        self.writer.flush()?;
        Ok(())
    }

    pub fn recv_codes(&mut self, round: u64) -> Result<Vec<u8>> {
        let cpv = self.chunks_per_vector();
        let mut out = Vec::with_capacity(self.hello.d as usize);
        for c in 0..cpv {
            let want = round * cpv + c;
            match read_message(&mut self.reader) {
                Ok(Some(Message::Result(f))) => {
                    if f.session_id != self.hello.session_id || f.chunk_index != want {
                        return Err(Error::Protocol(format!(
                            "expected chunk {want}, received chunk {} of session {}",
                            f.chunk_index, f.session_id
                        )));
                    }
                    out.extend_from_slice(&f.payload);
                }
                Ok(Some(Message::Abort { reason, .. })) => return Err(Error::Session(reason)),
                Ok(Some(other)) => return Err(Error::Protocol(format!("unexpected {other:?}"))),
                Ok(None) => return Err(Error::Session("aggregator closed the connection".into())),
                Err(Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(Error::Session(format!("no result for chunk {want} before timeout")))
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Sends `x` (zeros and powers of two) and returns the aggregate.
    pub fn allreduce(&mut self, round: u64, x: &DenseVector) -> Result<Reduced> {
        let mut clipped_inputs = 0;
        let codes = x
            .as_slice()
            .iter()
            .map(|&v| {
                let (c, clipped) = nat8c::encode_scalar(v)?;
                clipped_inputs += clipped as usize;
                Ok(c)
            })
            .collect::<Result<Vec<u8>>>()?;
        self.send_codes(round, &codes)?;
        let back = self.recv_codes(round)?;
        let values = back
            .into_iter()
            .map(nat8c::decode_scalar)
            .collect::<Result<Vec<f32>>>()?;
        Ok(Reduced {
            values: DenseVector::new(values)?,
            clipped_inputs,
        })
    }

    /// Announces an orderly departure and closes the connection.
    pub fn finish(mut self) -> Result<()> {
        write_message(&mut self.writer, &Message::Bye)?;
        self.writer.flush()?;
        let _ = self.writer.get_ref().shutdown(Shutdown::Write);
        Ok(())
    }
}

/// All workers of one session driven from a single process.
pub struct InaGroup {
    workers: Vec<InaWorker>,
    round: u64,
}

impl InaGroup {
    pub fn connect<A: ToSocketAddrs + Copy>(
        addr: A,
        session_id: u64,
        n_workers: u16,
        d: usize,
        chunk_size: u16,
        timeout: Duration,
    ) -> Result<Self> {
        let workers = (0..n_workers)
            .map(|worker_id| {
                let hello = Hello {
                    session_id,
                    worker_id,
                    n_workers,
                    d: d as u64,
                    chunk_size,
                };
                InaWorker::connect(addr, hello, timeout)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { workers, round: 0 })
    }

    /// Aggregates one vector per worker; every worker must receive identical bits.
    pub fn aggregate(&mut self, inputs: &[DenseVector]) -> Result<Reduced> {
        if inputs.len() != self.workers.len() {
            return Err(Error::InvalidInput(format!(
                "{} inputs for {} workers",
                inputs.len(),
                self.workers.len()
            )));
        }
        let round = self.round;
        self.round += 1;
        let results: Vec<Result<Reduced>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .workers
                .iter_mut()
                .zip(inputs)
                .map(|(w, x)| scope.spawn(move || w.allreduce(round, x)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Session("worker thread panicked".into()))))
                .collect()
        });
        let mut results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let clipped_inputs = results.iter().map(|r| r.clipped_inputs).sum();
        let first = results.swap_remove(0);
        if results.iter().any(|r| r.values != first.values) {
            return Err(Error::Protocol("workers received different aggregates".into()));
        }
        Ok(Reduced {
            values: first.values,
            clipped_inputs,
        })
    }

    pub fn finish(self) -> Result<()> {
        for w in self.workers {
            w.finish()?;
        }
        Ok(())
    }
}
