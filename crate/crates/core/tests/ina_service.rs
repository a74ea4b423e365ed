use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::atomic::Ordering;
use std::time::Duration;

use natcomp::codec::nat8c;
use natcomp::ina::client::InaWorker;
use natcomp::ina::fixed;
use natcomp::ina::wire::{read_message, write_message};
use natcomp::ina::{Hello, InaGroup, InaServer, Message, ServerConfig};
use natcomp::ops::nat_two_point;
use natcomp::{DenseVector, Error, RngStream};

const TIMEOUT: Duration = Duration::from_secs(5);

fn server(n: u16, seed: u64, timeout: Duration) -> std::net::SocketAddr {
    let mut cfg = ServerConfig::new(n, seed);
    cfg.timeout = timeout;
    InaServer::bind("127.0.0.1:0", cfg).unwrap().spawn().unwrap()
}

fn v(x: &[f32]) -> DenseVector {
    DenseVector::new(x.to_vec()).unwrap()
}

#[test]
fn hot_path_has_no_floating_point() {
    let src = include_str!("../src/ina/fixed.rs");
    let code: String = src
        .lines()
        .map(|l| l.split("//").next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n");
    for banned in ["f32", "f64", "as f", "powf", "powi", "sqrt", "exp2", "log2", "ln("] {
        assert!(!code.contains(banned), "hot path mentions {banned:?}");
    }
    let has_float_literal = code.as_bytes().windows(3).any(|w| {
        w[0].is_ascii_digit() && w[1] == b'.' && w[2].is_ascii_digit()
    });
    assert!(!has_float_literal, "hot path contains a float literal");
}

#[test]
fn two_workers_sum_examples() {
    let addr = server(2, 1, TIMEOUT);
    let mut g = InaGroup::connect(addr, 10, 2, 3, 256, TIMEOUT).unwrap();
    let r = g.aggregate(&[v(&[1.0, 1.0, 0.0]), v(&[1.0, -1.0, 0.0])]).unwrap();
    assert_eq!(r.values.as_slice(), &[2.0, 0.0, 0.0]);
    g.finish().unwrap();
}

#[test]
fn four_ones_make_four_across_many_chunks() {
    let addr = server(4, 2, TIMEOUT);
    let d = 1000;
    let mut g = InaGroup::connect(addr, 11, 4, d, 64, TIMEOUT).unwrap();
    let ones = DenseVector::new(vec![1.0; d]).unwrap();
    for _ in 0..3 {
        let r = g.aggregate(&[ones.clone(), ones.clone(), ones.clone(), ones.clone()]).unwrap();
        assert!(r.values.as_slice().iter().all(|&x| x == 4.0));
    }
    g.finish().unwrap();
}

#[test]
fn single_worker_recompression_matches_nat_law() {
    let addr = server(1, 3, TIMEOUT);
    let d = 20_000;
    let mut g = InaGroup::connect(addr, 12, 1, d, 256, TIMEOUT).unwrap();
    // a lone power of two is already on the grid
    let x = DenseVector::new((0..d).map(|i| if i % 2 == 0 { 0.5 } else { -8.0 }).collect()).unwrap();
    let r = g.aggregate(std::slice::from_ref(&x)).unwrap();
    assert_eq!(r.values, x);
    g.finish().unwrap();
}

#[test]
fn three_rounds_to_two_or_four() {
    let addr = server(2, 4, TIMEOUT);
    let d = 40_000;
    let mut g = InaGroup::connect(addr, 13, 2, d, 256, TIMEOUT).unwrap();
    let r = g
        .aggregate(&[DenseVector::new(vec![1.0; d]).unwrap(), DenseVector::new(vec![2.0; d]).unwrap()])
        .unwrap();
    g.finish().unwrap();
    let law = nat_two_point(3.0).unwrap();
    let high = r.values.as_slice().iter().filter(|&&x| x == 4.0).count();
    assert!(r.values.as_slice().iter().all(|&x| x == 2.0 || x == 4.0));
    let p = high as f64 / d as f64;
    let want = 1.0 - law.p_low;
    assert!((p - want).abs() < 4.0 * (want * (1.0 - want) / d as f64).sqrt(), "{p} vs {want}");
}

#[test]
fn aggregate_is_unbiased_for_random_inputs() {
    let addr = server(3, 5, TIMEOUT);
    let d = 100_000;
    let mut g = InaGroup::connect(addr, 14, 3, d, 256, TIMEOUT).unwrap();
    let rng = RngStream::new(77, 0);
    let exps = [-3i32, 0, 2];
    let inputs: Vec<DenseVector> = (0..3)
        .map(|w| {
            DenseVector::new(
                (0..d)
                    .map(|i| {
                        let e = exps[(rng.bits_at((w * d + i) as u64) % 3) as usize];
                        let s = if w == 2 { -1.0 } else { 1.0 };
                        s * (e as f32).exp2()
                    })
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    let r = g.aggregate(&inputs).unwrap();
    g.finish().unwrap();
    let (mut sum_err, mut sum_var) = (0.0f64, 0.0f64);
    for i in 0..d {
        let t: f64 = inputs.iter().map(|x| x.as_slice()[i] as f64).sum();
        let out = r.values.as_slice()[i] as f64;
        sum_err += out - t;
        if t != 0.0 {
            let law = natcomp::ops::nat_two_point_f64(t);
            sum_var += law.second_moment() - t * t;
        }
    }
    let z = sum_err / sum_var.sqrt();
    assert!(z.abs() <= 4.0, "z = {z}");
}

#[test]
fn integer_rounding_is_exactly_unbiased_up_to_2_16() {
    for mag in 1i64..=(1 << 16) {
        for sum in [mag, -mag] {
            let (a, _, rem) = fixed::bracket(sum);
            let low = 1u128 << a;
            // E = low·(1 − rem/low) + 2·low·(rem/low), scaled by low
            assert_eq!(low * (low - rem as u128) + 2 * low * rem as u128, mag as u128 * low);
            if rem > 0 {
                assert_eq!(fixed::recompress(sum, rem - 1).0 & 0x3f, (a + 1) as u8);
                assert_eq!(fixed::recompress(sum, 0).0 & 0x3f, (a + 1) as u8);
            }
            assert_eq!(fixed::recompress(sum, rem).0 & 0x3f, a as u8);
            assert_eq!(fixed::recompress(sum, (1u64 << a) - 1).0 & 0x3f, if rem == (1 << a) { a + 1 } else { a } as u8);
        }
    }
    for sum in 1i64..=(1 << 10) {
        let (a, _, rem) = fixed::bracket(sum);
        let high = (0..1u64 << a).filter(|&r| fixed::recompress(sum, r).0 == (a + 1) as u8).count();
        assert_eq!(high as u64, rem);
    }
}

#[test]
fn mismatched_lengths_abort_the_session() {
    let addr = server(2, 6, TIMEOUT);
    let hello = |w| Hello {
        session_id: 20,
        worker_id: w,
        n_workers: 2,
        d: 4,
        chunk_size: 4,
    };
    let mut a = InaWorker::connect(addr, hello(0), TIMEOUT).unwrap();
    let mut b = InaWorker::connect(addr, Hello { d: 3, ..hello(1) }, TIMEOUT).unwrap();
    let codes = [nat8c::encode_scalar(1.0).unwrap().0; 4];
    a.send_codes(0, &codes).unwrap();
    b.send_codes(0, &codes[..3]).unwrap();
    assert!(matches!(a.recv_codes(0), Err(Error::Session(_))));
}

#[test]
fn lost_worker_aborts_remaining() {
    let addr = server(2, 7, TIMEOUT);
    let hello = |w| Hello {
        session_id: 21,
        worker_id: w,
        n_workers: 2,
        d: 2,
        chunk_size: 2,
    };
    let mut a = InaWorker::connect(addr, hello(0), TIMEOUT).unwrap();
    let b = InaWorker::connect(addr, hello(1), TIMEOUT).unwrap();
    a.send_codes(0, &[50, 50]).unwrap();
    drop(b);
    match a.recv_codes(0) {
        Err(Error::Session(reason)) => assert!(reason.contains("worker 1"), "{reason}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_frame_times_out() {
    let addr = server(2, 8, Duration::from_millis(300));
    let hello = |w| Hello {
        session_id: 22,
        worker_id: w,
        n_workers: 2,
        d: 2,
        chunk_size: 2,
    };
    let mut a = InaWorker::connect(addr, hello(0), TIMEOUT).unwrap();
    let _b = InaWorker::connect(addr, hello(1), TIMEOUT).unwrap();
    a.send_codes(0, &[50, 50]).unwrap();
    match a.recv_codes(0) {
        Err(Error::Session(reason)) => assert!(reason.contains("no frame"), "{reason}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_worker_count_is_refused() {
    let addr = server(3, 9, TIMEOUT);
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(TIMEOUT)).unwrap();
    write_message(
        &mut s,
        &Message::Hello(Hello {
            session_id: 1,
            worker_id: 0,
            n_workers: 2,
            d: 1,
            chunk_size: 1,
        }),
    )
    .unwrap();
    s.flush().unwrap();
    assert!(matches!(read_message(&mut s).unwrap(), Some(Message::Abort { .. })));
    let mut rest = Vec::new();
    let _ = s.read_to_end(&mut rest);
}

#[test]
fn concurrent_sessions_and_stats() {
    let mut cfg = ServerConfig::new(2, 10);
    cfg.timeout = TIMEOUT;
    let srv = InaServer::bind("127.0.0.1:0", cfg).unwrap();
    let stats = srv.stats();
    let addr = srv.spawn().unwrap();
    std::thread::scope(|s| {
        for session in 0..4u64 {
            s.spawn(move || {
                let mut g = InaGroup::connect(addr, 100 + session, 2, 300, 100, TIMEOUT).unwrap();
                let x = DenseVector::new(vec![2.0; 300]).unwrap();
                let r = g.aggregate(&[x.clone(), x]).unwrap();
                assert!(r.values.as_slice().iter().all(|&y| y == 4.0));
                g.finish().unwrap();
            });
        }
    });
    let deadline = std::time::Instant::now() + TIMEOUT;
    while stats.sessions_completed.load(Ordering::Relaxed) < 4 && std::time::Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    assert_eq!(stats.sessions_completed.load(Ordering::Relaxed), 4);
    assert_eq!(stats.chunks.load(Ordering::Relaxed), 12);
    assert_eq!(stats.sessions_aborted.load(Ordering::Relaxed), 0);
}

#[test]
fn identical_seeds_give_identical_aggregates() {
    let run = |seed| {
        let addr = server(2, seed, TIMEOUT);
        let mut g = InaGroup::connect(addr, 5, 2, 5000, 256, TIMEOUT).unwrap();
        let r = g
            .aggregate(&[DenseVector::new(vec![1.0; 5000]).unwrap(), DenseVector::new(vec![0.5; 5000]).unwrap()])
            .unwrap();
        g.finish().unwrap();
        r.values
    };
    assert_eq!(run(42), run(42));
    assert_ne!(run(42), run(43));
}
