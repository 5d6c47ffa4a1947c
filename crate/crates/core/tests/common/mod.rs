#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

/// Local HTTP server answering every POST with `handler(body)`.
pub struct Stub {
    pub url: String,
    server: Arc<tiny_http::Server>,
    hits: Arc<AtomicUsize>,
    worker: Option<JoinHandle<()>>,
}

impl Stub {
    pub fn start<F>(handler: F) -> Stub
    where
        F: Fn(&str) -> (u16, String) + Send + 'static,
    {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub server"));
        let url = format!("http://{}/", server.server_addr().to_ip().expect("ip address"));
        let hits = Arc::new(AtomicUsize::new(0));
        let (s, h) = (server.clone(), hits.clone());
        let worker = std::thread::spawn(move || {
            for mut req in s.incoming_requests() {
                h.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let (status, reply) = handler(&body);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let _ = req.respond(tiny_http::Response::from_string(reply).with_status_code(status).with_header(header));
            }
        });
        Stub {
            url,
            server,
            hits,
            worker: Some(worker),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Deterministic pseudo-embedding of `text`.
pub fn hash_vector(text: &str, dim: usize) -> Vec<f32> {
    let mut state = text.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    (0..dim)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2001) as f32 / 1000.0 - 1.0 + 1e-3
        })
        .collect()
}

/// Embedding service stub of fixed width.
pub fn embed_service(dim: usize) -> Stub {
    Stub::start(move |body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        let vectors: Vec<Vec<f32>> = req["texts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| hash_vector(t.as_str().unwrap(), dim))
            .collect();
        (200, serde_json::json!({ "dim": dim, "vectors": vectors }).to_string())
    })
}
