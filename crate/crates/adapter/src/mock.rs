//! A local chat-completions server for tests and offline demos.
//!
//! Speaks just enough HTTP/1.1 for one request per connection, records every
//! request in a ledger and can inject malformed bodies, error statuses and
//! delays.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

/// Produces the reply text for a prompt.
pub type Script = Arc<dyn Fn(&str) -> String + Send + Sync>;

#[derive(Clone)]
pub enum Behavior {
    /// Always answers with this text.
    Reply(String),
    /// Answers with a function of the prompt.
    Script(Script),
    /// Answers 200 with a body that is not a chat-completions response.
    Malformed,
    /// Always answers with this HTTP status.
    Status(u16),
    /// The first `failures` requests get `status`; later ones follow `then`.
    FailFirst {
        failures: usize,
        status: u16,
        then: Box<Behavior>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordedRequest {
    pub tag: Option<String>,
    pub authorization: Option<String>,
    /// Content of the single user message, if the body parsed.
    pub prompt: Option<String>,
    pub max_tokens: Option<u64>,
    pub status: u16,
}

#[derive(Default)]
struct Shared {
    ledger: Mutex<Vec<RecordedRequest>>,
    served: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    stop: AtomicBool,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(behavior: Behavior) -> std::io::Result<Self> {
        MockServer::start_with_delay(behavior, Duration::ZERO)
    }

    /// Like [`MockServer::start`], sleeping `delay` before every reply.
    pub fn start_with_delay(behavior: Behavior, delay: Duration) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared::default());
        let s = Arc::clone(&shared);
        let handle = std::thread::spawn(move || {
            let mut workers = Vec::new();
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let s = Arc::clone(&s);
                let behavior = behavior.clone();
                workers.push(std::thread::spawn(move || {
                    let _ = serve(stream, &behavior, delay, &s);
                }));
            }
            for w in workers {
                let _ = w.join();
            }
        });
        Ok(MockServer {
            addr,
            shared,
            handle: Some(handle),
        })
    }

    /// Base URL to put in an endpoint config.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.shared.ledger.lock().expect("ledger lock").clone()
    }

    /// Highest number of requests handled at the same time.
    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn reply_text(behavior: &Behavior, index: usize, prompt: &str) -> Result<String, u16> {
    match behavior {
        Behavior::Reply(t) => Ok(t.clone()),
        Behavior::Script(f) => Ok(f(prompt)),
        Behavior::Malformed => Err(0),
        Behavior::Status(s) => Err(*s),
        Behavior::FailFirst {
            failures,
            status,
            then,
        } => {
            if index < *failures {
                Err(*status)
            } else {
                reply_text(then, index, prompt)
            }
        }
    }
}

fn serve(
    stream: TcpStream,
    behavior: &Behavior,
    delay: Duration,
    shared: &Shared,
) -> std::io::Result<()> {
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    let result = handle(stream, behavior, delay, shared);
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    result
}

fn handle(
    stream: TcpStream,
    behavior: &Behavior,
    delay: Duration,
    shared: &Shared,
) -> std::io::Result<()> {
    if shared.stop.load(Ordering::SeqCst) {
        return Ok(());
    }
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut tag = None;
    let mut authorization = None;
    let mut length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some((name, value)) = line.trim_end().split_once(':') {
            let value = value.trim().to_string();
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.parse().unwrap_or(0),
                "x-request-tag" => tag = Some(value),
                "authorization" => authorization = Some(value),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let json: Option<serde_json::Value> = serde_json::from_slice(&body).ok();
    let prompt = json
        .as_ref()
        .and_then(|j| j["messages"][0]["content"].as_str())
        .map(str::to_string);
    let max_tokens = json.as_ref().and_then(|j| j["max_tokens"].as_u64());

    let index = shared.served.fetch_add(1, Ordering::SeqCst);
    std::thread::sleep(delay);
    let (status, payload) = match reply_text(behavior, index, prompt.as_deref().unwrap_or("")) {
        Ok(text) => (
            200,
            serde_json::json!({
                "id": format!("mock-{index}"),
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
                "usage": {"completion_tokens": text.split_whitespace().count()},
            })
            .to_string(),
        ),
        Err(0) => (200, "{\"choices\": \"not a list\"".to_string()),
        Err(s) => (s, "{\"error\": {\"message\": \"injected failure\"}}".to_string()),
    };
    shared
        .ledger
        .lock()
        .expect("ledger lock")
        .push(RecordedRequest {
            tag,
            authorization,
            prompt,
            max_tokens,
            status,
        });
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        if status == 200 { "OK" } else { "Error" },
        payload.len()
    )?;
    out.flush()
}
