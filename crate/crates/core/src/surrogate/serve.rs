//! Newline-delimited JSON service over TCP or any reader/writer pair.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{json, Value};

use super::{SurrogateBenchmark, SurrogateError, FORMAT_VERSION};

const POLL_INTERVAL: Duration = Duration::from_millis(100);

/// Summary of per-request prediction latency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Default)]
struct LatencyAcc {
    count: u64,
    sum: f64,
    sumsq: f64,
    max: f64,
}

/// Response line plus whether the service should stop afterwards.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Continue(String),
    Shutdown(String),
}

impl Reply {
    pub fn line(&self) -> &str {
        match self {
            Reply::Continue(s) | Reply::Shutdown(s) => s,
        }
    }
}

pub struct Server {
    sb: Arc<SurrogateBenchmark>,
    latency: Mutex<LatencyAcc>,
}

fn error_line(id: &Value, code: &str, message: impl std::fmt::Display) -> String {
    json!({"id": id, "error": {"code": code, "message": message.to_string()}}).to_string()
}

impl Server {
    pub fn new(sb: Arc<SurrogateBenchmark>) -> Self {
        Server { sb, latency: Mutex::new(LatencyAcc::default()) }
    }

    pub fn model(&self) -> &SurrogateBenchmark {
        &self.sb
    }

    pub fn latency(&self) -> LatencyStats {
        let a = self.latency.lock().expect("latency lock");
        if a.count == 0 {
            return LatencyStats::default();
        }
        let n = a.count as f64;
        let mean = a.sum / n;
        LatencyStats {
            count: a.count,
            mean_ms: mean * 1e3,
            std_ms: (a.sumsq / n - mean * mean).max(0.0).sqrt() * 1e3,
            max_ms: a.max * 1e3,
        }
    }

    fn record(&self, secs: f64) {
        let mut a = self.latency.lock().expect("latency lock");
        a.count += 1;
        a.sum += secs;
        a.sumsq += secs * secs;
        a.max = a.max.max(secs);
    }

    /// Answers one request line.
    pub fn handle_line(&self, line: &str) -> Reply {
        let req: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return Reply::Continue(error_line(&Value::Null, "bad_request", format!("invalid JSON: {e}"))),
        };
        let Some(obj) = req.as_object() else {
            return Reply::Continue(error_line(&Value::Null, "bad_request", "request must be a JSON object"));
        };
        let id = obj.get("id").cloned().unwrap_or(Value::Null);
        if !(id.is_null() || id.is_i64() || id.is_u64()) {
            return Reply::Continue(error_line(&Value::Null, "bad_request", "`id` must be an integer"));
        }
        match obj.get("op").and_then(Value::as_str) {
            Some("run") => Reply::Continue(self.run(&id, obj)),
            Some("info") => Reply::Continue(json!({"id": id, "info": self.info()}).to_string()),
            Some("shutdown") => Reply::Shutdown(json!({"id": id, "ok": true}).to_string()),
            Some(other) => Reply::Continue(error_line(&id, "bad_request", format!("unknown op `{other}`"))),
            None => Reply::Continue(error_line(&id, "bad_request", "missing string field `op`")),
        }
    }

    fn run(&self, id: &Value, req: &serde_json::Map<String, Value>) -> String {
        let Some(cfg) = req.get("config").filter(|c| c.is_object()) else {
            return error_line(id, "bad_request", "missing object field `config`");
        };
        let Some(instance) = req.get("instance").and_then(Value::as_str) else {
            return error_line(id, "bad_request", "missing string field `instance`");
        };
        let Some(seed) = req.get("seed").and_then(Value::as_u64) else {
            return error_line(id, "bad_request", "missing non-negative integer field `seed`");
        };
        let config = match self.sb.space().config_from_json(cfg) {
            Ok(c) => c,
            Err(e) => return error_line(id, "invalid_config", e),
        };
        let start = Instant::now();
        let result = self.sb.predict_run(&config, instance, seed);
        self.record(start.elapsed().as_secs_f64());
        match result {
            Ok(r) => json!({
                "id": id,
                "status": r.status.to_string(),
                "cost": r.cost,
                "quantile": r.quantile_used,
            })
            .to_string(),
            Err(SurrogateError::UnknownInstance(i)) => error_line(id, "unknown_instance", format!("unknown instance `{i}`")),
            Err(SurrogateError::Config(e)) => error_line(id, "invalid_config", e),
            Err(e) => error_line(id, "internal", e),
        }
    }

    fn info(&self) -> Value {
        let sb = &self.sb;
        json!({
            "format_version": FORMAT_VERSION,
            "space": sb.space().render(),
            "instances": sb.instances(),
            "cutoff": sb.cutoff(),
            "objective": sb.objective(),
            "deterministic_target": sb.deterministic_target(),
            "num_trees": sb.forest().trees().len(),
            "provenance": sb.provenance(),
            "latency": self.latency(),
        })
    }

    /// Serves lines from `input` until end of input or a shutdown request.
    pub fn serve_io<R: BufRead, W: Write>(&self, input: R, mut output: W) -> io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let reply = self.handle_line(&line);
            writeln!(output, "{}", reply.line())?;
            output.flush()?;
            if matches!(reply, Reply::Shutdown(_)) {
                break;
            }
        }
        Ok(())
    }

    /// Accepts connections until a shutdown request arrives, then waits for
    /// open connections to finish their in-flight requests.
    pub fn serve_tcp(&self, listener: TcpListener) -> io::Result<()> {
        let addr = listener.local_addr()?;
        let stop = AtomicBool::new(false);
        thread::scope(|scope| {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let stop = &stop;
                        scope.spawn(move || {
                            if let Err(e) = self.connection(stream, stop, addr) {
                                log::warn!("connection error: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        });
        Ok(())
    }

    fn connection(&self, stream: TcpStream, stop: &AtomicBool, addr: SocketAddr) -> io::Result<()> {
        stream.set_read_timeout(Some(POLL_INTERVAL))?;
        stream.set_nodelay(true)?;
        let mut writer = io::BufWriter::new(stream.try_clone()?);
        let mut reader = BufReader::new(stream);
        let mut buf = Vec::new();
        loop {
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) => {
                    if !buf.is_empty() {
                        self.answer(&buf, &mut writer, stop, addr)?;
                    }
                    return Ok(());
                }
                Ok(_) if buf.ends_with(b"\n") => {
                    let done = self.answer(&buf, &mut writer, stop, addr)?;
                    buf.clear();
                    if done {
                        return Ok(());
                    }
                }
                Ok(_) => {}
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    if stop.load(Ordering::SeqCst) && buf.is_empty() {
                        return Ok(());
                    }
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
    }

    /// Returns true when the connection should close.
    fn answer<W: Write>(&self, raw: &[u8], out: &mut W, stop: &AtomicBool, addr: SocketAddr) -> io::Result<bool> {
        let line = String::from_utf8_lossy(raw);
        let line = line.trim();
        if line.is_empty() {
            return Ok(false);
        }
        let reply = self.handle_line(line);
        writeln!(out, "{}", reply.line())?;
        out.flush()?;
        if let Reply::Shutdown(_) = reply {
            stop.store(true, Ordering::SeqCst);
            // Wake the accept loop so it observes the flag.
            let _ = TcpStream::connect(addr);
            return Ok(true);
        }
        Ok(false)
    }
}

/// Serves on standard input and output.
pub fn serve_stdio(sb: Arc<SurrogateBenchmark>) -> io::Result<LatencyStats> {
    let server = Server::new(sb);
    server.serve_io(io::stdin().lock(), io::stdout().lock())?;
    Ok(server.latency())
}

/// Answers a single request line without a running service.
pub fn handle_request(sb: Arc<SurrogateBenchmark>, line: &str) -> String {
    Server::new(sb).handle_line(line).line().to_string()
}
