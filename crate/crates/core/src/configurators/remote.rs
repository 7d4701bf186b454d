//! Client adapter for a served surrogate model.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;

use serde_json::{json, Value};

use super::{BackendError, BenchmarkBackend};
use crate::config_space::{parse_space, Configuration, ConfigurationSpace};
use crate::run_data::{InstanceSet, Objective, RunStatus, PAR_FACTOR};
use crate::surrogate::RunResult;

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Connection {
    fn call(&mut self, mut req: Value) -> Result<Value, BackendError> {
        let id = self.next_id;
        self.next_id += 1;
        req["id"] = json!(id);
        let mut line = req.to_string();
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(BackendError::Remote("connection closed".into()));
        }
        let v: Value = serde_json::from_str(&reply).map_err(|e| BackendError::Remote(format!("bad reply: {e}")))?;
        if let Some(err) = v.get("error") {
            return Err(BackendError::Remote(format!(
                "{}: {}",
                err["code"].as_str().unwrap_or("error"),
                err["message"].as_str().unwrap_or("")
            )));
        }
        if v.get("id") != Some(&json!(id)) {
            return Err(BackendError::Remote(format!("reply id mismatch: expected {id}")));
        }
        Ok(v)
    }
}

/// A served surrogate used as a benchmark backend over TCP.
pub struct RemoteBackend {
    conn: Mutex<Connection>,
    space: ConfigurationSpace,
    instances: InstanceSet,
    cutoff: f64,
    objective: Objective,
}

impl RemoteBackend {
    /// Connects and fetches the model description.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, BackendError> {
        let writer = TcpStream::connect(addr)?;
        writer.set_nodelay(true)?;
        let reader = BufReader::new(writer.try_clone()?);
        let mut conn = Connection { reader, writer, next_id: 1 };
        let v = conn.call(json!({"op": "info"}))?;
        let info = &v["info"];
        let bad = |what: &str| BackendError::Remote(format!("info reply lacks a valid `{what}`"));
        let space = parse_space(info["space"].as_str().ok_or_else(|| bad("space"))?)
            .map_err(|e| BackendError::Remote(format!("remote space: {e}")))?;
        let instances: InstanceSet = serde_json::from_value(info["instances"].clone()).map_err(|_| bad("instances"))?;
        let cutoff = info["cutoff"].as_f64().ok_or_else(|| bad("cutoff"))?;
        let objective: Objective = serde_json::from_value(info["objective"].clone()).map_err(|_| bad("objective"))?;
        Ok(RemoteBackend { conn: Mutex::new(conn), space, instances, cutoff, objective })
    }

    /// Asks the server to stop.
    pub fn shutdown(&self) -> Result<(), BackendError> {
        self.conn.lock().expect("connection lock").call(json!({"op": "shutdown"}))?;
        Ok(())
    }
}

impl BenchmarkBackend for RemoteBackend {
    fn space(&self) -> &ConfigurationSpace {
        &self.space
    }

    fn instances(&self) -> &InstanceSet {
        &self.instances
    }

    fn cutoff(&self) -> f64 {
        self.cutoff
    }

    fn objective(&self) -> Objective {
        self.objective
    }

    fn run(&self, config: &Configuration, instance: &str, seed: u64) -> Result<RunResult, BackendError> {
        let cfg: Value = serde_json::from_str(&config.to_json()).expect("configuration JSON");
        let v = self
            .conn
            .lock()
            .expect("connection lock")
            .call(json!({"op": "run", "config": cfg, "instance": instance, "seed": seed}))?;
        let status: RunStatus = v["status"]
            .as_str()
            .ok_or_else(|| BackendError::Remote("reply lacks `status`".into()))?
            .parse()
            .map_err(BackendError::Remote)?;
        let cost = v["cost"].as_f64().ok_or_else(|| BackendError::Remote("reply lacks `cost`".into()))?;
        let raw_prediction = match (self.objective.is_runtime(), status) {
            (true, RunStatus::Timeout) => (cost / PAR_FACTOR).log10(),
            (true, _) => cost.log10(),
            (false, _) => cost,
        };
        Ok(RunResult { status, cost, raw_prediction, quantile_used: v["quantile"].as_f64() })
    }
}
