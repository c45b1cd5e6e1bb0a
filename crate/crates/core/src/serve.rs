//! Loaded estimator plus the newline-delimited JSON service around it.
//!
//! Requests are `{"id": any, "sql": "..."}`, one per line. Each gets exactly
//! one response line, in order: `{"id", "card", "log_card"}` on success or
//! `{"id", "error"}` otherwise.

use std::io::{BufRead, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, Estimate, Model};
use crate::query::parse_query;
use crate::stats::StatsStore;

/// Longest accepted request line in bytes.
pub const MAX_LINE: usize = 64 * 1024;

pub struct Service {
    pub model: Model,
    pub catalog: Catalog,
    pub stats: StatsStore,
}

impl Service {
    pub fn new(model: Model, catalog: Catalog, stats: StatsStore) -> Result<Service> {
        if !stats.matches(&catalog) {
            return Err(Error::CorruptStats(format!(
                "statistics do not belong to catalog `{}`",
                catalog.name
            )));
        }
        Ok(Service {
            model,
            catalog,
            stats,
        })
    }

    pub fn load(
        checkpoint: impl AsRef<Path>,
        catalog: impl AsRef<Path>,
        stats: impl AsRef<Path>,
    ) -> Result<Service> {
        Service::new(
            load_checkpoint(checkpoint)?,
            Catalog::load(catalog)?,
            StatsStore::load(stats)?,
        )
    }

    pub fn estimate_sql(&self, sql: &str) -> Result<Estimate> {
        let q = parse_query(sql, &self.catalog)?;
        self.model.estimate(&q, &self.catalog, &self.stats)
    }

    /// Response line (without newline) for one request line.
    pub fn respond(&self, line: &str) -> String {
        let request: Value = match serde_json::from_str(line) {
            Ok(v @ Value::Object(_)) => v,
            _ => return json!({"id": null, "error": "parse"}).to_string(),
        };
        let id = request.get("id").cloned().unwrap_or(Value::Null);
        let Some(sql) = request.get("sql").and_then(Value::as_str) else {
            return json!({"id": id, "error": "missing sql"}).to_string();
        };
        match self.estimate_sql(sql) {
            Ok(e) => json!({"id": id, "card": e.card, "log_card": e.log_card}).to_string(),
            Err(e) => json!({"id": id, "error": e.to_string()}).to_string(),
        }
    }
}

enum Line {
    Text(String),
    TooLong,
}

/// Read one line of at most `limit` bytes. Longer lines are drained
/// without being buffered.
fn read_bounded<R: BufRead>(r: &mut R, limit: usize) -> std::io::Result<Option<Line>> {
    let mut buf = Vec::new();
    let mut overflow = false;
    loop {
        let chunk = r.fill_buf()?;
        if chunk.is_empty() {
            if buf.is_empty() && !overflow {
                return Ok(None);
            }
            break;
        }
        let (take, done) = match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => (i, true),
            None => (chunk.len(), false),
        };
        if !overflow {
            if buf.len() + take > limit {
                overflow = true;
                buf = Vec::new();
            } else {
                buf.extend_from_slice(&chunk[..take]);
            }
        }
        r.consume(if done { take + 1 } else { take });
        if done {
            break;
        }
    }
    if overflow {
        return Ok(Some(Line::TooLong));
    }
    if buf.last() == Some(&b'\r') {
        buf.pop();
    }
    Ok(Some(Line::Text(String::from_utf8_lossy(&buf).into_owned())))
}

/// Answer every request on `reader` until end of input.
pub fn serve_stream<R: BufRead, W: Write>(
    svc: &Service,
    mut reader: R,
    mut writer: W,
) -> std::io::Result<()> {
    while let Some(line) = read_bounded(&mut reader, MAX_LINE)? {
        let response = match line {
            Line::Text(t) if t.trim().is_empty() => continue,
            Line::Text(t) => svc.respond(&t),
            Line::TooLong => json!({"id": null, "error": "line too long"}).to_string(),
        };
        writer.write_all(response.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

fn handle(svc: &Service, stream: TcpStream) {
    let peer = stream.peer_addr().ok();
    let reader = match stream.try_clone() {
        Ok(s) => std::io::BufReader::new(s),
        Err(e) => {
            log::error!("connection {peer:?}: {e}");
            return;
        }
    };
    if let Err(e) = serve_stream(svc, reader, std::io::BufWriter::new(stream)) {
        log::info!("connection {peer:?} closed: {e}");
    }
}

/// Accept connections forever, one thread each.
pub fn serve_listener(svc: Arc<Service>, listener: TcpListener) -> std::io::Result<()> {
    for stream in listener.incoming() {
        match stream {
            Ok(s) => {
                let svc = Arc::clone(&svc);
                thread::spawn(move || handle(&svc, s));
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    Ok(())
}

/// Bind `addr` and serve on a background thread; returns the bound address.
pub fn spawn_tcp(svc: Arc<Service>, addr: &str) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    thread::spawn(move || serve_listener(svc, listener));
    Ok(local)
}
