//! Line-delimited JSON protocol for out-of-process region generators.
//!
//! Request: `{"id":n,"width":W,"height":H,"start":[cx,cy],"goal":[cx,cy],"grid":"<base64>"}`
//! where `grid` is the row-major map, one byte per cell, 0 free and 1 occupied.
//! Response: `{"id":n,"cells":[[cx,cy],...]}`.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{HeuristicError, RegionGenerator};
use crate::world::{Cell, StaticMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub start: [i64; 2],
    pub goal: [i64; 2],
    pub grid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResponse {
    pub id: u64,
    pub cells: Vec<[i64; 2]>,
}

#[derive(Debug, Serialize)]
struct WireError<'a> {
    id: Option<u64>,
    error: &'a str,
}

pub fn encode_grid(map: &StaticMap) -> String {
    STANDARD.encode(map.binary_grid())
}

pub fn decode_grid(grid: &str, width: usize, height: usize) -> Result<Vec<u8>, String> {
    let bytes = STANDARD.decode(grid).map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() != width * height {
        return Err(format!("grid has {} bytes, expected {}", bytes.len(), width * height));
    }
    if bytes.iter().any(|&b| b > 1) {
        return Err("grid bytes must be 0 or 1".into());
    }
    Ok(bytes)
}

impl WireRequest {
    pub fn new(id: u64, map: &StaticMap, start: Cell, goal: Cell) -> Self {
        WireRequest {
            id,
            width: map.width(),
            height: map.height(),
            start: [start.x as i64, start.y as i64],
            goal: [goal.x as i64, goal.y as i64],
            grid: encode_grid(map),
        }
    }
}

/// Parse and validate a response line against the request it answers.
pub fn parse_response(line: &str, id: u64, map: &StaticMap) -> Result<Vec<Cell>, HeuristicError> {
    let resp: WireResponse = serde_json::from_str(line.trim_end())
        .map_err(|e| HeuristicError::GeneratorFailure(format!("malformed response: {e}")))?;
    if resp.id != id {
        return Err(HeuristicError::GeneratorFailure(format!(
            "response id {} does not match request {id}",
            resp.id
        )));
    }
    resp.cells
        .iter()
        .map(|&[x, y]| {
            let c = Cell::new(x.clamp(i32::MIN as i64, i32::MAX as i64) as i32, y.clamp(i32::MIN as i64, i32::MAX as i64) as i32);
            if map.in_bounds(c) && c.x as i64 == x && c.y as i64 == y {
                Ok(c)
            } else {
                Err(HeuristicError::GeneratorFailure(format!("cell [{x}, {y}] out of bounds")))
            }
        })
        .collect()
}

/// How to reach an external generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transport {
    /// Spawn `command[0]` with the remaining arguments; talk over its stdio.
    Stdio { command: Vec<String> },
    Tcp { addr: String },
}

/// Client side of the protocol. One request in flight at a time.
pub struct ExternalModel {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    socket: Option<TcpStream>,
    next_id: u64,
    timeout: Duration,
}

fn spawn_line_reader<R: std::io::Read + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

impl ExternalModel {
    pub fn connect(transport: &Transport, timeout: Duration) -> Result<Self, HeuristicError> {
        let fail = |e: std::io::Error| HeuristicError::GeneratorFailure(e.to_string());
        match transport {
            Transport::Stdio { command } => {
                let (prog, args) = command
                    .split_first()
                    .ok_or_else(|| HeuristicError::GeneratorFailure("empty command".into()))?;
                let mut child = Command::new(prog)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::null())
                    .spawn()
                    .map_err(fail)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(ExternalModel {
                    writer: Box::new(stdin),
                    lines: spawn_line_reader(stdout),
                    child: Some(child),
                    socket: None,
                    next_id: 1,
                    timeout,
                })
            }
            Transport::Tcp { addr } => {
                let stream = TcpStream::connect(addr).map_err(fail)?;
                let reader = stream.try_clone().map_err(fail)?;
                let socket = stream.try_clone().map_err(fail)?;
                Ok(ExternalModel {
                    writer: Box::new(stream),
                    lines: spawn_line_reader(reader),
                    child: None,
                    socket: Some(socket),
                    next_id: 1,
                    timeout,
                })
            }
        }
    }

    fn request(&mut self, map: &StaticMap, start: Cell, goal: Cell) -> Result<Vec<Cell>, HeuristicError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&WireRequest::new(id, map, start, goal)).expect("request serializes");
        line.push('\n');
        let fail = |e: std::io::Error| HeuristicError::GeneratorFailure(e.to_string());
        self.writer.write_all(line.as_bytes()).map_err(fail)?;
        self.writer.flush().map_err(fail)?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(resp)) => parse_response(&resp, id, map),
            Ok(Err(e)) => Err(fail(e)),
            Err(RecvTimeoutError::Timeout) => Err(HeuristicError::GeneratorFailure("response timed out".into())),
            Err(RecvTimeoutError::Disconnected) => Err(HeuristicError::GeneratorFailure("generator closed the stream".into())),
        }
    }
}

impl RegionGenerator for ExternalModel {
    fn generate(&mut self, map: &StaticMap, start: Cell, goal: Cell) -> Result<Vec<Cell>, HeuristicError> {
        self.request(map, start, goal)
    }

    fn name(&self) -> &str {
        "external"
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
        // The reader thread holds a clone, so dropping ours would not close it.
        if let Some(s) = self.socket.as_ref() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

fn answer(line: &str, generator: &mut dyn RegionGenerator) -> Result<WireResponse, (Option<u64>, String)> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| (None, format!("malformed request: {e}")))?;
    let id = value.get("id").and_then(serde_json::Value::as_u64);
    let req: WireRequest = serde_json::from_value(value).map_err(|e| (id, format!("malformed request: {e}")))?;
    let grid = decode_grid(&req.grid, req.width, req.height).map_err(|e| (id, e))?;
    let occupied: Vec<bool> = grid.iter().map(|&b| b == 1).collect();
    let map = StaticMap::from_occupancy(req.width, req.height, 1.0, &occupied).map_err(|e| (id, e.to_string()))?;
    let cell = |[x, y]: [i64; 2]| {
        let c = Cell::new(x as i32, y as i32);
        (map.in_bounds(c) && c.x as i64 == x && c.y as i64 == y)
            .then_some(c)
            .ok_or_else(|| (id, format!("cell [{x}, {y}] out of bounds")))
    };
    let (start, goal) = (cell(req.start)?, cell(req.goal)?);
    let cells = generator.generate(&map, start, goal).map_err(|e| (id, e.to_string()))?;
    Ok(WireResponse {
        id: req.id,
        cells: cells.iter().map(|c| [c.x as i64, c.y as i64]).collect(),
    })
}

/// Server loop: answer each request line with `generator`. Bad requests get
/// an `{"id":..,"error":..}` line and the stream continues.
pub fn serve<R: BufRead, W: Write>(reader: R, mut writer: W, generator: &mut dyn RegionGenerator) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let out = match answer(&line, generator) {
            Ok(resp) => serde_json::to_string(&resp),
            Err((id, error)) => serde_json::to_string(&WireError { id, error: &error }),
        }
        .expect("response serializes");
        writer.write_all(out.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heuristic::OracleCorridor;
    use std::io::Cursor;
    use std::net::TcpListener;

    #[test]
    fn request_line_layout() {
        let mut map = StaticMap::empty(3, 2, 0.1).unwrap();
        map.set_prob(Cell::new(1, 0), 1.0);
        let line = serde_json::to_string(&WireRequest::new(7, &map, Cell::new(0, 1), Cell::new(2, 1))).unwrap();
        assert_eq!(line, r#"{"id":7,"width":3,"height":2,"start":[0,1],"goal":[2,1],"grid":"AAEAAAAA"}"#);
        assert_eq!(decode_grid("AAEAAAAA", 3, 2).unwrap(), vec![0, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn response_validation() {
        let map = StaticMap::empty(4, 4, 1.0).unwrap();
        assert_eq!(parse_response(r#"{"id":3,"cells":[[0,0],[3,3]]}"#, 3, &map).unwrap(), vec![Cell::new(0, 0), Cell::new(3, 3)]);
        assert!(parse_response(r#"{"id":4,"cells":[]}"#, 3, &map).is_err());
        assert!(parse_response(r#"{"id":3,"cells":[[4,0]]}"#, 3, &map).is_err());
        assert!(parse_response(r#"{"id":3,"cells":[[0,0]"#, 3, &map).is_err());
        assert!(parse_response(r#"{"id":3,"error":"x"}"#, 3, &map).is_err());
    }

    #[test]
    fn server_survives_garbage() {
        let map = StaticMap::empty(5, 5, 1.0).unwrap();
        let good = serde_json::to_string(&WireRequest::new(42, &map, Cell::new(0, 0), Cell::new(4, 0))).unwrap();
        let input = format!("{{\"id\":1,\"wid\n{good}\n{{\"id\":9,\"width\":5}}\n");
        let mut out = Vec::new();
        let mut oracle = OracleCorridor { clearance_cells: 0, corridor_radius_cells: 0 };
        serve(Cursor::new(input), &mut out, &mut oracle).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("\"error\""));
        let resp: WireResponse = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(resp.id, 42);
        assert_eq!(resp.cells.len(), 5);
        assert!(lines[2].starts_with("{\"id\":9,"));
    }

    #[test]
    fn tcp_roundtrip_matches_oracle() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let server = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            serve(reader, stream, &mut OracleCorridor::default()).unwrap();
        });
        let mut map = StaticMap::empty(30, 30, 0.1).unwrap();
        for y in 0..18 {
            map.set_prob(Cell::new(15, y), 1.0);
        }
        let mut client = ExternalModel::connect(&Transport::Tcp { addr }, Duration::from_secs(5)).unwrap();
        let (s, g) = (Cell::new(4, 4), Cell::new(25, 4));
        let remote = client.generate(&map, s, g).unwrap();
        let local = OracleCorridor::default().generate(&map, s, g).unwrap();
        assert!(!local.is_empty());
        assert_eq!(remote, local);
        drop(client);
        server.join().unwrap();
    }
}
