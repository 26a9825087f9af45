//! Out-of-process mask generator / propagator / embedder.
//!
//! One JSON object per line in each direction. Requests carry an `op` field
//! (`hello`, `generate`, `propagate`, `embed`); responses carry `ok` and
//! either the payload or an `error` string. Frames travel as base64 RGB8,
//! masks as base64 row-major bitmaps packed MSB-first.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::{Frame, Mask, MaskGenerator, MaskPropagator, PixelEmbedder};

pub const ADAPTER_PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("failed to start adapter: {0}")]
    Spawn(std::io::Error),
    #[error("adapter i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("adapter closed its output")]
    Closed,
    #[error("malformed adapter response: {0}")]
    Protocol(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("adapter error: {0}")]
    Remote(String),
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct SubprocessAdapter {
    name: String,
    dim: usize,
    pipe: Mutex<Pipe>,
}

#[derive(Deserialize)]
struct Hello {
    version: u32,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    dim: usize,
}

#[derive(Deserialize)]
struct WireObject {
    id: u32,
    mask: String,
}

fn frame_json(f: &Frame) -> Value {
    json!({"index": f.index, "width": f.width, "height": f.height, "rgb": B64.encode(&f.rgb)})
}

fn decode_mask(s: &str, width: usize, height: usize) -> Result<Mask, AdapterError> {
    let bytes = B64
        .decode(s)
        .map_err(|e| AdapterError::Protocol(format!("mask base64: {e}")))?;
    Mask::unpack(width, height, &bytes).ok_or_else(|| {
        AdapterError::Protocol(format!("mask has {} bytes for {width}x{height}", bytes.len()))
    })
}

impl SubprocessAdapter {
    /// Starts `program args...` and performs the version handshake.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, AdapterError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(AdapterError::Spawn)?;
        let stdin = child.stdin.take().ok_or(AdapterError::Closed)?;
        let stdout = BufReader::new(child.stdout.take().ok_or(AdapterError::Closed)?);
        let mut pipe = Pipe {
            child,
            stdin,
            stdout,
        };
        let reply = Self::exchange(
            &mut pipe,
            &json!({"op": "hello", "version": ADAPTER_PROTOCOL_VERSION}),
        )
        .map_err(|e| AdapterError::Handshake(e.to_string()))?;
        let hello: Hello = serde_json::from_value(reply)
            .map_err(|e| AdapterError::Handshake(format!("bad hello reply: {e}")))?;
        if hello.version != ADAPTER_PROTOCOL_VERSION {
            let _ = pipe.child.kill();
            return Err(AdapterError::Handshake(format!(
                "adapter speaks version {}, expected {ADAPTER_PROTOCOL_VERSION}",
                hello.version
            )));
        }
        Ok(Self {
            name: hello.name.unwrap_or_else(|| program.to_string()),
            dim: hello.dim,
            pipe: Mutex::new(pipe),
        })
    }

    fn exchange(pipe: &mut Pipe, request: &Value) -> Result<Value, AdapterError> {
        let mut line = serde_json::to_string(request).expect("json value serializes");
        line.push('\n');
        pipe.stdin.write_all(line.as_bytes())?;
        pipe.stdin.flush()?;
        let mut reply = String::new();
        if pipe.stdout.read_line(&mut reply)? == 0 {
            return Err(AdapterError::Closed);
        }
        let v: Value =
            serde_json::from_str(&reply).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        match v.get("ok").and_then(Value::as_bool) {
            Some(true) => Ok(v),
            Some(false) => Err(AdapterError::Remote(
                v.get("error")
                    .and_then(Value::as_str)
                    .unwrap_or("unspecified")
                    .to_string(),
            )),
            None => Err(AdapterError::Protocol("missing `ok` field".into())),
        }
    }

    fn request(&self, request: &Value) -> Result<Value, AdapterError> {
        let mut pipe = self.pipe.lock().unwrap_or_else(|e| e.into_inner());
        Self::exchange(&mut pipe, request)
    }

    fn generate_masks(&self, frame: &Frame) -> Result<Vec<Mask>, AdapterError> {
        let v = self.request(&json!({"op": "generate", "frame": frame_json(frame)}))?;
        let masks: Vec<String> = serde_json::from_value(v["masks"].clone())
            .map_err(|e| AdapterError::Protocol(e.to_string()))?;
        masks
            .iter()
            .map(|m| decode_mask(m, frame.width, frame.height))
            .collect()
    }

    fn propagate_masks(
        &self,
        objects: &[(u32, Mask)],
        from: &Frame,
        to: &Frame,
    ) -> Result<Vec<(u32, Mask)>, AdapterError> {
        let objs: Vec<Value> = objects
            .iter()
            .map(|(id, m)| json!({"id": id, "mask": B64.encode(m.pack())}))
            .collect();
        let v = self.request(&json!({
            "op": "propagate",
            "from": frame_json(from),
            "to": frame_json(to),
            "objects": objs,
        }))?;
        let out: Vec<WireObject> = serde_json::from_value(v["objects"].clone())
            .map_err(|e| AdapterError::Protocol(e.to_string()))?;
        out.into_iter()
            .map(|o| Ok((o.id, decode_mask(&o.mask, to.width, to.height)?)))
            .collect()
    }

    fn embed_mask(&self, frame: &Frame, mask: &Mask) -> Result<Vec<f32>, AdapterError> {
        let v = self.request(&json!({
            "op": "embed",
            "frame": frame_json(frame),
            "mask": B64.encode(mask.pack()),
        }))?;
        let f: Vec<f32> = serde_json::from_value(v["feature"].clone())
            .map_err(|e| AdapterError::Protocol(e.to_string()))?;
        if f.len() != self.dim {
            return Err(AdapterError::Protocol(format!(
                "feature has {} entries, adapter declared {}",
                f.len(),
                self.dim
            )));
        }
        Ok(f)
    }
}

impl Drop for SubprocessAdapter {
    fn drop(&mut self) {
        let pipe = self.pipe.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = pipe.child.kill();
        let _ = pipe.child.wait();
    }
}

impl MaskGenerator for SubprocessAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&mut self, frame: &Frame) -> Result<Vec<Mask>, String> {
        self.generate_masks(frame).map_err(|e| e.to_string())
    }
}

impl MaskPropagator for SubprocessAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn propagate(
        &mut self,
        objects: &[(u32, Mask)],
        from: &Frame,
        to: &Frame,
    ) -> Result<Vec<(u32, Mask)>, String> {
        self.propagate_masks(objects, from, to)
            .map_err(|e| e.to_string())
    }
}

impl PixelEmbedder for SubprocessAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, frame: &Frame, mask: &Mask) -> Result<Vec<f32>, String> {
        self.embed_mask(frame, mask).map_err(|e| e.to_string())
    }
}

/// A shared adapter can act as generator and propagator at once, so one
/// process can serve every role of a collection run.
impl MaskGenerator for &SubprocessAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&mut self, frame: &Frame) -> Result<Vec<Mask>, String> {
        self.generate_masks(frame).map_err(|e| e.to_string())
    }
}

impl MaskPropagator for &SubprocessAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn propagate(
        &mut self,
        objects: &[(u32, Mask)],
        from: &Frame,
        to: &Frame,
    ) -> Result<Vec<(u32, Mask)>, String> {
        self.propagate_masks(objects, from, to)
            .map_err(|e| e.to_string())
    }
}
