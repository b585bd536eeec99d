//! Child-process objective speaking the `merge-bbo/1` JSON-lines protocol.
//!
//! On startup the evaluator prints one handshake line
//! `{"protocol": "merge-bbo/1", "space": {"n_models": N, "n_layers": L}}`.
//! Each request is one line `{"id", "z", "x", "meta"}` on its stdin, and it
//! answers with one line `{"id", "objective" | "error", "score"?, "aux"?}` in
//! request order. Closing stdin asks the evaluator to exit.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Concurrency, Objective};
use crate::error::{Error, Result};
use crate::space::{BinaryMask, EvalResult, MixedSpace, ScalingVector, ACTIVE_LAYER_COUNT};

pub const PROTOCOL: &str = "merge-bbo/1";

const SHUTDOWN_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceMeta {
    pub n_models: usize,
    pub n_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub space: SpaceMeta,
    pub objective_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub id: i64,
    pub z: BinaryMask,
    pub x: ScalingVector,
    pub meta: RequestMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    #[serde(default)]
    pub space: Option<SpaceMeta>,
}

impl EvalResponse {
    /// Converts a response to request `expected_id` into an evaluation result.
    pub fn into_result(self, expected_id: i64, m: usize) -> Result<EvalResult> {
        if self.id != expected_id {
            return Err(Error::EvaluatorFailure(format!(
                "response id {} does not match request id {expected_id}",
                self.id
            )));
        }
        match (self.objective, self.error) {
            (Some(_), Some(_)) => Err(Error::EvaluatorFailure(
                "response carries both objective and error".into(),
            )),
            (None, Some(msg)) => Err(Error::EvaluatorFailure(msg)),
            (None, None) => Err(Error::EvaluatorFailure("response carries no objective".into())),
            (Some(objective), None) => {
                if let Some(s) = self.score {
                    if !(0.0..=1.0).contains(&s) {
                        return Err(Error::EvaluatorFailure(format!("score {s} outside [0, 1]")));
                    }
                }
                let mut result = EvalResult::new(objective);
                result.score = self.score;
                result.aux = self.aux.unwrap_or_default();
                result
                    .aux
                    .entry(ACTIVE_LAYER_COUNT.to_owned())
                    .or_insert(m as f64);
                Ok(result)
            }
        }
    }
}

#[derive(Debug)]
struct Session {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
    next_id: i64,
    line: String,
}

impl Session {
    fn read_line(&mut self) -> Result<&str> {
        self.line.clear();
        let n = self.stdout.read_line(&mut self.line)?;
        if n == 0 {
            return Err(Error::EvaluatorFailure("evaluator closed its output".into()));
        }
        Ok(self.line.trim_end())
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let deadline = Instant::now() + SHUTDOWN_GRACE;
        while Instant::now() < deadline {
            match self.child.try_wait() {
                Ok(Some(_)) | Err(_) => return,
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug)]
pub struct ExternalObjective {
    objective_id: String,
    space: MixedSpace,
    argv: Vec<String>,
    session: Mutex<Session>,
}

impl ExternalObjective {
    /// Launches `argv` and waits for its handshake.
    pub fn spawn(argv: &[String], space: MixedSpace, objective_id: &str) -> Result<Self> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| Error::Config("empty evaluator command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Config(format!("cannot launch evaluator `{program}`: {e}")))?;
        let stdin = child.stdin.take().map(BufWriter::new);
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut session = Session {
            child,
            stdin,
            stdout,
            next_id: 1,
            line: String::new(),
        };

        let handshake: Handshake = serde_json::from_str(session.read_line()?)
            .map_err(|e| Error::EvaluatorFailure(format!("bad handshake: {e}")))?;
        if handshake.protocol != PROTOCOL {
            return Err(Error::Config(format!(
                "evaluator speaks `{}`, expected `{PROTOCOL}`",
                handshake.protocol
            )));
        }
        if let Some(s) = handshake.space {
            if s.n_models != space.n_models() || s.n_layers != space.n_layers() {
                return Err(Error::Config(format!(
                    "evaluator space {}x{} does not match requested {}x{}",
                    s.n_models,
                    s.n_layers,
                    space.n_models(),
                    space.n_layers()
                )));
            }
        }

        Ok(Self {
            objective_id: objective_id.to_owned(),
            space,
            argv: argv.to_vec(),
            session: Mutex::new(session),
        })
    }

    pub fn argv(&self) -> &[String] {
        &self.argv
    }
}

impl Objective for ExternalObjective {
    fn id(&self) -> &str {
        &self.objective_id
    }

    fn space(&self) -> &MixedSpace {
        &self.space
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }

    fn evaluate_point(&self, z: &BinaryMask, x: &ScalingVector) -> Result<EvalResult> {
        let mut session = self.session.lock().unwrap_or_else(|p| p.into_inner());
        let id = session.next_id;
        session.next_id += 1;
        let request = EvalRequest {
            id,
            z: z.clone(),
            x: x.clone(),
            meta: RequestMeta {
                space: SpaceMeta {
                    n_models: self.space.n_models(),
                    n_layers: self.space.n_layers(),
                },
                objective_id: self.objective_id.clone(),
            },
        };
        let stdin = session
            .stdin
            .as_mut()
            .ok_or_else(|| Error::EvaluatorFailure("evaluator input closed".into()))?;
        serde_json::to_writer(&mut *stdin, &request)?;
        stdin
            .write_all(b"\n")
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::EvaluatorFailure(format!("cannot write request: {e}")))?;

        let response: EvalResponse = serde_json::from_str(session.read_line()?)
            .map_err(|e| Error::EvaluatorFailure(format!("unparsable response: {e}")))?;
        response.into_result(id, z.active_count())
    }
}
