//! Line-delimited JSON environment protocol over a pipe.
//!
//! Requests are `{"cmd": "reset"}` or `{"cmd": "step", "action": n}`; every
//! reply is `{"obs": <base64 H×W×3 bytes>, "reward": r, "done": d}`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use drac_core::env::{Environment, Observation, Transition};
use drac_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Request {
    Reset,
    Step { action: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub obs: String,
    pub reward: f64,
    pub done: bool,
}

impl Reply {
    pub fn encode(obs: &Observation, reward: f64, done: bool) -> Self {
        Self { obs: STANDARD.encode(&obs.pixels), reward, done }
    }

    pub fn decode(&self, size: usize) -> drac_core::Result<Observation> {
        let pixels = STANDARD
            .decode(&self.obs)
            .map_err(|e| Error::Input(format!("bad observation encoding: {e}")))?;
        if pixels.len() != size * size * 3 {
            return Err(Error::Input(format!(
                "observation has {} bytes, expected {}",
                pixels.len(),
                size * size * 3
            )));
        }
        Ok(Observation { size, pixels })
    }
}

/// An environment living in a child process.
pub struct SubprocessEnv {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    size: usize,
}

impl SubprocessEnv {
    pub fn spawn(mut command: Command, observation_size: usize) -> std::io::Result<Self> {
        let mut child = command.stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout, size: observation_size })
    }

    fn call(&mut self, request: &Request) -> drac_core::Result<Reply> {
        let io = |e: std::io::Error| Error::State(format!("environment process: {e}"));
        let line = serde_json::to_string(request).map_err(|e| Error::Input(e.to_string()))?;
        self.stdin.write_all(line.as_bytes()).map_err(io)?;
        self.stdin.write_all(b"\n").map_err(io)?;
        self.stdin.flush().map_err(io)?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply).map_err(io)? == 0 {
            return Err(Error::State("environment process closed its output".into()));
        }
        serde_json::from_str(&reply).map_err(|e| Error::Input(format!("bad reply {reply:?}: {e}")))
    }
}

impl Environment for SubprocessEnv {
    fn observation_size(&self) -> usize {
        self.size
    }

    fn reset(&mut self) -> drac_core::Result<Observation> {
        self.call(&Request::Reset)?.decode(self.size)
    }

    fn step(&mut self, action: usize) -> drac_core::Result<Transition> {
        let reply = self.call(&Request::Step { action })?;
        Ok(Transition { observation: reply.decode(self.size)?, reward: reply.reward, done: reply.done })
    }
}

impl Drop for SubprocessEnv {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Answers requests for `env` until the input closes.
pub fn serve<E: Environment, R: BufRead, W: Write>(env: &mut E, input: R, mut output: W) -> anyhow::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line)? {
            Request::Reset => Reply::encode(&env.reset()?, 0.0, false),
            Request::Step { action } => {
                let t = env.step(action)?;
                Reply::encode(&t.observation, t.reward, t.done)
            }
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
