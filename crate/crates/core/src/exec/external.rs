//! Out-of-process runners: `runner <model_file> <inputs_file>`, outputs on
//! stdout in tensor-exchange text, diagnostics on stderr.

use super::{ExecutionResult, TensorMap};
use crate::exchange::read_tensors;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("empty runner command")]
    EmptyCommand,
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("could not start runner: {0}")]
    Spawn(std::io::Error),
    #[error("runner output is not tensor-exchange text: {0}")]
    ProtocolViolation(String),
}

/// Runs an external backend. A nonzero exit status or a timeout becomes a
/// crash result carrying the runner's standard error.
pub fn run_external(
    model_file: &Path,
    inputs_file: &Path,
    runner_cmd: &str,
    timeout: Duration,
) -> Result<ExecutionResult, ExternalError> {
    for f in [model_file, inputs_file] {
        if !f.is_file() {
            return Err(ExternalError::MissingFile(f.display().to_string()));
        }
    }
    let mut words = runner_cmd.split_whitespace();
    let program = words.next().ok_or(ExternalError::EmptyCommand)?;
    let start = Instant::now();
    let mut child = Command::new(program)
        .args(words)
        .arg(model_file)
        .arg(inputs_file)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(ExternalError::Spawn)?;

    let drain = |mut src: Box<dyn Read + Send>| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = src.read_to_end(&mut buf);
            String::from_utf8_lossy(&buf).into_owned()
        })
    };
    let stdout = drain(Box::new(child.stdout.take().expect("piped stdout")));
    let stderr = drain(Box::new(child.stderr.take().expect("piped stderr")));

    let status = loop {
        if let Some(status) = child.try_wait().map_err(ExternalError::Spawn)? {
            break Some(status);
        }
        if start.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        thread::sleep(Duration::from_millis(5));
    };
    let out = stdout.join().unwrap_or_default();
    let err = stderr.join().unwrap_or_default();
    let elapsed = start.elapsed();

    match status {
        None => Ok(ExecutionResult::crash(
            format!("runner timed out after {} s\n{err}", timeout.as_secs_f64()),
            elapsed,
        )),
        Some(s) if !s.success() => Ok(ExecutionResult::crash(err, elapsed)),
        Some(_) => {
            let tensors = read_tensors(&out).map_err(|e| ExternalError::ProtocolViolation(e.to_string()))?;
            let outputs: TensorMap = tensors.into_iter().map(|t| (t.label().to_string(), t)).collect();
            Ok(ExecutionResult::ok(outputs, elapsed))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::write_tensors;
    use crate::tensor::Tensor;
    use std::fs;

    fn setup(script: &str) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf, String) {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("model.json");
        let inputs = dir.path().join("inputs.txt");
        fs::write(&model, "{}").unwrap();
        let x = Tensor::new("x", vec![2], vec![1.5, -2.0]).unwrap();
        fs::write(&inputs, write_tensors([&x])).unwrap();
        let runner = dir.path().join("runner.sh");
        fs::write(&runner, script).unwrap();
        let cmd = format!("sh {}", runner.display());
        (dir, model, inputs, cmd)
    }

    #[test]
    fn echo_runner_returns_inputs() {
        let (_d, m, i, cmd) = setup("cat \"$2\"\n");
        let r = run_external(&m, &i, &cmd, DEFAULT_TIMEOUT).unwrap();
        assert_eq!(r.outputs().unwrap()["x"].data(), &[1.5, -2.0]);
    }

    #[test]
    fn nonzero_exit_is_crash_with_stderr() {
        let (_d, m, i, cmd) = setup("echo 'segfault in runtime::Conv' >&2\nexit 139\n");
        let r = run_external(&m, &i, &cmd, DEFAULT_TIMEOUT).unwrap();
        assert!(r.crash_log().unwrap().contains("segfault in runtime::Conv"));
    }

    #[test]
    fn malformed_output_is_protocol_violation() {
        let (_d, m, i, cmd) = setup("echo 'x f32 2 not-a-number'\n");
        assert!(matches!(
            run_external(&m, &i, &cmd, DEFAULT_TIMEOUT),
            Err(ExternalError::ProtocolViolation(_))
        ));
    }

    #[test]
    fn timeout_is_crash() {
        let (_d, m, i, cmd) = setup("echo slow >&2\nexec sleep 5\n");
        let r = run_external(&m, &i, &cmd, Duration::from_millis(200)).unwrap();
        assert!(r.crash_log().unwrap().contains("timed out"));
    }
}
