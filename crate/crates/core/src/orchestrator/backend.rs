//! Backend invocation: external subprocesses or the in-process simulator.

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::simbackend::serve_request_dir;
use crate::types::DatasetManifest;

/// Command value selecting the in-process simulator.
pub const BUILTIN_SIM: &str = "builtin:sim";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("cannot parse backend command {command:?}: {message}")]
    Command { command: String, message: String },
    #[error("failed to start backend {program:?}: {message}")]
    Spawn { program: String, message: String },
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend exited with {status}: {stderr}")]
    Exit { status: String, stderr: String },
    #[error("{0}")]
    Internal(String),
}

/// Something that answers a request directory (see the protocol module).
pub trait Backend: Sync {
    fn name(&self) -> &str;
    fn execute(&self, request_dir: &Path) -> Result<(), BackendError>;
}

/// The simulator served in-process through the same request-directory code
/// path as the standalone binary.
pub struct InProcessSim {
    manifest: Option<Arc<DatasetManifest>>,
}

impl InProcessSim {
    /// `manifest` avoids reloading the dataset named in every request.
    pub fn new(manifest: Option<Arc<DatasetManifest>>) -> Self {
        Self { manifest }
    }
}

impl Backend for InProcessSim {
    fn name(&self) -> &str {
        BUILTIN_SIM
    }

    fn execute(&self, request_dir: &Path) -> Result<(), BackendError> {
        serve_request_dir(request_dir, self.manifest.as_deref())
            .map_err(|e| BackendError::Internal(e.to_string()))
    }
}

/// Runs `<argv...> --request <dir>` and waits for it to exit.
pub struct SubprocessBackend {
    command: String,
    argv: Vec<String>,
    timeout: Duration,
}

impl SubprocessBackend {
    pub fn new(command: &str, timeout: Duration) -> Result<Self, BackendError> {
        let argv = shell_words::split(command).map_err(|e| BackendError::Command {
            command: command.into(),
            message: e.to_string(),
        })?;
        if argv.is_empty() {
            return Err(BackendError::Command {
                command: command.into(),
                message: "empty command".into(),
            });
        }
        Ok(Self {
            command: command.into(),
            argv,
            timeout,
        })
    }
}

const STDERR_FILE: &str = "backend.stderr";

impl Backend for SubprocessBackend {
    fn name(&self) -> &str {
        &self.command
    }

    fn execute(&self, request_dir: &Path) -> Result<(), BackendError> {
        let stderr_path = request_dir.join(STDERR_FILE);
        let stderr = fs::File::create(&stderr_path).map_err(|e| BackendError::Spawn {
            program: self.argv[0].clone(),
            message: e.to_string(),
        })?;
        let mut child = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .arg("--request")
            .arg(request_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .spawn()
            .map_err(|e| BackendError::Spawn {
                program: self.argv[0].clone(),
                message: e.to_string(),
            })?;
        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(BackendError::Timeout(self.timeout));
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(BackendError::Internal(e.to_string())),
            }
        };
        if !status.success() {
            let text = fs::read_to_string(&stderr_path).unwrap_or_default();
            let tail: Vec<&str> = text.lines().rev().take(5).collect();
            return Err(BackendError::Exit {
                status: status.to_string(),
                stderr: tail.into_iter().rev().collect::<Vec<_>>().join(" | "),
            });
        }
        Ok(())
    }
}

/// Backend for a configured command string.
pub fn backend_from_command(
    command: &str,
    timeout: Duration,
    manifest: Option<Arc<DatasetManifest>>,
) -> Result<Box<dyn Backend>, BackendError> {
    if command.trim() == BUILTIN_SIM {
        Ok(Box::new(InProcessSim::new(manifest)))
    } else {
        Ok(Box::new(SubprocessBackend::new(command, timeout)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_parsing() {
        assert!(SubprocessBackend::new("", Duration::from_secs(1)).is_err());
        assert!(SubprocessBackend::new("'unterminated", Duration::from_secs(1)).is_err());
        let b = SubprocessBackend::new("python3 'my adapter.py' -v", Duration::from_secs(1)).unwrap();
        assert_eq!(b.argv, vec!["python3", "my adapter.py", "-v"]);
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_failures() {
        let dir = tempfile::tempdir().unwrap();
        let slow = SubprocessBackend::new("sh -c 'sleep 5' x", Duration::from_millis(100)).unwrap();
        assert!(matches!(slow.execute(dir.path()), Err(BackendError::Timeout(_))));
        let failing = SubprocessBackend::new("sh -c 'echo oops >&2; exit 3' x", Duration::from_secs(5)).unwrap();
        match failing.execute(dir.path()) {
            Err(BackendError::Exit { stderr, .. }) => assert_eq!(stderr, "oops"),
            other => panic!("unexpected {other:?}"),
        }
        let missing = SubprocessBackend::new("/nonexistent/backend", Duration::from_secs(1)).unwrap();
        assert!(matches!(missing.execute(dir.path()), Err(BackendError::Spawn { .. })));
    }
}
