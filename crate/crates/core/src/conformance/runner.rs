use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use super::TestCase;

/// Default cap on captured standard output.
pub const OUTPUT_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct Limits {
    pub stdout_bytes: usize,
    pub stderr_bytes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            stdout_bytes: OUTPUT_LIMIT,
            stderr_bytes: 64 * 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub truncated: bool,
    pub stdout: Vec<u8>,
    /// Last bytes written to stderr.
    pub stderr_tail: Vec<u8>,
    pub spawn_error: Option<String>,
}

/// Runs `simulator` followed by the case's flags, feeding its stdin payload
/// and enforcing the wall-clock timeout and output cap.
pub fn run_case(simulator: &[String], case: &TestCase, limits: &Limits) -> RunOutcome {
    let Some((program, base)) = simulator.split_first() else {
        return spawn_failure("empty simulator command".into());
    };
    let mut cmd = Command::new(program);
    cmd.args(base)
        .args(case.tokens())
        .stdin(if case.stdin.is_some() {
            Stdio::piped()
        } else {
            Stdio::null()
        })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let mut child = match cmd.spawn() {
        Ok(child) => child,
        Err(e) => return spawn_failure(format!("{program}: {e}")),
    };

    if let (Some(mut pipe), Some(data)) = (child.stdin.take(), case.stdin.clone()) {
        thread::spawn(move || {
            let _ = pipe.write_all(data.as_bytes());
        });
    }
    let overflow = Arc::new(AtomicBool::new(false));
    let stdout = child.stdout.take().expect("stdout is piped");
    let stderr = child.stderr.take().expect("stderr is piped");
    let out_rx = spawn_reader(stdout, limits.stdout_bytes, Some(overflow.clone()), false);
    let err_rx = spawn_reader(stderr, limits.stderr_bytes, None, true);

    let deadline = Instant::now() + Duration::from_secs_f64(case.timeout_secs);
    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) => {}
            Err(_) => break None,
        }
        if overflow.load(Ordering::SeqCst) {
            kill(&mut child);
            break child.wait().ok();
        }
        if Instant::now() >= deadline {
            timed_out = true;
            kill(&mut child);
            break child.wait().ok();
        }
        thread::sleep(Duration::from_millis(2));
    };

    let grace = Duration::from_secs(2);
    let (stdout, truncated) = out_rx.recv_timeout(grace).unwrap_or_default();
    let (stderr_tail, _) = err_rx.recv_timeout(grace).unwrap_or_default();
    RunOutcome {
        exit_code: status.and_then(|s| s.code()),
        timed_out,
        truncated: truncated || overflow.load(Ordering::SeqCst),
        stdout,
        stderr_tail,
        spawn_error: None,
    }
}

fn spawn_failure(message: String) -> RunOutcome {
    RunOutcome {
        spawn_error: Some(message),
        ..RunOutcome::default()
    }
}

/// Reads a pipe to the end. With `keep_tail`, only the last `cap` bytes are
/// kept; otherwise reading stops (and `overflow` is raised) past `cap`.
fn spawn_reader(
    mut pipe: impl Read + Send + 'static,
    cap: usize,
    overflow: Option<Arc<AtomicBool>>,
    keep_tail: bool,
) -> mpsc::Receiver<(Vec<u8>, bool)> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut data = Vec::new();
        let mut chunk = [0u8; 64 * 1024];
        let mut truncated = false;
        loop {
            let n = match pipe.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            };
            data.extend_from_slice(&chunk[..n]);
            if data.len() > cap {
                if keep_tail {
                    data.drain(..data.len() - cap);
                } else {
                    data.truncate(cap);
                    truncated = true;
                    if let Some(flag) = &overflow {
                        flag.store(true, Ordering::SeqCst);
                    }
                    break;
                }
            }
        }
        let _ = tx.send((data, truncated));
    });
    rx
}

fn kill(child: &mut Child) {
    kill_group(child);
    let _ = child.kill();
}

#[cfg(unix)]
fn kill_group(child: &Child) {
    if let Ok(pid) = i32::try_from(child.id()) {
        // SAFETY: signalling a process group we created; no memory is touched.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
}

#[cfg(not(unix))]
fn kill_group(_: &Child) {}
