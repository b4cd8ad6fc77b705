//! Runs the external DICOM to NIfTI converter as a child process.

use std::io::{self, Read};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use super::ConversionError;

/// Captured converter output is cut to this many bytes.
pub const OUTPUT_CAPTURE_LIMIT: usize = 64 * 1024;

/// Fixed flags: BIDS sidecar on, gzip on, `<description>_<series number>` names.
pub const BASE_ARGS: [&str; 6] = ["-b", "y", "-z", "y", "-f", "%d_%s"];

pub(crate) fn build_command(
    executable: &Path,
    extra_args: &[String],
    dicom_dir: &Path,
    work_dir: &Path,
) -> Command {
    let mut cmd = Command::new(executable);
    cmd.args(BASE_ARGS)
        .args(extra_args)
        .arg("-o")
        .arg(work_dir)
        .arg(dicom_dir);
    cmd
}

/// Runs the converter once over `dicom_dir` and returns the wall time spent.
pub(crate) fn run(
    executable: &Path,
    extra_args: &[String],
    dicom_dir: &Path,
    work_dir: &Path,
    timeout: Duration,
) -> Result<Duration, ConversionError> {
    let mut cmd = build_command(executable, extra_args, dicom_dir, work_dir);
    cmd.stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());

    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ConversionError::ConverterNotFound(executable.to_path_buf()),
        _ => ConversionError::io(format!("spawning {}", executable.display()), e),
    })?;

    let stdout = child.stdout.take().map(|s| thread::spawn(move || read_capped(s)));
    let stderr = child.stderr.take().map(|s| thread::spawn(move || read_capped(s)));

    let status = match child
        .wait_timeout(timeout)
        .map_err(|e| ConversionError::io("waiting for converter", e))?
    {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ConversionError::Timeout {
                seconds: timeout.as_secs_f64(),
            });
        }
    };
    let elapsed = started.elapsed();

    let join = |h: Option<thread::JoinHandle<Vec<u8>>>| h.and_then(|h| h.join().ok()).unwrap_or_default();
    let out = join(stdout);
    let err = join(stderr);

    if status.success() {
        return Ok(elapsed);
    }
    let mut captured = out;
    if !captured.is_empty() && !err.is_empty() {
        captured.push(b'\n');
    }
    captured.extend_from_slice(&err);
    captured.truncate(OUTPUT_CAPTURE_LIMIT);
    Err(ConversionError::ConverterFailed {
        exit_code: status.code(),
        output: String::from_utf8_lossy(&captured).into_owned(),
    })
}

// Keeps the first OUTPUT_CAPTURE_LIMIT bytes and drains the rest so the
// child never blocks on a full pipe.
fn read_capped(mut source: impl Read) -> Vec<u8> {
    let mut kept = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        match source.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = OUTPUT_CAPTURE_LIMIT.saturating_sub(kept.len());
                kept.extend_from_slice(&chunk[..n.min(room)]);
            }
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_order() {
        let cmd = build_command(
            Path::new("dcm2niix"),
            &["-x".into(), "n".into()],
            Path::new("/in"),
            Path::new("/work"),
        );
        let args: Vec<_> = cmd.get_args().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(
            args,
            ["-b", "y", "-z", "y", "-f", "%d_%s", "-x", "n", "-o", "/work", "/in"]
        );
    }

    #[test]
    fn capped_reader_truncates() {
        let data = vec![b'a'; OUTPUT_CAPTURE_LIMIT * 2 + 17];
        assert_eq!(read_capped(&data[..]).len(), OUTPUT_CAPTURE_LIMIT);
        assert_eq!(read_capped(&b"short"[..]), b"short");
    }
}
