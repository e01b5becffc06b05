//! On-disk persistence for a kernel.
//!
//! Layout of a data directory:
//!
//! ```text
//! config.json              kernel config, fixed at creation
//! events.jsonl             one Event per line, gapless seq
//! snapshots/<seq>.json     periodic Snapshot files
//! LOCK                     held while a process owns the directory
//! ```
//!
//! A torn final line (no trailing newline, not parseable) is treated as an
//! interrupted append and dropped on open. Any other damage is `CorruptLog`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::assets::SkillExecutor;
use crate::error::{Error, Result};
use crate::kernel::{Event, Kernel, KernelConfig, Snapshot};

const CONFIG: &str = "config.json";
const EVENTS: &str = "events.jsonl";
const SNAPSHOTS: &str = "snapshots";
const LOCK: &str = "LOCK";

fn io(context: &Path, e: std::io::Error) -> Error {
    Error::Storage(format!("{}: {e}", context.display()))
}

/// Parse an event log. Returns the events and the byte length of the valid
/// prefix (shorter than the input only when the last line is torn).
pub fn parse_log(text: &str) -> Result<(Vec<Event>, usize)> {
    let mut events = Vec::new();
    let mut offset = 0;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let complete = line.ends_with('\n');
        let body = line.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() {
            offset += line.len();
            continue;
        }
        match serde_json::from_str::<Event>(body) {
            Ok(event) => events.push(event),
            Err(_) if !complete => return Ok((events, offset)),
            Err(e) => {
                return Err(Error::CorruptLog(format!(
                    "line {} is not a valid event: {e}",
                    n + 1
                )))
            }
        }
        offset += line.len();
    }
    Ok((events, offset))
}

/// Read every event of a log file.
pub fn read_log(path: &Path) -> Result<Vec<Event>> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    Ok(parse_log(&text)?.0)
}

pub fn write_log(path: &Path, events: &[Event]) -> Result<()> {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io(path, e))
}

/// Exclusive ownership of a data directory. Released on drop.
#[derive(Debug)]
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::DataDirLocked(dir.display().to_string()))
            }
            Err(e) => Err(io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A kernel bound to a data directory. Every applied event is appended and
/// flushed before the caller sees the outcome.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: File,
    snapshot_every: u64,
    _lock: DirLock,
}

impl Store {
    /// Open (or initialise) `dir` and recover the kernel it holds. A config
    /// already on disk wins over `config`.
    pub fn open(
        dir: &Path,
        config: KernelConfig,
        executor: Arc<dyn SkillExecutor>,
        snapshot_every: u64,
    ) -> Result<(Store, Kernel)> {
        fs::create_dir_all(dir.join(SNAPSHOTS)).map_err(|e| io(dir, e))?;
        let lock = DirLock::acquire(dir)?;

        let config_path = dir.join(CONFIG);
        let config = if config_path.exists() {
            let text = fs::read_to_string(&config_path).map_err(|e| io(&config_path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::CorruptLog(format!("bad {CONFIG}: {e}")))?
        } else {
            let text = serde_json::to_string_pretty(&config).expect("config serializes");
            fs::write(&config_path, text).map_err(|e| io(&config_path, e))?;
            config
        };

        let log_path = dir.join(EVENTS);
        let text = match fs::read_to_string(&log_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(&log_path, e)),
        };
        let (events, valid) = parse_log(&text)?;
        if valid < text.len() {
            let f = OpenOptions::new().write(true).open(&log_path).map_err(|e| io(&log_path, e))?;
            f.set_len(valid as u64).map_err(|e| io(&log_path, e))?;
        }

        let kernel = match latest_snapshot(dir, events.len() as u64)? {
            Some(snap) => {
                let from = snap.as_of_seq as usize;
                Kernel::restore(config, executor, snap, &events[from..])?
            }
            None => Kernel::replay_with_executor(config, executor, &events)?,
        };

        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io(&log_path, e))?;
        Ok((
            Store {
                dir: dir.to_path_buf(),
                log,
                snapshot_every,
                _lock: lock,
            },
            kernel,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Durably append one event; write a snapshot when due.
    pub fn append(&mut self, event: &Event, kernel: &Kernel) -> Result<()> {
        let path = self.dir.join(EVENTS);
        let mut line = event.to_json_line();
        line.push('\n');
        self.log.write_all(line.as_bytes()).map_err(|e| io(&path, e))?;
        self.log.sync_data().map_err(|e| io(&path, e))?;
        if self.snapshot_every > 0 && event.seq.is_multiple_of(self.snapshot_every) {
            self.write_snapshot(&kernel.snapshot())?;
        }
        Ok(())
    }

    pub fn write_snapshot(&self, snapshot: &Snapshot) -> Result<()> {
        let path = self
            .dir
            .join(SNAPSHOTS)
            .join(format!("{:012}.json", snapshot.as_of_seq));
        let tmp = path.with_extension("tmp");
        let text = serde_json::to_vec(snapshot).expect("snapshot serializes");
        fs::write(&tmp, text).map_err(|e| io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io(&path, e))
    }

    pub fn events(&self) -> Result<Vec<Event>> {
        let path = self.dir.join(EVENTS);
        let f = File::open(&path).map_err(|e| io(&path, e))?;
        let mut events = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::CorruptLog(format!("line {}: {e}", n + 1)))?,
            );
        }
        Ok(events)
    }
}

/// Newest snapshot not beyond `max_seq`. Unreadable snapshot files are
/// skipped, since the log alone is authoritative.
fn latest_snapshot(dir: &Path, max_seq: u64) -> Result<Option<Snapshot>> {
    let snap_dir = dir.join(SNAPSHOTS);
    let mut names: Vec<_> = fs::read_dir(&snap_dir)
        .map_err(|e| io(&snap_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    for path in names.into_iter().rev() {
        let Ok(bytes) = fs::read(&path) else { continue };
        let Ok(snap) = serde_json::from_slice::<Snapshot>(&bytes) else { continue };
        if snap.as_of_seq <= max_seq && snap.verify().is_ok() {
            return Ok(Some(snap));
        }
    }
    Ok(None)
}
