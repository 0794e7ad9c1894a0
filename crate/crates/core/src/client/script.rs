//! Line-oriented request scripts.
//!
//! ```text
//! # comment
//! load kernels/multiply.spv
//! pipeline @last main            # or a 64-digit module hash
//! alloc 1 262144
//! write 1 0 a.bin
//! dispatch @last 1024 1 1 0:0:1 0:1:2
//! read 2 0 262144 > out.bin      # without "> file" the bytes print as hex
//! sleep 50
//! ```
//!
//! Relative paths are resolved against the script's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::{ClientError, OffloadClient, Origin};
use crate::spirv::ContentHash;
use crate::wire::BindingEntry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ref<T> {
    Last,
    Id(T),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Load(PathBuf),
    Pipeline { module: Ref<ContentHash>, entry: String },
    Alloc { id: u64, size: u64 },
    Write { id: u64, offset: u64, file: PathBuf },
    Dispatch { pipeline: Ref<u64>, groups: [u32; 3], bindings: Vec<BindingEntry> },
    Read { id: u64, offset: u64, len: u64, to: Option<PathBuf> },
    Sleep(Duration),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    /// Commands with their 1-based line numbers.
    pub commands: Vec<(usize, Command)>,
}

fn err(line: usize, message: impl Into<String>) -> ClientError {
    ClientError::Script {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T, ClientError> {
    s.parse().map_err(|_| err(line, format!("bad {what} {s:?}")))
}

fn parse_binding(line: usize, s: &str) -> Result<BindingEntry, ClientError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [set, binding, id] = parts[..] else {
        return Err(err(line, format!("binding {s:?} is not set:binding:id")));
    };
    Ok(BindingEntry {
        set: num(line, "set", set)?,
        binding: num(line, "binding", binding)?,
        buffer_id: num(line, "buffer id", id)?,
    })
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ClientError> {
        let mut commands = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let code = raw.split('#').next().unwrap_or("").trim();
            if code.is_empty() {
                continue;
            }
            let words: Vec<&str> = code.split_whitespace().collect();
            let argc = words.len() - 1;
            let want = |n: usize| {
                if argc == n {
                    Ok(())
                } else {
                    Err(err(line, format!("{} takes {n} arguments, got {argc}", words[0])))
                }
            };
            let cmd = match words[0] {
                "load" => {
                    want(1)?;
                    Command::Load(words[1].into())
                }
                "pipeline" => {
                    want(2)?;
                    let module = match words[1] {
                        "@last" => Ref::Last,
                        h => Ref::Id(ContentHash::from_hex(h).ok_or_else(|| err(line, format!("bad module hash {h:?}")))?),
                    };
                    Command::Pipeline {
                        module,
                        entry: words[2].to_string(),
                    }
                }
                "alloc" => {
                    want(2)?;
                    Command::Alloc {
                        id: num(line, "buffer id", words[1])?,
                        size: num(line, "size", words[2])?,
                    }
                }
                "write" => {
                    want(3)?;
                    Command::Write {
                        id: num(line, "buffer id", words[1])?,
                        offset: num(line, "offset", words[2])?,
                        file: words[3].into(),
                    }
                }
                "dispatch" => {
                    if argc < 4 {
                        return Err(err(line, "dispatch takes <pipeline> <gx> <gy> <gz> [set:binding:id...]"));
                    }
                    let pipeline = match words[1] {
                        "@last" => Ref::Last,
                        p => Ref::Id(num(line, "pipeline", p)?),
                    };
                    Command::Dispatch {
                        pipeline,
                        groups: [
                            num(line, "group count", words[2])?,
                            num(line, "group count", words[3])?,
                            num(line, "group count", words[4])?,
                        ],
                        bindings: words[5..]
                            .iter()
                            .map(|b| parse_binding(line, b))
                            .collect::<Result<_, _>>()?,
                    }
                }
                "read" => {
                    let to = match argc {
                        3 => None,
                        5 if words[4] == ">" => Some(words[5].into()),
                        _ => return Err(err(line, "read takes <id> <offset> <len> [> file]")),
                    };
                    Command::Read {
                        id: num(line, "buffer id", words[1])?,
                        offset: num(line, "offset", words[2])?,
                        len: num(line, "length", words[3])?,
                        to,
                    }
                }
                "sleep" => {
                    want(1)?;
                    Command::Sleep(Duration::from_millis(num(line, "milliseconds", words[1])?))
                }
                other => return Err(err(line, format!("unknown command {other:?}"))),
            };
            commands.push((line, cmd));
        }
        Ok(Script { commands })
    }
}

/// What one script step produced.
#[derive(Debug, Clone)]
pub enum Step {
    Loaded(ContentHash),
    Pipeline(u64),
    Allocated(u64),
    Wrote { id: u64, bytes: usize },
    Dispatched { origin: Origin, staleness: Option<u64>, total_ns: u64 },
    Read { id: u64, data: Vec<u8>, origin: Origin, staleness: Option<u64>, to: Option<PathBuf> },
    Slept(Duration),
}

fn origin_tag(origin: Origin, staleness: Option<u64>) -> String {
    match (origin, staleness) {
        (Origin::Remote, _) => "remote".into(),
        (Origin::LocalDegraded, Some(e)) => format!("local-degraded stale-since-sync={e}"),
        (Origin::LocalDegraded, None) => "local-degraded".into(),
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Loaded(h) => write!(f, "loaded {h}"),
            Step::Pipeline(id) => write!(f, "pipeline {id}"),
            Step::Allocated(id) => write!(f, "alloc {id}"),
            Step::Wrote { id, bytes } => write!(f, "write {id} {bytes}"),
            Step::Dispatched {
                origin,
                staleness,
                total_ns,
            } => write!(f, "dispatch {} {total_ns}ns", origin_tag(*origin, *staleness)),
            Step::Read {
                id,
                data,
                origin,
                staleness,
                to,
            } => {
                write!(f, "read {id} {} {}", data.len(), origin_tag(*origin, *staleness))?;
                match to {
                    Some(p) => write!(f, " > {}", p.display()),
                    None => write!(f, " {}", hex::encode(data)),
                }
            }
            Step::Slept(d) => write!(f, "sleep {}", d.as_millis()),
        }
    }
}

/// Executes `script` step by step, reporting each step to `report`.
pub fn run_script(
    client: &mut OffloadClient,
    script: &Script,
    base: &Path,
    mut report: impl FnMut(&Step),
) -> Result<(), ClientError> {
    let mut last_module: Option<ContentHash> = None;
    let mut last_pipeline: Option<u64> = None;
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let io = |line: usize, p: &Path, e: std::io::Error| err(line, format!("{}: {e}", p.display()));
    for (line, cmd) in &script.commands {
        let line = *line;
        let step = match cmd {
            Command::Load(path) => {
                let path = resolve(path);
                let bytes = std::fs::read(&path).map_err(|e| io(line, &path, e))?;
                let h = client.load_module(&bytes)?;
                last_module = Some(h);
                Step::Loaded(h)
            }
            Command::Pipeline { module, entry } => {
                let h = match module {
                    Ref::Last => last_module.ok_or_else(|| err(line, "no module loaded yet"))?,
                    Ref::Id(h) => *h,
                };
                let id = client.create_pipeline(h, entry)?;
                last_pipeline = Some(id);
                Step::Pipeline(id)
            }
            Command::Alloc { id, size } => {
                client.alloc_buffer(*id, *size)?;
                Step::Allocated(*id)
            }
            Command::Write { id, offset, file } => {
                let path = resolve(file);
                let data = std::fs::read(&path).map_err(|e| io(line, &path, e))?;
                client.write_buffer(*id, *offset, &data)?;
                Step::Wrote {
                    id: *id,
                    bytes: data.len(),
                }
            }
            Command::Dispatch {
                pipeline,
                groups,
                bindings,
            } => {
                let p = match pipeline {
                    Ref::Last => last_pipeline.ok_or_else(|| err(line, "no pipeline created yet"))?,
                    Ref::Id(p) => *p,
                };
                let out = client.offload_dispatch(p, *groups, bindings)?;
                Step::Dispatched {
                    origin: out.origin,
                    staleness: out.staleness,
                    total_ns: out.timing.total_ns(),
                }
            }
            Command::Read { id, offset, len, to } => {
                let got = client.read_buffer(*id, *offset, *len)?;
                let to = to.as_ref().map(|p| resolve(p));
                if let Some(p) = &to {
                    std::fs::write(p, &got.data).map_err(|e| io(line, p, e))?;
                }
                Step::Read {
                    id: *id,
                    data: got.data,
                    origin: got.origin,
                    staleness: got.staleness,
                    to,
                }
            }
            Command::Sleep(d) => {
                std::thread::sleep(*d);
                Step::Slept(*d)
            }
        };
        report(&step);
    }
    Ok(())
}
