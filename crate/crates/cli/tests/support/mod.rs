//! Helpers for driving the `girp` binary from tests.

#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

/// The binary under test, with any inherited `GIRP_*` variables removed.
pub fn girp() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_girp"));
    for (k, _) in std::env::vars() {
        if k.starts_with("GIRP_") {
            c.env_remove(k);
        }
    }
    c
}

pub fn run(args: &[&str]) -> Output {
    girp().args(args).output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Asserts success and returns stdout.
pub fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status, stdout(&o), stderr(&o));
    stdout(&o)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

pub fn le(v: impl IntoIterator<Item = u32>) -> Vec<u8> {
    v.into_iter().flat_map(u32::to_le_bytes).collect()
}

/// b = a * b with a = i and b = 3, wrapping.
pub fn multiply_oracle(n: u32) -> Vec<u8> {
    le((0..n).map(|i| i.wrapping_mul(3)))
}

/// Writes a.bin, b.bin and a script running the multiply kernel over
/// them, reading the result to `read_to`. Returns the script path.
pub fn multiply_script(dir: &Path, read_to: &str) -> PathBuf {
    let n = 65_536u32;
    std::fs::write(dir.join("a.bin"), le(0..n)).unwrap();
    std::fs::write(dir.join("b.bin"), le(std::iter::repeat_n(3, n as usize))).unwrap();
    let script = format!(
        "# multiply two vectors\n\
         load {}\n\
         pipeline @last main\n\
         alloc 1 262144\n\
         alloc 2 262144\n\
         write 1 0 a.bin\n\
         write 2 0 b.bin\n\
         dispatch @last 1024 1 1 0:0:1 0:1:2\n\
         read 2 0 262144 > {read_to}\n",
        fixture("multiply.spv").display()
    );
    let path = dir.join("multiply.girp");
    std::fs::write(&path, script).unwrap();
    path
}

/// A `girp serve` child process on an ephemeral loopback port. Killed on
/// drop.
pub struct Served {
    pub child: Child,
    pub addr: String,
}

impl Served {
    pub fn start() -> Self {
        let mut child = girp()
            .args(["serve", "--listen", "127.0.0.1:0", "--log-level", "warn"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected first line {line:?}"))
            .to_string();
        Served { child, addr }
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        self.kill();
    }
}
