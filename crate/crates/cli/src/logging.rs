//! Log records go to stderr and, once a run directory exists, to
//! `run.log` inside it.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

struct Tee {
    file: Option<File>,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        if let Some(f) = self.file.as_mut() {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some(f) = self.file.as_mut() {
            f.flush()?;
        }
        io::stderr().flush()
    }
}

pub const LOG_NAME: &str = "run.log";

/// Installs the logger; `info` unless `RUST_LOG` says otherwise.
pub fn init(run_dir: Option<&Path>) -> io::Result<()> {
    let file = match run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(File::create(dir.join(LOG_NAME))?)
        }
        None => None,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(Tee { file })))
        .try_init()
        .map_err(io::Error::other)
}
