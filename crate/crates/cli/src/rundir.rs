//! Run directories: resolved config, input fingerprints, schema version and
//! an `INCOMPLETE` marker that is removed only when the command succeeds.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: &str = "1";
const MARKER: &str = "INCOMPLETE";

pub struct RunDir {
    pub path: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

impl RunDir {
    /// Create the directory and record everything needed to reproduce the run
    /// before any work starts.
    pub fn create(path: &Path, command: &str, config: &str, inputs: &[(&str, &Path)]) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        fs::write(path.join(MARKER), format!("{command} started\n"))?;
        fs::write(path.join("config.txt"), format!("command = {command}\n{config}"))?;
        fs::write(path.join("schema_version.txt"), format!("{SCHEMA_VERSION}\n"))?;
        let mut fp = String::from("input,path,sha256\n");
        for (name, p) in inputs {
            fp.push_str(&format!("{name},{},{}\n", p.display(), sha256_file(p)?));
        }
        fs::write(path.join("fingerprints.csv"), fp)?;
        Ok(RunDir { path: path.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn finish(self) -> Result<()> {
        fs::remove_file(self.path.join(MARKER))?;
        Ok(())
    }
}
