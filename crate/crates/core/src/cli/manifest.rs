//! Plain-text record of what produced an output set.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: Vec<String>,
    /// Resolved configuration in `key = value` form.
    pub config: String,
    /// (path as given, sha256 hex).
    pub inputs: Vec<(String, String)>,
    /// (file name inside the output directory, sha256 hex).
    pub outputs: Vec<(String, String)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

impl RunManifest {
    /// No timestamps or host data, so identical runs give identical manifests.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "nvsim {VERSION}").unwrap();
        writeln!(w, "command: {}", self.command.join(" ")).unwrap();
        writeln!(w, "[inputs]").unwrap();
        for (p, d) in &self.inputs {
            writeln!(w, "{d}  {p}").unwrap();
        }
        writeln!(w, "[outputs]").unwrap();
        for (p, d) in &self.outputs {
            writeln!(w, "{d}  {p}").unwrap();
        }
        writeln!(w, "[config]").unwrap();
        out.push_str(&self.config);
        out
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn render_is_stable() {
        let m = RunManifest {
            command: vec!["levels".into()],
            config: "lambda_z = 5.3\n".into(),
            inputs: vec![],
            outputs: vec![("levels.csv".into(), sha256_hex(b""))],
        };
        assert_eq!(m.render(), m.clone().render());
        assert!(m.render().ends_with("[config]\nlambda_z = 5.3\n"));
    }
}
