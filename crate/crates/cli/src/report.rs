//! JSON report envelope and shared report fragments. The schema is
//! documented in `docs/report-schema.md`.

use eqstab::eig::{Eigenvalue, Spectrum};
use eqstab::DynamicalSystem;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub schema: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &'static str, body: T) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            tool: "eqstab",
            version: env!("CARGO_PKG_VERSION"),
            command,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report types serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: ErrorInfo,
}

#[derive(Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct SystemInfo {
    pub name: Option<String>,
    /// `builtin:<name>` or `file`.
    pub source: String,
    pub dim: usize,
    pub definition: String,
    /// SHA-256 of `definition`, lowercase hex.
    pub digest: String,
}

impl SystemInfo {
    pub fn new(sys: &DynamicalSystem, source: String) -> Self {
        let definition = sys.to_string();
        let digest = format!("{:x}", Sha256::digest(definition.as_bytes()));
        Self {
            name: sys.name().map(str::to_string),
            source,
            dim: sys.dim(),
            definition,
            digest,
        }
    }
}

pub fn eigen_list(s: &Spectrum) -> Vec<Eigenvalue> {
    s.to_eigenvalues()
}
