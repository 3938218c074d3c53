//! Result files: CSV with a `#schema=<name>/<version>` first line, or a JSON
//! document with the same schema tag, plus a `.meta.json` sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{OutputFormat, RunConfig};
use crate::error::{Error, Result};

const TRUNCATED: &str = "#truncated=";

#[derive(Debug, Serialize, Deserialize)]
struct JsonDoc<Rows> {
    schema: String,
    rows: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truncated: Option<String>,
}

/// Rows read back from a result file.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<R> {
    pub schema: String,
    pub rows: Vec<R>,
    pub truncated: Option<String>,
}

/// Serialise `rows`. A `truncated` message marks a run that stopped early.
pub fn write_rows<R: Serialize>(
    mut w: impl Write,
    schema: &str,
    rows: &[R],
    format: OutputFormat,
    truncated: Option<&str>,
) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            writeln!(w, "#schema={schema}")?;
            {
                let mut csv = csv::Writer::from_writer(&mut w);
                for r in rows {
                    csv.serialize(r)?;
                }
                csv.flush()?;
            }
            if let Some(msg) = truncated {
                writeln!(w, "{TRUNCATED}{}", msg.replace('\n', " "))?;
            }
        }
        OutputFormat::Json => {
            let doc = JsonDoc { schema: schema.to_string(), rows, truncated: truncated.map(str::to_string) };
            serde_json::to_writer_pretty(&mut w, &doc)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn read_csv<R: DeserializeOwned>(text: &str) -> Result<Parsed<R>> {
    let schema = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("#schema="))
        .ok_or_else(|| Error::Config("missing #schema header".into()))?
        .to_string();
    let truncated = text.lines().find_map(|l| l.strip_prefix(TRUNCATED)).map(str::to_string);
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<R>, _>>()?;
    Ok(Parsed { schema, rows, truncated })
}

pub fn read_json<R: DeserializeOwned>(text: &str) -> Result<Parsed<R>> {
    let doc: JsonDoc<Vec<R>> = serde_json::from_str(text)?;
    Ok(Parsed { schema: doc.schema, rows: doc.rows, truncated: doc.truncated })
}

pub fn read_rows<R: DeserializeOwned>(path: &Path) -> Result<Parsed<R>> {
    let text = std::fs::read_to_string(path)?;
    if text.starts_with("#schema=") {
        read_csv(&text)
    } else {
        read_json(&text)
    }
}

pub fn version_string() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), option_env!("VLA_GIT_REV").unwrap_or("unknown revision"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hardware {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl Hardware {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Contents of the `.meta.json` sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub schema: String,
    pub version: String,
    pub config: RunConfig,
    pub rows: usize,
    pub truncated: Option<String>,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
    pub hardware: Hardware,
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_meta(out: &Path, meta: &Meta) -> Result<()> {
    let f = std::fs::File::create(meta_path(out))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), meta)?;
    Ok(())
}
