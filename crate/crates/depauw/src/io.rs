//! Output files.
//!
//! - JSON reports: one [`Document`] per file, with the tool version, the
//!   resolved configuration, its hash and the seed next to the report body.
//! - CSV: a single `# depauw <name> config_hash=<hex> seed=<n>` comment line,
//!   then a header row and data rows.
//! - Path ensembles (`.dpen`) and stream-table caches (`.dpst`): binary
//!   layouts below, all integers and floats little-endian.
//!
//! `.dpen` layout:
//!
//! | offset | type        | field                                   |
//! |--------|-------------|-----------------------------------------|
//! | 0      | `[u8; 4]`   | magic `DPEN`                            |
//! | 4      | `u32`       | format version (1)                      |
//! | 8      | `[u8; 32]`  | SHA-256 config hash                     |
//! | 40     | `u64`       | seed                                    |
//! | 48     | `u64`       | number of paths `P`                     |
//! | 56     | `u32`       | length `L` of the metadata JSON         |
//! | 60     | `[u8; L]`   | ensemble metadata as UTF-8 JSON         |
//!
//! followed by `P` records of `weight: f64`, `samples: u64` (= `S`),
//! `S` times (`f64`, increasing) and `S` points (`f64` pairs, unwrapped).
//!
//! `.dpst` layout: magic `DPST`, version `u32` (1), `eps: f64`, `stage: u32`,
//! `h: f64`, `n: u64`, `components: u32` (4), then `4 (n + 1)^2` values
//! `f64`: node `(i, j)` at index `j (n + 1) + i`, components
//! `(P, d1 P, d2 P, d12 P)` interleaved.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use depauw_core::mollify::{StreamTable, TableBuilder};
use depauw_core::tracer::{EnsembleMeta, Path as CorePath, PathEnsemble};
use depauw_core::{MollifiedField, StageIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::Runner;

/// Config hash and seed carried by every output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

/// Envelope of every JSON report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Document<C, R> {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: C,
    pub report: R,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn write_json<C: Serialize, R: Serialize>(path: &Path, stamp: &Stamp, config: &C, report: &R) -> Result<()> {
    let doc = Document {
        tool: "depauw".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: stamp.config_hash.clone(),
        seed: stamp.seed,
        config,
        report,
    };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// A CSV file with the stamp comment line already written.
#[derive(Debug)]
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path, name: &str, stamp: &Stamp, header: &[&str]) -> Result<Self> {
        let mut w = create(path)?;
        writeln!(w, "# depauw {name} config_hash={} seed={}", stamp.config_hash, stamp.seed)
            .map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(header)?;
        Ok(CsvSink { path: path.to_path_buf(), writer })
    }

    pub fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a stamped CSV back: the stamp, the header and the rows.
pub fn read_csv(path: &Path) -> Result<(Stamp, Vec<String>, Vec<Vec<String>>)> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format { path: path.to_path_buf(), message: m.to_string() };
    let (first, rest) = text.split_once('\n').ok_or_else(|| bad("missing stamp line"))?;
    let field = |key: &str| {
        first.split_whitespace().find_map(|w| w.strip_prefix(key)).ok_or_else(|| bad("malformed stamp line"))
    };
    let stamp = Stamp {
        config_hash: field("config_hash=")?.to_string(),
        seed: field("seed=")?.parse().map_err(|_| bad("malformed seed"))?,
    };
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((stamp, header, rows))
}

const DPEN_MAGIC: &[u8; 4] = b"DPEN";
const DPST_MAGIC: &[u8; 4] = b"DPST";
const FORMAT_VERSION: u32 = 1;

/// Fixed part of a `.dpen` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHeader {
    pub config_hash: String,
    pub seed: u64,
    pub count: u64,
    pub meta: EnsembleMeta,
}

/// Streams paths into a `.dpen` file; the path count is fixed up front.
#[derive(Debug)]
pub struct EnsembleWriter {
    path: PathBuf,
    w: BufWriter<File>,
    expected: u64,
    written: u64,
}

impl EnsembleWriter {
    pub fn create(path: &Path, stamp: &Stamp, meta: &EnsembleMeta, count: u64) -> Result<Self> {
        let mut w = create(path)?;
        let hash = hex::decode(&stamp.config_hash)
            .ok()
            .filter(|h| h.len() == 32)
            .ok_or_else(|| Error::Format { path: path.to_path_buf(), message: "config hash is not 32 hex bytes".into() })?;
        let meta = serde_json::to_vec(meta)?;
        let io = |e| Error::io(path, e);
        w.write_all(DPEN_MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&hash).map_err(io)?;
        w.write_all(&stamp.seed.to_le_bytes()).map_err(io)?;
        w.write_all(&count.to_le_bytes()).map_err(io)?;
        w.write_all(&(meta.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&meta).map_err(io)?;
        Ok(EnsembleWriter { path: path.to_path_buf(), w, expected: count, written: 0 })
    }

    pub fn push(&mut self, p: &CorePath) -> Result<()> {
        let io = |e| Error::io(&self.path, e);
        let mut buf = Vec::with_capacity(16 + 24 * p.times.len());
        buf.extend_from_slice(&p.weight.to_le_bytes());
        buf.extend_from_slice(&(p.times.len() as u64).to_le_bytes());
        for t in &p.times {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        for x in &p.points {
            buf.extend_from_slice(&x[0].to_le_bytes());
            buf.extend_from_slice(&x[1].to_le_bytes());
        }
        self.w.write_all(&buf).map_err(io)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.expected {
            return Err(Error::Format {
                path: self.path.clone(),
                message: format!("wrote {} paths, header promises {}", self.written, self.expected),
            });
        }
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_ensemble(path: &Path, stamp: &Stamp, e: &PathEnsemble) -> Result<()> {
    let mut w = EnsembleWriter::create(path, stamp, &e.meta, e.paths.len() as u64)?;
    for p in &e.paths {
        w.push(p)?;
    }
    w.finish()
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| Error::Format {
            path: self.path.to_path_buf(),
            message: format!("truncated at byte {}", self.at),
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(self.bad(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(self.bad(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn bad(&self, message: String) -> Error {
        Error::Format { path: self.path.to_path_buf(), message }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_ensemble(path: &Path) -> Result<(EnsembleHeader, PathEnsemble)> {
    let bytes = read_all(path)?;
    let mut c = Cursor { path, bytes: &bytes, at: 0 };
    c.header(DPEN_MAGIC)?;
    let config_hash = hex::encode(c.take(32)?);
    let seed = c.u64()?;
    let count = c.u64()?;
    let len = c.u32()? as usize;
    let meta: EnsembleMeta = serde_json::from_slice(c.take(len)?)?;
    let mut paths = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        let weight = c.f64()?;
        let s = c.u64()? as usize;
        if s > bytes.len() / 24 {
            return Err(c.bad(format!("sample count {s} exceeds the file size")));
        }
        let times = (0..s).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let points = (0..s).map(|_| Ok([c.f64()?, c.f64()?])).collect::<Result<Vec<_>>>()?;
        paths.push(CorePath::new(times, points, weight)?);
    }
    if c.at != bytes.len() {
        return Err(c.bad(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    let header = EnsembleHeader { config_hash, seed, count, meta: meta.clone() };
    Ok((header, PathEnsemble { meta, paths }))
}

pub fn write_table(path: &Path, t: &StreamTable) -> Result<()> {
    let mut buf = Vec::with_capacity(44 + 32 * (t.n + 1) * (t.n + 1));
    buf.extend_from_slice(DPST_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&t.eps.to_le_bytes());
    buf.extend_from_slice(&t.stage.to_le_bytes());
    buf.extend_from_slice(&t.h.to_le_bytes());
    buf.extend_from_slice(&(t.n as u64).to_le_bytes());
    buf.extend_from_slice(&4u32.to_le_bytes());
    for v in t.raw_values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut w = create(path)?;
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<StreamTable> {
    let bytes = read_all(path)?;
    let mut c = Cursor { path, bytes: &bytes, at: 0 };
    c.header(DPST_MAGIC)?;
    let eps = c.f64()?;
    let stage = c.u32()?;
    let h = c.f64()?;
    let n = c.u64()? as usize;
    let comps = c.u32()?;
    if comps != 4 {
        return Err(c.bad(format!("expected 4 components, found {comps}")));
    }
    let count = n.checked_add(1).and_then(|m| m.checked_mul(m)).and_then(|m| m.checked_mul(4));
    let count = count.filter(|k| k * 8 == bytes.len() - c.at).ok_or_else(|| c.bad("value count mismatch".into()))?;
    let values = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    Ok(StreamTable::from_raw(eps, stage, h, n, &values)?)
}

/// Directory of `.dpst` files keyed by the requested `(eps, stage, h)`.
#[derive(Clone, Debug)]
pub struct TableCache {
    pub dir: PathBuf,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TableCache { dir: dir.into() }
    }

    /// File name from the exact bit patterns, so no two keys collide.
    pub fn file(&self, eps: f64, stage: u32, h: f64) -> PathBuf {
        self.dir.join(format!("stream_eps{:016x}_k{stage}_h{:016x}.dpst", eps.to_bits(), h.to_bits()))
    }

    /// The cached table if present and consistent, else `None`.
    pub fn load(&self, eps: f64, stage: u32, h: f64) -> Result<Option<StreamTable>> {
        let path = self.file(eps, stage, h);
        if !path.exists() {
            return Ok(None);
        }
        let t = read_table(&path)?;
        if t.eps != eps || t.stage != stage || t.h > h {
            return Err(Error::Format { path, message: "header does not match its key".into() });
        }
        Ok(Some(t))
    }
}

/// One stage table, rows built in parallel and assembled in order.
pub fn build_table(eps: f64, stage: u32, h: f64, runner: &Runner) -> Result<StreamTable> {
    let b = TableBuilder::new(eps, StageIndex(stage), h)?;
    let rows = runner.map(b.rows(), |j| b.row(j));
    Ok(b.assemble(rows)?)
}

/// Stages `0..=max_stage` of the mollified field, reusing cached tables.
pub fn mollified_field(eps: f64, h: f64, max_stage: u32, cache: Option<&TableCache>, runner: &Runner) -> Result<MollifiedField> {
    let mut tables = Vec::with_capacity(max_stage as usize + 1);
    for k in 0..=max_stage {
        let cached = match cache {
            Some(c) => c.load(eps, k, h)?,
            None => None,
        };
        let t = match cached {
            Some(t) => t,
            None => {
                let t = build_table(eps, k, h, runner)?;
                if let Some(c) = cache {
                    write_table(&c.file(eps, k, h), &t)?;
                }
                t
            }
        };
        tables.push(t);
    }
    Ok(MollifiedField::from_tables(tables)?)
}
