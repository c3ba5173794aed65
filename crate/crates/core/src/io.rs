//! Binary artifacts and CSV datasets.
//!
//! All binary formats are little-endian and start with a four-byte magic
//! and a u32 version (currently 1):
//!
//! * `NTKG` Gram: u8 kind, u64 m, then the upper triangle row by row.
//! * `NTKS` ridge solution: f64 λ, u64 anchor count, the anchor indices as
//!   u64, then α.
//! * `NTKW` weights: u64 network fingerprint, u64 count, the parameters.
//! * `NTKE` embedded dataset: u8 kind tag, u64 rows, u64 cols, row-major data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::analytic::{GramMatrix, KernelKind};
use crate::empirical::FiniteNet;
use crate::solvers::RidgeSolution;
use crate::spectral::{EmbeddingKind, ZonalSpectrum};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        self.0.write_all(magic)?;
        self.u32(FORMAT_VERSION)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        for x in v {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("file truncated".into()),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.bytes::<4>()?;
        if &m != magic {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&m)
            )));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn finish(&mut self) -> Result<()> {
        let mut rest = [0u8; 1];
        match self.0.read(&mut rest)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes".into())),
        }
    }
}

/// Guards length fields against absurd allocations from corrupt files.
fn sane_len(n: u64, what: &str) -> Result<usize> {
    if n > (1 << 40) {
        return Err(Error::Format(format!("{what} count {n} is implausible")));
    }
    Ok(n as usize)
}

fn create(path: &Path) -> Result<Writer<BufWriter<File>>> {
    Ok(Writer(BufWriter::new(File::create(path)?)))
}

fn open(path: &Path) -> Result<Reader<BufReader<File>>> {
    Ok(Reader(BufReader::new(File::open(path)?)))
}

pub fn write_gram(path: &Path, g: &GramMatrix) -> Result<()> {
    let mut w = create(path)?;
    w.header(b"NTKG")?;
    w.u8(g.kind.code())?;
    w.u64(g.m() as u64)?;
    w.f64s(&g.upper())?;
    Ok(w.0.flush()?)
}

/// Reads an `NTKG` file. The format carries no architecture fingerprint,
/// so the loaded matrix reports 0.
pub fn read_gram(path: &Path) -> Result<GramMatrix> {
    let mut r = open(path)?;
    r.header(b"NTKG")?;
    let kind = KernelKind::from_code(r.u8()?)?;
    let m = sane_len(r.u64()?, "row")?;
    let upper = r.f64s(m * (m + 1) / 2)?;
    r.finish()?;
    if upper.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite Gram entry".into()));
    }
    GramMatrix::from_upper(m, &upper, kind, 0)
}

pub fn write_solution(path: &Path, s: &RidgeSolution) -> Result<()> {
    if s.anchors.len() != s.alpha.len() {
        return Err(Error::Shape("anchors and coefficients differ in length".into()));
    }
    let mut w = create(path)?;
    w.header(b"NTKS")?;
    w.f64s(&[s.lambda])?;
    w.u64(s.anchors.len() as u64)?;
    for &a in &s.anchors {
        w.u64(a as u64)?;
    }
    w.f64s(&s.alpha)?;
    Ok(w.0.flush()?)
}

/// Reads an `NTKS` file. Iteration count and residual are not stored; the
/// solution comes back as converged with zero iterations.
pub fn read_solution(path: &Path) -> Result<RidgeSolution> {
    let mut r = open(path)?;
    r.header(b"NTKS")?;
    let lambda = r.f64()?;
    let n = sane_len(r.u64()?, "anchor")?;
    let anchors = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let alpha = r.f64s(n)?;
    r.finish()?;
    if !(lambda >= 0.0) || alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("invalid ridge or coefficient".into()));
    }
    Ok(RidgeSolution { alpha, lambda, anchors, iterations: 0, residual: 0.0, converged: true })
}

pub fn write_weights(path: &Path, net: &FiniteNet) -> Result<()> {
    let mut w = create(path)?;
    w.header(b"NTKW")?;
    w.u64(net.fingerprint())?;
    w.u64(net.params.len() as u64)?;
    w.f64s(&net.params)?;
    Ok(w.0.flush()?)
}

/// Loads parameters into a network built from the same architecture and
/// widths; the stored fingerprint must match.
pub fn read_weights(path: &Path, template: &FiniteNet) -> Result<FiniteNet> {
    let mut r = open(path)?;
    r.header(b"NTKW")?;
    let fp = r.u64()?;
    if fp != template.fingerprint() {
        return Err(Error::Format(format!(
            "weights fingerprint {fp:016x} does not match network {:016x}",
            template.fingerprint()
        )));
    }
    let n = sane_len(r.u64()?, "parameter")?;
    if n != template.n_params() {
        return Err(Error::Format(format!("{n} parameters for a net with {}", template.n_params())));
    }
    let params = r.f64s(n)?;
    r.finish()?;
    let mut net = template.clone();
    net.params = params;
    Ok(net)
}

pub fn embedding_tag(kind: &EmbeddingKind) -> u8 {
    match kind {
        EmbeddingKind::Basic => 0,
        EmbeddingKind::Positional { .. } => 1,
        EmbeddingKind::Gaussian { .. } => 2,
    }
}

/// An embedded dataset as stored in `NTKE` files.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedData {
    pub tag: u8,
    pub rows: Vec<Vec<f64>>,
}

pub fn write_embedded(path: &Path, data: &EmbeddedData) -> Result<()> {
    let cols = data.rows.first().map_or(0, |r| r.len());
    if data.rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged embedding rows".into()));
    }
    let mut w = create(path)?;
    w.header(b"NTKE")?;
    w.u8(data.tag)?;
    w.u64(data.rows.len() as u64)?;
    w.u64(cols as u64)?;
    for r in &data.rows {
        w.f64s(r)?;
    }
    Ok(w.0.flush()?)
}

pub fn read_embedded(path: &Path) -> Result<EmbeddedData> {
    let mut r = open(path)?;
    r.header(b"NTKE")?;
    let tag = r.u8()?;
    if tag > 2 {
        return Err(Error::Format(format!("unknown embedding tag {tag}")));
    }
    let n = sane_len(r.u64()?, "row")?;
    let c = sane_len(r.u64()?, "column")?;
    let rows = (0..n).map(|_| r.f64s(c)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(EmbeddedData { tag, rows })
}

/// Reads a headerless all-numeric CSV, one sample per row.
pub fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("row {}: {s:?} is not a number", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("row {}: non-finite value", i + 1)));
        }
        rows.push(row);
    }
    if let Some(first) = rows.first() {
        let w = first.len();
        if let Some(i) = rows.iter().position(|r| r.len() != w) {
            return Err(Error::Format(format!("row {} has {} columns, expected {w}", i + 1, rows[i].len())));
        }
    }
    Ok(rows)
}

/// Reads a single-column label file.
pub fn read_labels(path: &Path) -> Result<Vec<f64>> {
    let rows = read_csv_rows(path)?;
    if rows.first().is_some_and(|r| r.len() != 1) {
        return Err(Error::Format("label file must have exactly one column".into()));
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `k,lambda,fingerprint` rows.
pub fn write_spectrum_csv(path: &Path, s: &ZonalSpectrum, fingerprint: &str) -> Result<()> {
    let rows: Vec<Vec<String>> = s
        .lambdas
        .iter()
        .enumerate()
        .map(|(k, l)| vec![k.to_string(), format!("{l:e}"), fingerprint.to_string()])
        .collect();
    write_csv(path, &["k", "lambda", "fingerprint"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let g = GramMatrix::from_fn(3, KernelKind::Nngp, 0, |i, j| (i + 2 * j) as f64 + 0.25);
        let (a, b) = (dir.path().join("a.ntkg"), dir.path().join("b.ntkg"));
        write_gram(&a, &g).unwrap();
        let back = read_gram(&a).unwrap();
        assert_eq!(back, g);
        write_gram(&b, &back).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"NOPE\x01\0\0\0").unwrap();
        assert!(matches!(read_gram(&p), Err(Error::Format(_))));
    }
}
