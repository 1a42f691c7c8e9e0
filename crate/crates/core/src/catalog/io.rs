//! Embedding matrix files (raw little-endian `f32` plus JSON sidecar) and the
//! semantic-ID JSON-lines dump.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Catalog, CatalogError, SemanticId};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<String>,
}

/// Writes `matrix` as row-major little-endian `f32` to `data_path` and its header to `header_path`.
pub fn write_embeddings(
    data_path: &Path,
    header_path: &Path,
    ids: &[String],
    matrix: &Matrix,
) -> Result<(), CatalogError> {
    if ids.len() != matrix.rows() {
        return Err(CatalogError::InvalidConfig(format!(
            "{} ids for {} rows",
            ids.len(),
            matrix.rows()
        )));
    }
    let mut out = BufWriter::new(File::create(data_path)?);
    for v in matrix.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    let header = EmbeddingHeader {
        rows: matrix.rows(),
        cols: matrix.cols(),
        ids: ids.to_vec(),
    };
    std::fs::write(header_path, serde_json::to_vec(&header)?)?;
    Ok(())
}

pub fn read_embeddings(
    data_path: &Path,
    header_path: &Path,
) -> Result<(Vec<String>, Matrix), CatalogError> {
    let header_bytes = std::fs::read(header_path)?;
    let header: EmbeddingHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| CatalogError::Format {
            offset: json_offset(&header_bytes, &e),
            message: format!("{}: {e}", header_path.display()),
        })?;
    if header.ids.len() != header.rows {
        return Err(CatalogError::Format {
            offset: 0,
            message: format!(
                "{}: header lists {} ids for {} rows",
                header_path.display(),
                header.ids.len(),
                header.rows
            ),
        });
    }
    let mut bytes = Vec::new();
    File::open(data_path)?.read_to_end(&mut bytes)?;
    let expected = (header.rows * header.cols * 4) as u64;
    let found = bytes.len() as u64;
    if found != expected {
        return Err(CatalogError::Format {
            offset: found.min(expected),
            message: format!(
                "{}: expected {expected} bytes for {}x{} f32 matrix, found {found}",
                data_path.display(),
                header.rows,
                header.cols
            ),
        });
    }
    let mut data = Vec::with_capacity(header.rows * header.cols);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(CatalogError::Format {
                offset: (i * 4) as u64,
                message: format!("{}: non-finite value", data_path.display()),
            });
        }
        data.push(v);
    }
    Ok((header.ids, Matrix::from_vec(header.rows, header.cols, data)))
}

fn json_offset(bytes: &[u8], err: &serde_json::Error) -> u64 {
    // serde_json reports 1-based line/column
    let mut offset = 0usize;
    for (i, line) in bytes.split(|b| *b == b'\n').enumerate() {
        if i + 1 == err.line() {
            return (offset + err.column().saturating_sub(1)) as u64;
        }
        offset += line.len() + 1;
    }
    offset as u64
}

/// One line of the semantic-ID dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticIdRecord {
    pub id: String,
    pub digits: Vec<u16>,
    pub seen: bool,
}

pub fn write_semantic_id_dump(catalog: &Catalog, path: &Path) -> Result<(), CatalogError> {
    let mut out = BufWriter::new(File::create(path)?);
    for i in 0..catalog.len() {
        let record = SemanticIdRecord {
            id: catalog.external_id(i).to_owned(),
            digits: catalog.semantic_id(i).digits().to_vec(),
            seen: catalog.is_seen(i),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_semantic_id_dump(path: &Path) -> Result<Vec<SemanticIdRecord>, CatalogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut offset = 0u64;
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let len = line.len() as u64 + 1;
        if !line.trim().is_empty() {
            let record: SemanticIdRecord =
                serde_json::from_str(&line).map_err(|e| CatalogError::Format {
                    offset: offset + e.column().saturating_sub(1) as u64,
                    message: format!("{}: {e}", path.display()),
                })?;
            records.push(record);
        }
        offset += len;
    }
    Ok(records)
}

impl SemanticIdRecord {
    pub fn semantic_id(&self) -> SemanticId {
        SemanticId::new(self.digits.clone())
    }
}
