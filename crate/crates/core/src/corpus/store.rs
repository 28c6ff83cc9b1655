use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::vocab::{Vocabulary, PAD_INDEX};

/// `b"IMGF"` read as a little-endian u32.
pub const FEATURE_MAGIC: u32 = u32::from_le_bytes(*b"IMGF");

/// Precomputed image features keyed by image reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatureStore {
    ids: Vec<String>,
    rows: HashMap<String, usize>,
    features: Matrix,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("ids")
}

impl ImageFeatureStore {
    pub fn new(dim: usize) -> Self {
        ImageFeatureStore {
            ids: Vec::new(),
            rows: HashMap::new(),
            features: Matrix::zeros(0, dim),
        }
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut store = ImageFeatureStore::new(dim);
        let mut data = Vec::new();
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("image feature {id}"),
                    expected: dim,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "value",
                    name: format!("image feature {id}"),
                });
            }
            if store.rows.insert(id.clone(), store.ids.len()).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate image id {id}")));
            }
            store.ids.push(id);
            data.extend(v);
        }
        store.features = Matrix::from_vec(store.ids.len(), dim, data);
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(|&r| self.features.row(r))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(r, id)| (id.as_str(), self.features.row(r)))
    }

    /// Reads the binary feature file and its `.ids` sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header = [0u8; 12];
        reader.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
        let word = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
        if word(0) != FEATURE_MAGIC {
            return Err(Error::Parse {
                path: path.into(),
                line: 0,
                message: "bad magic in feature file".into(),
            });
        }
        let count = word(1) as usize;
        let dim = word(2) as usize;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != count * dim * 4 {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "feature payload of {} ({count} rows x {dim})",
                    path.display()
                ),
                expected: count * dim * 4,
                actual: bytes.len(),
            });
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();

        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let mut ids = vec![None; count];
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: side.clone(),
                line: lineno + 1,
                message,
            };
            let (id, row) = line
                .rsplit_once('\t')
                .ok_or_else(|| parse_err("expected `id<TAB>row`".into()))?;
            let row: usize = row
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad row number {row:?}")))?;
            if row >= count {
                return Err(parse_err(format!("row {row} out of range ({count} rows)")));
            }
            ids[row] = Some(id.to_string());
        }
        let rows = ids.into_iter().enumerate().map(|(r, id)| {
            let id = id.ok_or_else(|| Error::Parse {
                path: side.clone(),
                line: 0,
                message: format!("row {r} has no id"),
            })?;
            Ok((id, data[r * dim..(r + 1) * dim].to_vec()))
        });
        let rows: Result<Vec<_>> = rows.collect();
        ImageFeatureStore::from_rows(dim, rows?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut buf = Vec::with_capacity(12 + self.features.as_slice().len() * 4);
        buf.extend(FEATURE_MAGIC.to_le_bytes());
        buf.extend((self.len() as u32).to_le_bytes());
        buf.extend((self.dim() as u32).to_le_bytes());
        for &x in self.features.as_slice() {
            buf.extend((x as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;

        let side = sidecar_path(path);
        let mut text = String::new();
        for (r, id) in self.ids.iter().enumerate() {
            text.push_str(&format!("{id}\t{r}\n"));
        }
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }
}

/// Word vectors aligned with a vocabulary: row `i` is the vector of word `i`,
/// and the pad row is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddings {
    vectors: Matrix,
}

impl WordEmbeddings {
    pub fn new(vectors: Matrix) -> Result<Self> {
        if vectors.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "value",
                name: "word embeddings".into(),
            });
        }
        Ok(WordEmbeddings { vectors })
    }

    /// Lays out `table` rows in vocabulary order. Words missing from the
    /// table get zero vectors.
    pub fn for_vocabulary(vocab: &Vocabulary, table: &HashMap<String, Vec<f64>>, dim: usize) -> Self {
        let mut m = Matrix::zeros(vocab.len(), dim);
        for (i, w) in vocab.words().iter().enumerate().skip(1) {
            if let Some(v) = table.get(w) {
                m.row_mut(i).copy_from_slice(v);
            }
        }
        m.row_mut(PAD_INDEX).fill(0.0);
        WordEmbeddings { vectors: m }
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        self.vectors.row(index)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.vectors
    }

    /// Mean vector of the given word indices, or `None` if empty.
    pub fn mean_of(&self, indices: impl IntoIterator<Item = usize>) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim()];
        let mut n = 0usize;
        for i in indices {
            crate::linalg::axpy(1.0, self.vector(i), &mut acc);
            n += 1;
        }
        (n > 0).then(|| acc.into_iter().map(|x| x / n as f64).collect())
    }
}

/// Reads the text format: a `count dim` header line, then `word v1 .. vdim`.
pub fn read_word_table(path: &Path) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(1, "bad count in header".into()))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(1, "bad dim in header".into()))?;
    let mut table = HashMap::with_capacity(count);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap().to_string();
        let v: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let v = v.map_err(|e| parse_err(i + 1, format!("bad number: {e}")))?;
        if v.len() != dim {
            return Err(parse_err(
                i + 1,
                format!("word {word:?} has {} values, expected {dim}", v.len()),
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(i + 1, format!("non-finite value for {word:?}")));
        }
        table.insert(word, v);
    }
    if table.len() != count {
        return Err(parse_err(
            1,
            format!("header declares {count} words, found {}", table.len()),
        ));
    }
    Ok((dim, table))
}

pub fn write_word_table<'a>(
    path: &Path,
    dim: usize,
    rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let rows: Vec<_> = rows.into_iter().collect();
    let mut out = format!("{} {dim}\n", rows.len());
    for (w, v) in rows {
        out.push_str(w);
        for x in v {
            out.push(' ');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let store = ImageFeatureStore::from_rows(
            3,
            vec![
                ("img_b".to_string(), vec![1.0, 2.0, 3.5]),
                ("img_a".to_string(), vec![-1.0, 0.25, 0.0]),
            ],
        )
        .unwrap();
        store.save(&path).unwrap();
        let back = ImageFeatureStore::load(&path).unwrap();
        assert_eq!(back, store);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"IMGF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 12 + 2 * 3 * 4);
    }

    #[test]
    fn wrong_row_dimension_named() {
        let err = ImageFeatureStore::from_rows(
            2,
            vec![("ok".into(), vec![1.0, 2.0]), ("bad".into(), vec![1.0])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let store = ImageFeatureStore::from_rows(2, vec![("a".into(), vec![1.0, 2.0])]).unwrap();
        store.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            ImageFeatureStore::load(&path),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn word_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.vec");
        let a = [0.1, -2.0];
        let b = [1e-7, 3.25];
        write_word_table(&path, 2, vec![("alpha", &a[..]), ("beta", &b[..])]).unwrap();
        let (dim, table) = read_word_table(&path).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(table["alpha"], a.to_vec());
        assert_eq!(table["beta"], b.to_vec());

        let vocab = Vocabulary::from_words(["beta", "gamma"]);
        let emb = WordEmbeddings::for_vocabulary(&vocab, &table, dim);
        assert_eq!(emb.vector(PAD_INDEX), &[0.0, 0.0]);
        assert_eq!(emb.vector(vocab.get("beta").unwrap()), &b);
        assert_eq!(emb.vector(vocab.get("gamma").unwrap()), &[0.0, 0.0]);
    }

    #[test]
    fn word_table_dimension_error_has_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.vec");
        std::fs::write(&path, "2 2\na 1 2\nb 1\n").unwrap();
        let err = read_word_table(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }
}
