//! Reading and writing activation dump files.
//!
//! The byte layout is defined in [`headprobe_core::format`]. Every dump is
//! accompanied by a `<dump>.json` sidecar mirroring its header.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use headprobe_core::format::{PREFIX_LEN, VALUE_BYTES};
use headprobe_core::{DumpHeader, HeadCoord, Matrix, TokenMode};

use crate::error::{Error, Result};

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(unix)]
fn write_at(file: &File, buf: &[u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::write_all_at(file, buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}

#[cfg(windows)]
fn write_at(file: &File, mut buf: &[u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = file.seek_write(buf, offset)?;
        buf = &buf[n..];
        offset += n as u64;
    }
    Ok(())
}

/// Path of the JSON sidecar for a dump.
pub fn sidecar_path(dump: &Path) -> PathBuf {
    let mut s = dump.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Cell-addressed dump writer. Cells may arrive in any order; each must be
/// written exactly once before [`DumpWriter::finish`].
pub struct DumpWriter {
    path: PathBuf,
    file: File,
    header: DumpHeader,
    data_start: u64,
    row_starts: Vec<usize>,
    filled: Vec<bool>,
    buf: Vec<u8>,
}

impl DumpWriter {
    pub fn create(path: impl AsRef<Path>, header: DumpHeader) -> Result<Self> {
        header.validate()?;
        let path = path.as_ref().to_path_buf();
        let prefix = header.encode();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.write_all(&prefix).map_err(|e| Error::io(&path, e))?;
        let data_start = prefix.len() as u64;
        file.set_len(data_start + header.data_bytes())
            .map_err(|e| Error::io(&path, e))?;
        let cells = header.n_layers * header.n_heads * header.total_rows();
        Ok(Self {
            row_starts: header.row_starts(),
            filled: vec![false; cells],
            buf: Vec::with_capacity(header.head_dim * VALUE_BYTES),
            path,
            file,
            header,
            data_start,
        })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    pub fn write(&mut self, example: usize, token: usize, coord: HeadCoord, values: &[f32]) -> Result<()> {
        let h = &self.header;
        let cell = |problem| Error::Cell {
            example,
            token,
            layer: coord.layer,
            head: coord.head,
            problem,
        };
        if example >= h.n_examples() || coord.layer >= h.n_layers || coord.head >= h.n_heads {
            return Err(cell("is out of bounds"));
        }
        if token >= h.rows_of(example) {
            return Err(cell("has a token index beyond the example's token count"));
        }
        if values.len() != h.head_dim {
            return Err(cell("has the wrong vector length"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(cell("contains a non-finite value"));
        }
        let row = self.row_starts[example] + token;
        let slot = (coord.layer * h.n_heads + coord.head) * h.total_rows() + row;
        if self.filled[slot] {
            return Err(cell("was written twice"));
        }
        self.buf.clear();
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        let offset = self.data_start + h.row_offset(coord, row);
        write_at(&self.file, &self.buf, offset).map_err(|e| Error::io(&self.path, e))?;
        self.filled[slot] = true;
        Ok(())
    }

    /// Checks that every cell was written, then writes the sidecar.
    pub fn finish(self) -> Result<PathBuf> {
        if let Some(slot) = self.filled.iter().position(|f| !f) {
            let h = &self.header;
            let rows = h.total_rows();
            let block = slot / rows;
            let row = slot % rows;
            let example = self.row_starts.partition_point(|&s| s <= row) - 1;
            return Err(Error::Cell {
                example,
                token: row - self.row_starts[example],
                layer: block / h.n_heads,
                head: block % h.n_heads,
                problem: "is missing",
            });
        }
        self.file.sync_all().map_err(|e| Error::io(&self.path, e))?;
        let sidecar = sidecar_path(&self.path);
        let mut json = serde_json::to_string_pretty(&self.header)?;
        json.push('\n');
        std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
        Ok(self.path)
    }
}

/// Writes a complete dump from a stream of `(example, token, coord, vector)`
/// cells.
pub fn write_dump<I, V>(path: impl AsRef<Path>, header: DumpHeader, cells: I) -> Result<PathBuf>
where
    I: IntoIterator<Item = (usize, usize, HeadCoord, V)>,
    V: AsRef<[f32]>,
{
    let mut w = DumpWriter::create(path, header)?;
    for (e, t, c, v) in cells {
        w.write(e, t, c, v.as_ref())?;
    }
    w.finish()
}

/// Parses only the header of a dump.
pub fn read_header(path: impl AsRef<Path>) -> Result<DumpHeader> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header_from(&mut file, path).map(|(h, _)| h)
}

fn read_header_from(file: &mut File, path: &Path) -> Result<(DumpHeader, u64)> {
    let mut prefix = Vec::with_capacity(PREFIX_LEN);
    Read::by_ref(file)
        .take(PREFIX_LEN as u64)
        .read_to_end(&mut prefix)
        .map_err(|e| Error::io(path, e))?;
    let len = DumpHeader::decode_prefix(&prefix)?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if len > file_len.saturating_sub(PREFIX_LEN as u64) {
        return Err(headprobe_core::Error::CorruptHeader("truncated".into()).into());
    }
    let mut payload = vec![0u8; len as usize];
    file.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let header = DumpHeader::decode_payload(&payload)?;
    Ok((header, PREFIX_LEN as u64 + len))
}

/// Random-access reader. Reads use positional IO, so one reader can serve
/// many threads.
#[derive(Debug)]
pub struct DumpReader {
    path: PathBuf,
    file: File,
    header: DumpHeader,
    data_start: u64,
    row_starts: Vec<usize>,
}

impl DumpReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let (header, data_start) = read_header_from(&mut file, &path)?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let want = data_start + header.data_bytes();
        if len != want {
            return Err(Error::Data(format!(
                "{}: expected {want} bytes, found {len}",
                path.display()
            )));
        }
        Ok(Self {
            row_starts: header.row_starts(),
            path,
            file,
            header,
            data_start,
        })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn check_example(&self, e: usize) -> Result<()> {
        if e >= self.header.n_examples() {
            return Err(headprobe_core::Error::OutOfRange {
                what: "example",
                index: e,
                limit: self.header.n_examples(),
            }
            .into());
        }
        Ok(())
    }

    fn read_rows(&self, coord: HeadCoord, first_row: usize, n_rows: usize, out: &mut Vec<f64>) -> Result<()> {
        let d = self.header.head_dim;
        let mut bytes = vec![0u8; n_rows * d * VALUE_BYTES];
        let offset = self.data_start + self.header.row_offset(coord, first_row);
        read_at(&self.file, &mut bytes, offset).map_err(|e| Error::io(&self.path, e))?;
        out.extend(
            bytes
                .chunks_exact(VALUE_BYTES)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
        );
        Ok(())
    }

    /// Rows of one head. In LAST mode one row per selected example; in ALL
    /// mode each selected example contributes its token rows contiguously.
    /// `None` selects every example in dump order.
    pub fn load_head_matrix(&self, coord: HeadCoord, selection: Option<&[usize]>) -> Result<Matrix> {
        self.header.check_coord(coord)?;
        let d = self.header.head_dim;
        let mut data = Vec::new();
        let rows = match selection {
            None => {
                let n = self.header.total_rows();
                data.reserve(n * d);
                self.read_rows(coord, 0, n, &mut data)?;
                n
            }
            Some(sel) => {
                let mut n = 0;
                for &e in sel {
                    self.check_example(e)?;
                    let k = self.header.rows_of(e);
                    self.read_rows(coord, self.row_starts[e], k, &mut data)?;
                    n += k;
                }
                n
            }
        };
        Ok(Matrix::from_vec(rows, d, data)?)
    }

    /// One row per selected example: the example's vector in LAST mode, its
    /// final token in ALL mode.
    pub fn load_last_tokens(&self, coord: HeadCoord, selection: Option<&[usize]>) -> Result<Matrix> {
        if self.header.token_mode == TokenMode::Last {
            return self.load_head_matrix(coord, selection);
        }
        self.header.check_coord(coord)?;
        let all: Vec<usize>;
        let sel = match selection {
            Some(s) => s,
            None => {
                all = (0..self.header.n_examples()).collect();
                &all
            }
        };
        let mut data = Vec::with_capacity(sel.len() * self.header.head_dim);
        for &e in sel {
            self.check_example(e)?;
            let last = self.row_starts[e] + self.header.rows_of(e) - 1;
            self.read_rows(coord, last, 1, &mut data)?;
        }
        Ok(Matrix::from_vec(sel.len(), self.header.head_dim, data)?)
    }

    /// Per-token vectors of one example (ALL mode only).
    pub fn load_token_series(&self, example_id: &str, coord: HeadCoord) -> Result<Matrix> {
        if self.header.token_mode != TokenMode::All {
            return Err(Error::NoTokenSeries);
        }
        let e = self
            .header
            .example_index(example_id)
            .ok_or_else(|| Error::NotFound(example_id.to_string()))?;
        self.load_head_matrix(coord, Some(&[e]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use headprobe_core::DType;

    fn header(mode: TokenMode) -> DumpHeader {
        DumpHeader {
            model_name: "unit".into(),
            capture_point: "test".into(),
            n_layers: 1,
            n_heads: 2,
            head_dim: 2,
            token_mode: mode,
            dtype: DType::F32LE,
            example_ids: vec!["a".into(), "b".into()],
            token_counts: (mode == TokenMode::All).then(|| vec![2, 1]),
            attributes: vec![],
        }
    }

    #[test]
    fn zero_dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.actv");
        let h = DumpHeader {
            n_heads: 1,
            example_ids: vec!["only".into()],
            ..header(TokenMode::Last)
        };
        let prefix_len = h.encode().len();
        write_dump(&path, h, [(0, 0, HeadCoord::new(0, 0), [0.0f32, 0.0])]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"ACTV");
        assert_eq!(bytes.len(), prefix_len + 8);
        assert!(bytes[prefix_len..].iter().all(|&b| b == 0));
        assert!(sidecar_path(&path).exists());
    }

    #[test]
    fn missing_and_duplicate_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.actv");
        let mut w = DumpWriter::create(&path, header(TokenMode::Last)).unwrap();
        w.write(0, 0, HeadCoord::new(0, 0), &[1.0, 2.0]).unwrap();
        let dup = w.write(0, 0, HeadCoord::new(0, 0), &[1.0, 2.0]).unwrap_err();
        assert!(dup.to_string().contains("twice"));
        let nan = w.write(1, 0, HeadCoord::new(0, 0), &[f32::NAN, 2.0]).unwrap_err();
        assert!(nan.to_string().contains("non-finite"));
        let err = w.finish().unwrap_err().to_string();
        assert!(err.contains("example 1") && err.contains("head 0") && err.contains("missing"), "{err}");
    }

    #[test]
    fn token_series_requires_all_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.actv");
        let h = header(TokenMode::All);
        let mut cells = vec![];
        for head in 0..2 {
            for (e, t) in [(0, 0), (0, 1), (1, 0)] {
                cells.push((e, t, HeadCoord::new(0, head), vec![(e * 10 + t) as f32, head as f32]));
            }
        }
        write_dump(&path, h, cells).unwrap();
        let r = DumpReader::open(&path).unwrap();
        let s = r.load_token_series("a", HeadCoord::new(0, 1)).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 1.0, 1.0, 1.0]);
        assert!(matches!(r.load_token_series("zzz", HeadCoord::new(0, 0)), Err(Error::NotFound(_))));
        let last = r.load_last_tokens(HeadCoord::new(0, 0), None).unwrap();
        assert_eq!(last.as_slice(), &[1.0, 0.0, 10.0, 0.0]);
    }
}
