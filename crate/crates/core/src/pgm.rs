//! Binary PGM (P5) images, 8- or 16-bit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("not a binary PGM (P5) image")]
    BadMagic,
    #[error("malformed PGM header: {0}")]
    Header(String),
    #[error("PGM data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    /// 255 or 65535.
    pub maxval: u16,
    /// Row-major samples.
    pub data: Vec<u16>,
}

impl Pgm {
    pub fn new(width: usize, height: usize, maxval: u16, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, maxval, data }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.data.iter().map(|&v| v as u8));
        } else {
            for &v in &self.data {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Pgm, PgmError> {
        if !bytes.starts_with(b"P5") {
            return Err(PgmError::BadMagic);
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for f in &mut fields {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            let tok = std::str::from_utf8(&bytes[start..pos]).map_err(|_| PgmError::Header("non-ascii".into()))?;
            *f = tok.parse().map_err(|_| PgmError::Header(format!("expected a number, found `{tok}`")))?;
        }
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(PgmError::Header("missing separator before data".into()));
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if maxval == 0 || maxval > 65535 {
            return Err(PgmError::Header(format!("maxval {maxval} out of range")));
        }
        let bpp = if maxval < 256 { 1 } else { 2 };
        let expected = width * height * bpp;
        let body = &bytes[pos..];
        if body.len() < expected {
            return Err(PgmError::Truncated { expected, found: body.len() });
        }
        let data = if bpp == 1 { body[..expected].iter().map(|&b| b as u16).collect() } else { body[..expected].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect() };
        Ok(Pgm { width, height, maxval: maxval as u16, data })
    }
}
