//! Flat state files: header `(n_max, mu, t)` followed by `2(2N+1)` floats,
//! real and imaginary parts interleaved.
//!
//! Binary layout (little-endian): `u64 n_max`, `f64 mu`, `f64 t`, then the
//! floats. Text layout: a header line `n_max mu t`, then one `re im` line per
//! coefficient from `n = -N` to `n = N`. Text floats use the shortest
//! representation that round-trips exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use super::wavefunction::WaveFunction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StateRecord {
    pub psi: WaveFunction,
    pub mu: f64,
    pub t: f64,
}

impl StateRecord {
    pub fn new(psi: WaveFunction, mu: f64, t: f64) -> Self {
        StateRecord { psi, mu, t }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 16 * self.psi.dim());
        out.extend_from_slice(&(self.psi.n_max() as u64).to_le_bytes());
        out.extend_from_slice(&self.mu.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        for c in self.psi.coeffs() {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 24 {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let word = |i: usize| -> [u8; 8] { bytes[i * 8..(i + 1) * 8].try_into().expect("8 bytes") };
        let n_max = u64::from_le_bytes(word(0)) as usize;
        if n_max == 0 || n_max > 1 << 20 {
            return Err(bad(format!("implausible n_max {n_max}")));
        }
        let mu = f64::from_le_bytes(word(1));
        let t = f64::from_le_bytes(word(2));
        let dim = 2 * n_max + 1;
        let expected = 24 + 16 * dim;
        if bytes.len() != expected {
            return Err(bad(format!(
                "expected {expected} bytes for n_max = {n_max}, found {}",
                bytes.len()
            )));
        }
        let coeffs = (0..dim)
            .map(|k| Complex64::new(f64::from_le_bytes(word(3 + 2 * k)), f64::from_le_bytes(word(4 + 2 * k))))
            .collect();
        Ok(StateRecord {
            psi: WaveFunction::from_coeffs(coeffs)?,
            mu,
            t,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {:?} {:?}\n", self.psi.n_max(), self.mu, self.t);
        for c in self.psi.coeffs() {
            s.push_str(&format!("{:?} {:?}\n", c.re, c.im));
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| tokens.next().ok_or_else(|| bad(format!("missing {what}")));
        let n_max: usize = next("n_max")?.parse().map_err(|e| bad(format!("bad n_max: {e}")))?;
        if n_max == 0 {
            return Err(bad("n_max must be positive".into()));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("bad float `{s}`: {e}")));
        let mu = float(next("mu")?)?;
        let t = float(next("t")?)?;
        let mut coeffs = Vec::with_capacity(2 * n_max + 1);
        for k in 0..2 * n_max + 1 {
            let re = float(next(&format!("re of coefficient {k}"))?)?;
            let im = float(next(&format!("im of coefficient {k}"))?)?;
            coeffs.push(Complex64::new(re, im));
        }
        if tokens.next().is_some() {
            return Err(bad("trailing data after coefficients".into()));
        }
        Ok(StateRecord {
            psi: WaveFunction::from_coeffs(coeffs)?,
            mu,
            t,
        })
    }

    /// Write as text when the extension is `txt`, binary otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let bytes = if is_text(path) {
            self.to_text().into_bytes()
        } else {
            self.to_bytes()
        };
        f.write_all(&bytes)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if is_text(path) {
            let text = String::from_utf8(bytes).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
            Self::from_text(&text, path)
        } else {
            Self::from_bytes(&bytes, path)
        }
    }
}

fn is_text(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "txt")
}
