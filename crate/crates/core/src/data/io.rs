//! Binary PPM (rgb), PFM (depth) and the CSV manifest.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, SampleSpec, SceneFamily, SceneSample};
use crate::tensor::{Shape, Tensor};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::MalformedHeader {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Whitespace-separated header tokens, skipping `#` comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self) -> Option<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()
    }

    fn number<T: std::str::FromStr>(&mut self, path: &Path, what: &str) -> Result<T, DataError> {
        let tok = self.token().ok_or_else(|| malformed(path, format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| malformed(path, format!("{what} {tok:?} is not a number")))
    }

    /// Consumes the single whitespace byte that ends the header.
    fn payload(self, path: &Path) -> Result<&'a [u8], DataError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(malformed(path, "header not terminated by whitespace")),
        }
    }
}

fn check_magic(path: &Path, bytes: &[u8], expected: &'static str) -> Result<(), DataError> {
    let found = &bytes[..bytes.len().min(2)];
    if found != expected.as_bytes() || !bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return Err(DataError::BadMagic {
            path: path.display().to_string(),
            expected,
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
        });
    }
    Ok(())
}

fn dims(path: &Path, h: &mut Header) -> Result<(usize, usize), DataError> {
    let w: usize = h.number(path, "width")?;
    let hh: usize = h.number(path, "height")?;
    if w == 0 || hh == 0 {
        return Err(malformed(path, format!("zero dimension {w}x{hh}")));
    }
    Ok((w, hh))
}

pub fn write_ppm(path: &Path, rgb: &Tensor) -> Result<(), DataError> {
    let [_, c, h, w] = rgb.shape().dims();
    assert_eq!(c, 3, "PPM needs three channels");
    let n = h * w;
    let v = rgb.values();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * n);
    for i in 0..n {
        for ch in 0..3 {
            out.push((v[ch * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_ppm(path: &Path) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    check_magic(path, &bytes, "P6")?;
    let mut h = Header { bytes: &bytes, pos: 2 };
    let (w, hh) = dims(path, &mut h)?;
    let max: u32 = h.number(path, "maxval")?;
    if max != 255 {
        return Err(malformed(path, format!("maxval {max}, only 255 is supported")));
    }
    let payload = h.payload(path)?;
    let n = w * hh;
    if payload.len() < 3 * n {
        return Err(DataError::Truncated {
            path: path.display().to_string(),
            expected: 3 * n,
            got: payload.len(),
        });
    }
    let mut v = vec![0.0; 3 * n];
    for i in 0..n {
        for ch in 0..3 {
            v[ch * n + i] = payload[3 * i + ch] as f64 / 255.0;
        }
    }
    let shape = Shape::new(1, 3, hh, w).map_err(|e| malformed(path, e.to_string()))?;
    Ok(Tensor::from_vec(shape, v).expect("length matches"))
}

/// Little-endian PFM, rows stored bottom to top.
pub fn write_pfm(path: &Path, depth: &Tensor) -> Result<(), DataError> {
    let [_, c, h, w] = depth.shape().dims();
    assert_eq!(c, 1, "PFM writer handles single-channel maps");
    let v = depth.values();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for y in (0..h).rev() {
        for &d in &v[y * w..(y + 1) * w] {
            out.extend_from_slice(&(d as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_pfm(path: &Path) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    check_magic(path, &bytes, "Pf")?;
    let mut h = Header { bytes: &bytes, pos: 2 };
    let (w, hh) = dims(path, &mut h)?;
    let scale: f64 = h.number(path, "scale")?;
    if scale >= 0.0 {
        return Err(malformed(path, format!("scale {scale} means big-endian, which is unsupported")));
    }
    let payload = h.payload(path)?;
    let n = w * hh;
    if payload.len() < 4 * n {
        return Err(DataError::Truncated {
            path: path.display().to_string(),
            expected: 4 * n,
            got: payload.len(),
        });
    }
    let mut v = vec![0.0; n];
    for (row, chunk) in payload[..4 * n].chunks_exact(4 * w).enumerate() {
        let y = hh - 1 - row;
        for (x, b) in chunk.chunks_exact(4).enumerate() {
            v[y * w + x] = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    let shape = Shape::new(1, 1, hh, w).map_err(|e| malformed(path, e.to_string()))?;
    Ok(Tensor::from_vec(shape, v).expect("length matches"))
}

pub fn write_sample(rgb_path: &Path, depth_path: &Path, sample: &SceneSample) -> Result<(), DataError> {
    write_ppm(rgb_path, &sample.rgb)?;
    write_pfm(depth_path, &sample.depth)
}

pub fn read_sample(entry: &ManifestEntry) -> Result<SceneSample, DataError> {
    let rgb = read_ppm(&entry.rgb_path)?;
    let depth = read_pfm(&entry.depth_path)?;
    if (rgb.shape().height(), rgb.shape().width()) != (depth.shape().height(), depth.shape().width()) {
        return Err(malformed(
            &entry.depth_path,
            format!("depth {} does not match rgb {}", depth.shape(), rgb.shape()),
        ));
    }
    Ok(SceneSample {
        rgb,
        depth,
        family: entry.family,
        seed: entry.seed,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub family: SceneFamily,
    pub seed: u64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
}

impl ManifestEntry {
    pub fn spec(&self) -> SampleSpec {
        SampleSpec {
            family: self.family,
            seed: self.seed,
        }
    }
}

/// Paths are written relative to the manifest's directory when possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DataError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.family,
            e.seed,
            rel(&e.rgb_path),
            rel(&e.depth_path)
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let bad = |line: usize, reason: String| DataError::Manifest {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let family = fields[0].parse().map_err(|e: DataError| bad(i + 1, e.to_string()))?;
        let seed = fields[1]
            .parse()
            .map_err(|_| bad(i + 1, format!("seed {:?} is not an integer", fields[1])))?;
        entries.push(ManifestEntry {
            family,
            seed,
            rgb_path: base.join(fields[2]),
            depth_path: base.join(fields[3]),
        });
    }
    Ok(entries)
}

/// Renders every spec into `dir` and writes `{split}.csv` listing them.
pub fn write_dataset(
    dir: &Path,
    split: &str,
    specs: &[SampleSpec],
    height: usize,
    width: usize,
) -> Result<PathBuf, DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let sample = spec.generate(height, width)?;
        let rgb_path = dir.join(format!("{split}_{i:05}_{}.ppm", spec.family));
        let depth_path = dir.join(format!("{split}_{i:05}_{}.pfm", spec.family));
        write_sample(&rgb_path, &depth_path, &sample)?;
        entries.push(ManifestEntry {
            family: spec.family,
            seed: spec.seed,
            rgb_path,
            depth_path,
        });
    }
    let manifest = dir.join(format!("{split}.csv"));
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
