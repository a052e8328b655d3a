//! Image files and the dataset manifest.
//!
//! * PPM (`P6`, 8-bit) for interchange.
//! * `SRF32`: the magic, `u32` height, width and channels (little-endian),
//!   then raw little-endian `f32` samples. Lossless.
//! * Manifest: one `split path domain` line per image, `#` comments.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Image;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SRF32_MAGIC: &[u8; 5] = b"SRF32";

fn format_err<T>(path: &Path, msg: impl fmt::Display) -> Result<T> {
    Err(Error::Format(format!("{}: {}", path.display(), msg)))
}

pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = img.shape();
    if s.len() != 3 || s[2] != 3 {
        return format_err(path, format!("PPM needs an [H,W,3] image, got {:?}", s));
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    // Header: magic, width, height, maxval, separated by whitespace/comments.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return format_err(path, "truncated PPM header");
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return format_err(path, format!("unsupported magic '{}'", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().or_else(|_| format_err(path, format!("bad number '{}'", s)));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return format_err(path, "only 8-bit PPM is supported");
    }
    let n = w * h * 3;
    if bytes.len() < pos + n {
        return format_err(path, "truncated pixel data");
    }
    let data = bytes[pos..pos + n].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(&[h, w, 3], data)
}

pub fn write_srf32(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = img.shape();
    if s.len() != 3 {
        return format_err(path, format!("SRF32 needs an [H,W,C] image, got {:?}", s));
    }
    let mut out = Vec::with_capacity(17 + img.len() * 4);
    out.extend_from_slice(SRF32_MAGIC);
    for &d in s {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_srf32(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.len() < 17 || &bytes[..5] != SRF32_MAGIC {
        return format_err(path, "not an SRF32 file");
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let n: usize = shape.iter().product();
    if bytes.len() != 17 + 4 * n {
        return format_err(path, format!("expected {} samples, found {} bytes", n, bytes.len() - 17));
    }
    let data = bytes[17..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()).clamp(0.0, 1.0))
        .collect();
    Tensor::new(&shape, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(Domain::Source),
            "target" => Some(Domain::Target),
            _ => None,
        }
    }
}

/// One image listed in a manifest. `path` is relative to the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub path: PathBuf,
    pub domain: Domain,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# split path domain\n");
        for e in &self.entries {
            s.push_str(&format!("{} {} {}\n", e.split.name(), e.path.display(), e.domain.name()));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Format(format!("manifest line {}: '{}'", i + 1, line));
            if f.len() != 3 {
                return Err(bad());
            }
            entries.push(ManifestEntry {
                split: Split::parse(f[0]).ok_or_else(bad)?,
                path: PathBuf::from(f[1]),
                domain: Domain::parse(f[2]).ok_or_else(bad)?,
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(dir.as_ref().join(MANIFEST_FILE))?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Format(format!("cannot read {}: {}", path.display(), e)))?;
        Self::parse(&text)
    }

    pub fn count(&self, split: Split, domain: Domain) -> usize {
        self.entries
            .iter()
            .filter(|e| e.split == split && e.domain == domain)
            .count()
    }
}
