//! Binary greyscale (P5) images.

use std::io::Write;
use std::path::Path;

use discflow::flows::Level;
use discflow::{Error, Result};

/// A greyscale image with one byte per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Pgm {
    /// Binary lattice to image: level 1 is white, 0 black.
    pub fn from_levels(height: usize, width: usize, levels: &[Level]) -> Result<Self> {
        if levels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} pixels for a {height}x{width} image",
                levels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels: levels.iter().map(|&v| if v > 0 { 255 } else { 0 }).collect(),
        })
    }

    pub fn to_levels(&self) -> Vec<Level> {
        self.pixels.iter().map(|&p| Level::from(p >= 128)).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.pixels)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut fields = Vec::new();
        let mut at = 0;
        while fields.len() < 4 {
            while at < bytes.len() && bytes[at].is_ascii_whitespace() {
                at += 1;
            }
            if bytes.get(at) == Some(&b'#') {
                while at < bytes.len() && bytes[at] != b'\n' {
                    at += 1;
                }
                continue;
            }
            let start = at;
            while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
                at += 1;
            }
            if start == at {
                return Err(Error::Format(format!("{}: truncated PGM header", path.display())));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..at]).into_owned());
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(Error::Format(format!("{}: not an 8-bit P5 image", path.display())));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("{}: bad PGM size `{s}`", path.display())))
        };
        let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
        let pixels = bytes.get(at + 1..).unwrap_or_default().to_vec();
        if pixels.len() != width * height {
            return Err(Error::Format(format!(
                "{}: {} pixel bytes for {width}x{height}",
                path.display(),
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Tiles equally sized images row by row, `columns` per row, separated
    /// by one grey pixel.
    pub fn grid(tiles: &[Pgm], columns: usize) -> Result<Self> {
        let first = tiles
            .first()
            .ok_or_else(|| Error::Config("no images to tile".into()))?;
        let (w, h) = (first.width, first.height);
        if tiles.iter().any(|t| t.width != w || t.height != h) {
            return Err(Error::Dimension("tiles differ in size".into()));
        }
        let columns = columns.clamp(1, tiles.len());
        let rows = tiles.len().div_ceil(columns);
        let width = columns * (w + 1) - 1;
        let height = rows * (h + 1) - 1;
        let mut pixels = vec![128u8; width * height];
        for (n, t) in tiles.iter().enumerate() {
            let (r0, c0) = ((n / columns) * (h + 1), (n % columns) * (w + 1));
            for r in 0..h {
                let dst = (r0 + r) * width + c0;
                pixels[dst..dst + w].copy_from_slice(&t.pixels[r * w..(r + 1) * w]);
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}
