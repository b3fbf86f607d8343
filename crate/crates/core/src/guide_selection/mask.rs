use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GuideError;

/// How tightly the regenerate region follows the subject.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum MaskLevel {
    #[default]
    Accurate,
    Moderate,
    Imprecise,
}

impl std::str::FromStr for MaskLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accurate" => Ok(MaskLevel::Accurate),
            "moderate" => Ok(MaskLevel::Moderate),
            "imprecise" => Ok(MaskLevel::Imprecise),
            other => Err(format!("unknown mask level `{other}`")),
        }
    }
}

impl std::fmt::Display for MaskLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskLevel::Accurate => "accurate",
            MaskLevel::Moderate => "moderate",
            MaskLevel::Imprecise => "imprecise",
        })
    }
}

/// Binary raster, row-major; `true` marks the region to regenerate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.cells[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_subset_of(&self, other: &Raster) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    /// `(min_x, min_y, max_x, max_y)` of the true cells.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }

    /// Parse a binary PGM (`P5`, maxval ≤ 255); any nonzero byte is true.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, GuideError> {
        let bad = |m: &str| GuideError::Raster(m.to_string());
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
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
                return Err(bad("truncated header"));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?,
            );
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary graymap (magic P5)"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("invalid header number"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit graymaps are supported"));
        }
        pos += 1;
        let data = bytes
            .get(pos..pos + width * height)
            .ok_or_else(|| bad("truncated pixel data"))?;
        Ok(Self {
            width,
            height,
            cells: data.iter().map(|&b| b != 0).collect(),
        })
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.cells.iter().map(|&c| if c { 255u8 } else { 0 }));
        out
    }

    pub fn load(path: &Path) -> Result<Self, GuideError> {
        let bytes = std::fs::read(path)
            .map_err(|e| GuideError::Raster(format!("{}: {e}", path.display())))?;
        Self::from_pgm(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), GuideError> {
        std::fs::write(path, self.to_pgm())
            .map_err(|e| GuideError::Raster(format!("{}: {e}", path.display())))
    }
}

/// Union of Euclidean disks of radius `r` centred at every true cell.
pub fn dilate_disk(mask: &Raster, r: usize) -> Raster {
    let (w, h) = (mask.width, mask.height);
    // Prefix sums per row make "any true cell in [x0, x1] of row y" O(1).
    let prefix: Vec<Vec<u32>> = (0..h)
        .map(|y| {
            let mut p = vec![0u32; w + 1];
            for x in 0..w {
                p[x + 1] = p[x] + u32::from(mask.get(x, y));
            }
            p
        })
        .collect();
    let half_width: Vec<usize> = (0..=r).map(|dy| isqrt(r * r - dy * dy)).collect();
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let hit = (y.saturating_sub(r)..=(y + r).min(h.saturating_sub(1))).any(|sy| {
                let hw = half_width[sy.abs_diff(y)];
                let x0 = x.saturating_sub(hw);
                let x1 = (x + hw).min(w - 1);
                prefix[sy][x1 + 1] > prefix[sy][x0]
            });
            out.set(x, y, hit);
        }
    }
    out
}

fn isqrt(n: usize) -> usize {
    let mut s = (n as f64).sqrt() as usize;
    while s * s > n {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= n {
        s += 1;
    }
    s
}

/// Dilation radius for the moderate level: 10% of the image width, rounded.
pub fn moderate_radius(image_width: usize) -> usize {
    (0.10 * image_width as f64).round() as usize
}

pub fn delineate_mask(
    accurate: &Raster,
    level: MaskLevel,
    image_width: usize,
) -> Result<Raster, GuideError> {
    let Some((x0, y0, x1, y1)) = accurate.bounding_box() else {
        return Err(GuideError::EmptyMask);
    };
    Ok(match level {
        MaskLevel::Accurate => accurate.clone(),
        MaskLevel::Moderate => dilate_disk(accurate, moderate_radius(image_width)),
        MaskLevel::Imprecise => {
            let mut out = Raster::new(accurate.width, accurate.height);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    out.set(x, y, true);
                }
            }
            out
        }
    })
}
