use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel grid representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Repr {
    /// Occupancy in {0, 1}.
    Binary,
    /// Truncated, normalized distance to the nearest occupied voxel, in [0, 1].
    Tdf,
    /// Signed variant of [`Repr::Tdf`], in [-1, 1].
    Tsdf,
}

impl fmt::Display for Repr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Repr::Binary => "binary",
            Repr::Tdf => "tdf",
            Repr::Tsdf => "tsdf",
        })
    }
}

impl FromStr for Repr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(Repr::Binary),
            "tdf" => Ok(Repr::Tdf),
            "tsdf" => Ok(Repr::Tsdf),
            other => Err(Error::InvalidArgument(format!(
                "unknown representation '{other}'"
            ))),
        }
    }
}

/// Dense cubic grid of `size³` values, stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    size: usize,
    repr: Repr,
    values: Vec<f64>,
}

impl VoxelGrid {
    /// Grid filled with a constant.
    pub fn filled(size: usize, repr: Repr, value: f64) -> Self {
        Self {
            size,
            repr,
            values: vec![value; size * size * size],
        }
    }

    /// Wraps existing values, checking length and the representation's range.
    pub fn from_values(size: usize, repr: Repr, values: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("grid size must be positive".into()));
        }
        if values.len() != size * size * size {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {size}³ grid",
                values.len()
            )));
        }
        let ok = |v: f64| match repr {
            Repr::Binary => v == 0.0 || v == 1.0,
            Repr::Tdf => (0.0..=1.0).contains(&v),
            Repr::Tsdf => (-1.0..=1.0).contains(&v),
        };
        if let Some(i) = values.iter().position(|&v| !ok(v)) {
            return Err(Error::InvalidArgument(format!(
                "value {} at {i} is outside the {repr} range",
                values[i]
            )));
        }
        Ok(Self { size, repr, values })
    }

    pub(crate) fn from_raw(size: usize, repr: Repr, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), size * size * size);
        Self { size, repr, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.size * (y + self.size * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.index(x, y, z)]
    }

    /// Inverse of [`VoxelGrid::index`].
    #[inline]
    pub fn coords_of(&self, i: usize) -> [usize; 3] {
        let s = self.size;
        [i % s, (i / s) % s, i / (s * s)]
    }

    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Writes the text dump: `PCQGRID <size> <repr>` then the values.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "PCQGRID {} {}", self.size, self.repr)?;
        for row in self.values.chunks(self.size) {
            let line = row
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|e| Error::parse(1, format!("unreadable grid dump: {e}")))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty grid dump"))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        let (size, repr) = match toks.as_slice() {
            ["PCQGRID", size, repr] => (
                size.parse::<usize>()
                    .map_err(|_| Error::parse(1, format!("bad grid size '{size}'")))?,
                repr.parse::<Repr>()?,
            ),
            _ => return Err(Error::parse(1, "missing PCQGRID header")),
        };
        let mut values = Vec::with_capacity(size * size * size);
        for (i, line) in lines.enumerate() {
            for tok in line.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::parse(i + 2, format!("bad value '{tok}'")))?,
                );
            }
        }
        Self::from_values(size, repr, values)
    }
}
