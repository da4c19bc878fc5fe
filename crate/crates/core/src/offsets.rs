//! Per-latitude sampling offsets of a 3x3 spherical convolution on an ERP.
//!
//! A regular 3x3 filter is laid out on the tangent plane at `(0, 0)` with the
//! ERP pixel pitch, and the fixed tangent coordinates are carried to every row
//! with the inverse gnomonic projection. Offsets are fractional pixel
//! displacements `(d_row, d_col)` of each tap from the filter's center pixel;
//! `d_row` grows toward the south. Taps are indexed `3 * (r + 1) + (c + 1)`
//! for regular row/column offsets `r, c` in `{-1, 0, 1}`.
//!
//! Column offsets are not wrapped: near the poles a tap may land more than
//! half the image away, and consumers are expected to wrap horizontally.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{forward_gnomonic, inverse_gnomonic_raw, ErpGeometry, LatLon, TangentCoord};

pub const TAPS: usize = 9;
const MAGIC: &[u8; 4] = b"SPHC";

/// `(d_row, d_col)` for each of the nine taps.
pub type RowOffsets = [[f64; 2]; TAPS];

/// Regular row/column offsets of tap `k`.
pub fn tap_grid_position(k: usize) -> (i32, i32) {
    ((k / 3) as i32 - 1, (k % 3) as i32 - 1)
}

/// Tangent-plane coordinates of the nine taps for a filter at `(0, 0)`.
///
/// Fails when a one-pixel step reaches 90 degrees (height < 3 or width < 5).
pub fn base_tangent_grid(geometry: &ErpGeometry) -> Result<[TangentCoord; TAPS]> {
    let origin = LatLon::new(0.0, 0.0);
    let mut grid = [TangentCoord::new(0.0, 0.0); TAPS];
    for (k, slot) in grid.iter_mut().enumerate() {
        let (r, c) = tap_grid_position(k);
        // rows grow southward, latitude grows northward
        let p = LatLon::new(-r as f64 * geometry.dtheta(), c as f64 * geometry.dphi());
        *slot = forward_gnomonic(origin, p).map_err(|_| {
            Error::InvalidConfig(format!(
                "ERP {}x{} is too coarse for a 3x3 tangent-plane filter",
                geometry.height, geometry.width
            ))
        })?;
    }
    Ok(grid)
}

/// Offsets for a filter centered at latitude `theta`.
pub fn offsets_at_latitude(geometry: &ErpGeometry, theta: f64) -> Result<RowOffsets> {
    let base = base_tangent_grid(geometry)?;
    Ok(row_offsets(geometry, &base, theta))
}

fn row_offsets(geometry: &ErpGeometry, base: &[TangentCoord; TAPS], theta: f64) -> RowOffsets {
    let mut out = [[0.0; 2]; TAPS];
    for (slot, t) in out.iter_mut().zip(base) {
        let (lat, dlon) = inverse_gnomonic_raw(theta, *t);
        *slot = [(theta - lat) / geometry.dtheta(), dlon / geometry.dphi()];
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTable {
    pub geometry: ErpGeometry,
    /// One entry per pixel row; identical for every column of the row.
    pub rows: Vec<RowOffsets>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Binary,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "binary" | "bin" => Ok(Self::Binary),
            other => Err(Error::Parse(format!("unknown offset format '{other}'"))),
        }
    }
}

pub fn build_offset_table(geometry: &ErpGeometry) -> Result<OffsetTable> {
    let base = base_tangent_grid(geometry)?;
    let rows = (0..geometry.height)
        .into_par_iter()
        .map(|i| row_offsets(geometry, &base, geometry.row_latitude(i)))
        .collect();
    Ok(OffsetTable {
        geometry: *geometry,
        rows,
    })
}

impl OffsetTable {
    pub fn row(&self, i: usize) -> &RowOffsets {
        &self.rows[i]
    }

    /// Size in bytes of the binary encoding.
    pub fn binary_len(&self) -> usize {
        12 + self.rows.len() * TAPS * 2 * 8
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = |v: usize| {
            u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("dimension {v} exceeds u32")))
        };
        w.write_all(MAGIC)?;
        w.write_all(&dim(self.geometry.height)?.to_le_bytes())?;
        w.write_all(&dim(self.geometry.width)?.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.rows.len() * TAPS * 16);
        for row in &self.rows {
            for tap in row {
                buf.extend_from_slice(&tap[0].to_le_bytes());
                buf.extend_from_slice(&tap[1].to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(Error::Parse("offset table: bad magic".into()));
        }
        let height = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let geometry = ErpGeometry::new(height, width)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != height * TAPS * 16 {
            return Err(Error::Parse(format!(
                "offset table: expected {} payload bytes, found {}",
                height * TAPS * 16,
                payload.len()
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rows = values
            .chunks_exact(TAPS * 2)
            .map(|row| {
                let mut out = [[0.0; 2]; TAPS];
                for (k, slot) in out.iter_mut().enumerate() {
                    *slot = [row[2 * k], row[2 * k + 1]];
                }
                out
            })
            .collect();
        Ok(Self { geometry, rows })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::with_capacity(self.rows.len() * TAPS * 32);
        out.push_str("row,tap,d_row,d_col\n");
        for (i, row) in self.rows.iter().enumerate() {
            for (k, tap) in row.iter().enumerate() {
                out.push_str(&format!(
                    "{i},{k},{},{}\n",
                    format_sig9(tap[0]),
                    format_sig9(tap[1])
                ));
            }
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Parses the CSV encoding; the ERP width is not part of it.
    pub fn read_csv(text: &str, width: usize) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("row,tap,d_row,d_col") => {}
            _ => return Err(Error::Parse("offset csv: missing header".into())),
        }
        let mut rows: Vec<RowOffsets> = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = || Error::Parse(format!("offset csv line {}: '{line}'", n + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad());
            }
            let row: usize = fields[0].parse().map_err(|_| bad())?;
            let tap: usize = fields[1].parse().map_err(|_| bad())?;
            if row != n / TAPS || tap != n % TAPS {
                return Err(bad());
            }
            let d_row: f64 = fields[2].parse().map_err(|_| bad())?;
            let d_col: f64 = fields[3].parse().map_err(|_| bad())?;
            if tap == 0 {
                rows.push([[0.0; 2]; TAPS]);
            }
            rows[row][tap] = [d_row, d_col];
        }
        if rows.is_empty() || text.lines().count() != rows.len() * TAPS + 1 {
            return Err(Error::Parse("offset csv: incomplete table".into()));
        }
        Ok(Self {
            geometry: ErpGeometry::new(rows.len(), width)?,
            rows,
        })
    }

    pub fn export(&self, format: ExportFormat) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        match format {
            ExportFormat::Csv => self.write_csv(&mut buf)?,
            ExportFormat::Binary => self.write_binary(&mut buf)?,
        }
        Ok(buf)
    }
}

/// Plain decimal rendering with nine significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let body = if exp >= 8 {
        format!("{digits}{}", "0".repeat((exp - 8) as usize))
    } else if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
    };
    format!("{sign}{body}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g512() -> ErpGeometry {
        ErpGeometry::new(512, 1024).unwrap()
    }

    #[test]
    fn base_grid() {
        let g = g512();
        assert_eq!(g.dtheta(), 0.3515625);
        let grid = base_tangent_grid(&g).unwrap();
        assert_eq!(grid[4], TangentCoord::new(0.0, 0.0));
        // q = 1, q' = 0 is the tap one column to the east
        let east = grid[5];
        assert!((east.x - 0.3515625f64.to_radians().tan()).abs() < 1e-15);
        assert!((east.x - 0.0061360).abs() < 1e-7);
        assert_eq!(east.y, 0.0);
        // the tap one row up is north: positive y
        assert!(grid[1].y > 0.0);
        for k in 0..TAPS {
            let m = grid[TAPS - 1 - k];
            assert!((grid[k].x + m.x).abs() < 1e-12 && (grid[k].y + m.y).abs() < 1e-12);
        }
    }

    #[test]
    fn equator_is_regular() {
        let g = ErpGeometry::new(511, 1022).unwrap();
        // odd height puts a row exactly on the equator
        assert_eq!(g.row_latitude(255), 0.0);
        let row = offsets_at_latitude(&g, 0.0).unwrap();
        for (k, tap) in row.iter().enumerate() {
            let (r, c) = tap_grid_position(k);
            assert!((tap[0] - r as f64).abs() < 1e-6, "{k} {tap:?}");
            assert!((tap[1] - c as f64).abs() < 1e-6, "{k} {tap:?}");
        }
    }

    #[test]
    fn center_tap_is_zero_everywhere() {
        let t = build_offset_table(&ErpGeometry::new(64, 128).unwrap()).unwrap();
        assert!(t.rows.iter().all(|r| r[4] == [0.0, 0.0]));
    }

    #[test]
    fn spread_at_sixty_degrees() {
        let row = offsets_at_latitude(&g512(), 60.0).unwrap();
        for k in [3, 5] {
            assert!((row[k][1].abs() - 2.0).abs() / 2.0 < 0.02, "{:?}", row[k]);
        }
    }

    #[test]
    fn mirror_symmetry() {
        let g = ErpGeometry::new(90, 180).unwrap();
        let t = build_offset_table(&g).unwrap();
        for i in 0..g.height {
            let m = g.height - 1 - i;
            for k in 0..TAPS {
                let (r, c) = tap_grid_position(k);
                let mk = ((-r + 1) * 3 + (c + 1)) as usize;
                assert!((t.rows[i][k][0] + t.rows[m][mk][0]).abs() < 1e-9);
                assert!((t.rows[i][k][1] - t.rows[m][mk][1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(1.0), "1.00000000");
        assert_eq!(format_sig9(-2.0), "-2.00000000");
        assert_eq!(format_sig9(123456789.0), "123456789");
        assert_eq!(format_sig9(1.5e10), "15000000000");
        assert_eq!(format_sig9(0.00123456789123), "0.00123456789");
        assert_eq!(format_sig9(-1.0000000005), "-1.00000000");
        assert_eq!(format_sig9(0.999999999999), "1.00000000");
    }

    #[test]
    fn csv_and_binary_shapes() {
        let t = build_offset_table(&ErpGeometry::new(8, 16).unwrap()).unwrap();
        let csv = String::from_utf8(t.export(ExportFormat::Csv).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 8 * 9 + 1);
        let back = OffsetTable::read_csv(&csv, 16).unwrap();
        assert_eq!(back.export(ExportFormat::Csv).unwrap(), csv.as_bytes());
        let bin = t.export(ExportFormat::Binary).unwrap();
        assert_eq!(bin.len(), t.binary_len());
        assert_eq!(&bin[..4], b"SPHC");
        assert_eq!(OffsetTable::read_binary(&bin[..]).unwrap(), t);
    }

    #[test]
    fn parse_errors() {
        assert!(OffsetTable::read_binary(&b"NOPE\0\0\0\0\0\0\0\0"[..]).is_err());
        assert!(build_offset_table(&ErpGeometry::new(2, 4).unwrap()).is_err());
        let t = build_offset_table(&ErpGeometry::new(3, 5).unwrap()).unwrap();
        let bin = t.export(ExportFormat::Binary).unwrap();
        assert!(OffsetTable::read_binary(&bin[..bin.len() - 1]).is_err());
        assert!(OffsetTable::read_csv("row,tap,d_row,d_col\n0,0,1,2\n", 4).is_err());
        assert!(OffsetTable::read_csv("bad\n", 4).is_err());
    }
}
