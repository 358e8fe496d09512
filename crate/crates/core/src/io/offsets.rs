//! CSV dumps of stencil points, offsets and attention weights.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::geometry::CoordGrid;

pub const OFFSET_HEADER: &str =
    "query_x,query_y,group,point_index,ref_x,ref_y,sample_x,sample_y,weight";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetRow {
    pub query_x: usize,
    pub query_y: usize,
    pub group: usize,
    pub point_index: usize,
    pub ref_x: f64,
    pub ref_y: f64,
    pub sample_x: f64,
    pub sample_y: f64,
    pub weight: f64,
}

/// Rows for batch item 0, keeping queries whose coordinates are multiples
/// of `stride` (`out_h / stride` rows by `out_w / stride` columns).
pub fn offset_rows(grid: &CoordGrid, attention: &[f64], stride: usize) -> Result<Vec<OffsetRow>> {
    if stride == 0 {
        return Err(Error::config("stride must be >= 1"));
    }
    let expected = grid.batch * grid.pixels() * grid.groups * grid.points;
    if attention.len() != expected {
        return Err(Error::dimension("offset_rows", expected, attention.len()));
    }
    let mut rows = Vec::new();
    for qy in (0..grid.out_h / stride).map(|i| i * stride) {
        for qx in (0..grid.out_w / stride).map(|i| i * stride) {
            let pix = qy * grid.out_w + qx;
            for g in 0..grid.groups {
                for j in 0..grid.points {
                    let slot = grid.slot(0, pix, g, j);
                    let r = grid.r[pix * grid.points + j];
                    let s = grid.r_prime[slot];
                    rows.push(OffsetRow {
                        query_x: qx,
                        query_y: qy,
                        group: g,
                        point_index: j,
                        ref_x: r[0],
                        ref_y: r[1],
                        sample_x: s[0],
                        sample_y: s[1],
                        weight: attention[slot],
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_offset_dump(
    path: impl AsRef<Path>,
    grid: &CoordGrid,
    attention: &[f64],
    stride: usize,
) -> Result<usize> {
    let rows = offset_rows(grid, attention, stride)?;
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(OFFSET_HEADER);
    out.push('\n');
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{:?},{:?},{:?},{:?},{:?}\n",
            r.query_x,
            r.query_y,
            r.group,
            r.point_index,
            r.ref_x,
            r.ref_y,
            r.sample_x,
            r.sample_y,
            r.weight
        ));
    }
    write_bytes(path.as_ref(), out.as_bytes())?;
    Ok(rows.len())
}

pub fn read_offset_dump(path: impl AsRef<Path>) -> Result<Vec<OffsetRow>> {
    let bytes = read_bytes(path.as_ref())?;
    let text =
        std::str::from_utf8(&bytes).map_err(|e| Error::parse(e.valid_up_to(), "not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some(OFFSET_HEADER) {
        return Err(Error::parse(0, "missing offset dump header"));
    }
    let mut offset = OFFSET_HEADER.len() + 1;
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse(offset, format!("malformed row {line:?}"));
        if f.len() != 9 {
            return Err(bad());
        }
        let u = |i: usize| f[i].parse::<usize>().map_err(|_| bad());
        let x = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        rows.push(OffsetRow {
            query_x: u(0)?,
            query_y: u(1)?,
            group: u(2)?,
            point_index: u(3)?,
            ref_x: x(4)?,
            ref_y: x(5)?,
            sample_x: x(6)?,
            sample_y: x(7)?,
            weight: x(8)?,
        });
        offset += line.len() + 1;
    }
    Ok(rows)
}
