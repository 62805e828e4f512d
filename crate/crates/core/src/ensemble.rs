//! Dense storage for blocks of sample paths, with binary and CSV I/O.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

const MAGIC: &[u8; 4] = b"CLPE";
const FORMAT_VERSION: u32 = 1;

/// `n_paths` sample paths in `R^dim` on a common time grid.
///
/// Values are stored path-major: index `(path, step, coord)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    n_paths: usize,
    dim: usize,
    grid: TimeGrid,
    values: Vec<f64>,
}

impl PathEnsemble {
    pub fn zeros(n_paths: usize, dim: usize, grid: TimeGrid) -> Result<Self> {
        if n_paths == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "ensemble needs at least one path and one coordinate".into(),
            ));
        }
        Ok(Self {
            n_paths,
            dim,
            grid,
            values: vec![0.0; n_paths * grid.n_points() * dim],
        })
    }

    pub fn from_values(n_paths: usize, dim: usize, grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if n_paths == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "ensemble needs at least one path and one coordinate".into(),
            ));
        }
        let expected = n_paths * grid.n_points() * dim;
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            n_paths,
            dim,
            grid,
            values,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn path_stride(&self) -> usize {
        self.grid.n_points() * self.dim
    }

    fn offset(&self, path: usize, step: usize) -> usize {
        debug_assert!(path < self.n_paths && step <= self.grid.n_steps());
        path * self.path_stride() + step * self.dim
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let o = self.offset(path, step);
        &self.values[o..o + self.dim]
    }

    pub fn state_mut(&mut self, path: usize, step: usize) -> &mut [f64] {
        let o = self.offset(path, step);
        &mut self.values[o..o + self.dim]
    }

    /// The whole path `path` restricted to steps `0..=step`.
    pub fn prefix(&self, path: usize, step: usize) -> PathPrefix<'_> {
        let start = path * self.path_stride();
        PathPrefix {
            values: &self.values[start..start + (step + 1) * self.dim],
            dim: self.dim,
        }
    }

    /// Copy of all states at one step.
    pub fn snapshot(&self, step: usize) -> StateCloud {
        let mut data = Vec::with_capacity(self.n_paths * self.dim);
        for i in 0..self.n_paths {
            data.extend_from_slice(self.state(i, step));
        }
        StateCloud {
            dim: self.dim,
            data,
        }
    }

    /// Writes states for a single step into every path.
    pub fn set_step(&mut self, step: usize, cloud: &StateCloud) {
        debug_assert_eq!(cloud.len(), self.n_paths);
        for i in 0..self.n_paths {
            self.state_mut(i, step).copy_from_slice(cloud.atom(i));
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u64::<LittleEndian>(self.n_paths as u64)?;
        w.write_u64::<LittleEndian>(self.dim as u64)?;
        w.write_u64::<LittleEndian>(self.grid.n_steps() as u64)?;
        w.write_f64::<LittleEndian>(self.grid.t_start())?;
        w.write_f64::<LittleEndian>(self.grid.t_end())?;
        for &v in &self.values {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n_paths = r.read_u64::<LittleEndian>()? as usize;
        let dim = r.read_u64::<LittleEndian>()? as usize;
        let n_steps = r.read_u64::<LittleEndian>()? as usize;
        let t_start = r.read_f64::<LittleEndian>()?;
        let t_end = r.read_f64::<LittleEndian>()?;
        let grid = TimeGrid::new(t_start, t_end, n_steps)
            .map_err(|e| Error::Format(format!("bad grid header: {e}")))?;
        let len = n_paths
            .checked_mul(grid.n_points())
            .and_then(|x| x.checked_mul(dim))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let mut values = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut values)
            .map_err(|e| Error::Format(format!("truncated body: {e}")))?;
        Self::from_values(n_paths, dim, grid, values)
    }

    /// Long-format CSV: `path,step,t,x0,..,x{d-1}`. Meant for small ensembles.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["path".to_string(), "step".into(), "t".into()];
        header.extend((0..self.dim).map(|c| format!("x{c}")));
        wr.write_record(&header)?;
        for i in 0..self.n_paths {
            for k in 0..self.grid.n_points() {
                let mut rec = vec![i.to_string(), k.to_string(), self.grid.time(k).to_string()];
                rec.extend(self.state(i, k).iter().map(|v| v.to_string()));
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// A path observed up to (and including) some step.
#[derive(Debug, Clone, Copy)]
pub struct PathPrefix<'a> {
    values: &'a [f64],
    dim: usize,
}

impl<'a> PathPrefix<'a> {
    pub fn new(values: &'a [f64], dim: usize) -> Self {
        debug_assert!(dim > 0 && !values.is_empty() && values.len().is_multiple_of(dim));
        Self { values, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index of the last visible step.
    pub fn last_step(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn at(&self, step: usize) -> &'a [f64] {
        &self.values[step * self.dim..(step + 1) * self.dim]
    }

    pub fn current(&self) -> &'a [f64] {
        &self.values[self.values.len() - self.dim..]
    }
}

/// States of a set of particles at one instant, atom-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCloud {
    dim: usize,
    data: Vec<f64>,
}

impl StateCloud {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not split into atoms of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn atom_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Coordinate `c` of every atom.
    pub fn coordinate(&self, c: usize) -> Vec<f64> {
        self.data.chunks_exact(self.dim).map(|a| a[c]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PathEnsemble {
        let grid = TimeGrid::horizon(1.0, 3).unwrap();
        let values: Vec<f64> = (0..2 * 4 * 2).map(|v| v as f64 * 0.5 - 3.0).collect();
        PathEnsemble::from_values(2, 2, grid, values).unwrap()
    }

    #[test]
    fn indexing_is_path_major() {
        let e = sample();
        assert_eq!(e.state(0, 0), &[-3.0, -2.5]);
        assert_eq!(e.state(1, 0), &[1.0, 1.5]);
        let p = e.prefix(1, 2);
        assert_eq!(p.last_step(), 2);
        assert_eq!(p.current(), e.state(1, 2));
        assert_eq!(p.at(0), e.state(1, 0));
        let s = e.snapshot(3);
        assert_eq!(s.len(), 2);
        assert_eq!(s.atom(1), e.state(1, 3));
    }

    #[test]
    fn wrong_length_rejected() {
        let grid = TimeGrid::horizon(1.0, 3).unwrap();
        assert!(PathEnsemble::from_values(2, 2, grid, vec![0.0; 5]).is_err());
    }

    #[test]
    fn binary_roundtrip_and_corruption() {
        let e = sample();
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        assert_eq!(PathEnsemble::read_binary(&buf[..]).unwrap(), e);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(PathEnsemble::read_binary(&bad[..]), Err(Error::Format(_))));
        let truncated = &buf[..buf.len() - 8];
        assert!(PathEnsemble::read_binary(truncated).is_err());
    }

    #[test]
    fn csv_has_one_row_per_state() {
        let e = sample();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 4);
        assert!(text.starts_with("path,step,t,x0,x1"));
    }
}
