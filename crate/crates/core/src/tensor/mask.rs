use ndarray::Array2;

use crate::error::{invalid, mismatch, Result};

/// Cartesian line subsampling pattern: every `accel`-th phase-encode row is
/// acquired, starting at `phase_offset`. Columns are always fully sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingMask {
    n_y: usize,
    n_x: usize,
    accel: usize,
    phase_offset: usize,
}

impl SamplingMask {
    pub fn new(n_y: usize, n_x: usize, accel: usize, phase_offset: usize) -> Result<Self> {
        if n_y == 0 || n_x == 0 {
            return Err(invalid("mask dimensions must be positive"));
        }
        if accel == 0 {
            return Err(invalid("acceleration factor must be at least 1"));
        }
        if phase_offset >= accel {
            return Err(invalid(format!(
                "phase offset {phase_offset} must lie in [0, {accel})"
            )));
        }
        if phase_offset >= n_y {
            return Err(invalid("mask would contain no acquired rows"));
        }
        Ok(Self {
            n_y,
            n_x,
            accel,
            phase_offset,
        })
    }

    /// Fully sampled mask (`accel == 1`).
    pub fn full(n_y: usize, n_x: usize) -> Result<Self> {
        Self::new(n_y, n_x, 1, 0)
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn accel(&self) -> usize {
        self.accel
    }

    pub fn phase_offset(&self) -> usize {
        self.phase_offset
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_y, self.n_x)
    }

    #[inline]
    pub fn is_acquired(&self, row: usize) -> bool {
        row >= self.phase_offset && (row - self.phase_offset).is_multiple_of(self.accel)
    }

    /// Position of `row` within the acceleration period, 0 for acquired rows.
    #[inline]
    pub fn row_offset(&self, row: usize) -> usize {
        (row + self.accel - self.phase_offset % self.accel) % self.accel
    }

    pub fn acquired_rows(&self) -> Vec<usize> {
        (0..self.n_y).filter(|&r| self.is_acquired(r)).collect()
    }

    pub fn missing_rows(&self) -> Vec<usize> {
        (0..self.n_y).filter(|&r| !self.is_acquired(r)).collect()
    }

    pub fn first_acquired_row(&self) -> usize {
        self.phase_offset
    }

    pub fn last_acquired_row(&self) -> usize {
        self.phase_offset + (self.n_y - 1 - self.phase_offset) / self.accel * self.accel
    }

    pub fn to_matrix(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.n_y, self.n_x), |(r, _)| self.is_acquired(r))
    }

    /// Recovers the line pattern from an explicit boolean matrix, rejecting
    /// anything that is not a regular row pattern.
    pub fn from_matrix(acquired: &Array2<bool>) -> Result<Self> {
        let (n_y, n_x) = acquired.dim();
        let mut rows = Vec::new();
        for (r, row) in acquired.outer_iter().enumerate() {
            let any = row.iter().any(|&v| v);
            let all = row.iter().all(|&v| v);
            if any && !all {
                return Err(invalid(format!("row {r} is only partially acquired")));
            }
            if all {
                rows.push(r);
            }
        }
        let Some(&first) = rows.first() else {
            return Err(invalid("mask has no acquired rows"));
        };
        // a single acquired row is read as the coarsest pattern that contains it
        let accel = if rows.len() > 1 { rows[1] - rows[0] } else { n_y };
        let mask = Self::new(n_y, n_x, accel, first % accel)?;
        if mask.acquired_rows() != rows {
            return Err(invalid("acquired rows do not form a periodic pattern"));
        }
        Ok(mask)
    }

    pub fn check_dims(&self, n_y: usize, n_x: usize) -> Result<()> {
        if (n_y, n_x) != (self.n_y, self.n_x) {
            return Err(mismatch(format!(
                "mask is {}x{} but data is {n_y}x{n_x}",
                self.n_y, self.n_x
            )));
        }
        Ok(())
    }
}
