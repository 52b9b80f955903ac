//! Uniform rectilinear cell-centered grids and zone masks over their states.
//!
//! States are numbered x-fastest: `k = i + nx * (j + ny * l)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell-centered uniform grid. `nz == 1` describes a 2D domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl StructuredGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("grid dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(Error::invalid(format!(
                "grid spacing must be finite and positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid(format!("grid origin must be finite, got {origin:?}")));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .ok_or_else(|| Error::invalid("grid state count overflows"))?;
        Ok(Self { dims, spacing, origin })
    }

    /// 2D grid with unit depth.
    pub fn new_2d(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        Self::new([nx, ny, 1], [dx, dy, 1.0], [0.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn n_states(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_2d(&self) -> bool {
        self.dims[2] == 1
    }

    /// Physical extent along each axis.
    pub fn lengths(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing[a])
    }

    pub fn state_index(&self, ijk: [usize; 3]) -> Result<usize> {
        if (0..3).any(|a| ijk[a] >= self.dims[a]) {
            return Err(Error::IndexOutOfRange { ijk, dims: self.dims });
        }
        Ok(self.index_unchecked(ijk))
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    /// Inverse of [`state_index`](Self::state_index).
    pub fn ijk(&self, state: usize) -> Result<[usize; 3]> {
        if state >= self.n_states() {
            return Err(Error::StateOutOfRange {
                state,
                n_states: self.n_states(),
            });
        }
        Ok(self.ijk_unchecked(state))
    }

    #[inline]
    pub(crate) fn ijk_unchecked(&self, state: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [state % nx, (state / nx) % ny, state / (nx * ny)]
    }

    pub fn cell_center(&self, state: usize) -> Result<[f64; 3]> {
        let ijk = self.ijk(state)?;
        Ok(self.center_of(ijk))
    }

    #[inline]
    pub(crate) fn center_of(&self, ijk: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + (ijk[a] as f64 + 0.5) * self.spacing[a])
    }

    /// Volume of one cell. Uniform, so independent of the state.
    pub fn cell_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn total_volume(&self) -> f64 {
        self.n_states() as f64 * self.cell_volume()
    }

    /// Area of a face normal to `axis`.
    pub fn face_area(&self, axis: usize) -> f64 {
        match axis {
            0 => self.spacing[1] * self.spacing[2],
            1 => self.spacing[0] * self.spacing[2],
            _ => self.spacing[0] * self.spacing[1],
        }
    }

    /// Neighbor across the face normal to `axis` in direction `+1` (`upper`)
    /// or `-1`. `None` on the domain boundary.
    #[inline]
    pub(crate) fn neighbor(&self, state: usize, axis: usize, upper: bool) -> Option<usize> {
        let mut ijk = self.ijk_unchecked(state);
        if upper {
            if ijk[axis] + 1 >= self.dims[axis] {
                return None;
            }
            ijk[axis] += 1;
        } else {
            if ijk[axis] == 0 {
                return None;
            }
            ijk[axis] -= 1;
        }
        Some(self.index_unchecked(ijk))
    }

    /// States whose cell centers lie inside the closed box `[lo, hi]`.
    pub fn box_mask(&self, lo: [f64; 3], hi: [f64; 3]) -> Result<ZoneMask> {
        if (0..3).any(|a| !(lo[a] <= hi[a])) {
            return Err(Error::invalid(format!("box corners not ordered: {lo:?} > {hi:?}")));
        }
        let mut mask = ZoneMask::empty(self.n_states());
        for k in 0..self.n_states() {
            let c = self.center_of(self.ijk_unchecked(k));
            if (0..3).all(|a| lo[a] <= c[a] && c[a] <= hi[a]) {
                mask.members[k] = true;
            }
        }
        Ok(mask)
    }
}

/// Subset of the states of a grid (or of any state space of fixed size).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneMask {
    members: Vec<bool>,
}

impl ZoneMask {
    pub fn empty(n_states: usize) -> Self {
        Self {
            members: vec![false; n_states],
        }
    }

    pub fn all(n_states: usize) -> Self {
        Self {
            members: vec![true; n_states],
        }
    }

    pub fn from_states(n_states: usize, states: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = Self::empty(n_states);
        for s in states {
            if s >= n_states {
                return Err(Error::StateOutOfRange { state: s, n_states });
            }
            mask.members[s] = true;
        }
        Ok(mask)
    }

    pub fn n_states(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn contains(&self, state: usize) -> bool {
        self.members.get(state).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    /// Member states in ascending order.
    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k)
    }

    pub fn complement(&self) -> Self {
        Self {
            members: self.members.iter().map(|m| !m).collect(),
        }
    }

    pub fn union(&self, other: &ZoneMask) -> Result<Self> {
        self.check_same_size(other)?;
        Ok(Self {
            members: self.members.iter().zip(&other.members).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// Grows the state space to `n_states`, marking the new trailing states
    /// as members when `fill` is set. Used to cover an absorbing exit state.
    pub fn extended(&self, n_states: usize, fill: bool) -> Self {
        let mut members = self.members.clone();
        if n_states > members.len() {
            members.resize(n_states, fill);
        }
        Self { members }
    }

    fn check_same_size(&self, other: &ZoneMask) -> Result<()> {
        if self.n_states() != other.n_states() {
            return Err(Error::invalid(format!(
                "mask sizes differ: {} vs {}",
                self.n_states(),
                other.n_states()
            )));
        }
        Ok(())
    }
}
