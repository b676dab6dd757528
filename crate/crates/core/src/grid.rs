//! Row-major 2-D grids used for masks, label maps and blob maps.

use crate::error::{dim_err, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Per-pixel {0,1} mask; `true` is a one.
pub type BinaryMask = Grid<bool>;

/// Per-pixel semantic class ids.
pub type LabelMap = Grid<u8>;

/// Arg-max prediction; same representation as a label map.
pub type HardMask = LabelMap;

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dim_err!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            ));
        }
        Ok(Grid { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Grid { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.width + j] = value;
    }

    /// Bounds-checked access with signed coordinates.
    #[inline]
    pub fn get_signed(&self, i: isize, j: isize) -> Option<&T> {
        if i < 0 || j < 0 || i as usize >= self.height || j as usize >= self.width {
            None
        } else {
            Some(&self.data[i as usize * self.width + j as usize])
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_same_dims<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(dim_err!(
                "{what}: {}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ));
        }
        Ok(())
    }
}

impl<T: Clone> Grid<T> {
    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        Grid::from_fn(self.height, self.width, |i, j| self.get(i, self.width - 1 - j).clone())
    }
}

impl BinaryMask {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        self.map(|&b| !b)
    }
}
