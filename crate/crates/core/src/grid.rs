// SPDX-License-Identifier: Apache-2.0
//! Row-major 2-D storage shared by rasters, masks and images.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

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
            return Err(Error::dims(height * width, data.len()));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Grid {
            height,
            width,
            data,
        }
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
    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, y: usize, x: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

impl<T: Clone + Default> Grid<T> {
    /// Copies the `height` x `width` window whose top-left corner is `(y0, x0)`.
    /// Reads outside the grid yield `T::default()`.
    pub fn window(&self, y0: isize, x0: isize, height: usize, width: usize) -> Grid<T> {
        Grid::from_fn(height, width, |y, x| {
            let sy = y0 + y as isize;
            let sx = x0 + x as isize;
            if sy < 0 || sx < 0 || sy as usize >= self.height || sx as usize >= self.width {
                T::default()
            } else {
                self.get(sy as usize, sx as usize).clone()
            }
        })
    }

    /// Embeds the grid at `(top, left)` inside a larger zero grid.
    pub fn pad(&self, top: usize, left: usize, height: usize, width: usize) -> Grid<T> {
        self.window(-(top as isize), -(left as isize), height, width)
    }

    /// Rotates by 90 degrees counter-clockwise.
    pub fn rot90(&self) -> Grid<T> {
        let (h, w) = self.dims();
        Grid::from_fn(w, h, |y, x| self.get(x, w - 1 - y).clone())
    }
}
