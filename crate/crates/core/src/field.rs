use serde::{Deserialize, Serialize};

/// A scalar field on a uniform 2D grid, stored row-major with the y index
/// outermost (`data[j * nx + i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Field2<T> {
    nx: usize,
    ny: usize,
    data: Vec<T>,
}

impl<T: Copy> Field2<T> {
    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Self {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    /// Panics if `data.len() != nx * ny`.
    pub fn from_vec(nx: usize, ny: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nx * ny, "field data length");
        Self { nx, ny, data }
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                data.push(f(i, j));
            }
        }
        Self { nx, ny, data }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[j * self.nx + i] = value;
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

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Field2<U> {
        Field2 {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Field2<U>) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

/// Shape record used in manifests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape2 {
    pub nx: usize,
    pub ny: usize,
}
