use crate::error::{dim_err, Result};

/// A `channels × height × width` feature map stored channel-major, then
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T = f64> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor3<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        check_dims(channels, height, width)?;
        Ok(Self {
            channels,
            height,
            width,
            data: vec![T::default(); channels * height * width],
        })
    }
}

impl<T: Copy> Tensor3<T> {
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        check_dims(channels, height, width)?;
        if data.len() != channels * height * width {
            return dim_err(format!(
                "tensor data has {} samples, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        check_dims(channels, height, width)?;
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    data.push(f(c, h, w));
                }
            }
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset `c·H·W + h·W + w`.
    #[inline]
    pub fn offset(&self, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(c < self.channels && h < self.height && w < self.width);
        (c * self.height + h) * self.width + w
    }

    /// Inverse of [`Tensor3::offset`].
    pub fn index_of(&self, offset: usize) -> (usize, usize, usize) {
        let plane = self.height * self.width;
        (offset / plane, (offset % plane) / self.width, offset % self.width)
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, h: usize, w: usize, v: T) {
        let o = self.offset(c, h, w);
        self.data[o] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// One row of one channel.
    #[inline]
    pub fn row(&self, c: usize, h: usize) -> &[T] {
        let start = self.offset(c, h, 0);
        &self.data[start..start + self.width]
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Tensor3<U> {
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Extracts channel `c` as a single-channel tensor.
    pub fn channel(&self, c: usize) -> Tensor3<T> {
        Tensor3 {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.plane(c).to_vec(),
        }
    }

    /// Stacks same-sized single- or multi-channel tensors along the channel axis.
    pub fn stack(parts: &[Tensor3<T>]) -> Result<Tensor3<T>> {
        let Some(first) = parts.first() else {
            return dim_err("cannot stack zero tensors");
        };
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return dim_err(format!(
                    "stack: {}x{} does not match {}x{}",
                    p.height, p.width, h, w
                ));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Tensor3::from_vec(channels, h, w, data)
    }
}

fn check_dims(channels: usize, height: usize, width: usize) -> Result<()> {
    if channels == 0 || height == 0 || width == 0 {
        return dim_err(format!(
            "tensor dimensions must be positive, got {channels}x{height}x{width}"
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_empty_dimensions() {
        assert!(Tensor3::<f64>::zeros(0, 1, 1).is_err());
        assert!(Tensor3::from_vec(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn stack_and_channel_split() {
        let a = Tensor3::from_vec(1, 1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor3::from_vec(1, 1, 2, vec![3.0, 4.0]).unwrap();
        let s = Tensor3::stack(&[a.clone(), b]).unwrap();
        assert_eq!(s.shape(), (2, 1, 2));
        assert_eq!(s.get(1, 0, 1), 4.0);
        assert_eq!(s.channel(0), a);
    }

    proptest! {
        #[test]
        fn offset_is_a_bijection(c in 1usize..5, h in 1usize..6, w in 1usize..6) {
            let t = Tensor3::<f64>::zeros(c, h, w).unwrap();
            let mut seen = vec![false; t.len()];
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        let o = t.offset(ci, hi, wi);
                        prop_assert!(!seen[o]);
                        seen[o] = true;
                        prop_assert_eq!(t.index_of(o), (ci, hi, wi));
                    }
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
