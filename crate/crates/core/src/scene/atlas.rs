use crate::error::{Error, Result};
use crate::real::{cast_vec, Real};

/// A `height x width x channels` feature image, row-major with channels
/// innermost. Row 0 corresponds to `v = 0`.
///
/// When quantized, `indices` holds one codebook row per texel and the
/// rendering path reads codes instead of `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureAtlas<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
    indices: Option<Vec<u16>>,
}

impl<T: Real> FeatureAtlas<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invariant(
                "atlas shape",
                format!("{height}x{width}x{channels} has an empty dimension"),
            ));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::dimension("atlas data", expected, data.len()));
        }
        Ok(FeatureAtlas {
            height,
            width,
            channels,
            data,
            indices: None,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![T::zero(); height * width * channels],
        )
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn texel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn texel(&self, index: usize) -> &[T] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn texel_mut(&mut self, index: usize) -> &mut [T] {
        let c = self.channels;
        &mut self.data[index * c..(index + 1) * c]
    }

    pub fn indices(&self) -> Option<&[u16]> {
        self.indices.as_deref()
    }

    pub fn indices_mut(&mut self) -> Option<&mut [u16]> {
        self.indices.as_deref_mut()
    }

    /// Attaches an index map; every entry must address one of `codebook_size` codes.
    pub fn set_indices(&mut self, indices: Vec<u16>, codebook_size: usize) -> Result<()> {
        if indices.len() != self.texel_count() {
            return Err(Error::dimension(
                "atlas index map",
                self.texel_count(),
                indices.len(),
            ));
        }
        if let Some(i) = indices.iter().position(|&k| k as usize >= codebook_size) {
            return Err(Error::invariant(
                format!("atlas index map[{i}]"),
                format!("code {} >= codebook size {codebook_size}", indices[i]),
            ));
        }
        self.indices = Some(indices);
        Ok(())
    }

    pub fn clear_indices(&mut self) {
        self.indices = None;
    }

    pub fn cast<U: Real>(&self) -> FeatureAtlas<U> {
        FeatureAtlas {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: cast_vec(&self.data),
            indices: self.indices.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
