//! Gradient containers mirroring the trainable scene parameters.

use crate::real::Real;
use crate::scene::SceneParams;
use crate::shader::{BackgroundMlp, Mlp};

/// Dense gradient over an atlas plus the sorted list of texels that received
/// any contribution (the rows a lazy optimizer touches).
#[derive(Clone, Debug, PartialEq)]
pub struct TexelGrad<T> {
    pub channels: usize,
    pub data: Vec<T>,
    pub touched: Vec<u32>,
}

impl<T: Real> TexelGrad<T> {
    pub fn zeros(texels: usize, channels: usize) -> Self {
        TexelGrad {
            channels,
            data: vec![T::zero(); texels * channels],
            touched: Vec::new(),
        }
    }

    #[inline]
    pub fn texel(&self, i: u32) -> &[T] {
        let c = self.channels;
        &self.data[i as usize * c..(i as usize + 1) * c]
    }

    /// Adds `g` to texel `i`. Call [`TexelGrad::finish`] once all
    /// contributions are in to sort and deduplicate `touched`.
    #[inline]
    pub fn add(&mut self, i: u32, g: &[T]) {
        let c = self.channels;
        let row = &mut self.data[i as usize * c..(i as usize + 1) * c];
        row.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
        self.touched.push(i);
    }

    pub fn finish(&mut self) {
        self.touched.sort_unstable();
        self.touched.dedup();
    }

    pub fn add_assign(&mut self, other: &TexelGrad<T>) {
        for &i in &other.touched {
            let c = self.channels;
            let src = &other.data[i as usize * c..(i as usize + 1) * c];
            let dst = &mut self.data[i as usize * c..(i as usize + 1) * c];
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
        }
        self.touched.extend_from_slice(&other.touched);
        self.finish();
    }

    pub fn scale(&mut self, s: T) {
        for &i in &self.touched {
            let c = self.channels;
            self.data[i as usize * c..(i as usize + 1) * c]
                .iter_mut()
                .for_each(|v| *v *= s);
        }
    }
}

/// Gradients for every trainable tensor of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrads<T> {
    pub atlas: TexelGrad<T>,
    /// One entry per `(layer, face)` slot, see [`crate::scene::SkyboxStack::slot`].
    pub sky: Vec<TexelGrad<T>>,
    pub fg_mlp: Mlp<T>,
    pub bg_mlp: BackgroundMlp<T>,
    pub fg_codebook: Option<Vec<T>>,
    pub sky_codebook: Option<Vec<T>>,
}

impl<T: Real> SceneGrads<T> {
    pub fn zeros_like(params: &SceneParams<T>) -> Self {
        let atlas = &params.atlas;
        SceneGrads {
            atlas: TexelGrad::zeros(atlas.texel_count(), atlas.channels()),
            sky: params
                .skybox
                .layers
                .iter()
                .flat_map(|l| l.faces.iter().map(|f| TexelGrad::zeros(f.texel_count(), f.channels())))
                .collect(),
            fg_mlp: params.fg_mlp.zeros_like(),
            bg_mlp: params.bg_mlp.zeros_like(),
            fg_codebook: params.fg_codebook.as_ref().map(|b| vec![T::zero(); b.codes().len()]),
            sky_codebook: params.sky_codebook.as_ref().map(|b| vec![T::zero(); b.codes().len()]),
        }
    }

    pub fn add_assign(&mut self, other: &SceneGrads<T>) {
        self.atlas.add_assign(&other.atlas);
        for (a, b) in self.sky.iter_mut().zip(&other.sky) {
            a.add_assign(b);
        }
        self.fg_mlp.add_assign(&other.fg_mlp);
        self.bg_mlp.add_assign(&other.bg_mlp);
        for (a, b) in [
            (&mut self.fg_codebook, &other.fg_codebook),
            (&mut self.sky_codebook, &other.sky_codebook),
        ] {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
            }
        }
    }

    /// Same naming and order as [`SceneParams::tensors_mut`]; the third
    /// element lists touched texel rows for sparse tensors.
    pub fn tensors(&self) -> Vec<(String, &[T], Option<(&[u32], usize)>)> {
        let mut out: Vec<(String, &[T], Option<(&[u32], usize)>)> = Vec::new();
        out.push((
            "atlas_fg".into(),
            &self.atlas.data,
            Some((&self.atlas.touched, self.atlas.channels)),
        ));
        for (slot, g) in self.sky.iter().enumerate() {
            out.push((
                crate::scene::sky_tensor_name(slot / 6, slot % 6),
                &g.data,
                Some((&g.touched, g.channels)),
            ));
        }
        let mut dense = Vec::new();
        self.fg_mlp.tensors("mlp_fg", &mut dense);
        self.bg_mlp.tensors("mlp_sky", &mut dense);
        out.extend(dense.into_iter().map(|(n, t)| (n, t, None)));
        if let Some(g) = &self.fg_codebook {
            out.push(("codebook_fg".into(), g, None));
        }
        if let Some(g) = &self.sky_codebook {
            out.push(("codebook_sky".into(), g, None));
        }
        out
    }
}
