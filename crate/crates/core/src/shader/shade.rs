//! Per-fragment shading with recorded activations for the backward pass.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::Shading;
use crate::shader::{BackgroundMlp, Mlp, ViewEncoding};

/// Activations of one foreground evaluation.
#[derive(Clone, Debug, Default)]
pub(crate) struct SurfaceTape<T> {
    pub input: Vec<T>,
    pub acts: Vec<T>,
    pub color: [T; 3],
}

/// Activations of one skybox-layer evaluation.
#[derive(Clone, Debug, Default)]
pub(crate) struct SkyTape<T> {
    pub feature: Vec<T>,
    pub trunk_acts: Vec<T>,
    pub color_input: Vec<T>,
    pub color_acts: Vec<T>,
    pub opacity: T,
    pub color: [T; 3],
}

/// Reusable buffers for backward passes.
#[derive(Clone, Debug, Default)]
pub(crate) struct Scratch<T> {
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
}

#[inline]
fn rgb<T: Real>(s: &[T]) -> [T; 3] {
    [s[0], s[1], s[2]]
}

/// Shader networks plus the shading mode they are used under.
#[derive(Clone, Copy)]
pub(crate) struct Shaders<'a, T> {
    pub fg: &'a Mlp<T>,
    pub bg: &'a BackgroundMlp<T>,
    pub shading: Shading,
    pub encoding: ViewEncoding,
}

impl<T: Real> Shaders<'_, T> {
    pub fn surface_forward(&self, feature: &[T], dir: [T; 3], tape: &mut SurfaceTape<T>) -> [T; 3] {
        tape.color = match self.shading {
            Shading::Flat => [feature[0].logistic(), feature[1].logistic(), feature[2].logistic()],
            Shading::Neural => {
                tape.input.clear();
                tape.input.extend_from_slice(feature);
                self.encoding.encode(dir, &mut tape.input);
                self.fg.forward_into(&tape.input, &mut tape.acts);
                rgb(self.fg.output_of(&tape.acts))
            }
        };
        tape.color
    }

    /// Writes `dL/dfeature` into `grad_feature`.
    pub fn surface_backward(
        &self,
        tape: &SurfaceTape<T>,
        grad_color: [T; 3],
        grads: &mut Mlp<T>,
        grad_feature: &mut Vec<T>,
        scratch: &mut Scratch<T>,
        channels: usize,
    ) {
        match self.shading {
            Shading::Flat => {
                grad_feature.clear();
                grad_feature.resize(channels, T::zero());
                for c in 0..3 {
                    let y = tape.color[c];
                    grad_feature[c] = grad_color[c] * y * (T::one() - y);
                }
            }
            Shading::Neural => {
                self.fg.backward(&tape.acts, &grad_color, grads, &mut scratch.a, &mut scratch.b);
                grad_feature.clear();
                grad_feature.extend_from_slice(&scratch.a[..channels]);
            }
        }
    }

    pub fn sky_forward(&self, feature: &[T], dir: [T; 3], tape: &mut SkyTape<T>) -> (T, [T; 3]) {
        tape.feature.clear();
        tape.feature.extend_from_slice(feature);
        match self.shading {
            Shading::Flat => {
                tape.opacity = feature[3].logistic();
                tape.color = [feature[0].logistic(), feature[1].logistic(), feature[2].logistic()];
            }
            Shading::Neural => {
                let bg = self.bg;
                bg.trunk.forward_into(feature, &mut tape.trunk_acts);
                let h = bg.trunk.output_of(&tape.trunk_acts);
                let mut o = [T::zero()];
                bg.opacity.forward(h, &mut o);
                tape.opacity = o[0];
                tape.color_input.clear();
                tape.color_input.extend_from_slice(h);
                self.encoding.encode(dir, &mut tape.color_input);
                bg.color.forward_into(&tape.color_input, &mut tape.color_acts);
                tape.color = rgb(bg.color.output_of(&tape.color_acts));
            }
        }
        (tape.opacity, tape.color)
    }

    /// `grad_opacity` is `dL/d(opacity)` after the logistic; pass zero for
    /// layers whose opacity is overridden.
    #[allow(clippy::too_many_arguments)]
    pub fn sky_backward(
        &self,
        tape: &SkyTape<T>,
        grad_color: [T; 3],
        grad_opacity: T,
        grads: &mut BackgroundMlp<T>,
        grad_feature: &mut Vec<T>,
        scratch: &mut Scratch<T>,
        channels: usize,
    ) {
        match self.shading {
            Shading::Flat => {
                grad_feature.clear();
                grad_feature.resize(channels, T::zero());
                for c in 0..3 {
                    let y = tape.color[c];
                    grad_feature[c] = grad_color[c] * y * (T::one() - y);
                }
                let o = tape.opacity;
                grad_feature[3] += grad_opacity * o * (T::one() - o);
            }
            Shading::Neural => {
                let bg = self.bg;
                let h = bg.trunk.output_of(&tape.trunk_acts);
                let tw = h.len();
                bg.color.backward(&tape.color_acts, &grad_color, &mut grads.color, &mut scratch.a, &mut scratch.b);
                // scratch.a = dL/d(h ⊕ enc); keep dL/dh
                scratch.c.clear();
                scratch.c.extend_from_slice(&scratch.a[..tw]);
                if grad_opacity != T::zero() {
                    scratch.a.clear();
                    scratch.a.resize(tw, T::zero());
                    bg.opacity.backward(
                        h,
                        &[tape.opacity],
                        &[grad_opacity],
                        &mut grads.opacity,
                        Some(&mut scratch.a),
                    );
                    for (g, x) in scratch.c.iter_mut().zip(&scratch.a) {
                        *g += *x;
                    }
                }
                let gh = std::mem::take(&mut scratch.c);
                bg.trunk.backward(&tape.trunk_acts, &gh, &mut grads.trunk, grad_feature, &mut scratch.b);
                scratch.c = gh;
            }
        }
    }
}

fn check_dir<T: Real>(dir: [T; 3]) -> Result<()> {
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if (n - T::one()).abs().as_f64() > 1e-6 {
        return Err(Error::InvalidArgument(format!("view direction norm {n} is not 1")));
    }
    Ok(())
}

/// Foreground color of one fragment: `mlp(feature ⊕ encode(dir))`.
pub fn shade_foreground<T: Real>(mlp: &Mlp<T>, encoding: ViewEncoding, feature: &[T], dir: [T; 3]) -> Result<[T; 3]> {
    check_dir(dir)?;
    let want = mlp.input_width().saturating_sub(encoding.width());
    if feature.len() != want {
        return Err(Error::dimension("feature width", want, feature.len()));
    }
    let mut input = feature.to_vec();
    encoding.encode(dir, &mut input);
    Ok(rgb(&mlp.forward(&input)))
}

/// Skybox opacity and color of one sample. Opacity depends on the feature
/// only; color additionally sees the view direction.
pub fn shade_background<T: Real>(
    mlp: &BackgroundMlp<T>,
    encoding: ViewEncoding,
    feature: &[T],
    dir: [T; 3],
) -> Result<(T, [T; 3])> {
    check_dir(dir)?;
    let want = if mlp.trunk.layers.is_empty() {
        mlp.opacity.inputs
    } else {
        mlp.trunk.input_width()
    };
    if feature.len() != want {
        return Err(Error::dimension("feature width", want, feature.len()));
    }
    let shaders = Shaders {
        fg: &Mlp { layers: Vec::new() },
        bg: mlp,
        shading: Shading::Neural,
        encoding,
    };
    let mut tape = SkyTape::default();
    Ok(shaders.sky_forward(feature, dir, &mut tape))
}

/// Direct texture color used when shading without networks: logistic of
/// the first three channels, and of the fourth as opacity.
pub fn shade_flat<T: Real>(feature: &[T]) -> Result<(T, [T; 3])> {
    if feature.len() < 4 {
        return Err(Error::dimension("feature width (at least)", 4, feature.len()));
    }
    Ok((
        feature[3].logistic(),
        [feature[0].logistic(), feature[1].logistic(), feature[2].logistic()],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom;
    use crate::shader::ShaderArch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch() -> ShaderArch {
        ShaderArch {
            feature_dim: 12,
            hidden: vec![32, 32, 32],
            view_encoding: ViewEncoding::Raw,
        }
    }

    fn random_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
        geom::normalize([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
    }

    /// Dense-algebra reference: explicit matrix products in 64-bit.
    fn dense_oracle(layers: &[(Vec<Vec<f64>>, Vec<f64>, bool)], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (w, b, last) in layers {
            h = w
                .iter()
                .zip(b)
                .map(|(row, bi)| {
                    let z: f64 = row.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>() + bi;
                    if *last {
                        1.0 / (1.0 + (-z).exp())
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
        }
        h
    }

    fn as_matrices(m: &Mlp<f32>) -> Vec<(Vec<Vec<f64>>, Vec<f64>, bool)> {
        let n = m.layers.len();
        m.layers
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let w = (0..l.outputs)
                    .map(|o| (0..l.inputs).map(|i| l.weight[o * l.inputs + i] as f64).collect())
                    .collect();
                (w, l.bias.iter().map(|&b| b as f64).collect(), k + 1 == n)
            })
            .collect()
    }

    #[test]
    fn zero_network_gives_mid_gray() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut fg: Mlp<f64> = arch().foreground(&mut rng);
        fg = fg.zeros_like();
        let c = shade_foreground(&fg, ViewEncoding::Raw, &[0.3; 12], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(c, [0.5; 3]);
        let bg: BackgroundMlp<f64> = arch().background(&mut rng).zeros_like();
        let (o, c) = shade_background(&bg, ViewEncoding::Raw, &[0.3; 12], [0.0, 1.0, 0.0]).unwrap();
        assert_eq!(o, 0.5);
        assert_eq!(c, [0.5; 3]);
    }

    #[test]
    fn foreground_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fg: Mlp<f32> = arch().foreground(&mut rng);
        let mats = as_matrices(&fg);
        for _ in 0..10 {
            let f: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d = random_dir(&mut rng);
            let got = shade_foreground(&fg, ViewEncoding::Raw, &f, d.map(|x| x as f32)).unwrap();
            let mut x: Vec<f64> = f.iter().map(|&v| v as f64).collect();
            x.extend_from_slice(&d.map(|v| v as f32 as f64));
            let want = dense_oracle(&mats, &x);
            for c in 0..3 {
                assert!((got[c] as f64 - want[c]).abs() < 1e-6, "{} vs {}", got[c], want[c]);
            }
        }
    }

    #[test]
    fn background_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bg: BackgroundMlp<f32> = arch().background(&mut rng);
        let trunk = as_matrices(&bg.trunk);
        let color = as_matrices(&bg.color);
        for _ in 0..10 {
            let f: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d = random_dir(&mut rng);
            let (o, c) = shade_background(&bg, ViewEncoding::Raw, &f, d.map(|x| x as f32)).unwrap();
            // trunk layers are all ReLU
            let mut h: Vec<f64> = f.iter().map(|&v| v as f64).collect();
            for (w, b, _) in &trunk {
                h = dense_oracle(&[(w.clone(), b.clone(), false)], &h);
            }
            let ow: Vec<f64> = bg.opacity.weight.iter().map(|&v| v as f64).collect();
            let oz: f64 = ow.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + bg.opacity.bias[0] as f64;
            let want_o = 1.0 / (1.0 + (-oz).exp());
            let mut x = h.clone();
            x.extend_from_slice(&d.map(|v| v as f32 as f64));
            let want_c = dense_oracle(&color, &x);
            assert!((o as f64 - want_o).abs() < 1e-6);
            for k in 0..3 {
                assert!((c[k] as f64 - want_c[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zeroed_direction_weights_remove_view_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut fg: Mlp<f64> = arch().foreground(&mut rng);
        let l0 = &mut fg.layers[0];
        for o in 0..l0.outputs {
            for i in 12..15 {
                l0.weight[o * l0.inputs + i] = 0.0;
            }
        }
        let f = [0.2; 12];
        let a = shade_foreground(&fg, ViewEncoding::Raw, &f, [1.0, 0.0, 0.0]).unwrap();
        let b = shade_foreground(&fg, ViewEncoding::Raw, &f, [0.0, 0.0, -1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn background_opacity_ignores_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bg: BackgroundMlp<f64> = arch().background(&mut rng);
        let f: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (o1, c1) = shade_background(&bg, ViewEncoding::Raw, &f, random_dir(&mut rng)).unwrap();
        let (o2, c2) = shade_background(&bg, ViewEncoding::Raw, &f, random_dir(&mut rng)).unwrap();
        assert_eq!(o1, o2);
        assert_ne!(c1, c2);
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fg: Mlp<f64> = arch().foreground(&mut rng);
        assert!(shade_foreground(&fg, ViewEncoding::Raw, &[0.0; 8], [0.0, 0.0, 1.0]).is_err());
        assert!(shade_foreground(&fg, ViewEncoding::Raw, &[0.0; 12], [0.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn sky_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let small = ShaderArch {
            feature_dim: 4,
            hidden: vec![8, 8],
            view_encoding: ViewEncoding::Frequency { bands: 1 },
        };
        let bg: BackgroundMlp<f64> = small.background(&mut rng);
        let f: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = random_dir(&mut rng);
        let (gc, go) = ([0.3, -0.2, 0.7], 0.4);
        let objective = |feat: &[f64]| {
            let (o, c) = shade_background(&bg, small.view_encoding, feat, d).unwrap();
            go * o + gc[0] * c[0] + gc[1] * c[1] + gc[2] * c[2]
        };
        let sh = Shaders {
            fg: &Mlp { layers: vec![] },
            bg: &bg,
            shading: Shading::Neural,
            encoding: small.view_encoding,
        };
        let mut tape = SkyTape::default();
        sh.sky_forward(&f, d, &mut tape);
        let mut grads = bg.zeros_like();
        let mut gf = Vec::new();
        sh.sky_backward(&tape, gc, go, &mut grads, &mut gf, &mut Scratch::default(), 4);
        let h = 1e-6;
        for i in 0..4 {
            let mut p = f.clone();
            p[i] += h;
            let mut m = f.clone();
            m[i] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            assert!((fd - gf[i]).abs() < 1e-7 * fd.abs().max(1.0), "{fd} vs {}", gf[i]);
        }
    }
}
