//! Learned shading and layer compositing.

mod composite;
mod frame;
mod mlp;
mod shade;

pub use composite::{
    composite, composite_back_to_front, composite_pixel, composite_pixel_backward, composite_weights,
};
pub use frame::{backward_view, render_layers, render_view, route_quantized_gradients};
pub use mlp::{Activation, BackgroundMlp, Dense, Mlp, ShaderArch, ViewEncoding};
pub use shade::{shade_background, shade_flat, shade_foreground};
