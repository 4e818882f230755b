//! GLSL ES 3.00 fragment shader generation. Network weights are read from
//! an `R32F` texture holding the network blob in row-major order,
//! [`WEIGHT_TEXTURE_WIDTH`] values per row; layer offsets are baked in as
//! constants. Textures and the camera position arrive as uniforms.
//!
//! Vertex-stage contract: the mesh pass supplies `v_uv` (atlas UV) and
//! `v_world` (world position); the sky pass draws each cuboid with
//! `v_local`, the fragment position in cuboid-normalized coordinates, and
//! `v_world`.

use std::fmt::Write;

use crate::bake::FeatureTexture;
use crate::scene::Shading;
use crate::shader::{Activation, BackgroundMlp, Dense, Mlp, ViewEncoding};

pub const SHADING_LANGUAGE: &str = "glsl-es-3.00";
pub const WEIGHT_TEXTURE_WIDTH: usize = 1024;

/// Everything shader generation needs besides the networks.
#[derive(Clone, Copy, Debug)]
pub struct ShaderInputs<'a> {
    pub shading: Shading,
    pub feature_dim: usize,
    pub view_encoding: ViewEncoding,
    pub quantized: bool,
    pub codebook_size: Option<usize>,
    pub atlas: &'a FeatureTexture,
}

impl ShaderInputs<'_> {
    fn groups(&self) -> usize {
        self.feature_dim.div_ceil(4)
    }
}

pub(crate) fn lit(v: f32) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e']) || s.contains("inf") {
        s
    } else {
        format!("{s}.0")
    }
}

fn header(out: &mut String) {
    out.push_str("#version 300 es\n");
    out.push_str("precision highp float;\nprecision highp int;\nprecision highp sampler2D;\nprecision highp usampler2D;\n\n");
}

/// Texel fetch helpers for a feature texture. Quantized textures look up
/// `u{name}` indices then codebook rows; float textures read `groups`
/// RGBA texels per feature.
fn fetch_fn(out: &mut String, name: &str, pages: &[usize], inputs: &ShaderInputs, codebook: &str) {
    let g = inputs.groups();
    for p in 0..pages.len() {
        let kind = if inputs.quantized { "usampler2D" } else { "sampler2D" };
        let _ = writeln!(out, "uniform {kind} {name}_p{p};");
    }
    let _ = writeln!(out, "void fetch_{name}(ivec2 t, out vec4 f[{g}]) {{");
    let _ = writeln!(out, "    int row = t.y;");
    for (p, &start) in pages.iter().enumerate() {
        let cond = if p + 1 == pages.len() {
            String::from("")
        } else {
            format!("if (t.y < {}) ", pages[p + 1])
        };
        let prefix = if p == 0 { "    " } else { "    else " };
        let _ = writeln!(out, "{prefix}{cond}{{");
        let _ = writeln!(out, "        row = t.y - {start};");
        if inputs.quantized {
            let _ = writeln!(out, "        int k = int(texelFetch({name}_p{p}, ivec2(t.x, row), 0).r);");
            let _ = writeln!(out, "        for (int i = 0; i < {g}; ++i) f[i] = texelFetch({codebook}, ivec2(i, k), 0);");
        } else {
            let _ = writeln!(
                out,
                "        for (int i = 0; i < {g}; ++i) f[i] = texelFetch({name}_p{p}, ivec2(t.x * {g} + i, row), 0);"
            );
        }
        out.push_str("    }\n");
    }
    out.push_str("}\n");
}

/// Bilinear sample at `uv` on a `size` grid with clamp-to-edge. Mixes
/// along each row first, then between rows, in the CPU renderer's order.
fn bilinear_fn(out: &mut String, name: &str, g: usize) {
    let _ = writeln!(out, "void sample_{name}(vec2 uv, ivec2 size, out vec4 f[{g}]) {{");
    out.push_str("    vec2 p = uv * vec2(size) - 0.5;\n");
    out.push_str("    vec2 b = floor(p);\n    vec2 fr = p - b;\n");
    out.push_str("    ivec2 lo = clamp(ivec2(b), ivec2(0), size - 1);\n");
    out.push_str("    ivec2 hi = clamp(ivec2(b) + 1, ivec2(0), size - 1);\n");
    let _ = writeln!(out, "    vec4 a[{g}]; vec4 c[{g}]; vec4 d[{g}]; vec4 e[{g}];");
    let _ = writeln!(out, "    fetch_{name}(ivec2(lo.x, lo.y), a);");
    let _ = writeln!(out, "    fetch_{name}(ivec2(hi.x, lo.y), c);");
    let _ = writeln!(out, "    fetch_{name}(ivec2(lo.x, hi.y), d);");
    let _ = writeln!(out, "    fetch_{name}(ivec2(hi.x, hi.y), e);");
    let _ = writeln!(
        out,
        "    for (int i = 0; i < {g}; ++i) f[i] = mix(mix(a[i], c[i], fr.x), mix(d[i], e[i], fr.x), fr.y);"
    );
    out.push_str("}\n");
}

fn activation(a: Activation, s: &str) -> String {
    match a {
        Activation::Identity => s.to_string(),
        Activation::Relu => format!("max({s}, 0.0)"),
        Activation::Logistic => format!("1.0 / (1.0 + exp(-({s})))"),
    }
}

/// Statement computing `dst` from `src` with the layer whose weights start
/// at `offset` in the weight texture `tex`; advances `offset`.
fn dense(tex: &str, offset: &mut usize, layer: &Dense<f32>, src: &str, dst: &str) -> String {
    let (i, o) = (layer.inputs, layer.outputs);
    let w = *offset;
    let b = w + i * o;
    *offset = b + o;
    format!(
        "    float {dst}[{o}];\n    for (int r = 0; r < {o}; ++r) {{\n        float acc = weight({tex}, {b} + r);\n        for (int c = 0; c < {i}; ++c) acc += weight({tex}, {w} + r * {i} + c) * {src}[c];\n        {dst}[r] = {};\n    }}\n",
        activation(layer.activation, "acc")
    )
}

fn mlp(tex: &str, offset: &mut usize, prefix: &str, net: &Mlp<f32>, src: &str, out_name: &str) -> String {
    let mut body = String::new();
    let mut cur = src.to_string();
    for (k, layer) in net.layers.iter().enumerate() {
        let dst = if k + 1 == net.layers.len() {
            out_name.to_string()
        } else {
            format!("{prefix}_h{k}")
        };
        body += &dense(tex, offset, layer, &cur, &dst);
        cur = dst;
    }
    body
}

fn weight_fn(out: &mut String, tex: &str) {
    let _ = writeln!(out, "uniform sampler2D {tex};");
    let _ = writeln!(
        out,
        "float weight(sampler2D t, int i) {{ return texelFetch(t, ivec2(i % {WEIGHT_TEXTURE_WIDTH}, i / {WEIGHT_TEXTURE_WIDTH}), 0).r; }}"
    );
}

/// Fills `x[offset..]` with the direction encoding of `dir`.
fn encode(enc: ViewEncoding, x: &str, offset: usize) -> String {
    let mut s = String::new();
    for c in 0..3 {
        let _ = writeln!(s, "    {x}[{}] = dir[{c}];", offset + c);
    }
    if let ViewEncoding::Frequency { bands } = enc {
        for k in 0..bands {
            let base = offset + 3 + 6 * k;
            let scale = lit((1u64 << k) as f32 * std::f32::consts::PI);
            for c in 0..3 {
                let _ = writeln!(s, "    {x}[{}] = sin({scale} * dir[{c}]);", base + c);
                let _ = writeln!(s, "    {x}[{}] = cos({scale} * dir[{c}]);", base + 3 + c);
            }
        }
    }
    s
}

fn copy_feature(x: &str, d: usize) -> String {
    format!("    for (int i = 0; i < {d}; ++i) {x}[i] = f[i / 4][i % 4];\n")
}

fn flat_color(opacity: &str) -> String {
    format!(
        "    vec4 lf = 1.0 / (1.0 + exp(-f[0]));\n    frag_color = vec4(lf.rgb, {opacity});\n"
    )
}

fn page_starts(tex: &FeatureTexture) -> Vec<usize> {
    tex.pages.iter().map(|p| p.row_start).collect()
}

/// Fragment shader for the mesh pass.
pub fn foreground_shader(inputs: &ShaderInputs, net: &Mlp<f32>) -> String {
    let g = inputs.groups();
    let d = inputs.feature_dim;
    let mut s = String::new();
    header(&mut s);
    s.push_str("in vec2 v_uv;\nin vec3 v_world;\nuniform vec3 u_camera_position;\nuniform ivec2 u_atlas_size;\n");
    if inputs.quantized {
        s.push_str("uniform sampler2D u_codebook_fg;\n");
    }
    s.push_str("out vec4 frag_color;\n\n");
    let mut body = String::new();
    match inputs.shading {
        Shading::Flat => body += &flat_color("1.0"),
        Shading::Neural => {
            weight_fn(&mut s, "u_weights_fg");
            let width = d + inputs.view_encoding.width();
            let _ = writeln!(body, "    vec3 dir = normalize(v_world - u_camera_position);");
            let _ = writeln!(body, "    float x[{width}];");
            body += &copy_feature("x", d);
            body += &encode(inputs.view_encoding, "x", d);
            body += &mlp("u_weights_fg", &mut 0, "fg", net, "x", "rgb");
            body += "    frag_color = vec4(rgb[0], rgb[1], rgb[2], 1.0);\n";
        }
    }
    s.push('\n');
    fetch_fn(&mut s, "atlas", &page_starts(inputs.atlas), inputs, "u_codebook_fg");
    bilinear_fn(&mut s, "atlas", g);
    s.push_str("\nvoid main() {\n");
    let _ = writeln!(s, "    vec4 f[{g}];");
    s.push_str("    sample_atlas(v_uv, u_atlas_size, f);\n");
    s += &body;
    s.push_str("}\n");
    s
}

/// Fragment shader shared by every skybox layer. The face is chosen by the
/// major axis of `v_local`; the six face textures of the drawn layer are
/// bound to `face_{px,nx,py,ny,pz,nz}_p0`. `u_opaque` forces opacity 1 for
/// the farthest layer.
pub fn sky_shader(inputs: &ShaderInputs, net: &BackgroundMlp<f32>, face: Option<&FeatureTexture>) -> String {
    let g = inputs.groups();
    let d = inputs.feature_dim;
    let mut s = String::new();
    header(&mut s);
    s.push_str("in vec3 v_local;\nin vec3 v_world;\nuniform vec3 u_camera_position;\nuniform ivec2 u_face_size;\nuniform bool u_opaque;\n");
    if inputs.quantized {
        s.push_str("uniform sampler2D u_codebook_sky;\n");
    }
    s.push_str("out vec4 frag_color;\n\n");
    let mut body = String::new();
    match inputs.shading {
        Shading::Flat => body += &flat_color("u_opaque ? 1.0 : lf.a"),
        Shading::Neural => {
            weight_fn(&mut s, "u_weights_sky");
            let tex = "u_weights_sky";
            let mut offset = 0;
            body += &format!("    float x[{d}];\n");
            body += &copy_feature("x", d);
            let trunk_out = if net.trunk.layers.is_empty() {
                "x".to_string()
            } else {
                body += &mlp(tex, &mut offset, "trunk", &net.trunk, "x", "h");
                "h".to_string()
            };
            body += &dense(tex, &mut offset, &net.opacity, &trunk_out, "alpha");
            let hw = net.opacity.inputs;
            let width = hw + inputs.view_encoding.width();
            let _ = writeln!(body, "    vec3 dir = normalize(v_world - u_camera_position);");
            let _ = writeln!(body, "    float y[{width}];");
            let _ = writeln!(body, "    for (int i = 0; i < {hw}; ++i) y[i] = {trunk_out}[i];");
            body += &encode(inputs.view_encoding, "y", hw);
            body += &mlp(tex, &mut offset, "color", &net.color, "y", "rgb");
            body += "    frag_color = vec4(rgb[0], rgb[1], rgb[2], u_opaque ? 1.0 : alpha[0]);\n";
        }
    }
    s.push('\n');
    let face_pages = face.map_or(vec![0], page_starts);
    let names = ["px", "nx", "py", "ny", "pz", "nz"];
    for n in names {
        fetch_fn(&mut s, &format!("face_{n}"), &face_pages, inputs, "u_codebook_sky");
        bilinear_fn(&mut s, &format!("face_{n}"), g);
    }
    s.push_str(
        "\nint major_face(vec3 p, out vec2 uv) {\n    vec3 a = abs(p);\n    if (a.x >= a.y && a.x >= a.z) {\n        if (p.x > 0.0) { uv = 0.5 * (vec2(-p.z, -p.y) + 1.0); return 0; }\n        uv = 0.5 * (vec2(p.z, -p.y) + 1.0); return 1;\n    }\n    if (a.y >= a.z) {\n        if (p.y > 0.0) { uv = 0.5 * (vec2(p.x, p.z) + 1.0); return 2; }\n        uv = 0.5 * (vec2(p.x, -p.z) + 1.0); return 3;\n    }\n    if (p.z > 0.0) { uv = 0.5 * (vec2(p.x, -p.y) + 1.0); return 4; }\n    uv = 0.5 * (vec2(-p.x, -p.y) + 1.0); return 5;\n}\n",
    );
    s.push_str("\nvoid main() {\n");
    let _ = writeln!(s, "    vec4 f[{g}];");
    s.push_str("    vec2 uv;\n    int face = major_face(v_local, uv);\n    uv = clamp(uv, 0.0, 1.0);\n    switch (face) {\n");
    for (i, n) in names.iter().enumerate() {
        let _ = writeln!(s, "        case {i}: sample_face_{n}(uv, u_face_size, f); break;");
    }
    s.push_str("    }\n");
    s += &body;
    s.push_str("}\n");
    s
}
