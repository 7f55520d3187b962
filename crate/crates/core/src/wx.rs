//! Categorical weather grids and the convolutional autoencoder that
//! compresses them.
//!
//! Grids carry two channels per cell: VIL level (0..=6) and echo-top level
//! (0..=14). The encoder is a chain of valid-padding, stride-2, 3×3
//! convolutions; the decoder mirrors it with transposed convolutions whose
//! output padding is solved per layer so the reconstruction has exactly the
//! input shape. The pooled feature vector is the spatial mean of the latent
//! block.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::nn::{Builder, ParamId, ParamStore};
use crate::tensor::{conv2d_output_len, conv_transpose2d_output_len, Graph, Tensor, Var};

pub const VIL_MAX: u8 = 6;
pub const ET_MAX: u8 = 14;
pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
/// Width of the pooled feature vector.
pub const FEATURES: usize = 16;

/// One quarter-hour of categorical weather over an `H × W` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeatherGrid {
    pub timestamp: usize,
    height: usize,
    width: usize,
    vil: Vec<u8>,
    et: Vec<u8>,
}

impl WeatherGrid {
    pub fn new(timestamp: usize, height: usize, width: usize, vil: Vec<u8>, et: Vec<u8>) -> Result<Self> {
        let n = height * width;
        if n == 0 {
            return Err(Error::GridTooSmall { height, width });
        }
        if vil.len() != n {
            return Err(Error::LengthMismatch(vil.len(), n));
        }
        if et.len() != n {
            return Err(Error::LengthMismatch(et.len(), n));
        }
        if let Some(&level) = vil.iter().find(|&&v| v > VIL_MAX) {
            return Err(Error::LevelOutOfRange {
                channel: "vil",
                level,
                max: VIL_MAX,
            });
        }
        if let Some(&level) = et.iter().find(|&&v| v > ET_MAX) {
            return Err(Error::LevelOutOfRange {
                channel: "et",
                level,
                max: ET_MAX,
            });
        }
        Ok(Self {
            timestamp,
            height,
            width,
            vil,
            et,
        })
    }

    pub fn zeros(timestamp: usize, height: usize, width: usize) -> Self {
        Self {
            timestamp,
            height,
            width,
            vil: vec![0; height * width],
            et: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vil(&self) -> &[u8] {
        &self.vil
    }

    pub fn et(&self) -> &[u8] {
        &self.et
    }

    pub fn vil_at(&self, row: usize, col: usize) -> u8 {
        self.vil[row * self.width + col]
    }

    pub fn et_at(&self, row: usize, col: usize) -> u8 {
        self.et[row * self.width + col]
    }
}

/// `[H, W, 2]` tensor with VIL/6 and ET/14.
pub fn normalize_grid(grid: &WeatherGrid) -> Tensor {
    let mut data = Vec::with_capacity(grid.vil.len() * 2);
    for (&v, &e) in grid.vil.iter().zip(&grid.et) {
        data.push(f64::from(v) / f64::from(VIL_MAX));
        data.push(f64::from(e) / f64::from(ET_MAX));
    }
    Tensor::new(vec![grid.height, grid.width, 2], data).expect("grid dims are positive")
}

/// Per-layer shapes of the encoder and the output paddings of the decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecGeometry {
    /// Input shape followed by the output shape of every encoder layer.
    shapes: Vec<(usize, usize)>,
    /// Output padding per decoder layer, in decoder order (latent first).
    paddings: Vec<(usize, usize)>,
}

/// Smallest side length that survives `layers` valid stride-2 3×3 convolutions.
pub fn min_side(layers: usize) -> usize {
    (0..layers).fold(1, |n, _| (n - 1) * STRIDE + KERNEL)
}

pub fn solve_geometry(height: usize, width: usize) -> Result<CodecGeometry> {
    solve_geometry_layers(height, width, CodecConfig::default().channels.len())
}

pub fn solve_geometry_layers(height: usize, width: usize, layers: usize) -> Result<CodecGeometry> {
    let too_small = Error::GridTooSmall { height, width };
    let mut shapes = vec![(height, width)];
    let (mut h, mut w) = (height, width);
    for _ in 0..layers {
        h = conv2d_output_len(h, KERNEL, STRIDE).ok_or(too_small.clone())?;
        w = conv2d_output_len(w, KERNEL, STRIDE).ok_or(too_small.clone())?;
        shapes.push((h, w));
    }
    let pad = |from: usize, to: usize| to - conv_transpose2d_output_len(from, KERNEL, STRIDE, 0);
    let paddings = (0..layers)
        .rev()
        .map(|l| {
            let (big, small) = (shapes[l], shapes[l + 1]);
            (pad(small.0, big.0), pad(small.1, big.1))
        })
        .collect();
    Ok(CodecGeometry { shapes, paddings })
}

impl CodecGeometry {
    pub fn input(&self) -> (usize, usize) {
        self.shapes[0]
    }

    pub fn latent(&self) -> (usize, usize) {
        *self.shapes.last().expect("at least the input shape")
    }

    pub fn layers(&self) -> usize {
        self.paddings.len()
    }

    /// Output height of each encoder layer.
    pub fn encoder_heights(&self) -> Vec<usize> {
        self.shapes[1..].iter().map(|s| s.0).collect()
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        self.shapes[1..].iter().map(|s| s.1).collect()
    }

    /// Output padding per decoder layer, latent side first.
    pub fn decoder_paddings(&self) -> &[(usize, usize)] {
        &self.paddings
    }

    /// Spatial shapes visited by the decoder, from the latent to the input.
    pub fn decoder_shapes(&self) -> Vec<(usize, usize)> {
        self.shapes.iter().rev().copied().collect()
    }

    /// Latent element count over input element count.
    pub fn compression_ratio(&self, latent_channels: usize) -> f64 {
        let (h, w) = self.input();
        let (lh, lw) = self.latent();
        (lh * lw * latent_channels) as f64 / (h * w * 2) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// Output channels of each encoder layer; the last is the latent depth.
    pub channels: Vec<usize>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 32, 24, 24, 16],
        }
    }
}

/// He-uniform bound `sqrt(6 / fan_in)`. A stride-2 transposed kernel
/// reaches each output from about a quarter of its taps.
fn he_bound(fan_in: usize) -> f64 {
    math::sqrt(6.0 / fan_in.max(1) as f64)
}

/// Encoder and decoder parameters. They do not depend on the grid size.
#[derive(Debug, Clone)]
pub struct WxCodec {
    channels: Vec<usize>,
    enc: Vec<(ParamId, ParamId)>,
    dec: Vec<(ParamId, ParamId)>,
}

/// Latent block and pooled feature of one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WxLatent {
    /// `[h', w', C]`
    pub block: Tensor,
    /// Spatial mean of `block`.
    pub feature: Vec<f64>,
}

impl WxCodec {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, config: &CodecConfig) -> Result<Self> {
        if config.channels.is_empty() || config.channels.contains(&0) {
            return Err(Error::InvalidConfig(
                "codec channels must be non-empty and positive".into(),
            ));
        }
        let mut b = Builder::new(store, rng, "wx");
        let mut enc = Vec::new();
        let mut cin = 2;
        for (i, &cout) in config.channels.iter().enumerate() {
            let mut l = b.sub(&alloc::format!("enc{i}"));
            let k = l.uniform_bound("K", &[KERNEL, KERNEL, cin, cout], he_bound(KERNEL * KERNEL * cin))?;
            let bias = l.zeros("b", &[cout])?;
            enc.push((k, bias));
            cin = cout;
        }
        // decoder layer j undoes encoder layer n-1-j: channels[n-1-j] -> input of that layer
        let n = config.channels.len();
        let mut dec = Vec::new();
        for j in 0..n {
            let layer = n - 1 - j;
            let c_from = config.channels[layer];
            let c_to = if layer == 0 { 2 } else { config.channels[layer - 1] };
            let mut l = b.sub(&alloc::format!("dec{j}"));
            let k = l.uniform_bound(
                "K",
                &[KERNEL, KERNEL, c_to, c_from],
                he_bound(KERNEL * KERNEL * c_from / 4),
            )?;
            let bias = l.zeros("b", &[c_to])?;
            dec.push((k, bias));
        }
        Ok(Self {
            channels: config.channels.clone(),
            enc,
            dec,
        })
    }

    pub fn latent_channels(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    pub fn layers(&self) -> usize {
        self.channels.len()
    }

    fn spatial_axes(g: &Graph, x: Var) -> [usize; 2] {
        if g.shape(x).len() == 4 {
            [1, 2]
        } else {
            [0, 1]
        }
    }

    /// Encodes `[H, W, 2]` or `[B, H, W, 2]`, returning the latent block and
    /// its spatial mean.
    pub fn encode(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for &(k, b) in &self.enc {
            let kv = p.bind(g, k);
            let bv = p.bind(g, b);
            let c = g.conv2d(h, kv, STRIDE)?;
            let c = g.add(c, bv)?;
            h = g.elu(c);
        }
        let axes = Self::spatial_axes(g, h);
        let feature = g.mean(h, &axes)?;
        Ok((h, feature))
    }

    /// Reinflates a latent block to the geometry's input shape; the last
    /// layer is linear; level conversion clamps to the valid range.
    pub fn decode(&self, g: &mut Graph, p: &ParamStore, block: Var, geom: &CodecGeometry) -> Result<Var> {
        let shape = g.shape(block).to_vec();
        let r = shape.len();
        if geom.layers() != self.layers() || r < 3 || (shape[r - 3], shape[r - 2]) != geom.latent() {
            let (lh, lw) = geom.latent();
            return Err(Error::GeometryMismatch {
                expected: vec![lh, lw, self.latent_channels()],
                actual: shape,
            });
        }
        let mut h = block;
        let last = self.dec.len() - 1;
        for (j, (&(k, b), &pad)) in self.dec.iter().zip(geom.decoder_paddings()).enumerate() {
            let kv = p.bind(g, k);
            let bv = p.bind(g, b);
            let c = g.conv2d_transpose(h, kv, STRIDE, pad)?;
            let c = g.add(c, bv)?;
            h = if j == last { c } else { g.elu(c) };
        }
        Ok(h)
    }

    /// Inference-only encoding of one grid.
    pub fn encode_grid(&self, p: &ParamStore, grid: &WeatherGrid) -> Result<WxLatent> {
        solve_geometry_layers(grid.height, grid.width, self.layers())?;
        let mut g = Graph::new();
        let x = g.constant(normalize_grid(grid));
        let (block, feature) = self.encode(&mut g, p, x)?;
        Ok(WxLatent {
            block: g.value(block).clone(),
            feature: g.data(feature).to_vec(),
        })
    }

    /// Inference-only reconstruction of one grid, `[H, W, 2]` in normalized
    /// units clamped to `[0, 1]`.
    pub fn reconstruct(&self, p: &ParamStore, grid: &WeatherGrid) -> Result<Tensor> {
        let geom = solve_geometry_layers(grid.height, grid.width, self.layers())?;
        let mut g = Graph::new();
        let x = g.constant(normalize_grid(grid));
        let (block, _) = self.encode(&mut g, p, x)?;
        let y = self.decode(&mut g, p, block, &geom)?;
        let mut out = g.value(y).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(out)
    }
}

/// Category-level reconstruction errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconError {
    pub mae_vil: f64,
    pub mae_et: f64,
    pub max_vil: u8,
    pub max_et: u8,
    /// Largest level error over both channels.
    pub max_abs: u8,
}

fn to_level(v: f64, max: u8) -> u8 {
    let l = math::round(v * f64::from(max));
    l.clamp(0.0, f64::from(max)) as u8
}

/// Compares `grid` with a normalized `[H, W, 2]` reconstruction after
/// de-normalizing, rounding and clamping it to valid levels.
pub fn reconstruction_error(grid: &WeatherGrid, recon: &Tensor) -> Result<ReconError> {
    let expected = [grid.height, grid.width, 2];
    if recon.shape() != expected {
        return Err(Error::GeometryMismatch {
            expected: expected.to_vec(),
            actual: recon.shape().to_vec(),
        });
    }
    let d = recon.data();
    let (mut sum_v, mut sum_e) = (0u64, 0u64);
    let (mut max_v, mut max_e) = (0u8, 0u8);
    for (i, (&v, &e)) in grid.vil.iter().zip(&grid.et).enumerate() {
        let dv = to_level(d[2 * i], VIL_MAX).abs_diff(v);
        let de = to_level(d[2 * i + 1], ET_MAX).abs_diff(e);
        sum_v += u64::from(dv);
        sum_e += u64::from(de);
        max_v = max_v.max(dv);
        max_e = max_e.max(de);
    }
    let n = grid.vil.len() as f64;
    Ok(ReconError {
        mae_vil: sum_v as f64 / n,
        mae_et: sum_e as f64 / n,
        max_vil: max_v,
        max_et: max_e,
        max_abs: max_v.max(max_e),
    })
}

/// Codec-free features: the grid split into 2 rows × 4 columns of regions,
/// then mean VIL/6 per region (`f0..f7`) and mean ET/14 per region (`f8..f15`).
pub fn fallback_features(grid: &WeatherGrid) -> Vec<f64> {
    let mut sums = [0.0f64; FEATURES];
    let mut counts = [0usize; 8];
    for r in 0..grid.height {
        let rr = (r * 2 / grid.height).min(1);
        for c in 0..grid.width {
            let cc = (c * 4 / grid.width).min(3);
            let region = rr * 4 + cc;
            let i = r * grid.width + c;
            sums[region] += f64::from(grid.vil[i]) / f64::from(VIL_MAX);
            sums[8 + region] += f64::from(grid.et[i]) / f64::from(ET_MAX);
            counts[region] += 1;
        }
    }
    (0..FEATURES).map(|f| sums[f] / counts[f % 8].max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn normalization_reference_points() {
        let g = WeatherGrid::new(0, 1, 3, vec![6, 3, 0], vec![14, 7, 0]).unwrap();
        let t = normalize_grid(&g);
        assert_eq!(t.data(), &[1.0, 1.0, 0.5, 0.5, 0.0, 0.0]);
        assert!(matches!(
            WeatherGrid::new(0, 1, 1, vec![7], vec![0]),
            Err(Error::LevelOutOfRange {
                channel: "vil",
                level: 7,
                ..
            })
        ));
    }

    #[test]
    fn full_and_desk_geometry() {
        let g = solve_geometry(960, 1072).unwrap();
        assert_eq!(g.encoder_heights(), vec![479, 239, 119, 59, 29]);
        assert_eq!(g.encoder_widths(), vec![535, 267, 133, 66, 32]);
        let pads: Vec<usize> = g.decoder_paddings().iter().map(|p| p.1).collect();
        assert_eq!(pads, vec![1, 0, 0, 0, 1]);
        assert!((g.compression_ratio(16) - 0.0072).abs() < 2e-4);
        let d = solve_geometry(96, 112).unwrap();
        assert_eq!(d.encoder_heights(), vec![47, 23, 11, 5, 2]);
        assert_eq!(d.encoder_widths(), vec![55, 27, 13, 6, 2]);
        assert_eq!(min_side(5), 63);
        assert!(solve_geometry(63, 63).is_ok());
        assert_eq!(
            solve_geometry(62, 100),
            Err(Error::GridTooSmall { height: 62, width: 100 })
        );
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_latent() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let codec = WxCodec::new(&mut store, &mut rng, &CodecConfig::default()).unwrap();
        let lat = codec.encode_grid(&store, &WeatherGrid::zeros(0, 63, 70)).unwrap();
        assert!(lat.block.data().iter().all(|&v| v == 0.0));
        assert_eq!(lat.feature, vec![0.0; 16]);
    }

    #[test]
    fn reconstruction_errors() {
        let g = WeatherGrid::new(0, 2, 2, vec![6; 4], vec![3; 4]).unwrap();
        let e = reconstruction_error(&g, &normalize_grid(&g)).unwrap();
        assert_eq!((e.mae_vil, e.mae_et, e.max_abs), (0.0, 0.0, 0));
        let e = reconstruction_error(&g, &Tensor::zeros(&[2, 2, 2])).unwrap();
        assert_eq!(e.mae_vil, 6.0);
        assert_eq!(e.max_abs, 6);
    }

    #[test]
    fn fallback_regions() {
        let mut vil = vec![0u8; 4 * 8];
        vil[0] = 6; // top-left region is 2×2 cells
        let g = WeatherGrid::new(0, 4, 8, vil, vec![0; 32]).unwrap();
        let f = fallback_features(&g);
        assert_eq!(f[0], 0.25);
        assert!(f[1..].iter().all(|&v| v == 0.0));
    }
}
