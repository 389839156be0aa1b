//! Tensors, layer descriptors and the FSRCNN(x, y, z) topology builder.

mod tensor;
pub mod weights;

pub use tensor::Tensor3;
pub use weights::WeightFile;

use crate::error::{dim_err, Error, Result};

/// Zero "same" padding for a stride-1 kernel: `(before, after)` with
/// `before + after = kernel − 1`. Even kernels put the extra row before.
pub fn same_padding(kernel: usize) -> (usize, usize) {
    let before = kernel / 2;
    (before, kernel - 1 - before)
}

/// Stride-1 convolution with optional per-map PReLU.
///
/// Weights are indexed `[m][n][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    pub name: String,
    pub kernel: usize,
    pub out_maps: usize,
    pub in_maps: usize,
    pub pad_before: usize,
    pub pad_after: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub prelu: Option<Vec<f64>>,
}

impl ConvLayerSpec {
    pub fn new(
        name: impl Into<String>,
        kernel: usize,
        out_maps: usize,
        in_maps: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        prelu: Option<Vec<f64>>,
    ) -> Result<Self> {
        let (pad_before, pad_after) = same_padding(kernel.max(1));
        let layer = Self {
            name: name.into(),
            kernel,
            out_maps,
            in_maps,
            pad_before,
            pad_after,
            weights,
            bias,
            prelu,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// A layer of the given shape with every parameter zero.
    pub fn zeros(
        name: impl Into<String>,
        kernel: usize,
        out_maps: usize,
        in_maps: usize,
        with_prelu: bool,
    ) -> Result<Self> {
        Self::new(
            name,
            kernel,
            out_maps,
            in_maps,
            vec![0.0; out_maps * in_maps * kernel * kernel],
            vec![0.0; out_maps],
            with_prelu.then(|| vec![0.0; out_maps]),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.out_maps == 0 || self.in_maps == 0 {
            return dim_err(format!("{}: kernel and map counts must be positive", self.name));
        }
        let expected = self.out_maps * self.in_maps * self.kernel * self.kernel;
        if self.weights.len() != expected {
            return dim_err(format!(
                "{}: {} weights, expected M*N*K^2 = {}",
                self.name,
                self.weights.len(),
                expected
            ));
        }
        if self.bias.len() != self.out_maps {
            return dim_err(format!(
                "{}: {} biases, expected {}",
                self.name,
                self.bias.len(),
                self.out_maps
            ));
        }
        if let Some(p) = &self.prelu {
            if p.len() != self.out_maps {
                return dim_err(format!(
                    "{}: {} PReLU slopes, expected {}",
                    self.name,
                    p.len(),
                    self.out_maps
                ));
            }
        }
        if self.pad_before + self.pad_after + 1 != self.kernel {
            return dim_err(format!(
                "{}: padding {}+{} does not preserve size for kernel {}",
                self.name, self.pad_before, self.pad_after, self.kernel
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, m: usize, n: usize, y: usize, x: usize) -> f64 {
        self.weights[self.weight_index(m, n, y, x)]
    }

    #[inline]
    pub fn weight_index(&self, m: usize, n: usize, y: usize, x: usize) -> usize {
        ((m * self.in_maps + n) * self.kernel + y) * self.kernel + x
    }

    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }
}

/// Stride-`scale` transposed convolution. Weights are indexed `[m][n][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvLayerSpec {
    pub name: String,
    pub kernel: usize,
    pub scale: usize,
    pub out_maps: usize,
    pub in_maps: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DeconvLayerSpec {
    pub fn new(
        name: impl Into<String>,
        kernel: usize,
        scale: usize,
        out_maps: usize,
        in_maps: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let layer = Self {
            name: name.into(),
            kernel,
            scale,
            out_maps,
            in_maps,
            weights,
            bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(
        name: impl Into<String>,
        kernel: usize,
        scale: usize,
        out_maps: usize,
        in_maps: usize,
    ) -> Result<Self> {
        Self::new(
            name,
            kernel,
            scale,
            out_maps,
            in_maps,
            vec![0.0; out_maps * in_maps * kernel * kernel],
            vec![0.0; out_maps],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_maps == 0 || self.in_maps == 0 {
            return dim_err(format!("{}: map counts must be positive", self.name));
        }
        if self.scale < 2 {
            return Err(Error::Unsupported(format!(
                "{}: deconvolution stride must be at least 2, got {}",
                self.name, self.scale
            )));
        }
        if self.kernel < self.scale {
            return Err(Error::Unsupported(format!(
                "{}: kernel {} smaller than stride {}",
                self.name, self.kernel, self.scale
            )));
        }
        let expected = self.out_maps * self.in_maps * self.kernel * self.kernel;
        if self.weights.len() != expected {
            return dim_err(format!(
                "{}: {} weights, expected M*N*K^2 = {}",
                self.name,
                self.weights.len(),
                expected
            ));
        }
        if self.bias.len() != self.out_maps {
            return dim_err(format!(
                "{}: {} biases, expected {}",
                self.name,
                self.bias.len(),
                self.out_maps
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, m: usize, n: usize, y: usize, x: usize) -> f64 {
        self.weights[((m * self.in_maps + n) * self.kernel + y) * self.kernel + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayerSpec),
    Deconv(DeconvLayerSpec),
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv(c) => &c.name,
            Layer::Deconv(d) => &d.name,
        }
    }

    pub fn in_maps(&self) -> usize {
        match self {
            Layer::Conv(c) => c.in_maps,
            Layer::Deconv(d) => d.in_maps,
        }
    }

    pub fn out_maps(&self) -> usize {
        match self {
            Layer::Conv(c) => c.out_maps,
            Layer::Deconv(d) => d.out_maps,
        }
    }
}

/// A linear chain of layers; at most one deconvolution, and only at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_maps() != pair[1].in_maps() {
                return dim_err(format!(
                    "layer {} ({}) produces {} maps but layer {} ({}) expects {}",
                    i,
                    pair[0].name(),
                    pair[0].out_maps(),
                    i + 1,
                    pair[1].name(),
                    pair[1].in_maps()
                ));
            }
        }
        let deconvs = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Deconv(_)))
            .map(|(i, _)| i)
            .collect::<Vec<_>>();
        match deconvs.as_slice() {
            [] => {}
            [i] if *i + 1 == layers.len() => {}
            _ => {
                return Err(Error::Config(
                    "a network may hold one deconvolution layer, placed last".into(),
                ))
            }
        }
        for l in &layers {
            match l {
                Layer::Conv(c) => c.validate()?,
                Layer::Deconv(d) => d.validate()?,
            }
        }
        Ok(Self { layers })
    }

    pub fn empty() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayerSpec> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            Layer::Deconv(_) => None,
        })
    }

    pub fn deconv(&self) -> Option<&DeconvLayerSpec> {
        match self.layers.last() {
            Some(Layer::Deconv(d)) => Some(d),
            _ => None,
        }
    }

    /// Upscaling factor of the network; 1 without a deconvolution layer.
    pub fn scale(&self) -> usize {
        self.deconv().map_or(1, |d| d.scale)
    }

    pub fn in_maps(&self) -> Option<usize> {
        self.layers.first().map(Layer::in_maps)
    }

    /// Number of weight elements (biases and PReLU slopes excluded).
    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.weights.len(),
                Layer::Deconv(d) => d.weights.len(),
            })
            .sum()
    }
}

/// FSRCNN(x, y, z): `x` feature-extraction maps, `y` mapping maps and `z`
/// mapping layers.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FsrcnnConfig {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    #[serde(rename = "kd")]
    pub deconv_kernel: usize,
    pub scales: Vec<usize>,
}

impl FsrcnnConfig {
    pub fn new(x: usize, y: usize, z: usize, deconv_kernel: usize, scales: Vec<usize>) -> Result<Self> {
        let cfg = Self {
            x,
            y,
            z,
            deconv_kernel,
            scales,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x == 0 || self.y == 0 {
            return Err(Error::Config(format!(
                "x and y must be at least 1, got x={} y={}",
                self.x, self.y
            )));
        }
        if self.scales.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        for &s in &self.scales {
            if s < 2 || s > self.deconv_kernel {
                return Err(Error::Config(format!(
                    "scale {s} incompatible with deconvolution kernel {}",
                    self.deconv_kernel
                )));
            }
        }
        Ok(())
    }

    /// Layer shapes `(kernel, out_maps, in_maps)` of the convolution stack.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = vec![(5, self.x, 1), (1, self.y, self.x)];
        shapes.extend(std::iter::repeat_n((3, self.y, self.y), self.z));
        shapes.push((1, self.x, self.y));
        shapes
    }

    pub fn conv_names(&self) -> Vec<String> {
        let mut names = vec!["extract".to_string(), "shrink".to_string()];
        names.extend((1..=self.z).map(|i| format!("map{i}")));
        names.push("expand".to_string());
        names
    }
}

/// Builds the zero-initialised FSRCNN chain for one upscaling factor:
/// `Conv(5,x,1) → Conv(1,y,x) → z×Conv(3,y,y) → Conv(1,x,y) → DeConv(K_D,1,x,S)`,
/// every convolution followed by PReLU.
pub fn build_fsrcnn(cfg: &FsrcnnConfig, scale: usize) -> Result<NetworkSpec> {
    cfg.validate()?;
    if !cfg.scales.contains(&scale) {
        return Err(Error::Config(format!(
            "scale {scale} not in supported set {:?}",
            cfg.scales
        )));
    }
    let mut layers = Vec::with_capacity(cfg.z + 4);
    for ((k, m, n), name) in cfg.conv_shapes().into_iter().zip(cfg.conv_names()) {
        layers.push(Layer::Conv(ConvLayerSpec::zeros(name, k, m, n, true)?));
    }
    layers.push(Layer::Deconv(DeconvLayerSpec::zeros(
        "deconv",
        cfg.deconv_kernel,
        scale,
        1,
        cfg.x,
    )?));
    NetworkSpec::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_fsrcnn_has_eight_layers() {
        let cfg = FsrcnnConfig::new(56, 12, 4, 9, vec![2, 3, 4]).unwrap();
        let net = build_fsrcnn(&cfg, 2).unwrap();
        assert_eq!(net.layer_count(), 8);
        assert_eq!(net.conv_layers().count(), 7);
        assert!(net.deconv().is_some());
    }

    #[test]
    fn light_fsrcnn_weight_count() {
        let cfg = FsrcnnConfig::new(25, 5, 1, 7, vec![2]).unwrap();
        let net = build_fsrcnn(&cfg, 2).unwrap();
        assert_eq!(net.layer_count(), 5);
        assert_eq!(net.weight_count(), 2_325);
    }

    #[test]
    fn no_mapping_stage() {
        let cfg = FsrcnnConfig::new(1, 1, 0, 2, vec![2]).unwrap();
        let net = build_fsrcnn(&cfg, 2).unwrap();
        let names: Vec<_> = net.layers().iter().map(Layer::name).collect();
        assert_eq!(names, ["extract", "shrink", "expand", "deconv"]);
    }

    #[test]
    fn unsupported_scale_is_a_config_error() {
        let cfg = FsrcnnConfig::new(4, 2, 1, 9, vec![2, 3]).unwrap();
        assert!(matches!(build_fsrcnn(&cfg, 4), Err(Error::Config(_))));
    }

    #[test]
    fn same_padding_split() {
        assert_eq!(same_padding(5), (2, 2));
        assert_eq!(same_padding(4), (2, 1));
        assert_eq!(same_padding(1), (0, 0));
    }

    #[test]
    fn chain_mismatch_rejected() {
        let a = ConvLayerSpec::zeros("a", 3, 4, 1, false).unwrap();
        let b = ConvLayerSpec::zeros("b", 3, 2, 3, false).unwrap();
        assert!(NetworkSpec::new(vec![Layer::Conv(a), Layer::Conv(b)]).is_err());
    }

    #[test]
    fn deconv_must_be_last() {
        let d = DeconvLayerSpec::zeros("d", 3, 2, 1, 1).unwrap();
        let c = ConvLayerSpec::zeros("c", 3, 1, 1, false).unwrap();
        assert!(NetworkSpec::new(vec![Layer::Deconv(d), Layer::Conv(c)]).is_err());
    }

    #[test]
    fn deconv_kernel_below_stride_unsupported() {
        assert!(matches!(
            DeconvLayerSpec::zeros("d", 2, 3, 1, 1),
            Err(Error::Unsupported(_))
        ));
    }
}
