//! JSON weight documents (`tdcnet-weights-v1`).
//!
//! One document carries the convolution stack once and one deconvolution
//! weight set per supported scale; only the last layer changes between scales.

use serde::{Deserialize, Serialize};

use super::{ConvLayerSpec, DeconvLayerSpec, FsrcnnConfig, Layer, NetworkSpec};
use crate::error::{Error, Result};

pub const WEIGHT_FORMAT: &str = "tdcnet-weights-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvRecord {
    pub name: String,
    pub kc: usize,
    pub m: usize,
    pub n: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prelu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeconvRecord {
    pub scale: usize,
    pub kd: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub format: String,
    pub config: FsrcnnConfig,
    pub conv_layers: Vec<ConvRecord>,
    pub deconv: Vec<DeconvRecord>,
}

fn parse_err(layer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        layer: layer.into(),
        message: message.into(),
    }
}

impl WeightFile {
    /// Parses and validates a weight document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightFile =
            serde_json::from_str(text).map_err(|e| parse_err("document", e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight file serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != WEIGHT_FORMAT {
            return Err(parse_err(
                "document",
                format!("format {:?}, expected {WEIGHT_FORMAT:?}", self.format),
            ));
        }
        self.config
            .validate()
            .map_err(|e| parse_err("config", e.to_string()))?;
        let shapes = self.config.conv_shapes();
        if shapes.len() != self.conv_layers.len() {
            return Err(parse_err(
                "conv_layers",
                format!(
                    "{} layers declared, configuration implies {}",
                    self.conv_layers.len(),
                    shapes.len()
                ),
            ));
        }
        for (rec, (k, m, n)) in self.conv_layers.iter().zip(shapes) {
            if (rec.kc, rec.m, rec.n) != (k, m, n) {
                return Err(parse_err(
                    &rec.name,
                    format!(
                        "shape (kc={}, m={}, n={}) does not match configuration (kc={k}, m={m}, n={n})",
                        rec.kc, rec.m, rec.n
                    ),
                ));
            }
            rec.to_layer()
                .map_err(|e| parse_err(&rec.name, e.to_string()))?;
        }
        for &scale in &self.config.scales {
            let matches = self.deconv.iter().filter(|d| d.scale == scale).count();
            if matches != 1 {
                return Err(parse_err(
                    format!("deconv[scale={scale}]"),
                    format!("{matches} weight sets for a declared scale"),
                ));
            }
        }
        for rec in &self.deconv {
            let name = format!("deconv[scale={}]", rec.scale);
            if !self.config.scales.contains(&rec.scale) {
                return Err(parse_err(name, "scale not declared in config"));
            }
            if rec.kd != self.config.deconv_kernel {
                return Err(parse_err(
                    name,
                    format!("kd {} differs from config kd {}", rec.kd, self.config.deconv_kernel),
                ));
            }
            rec.to_layer(self.config.x)
                .map_err(|e| parse_err(name, e.to_string()))?;
        }
        Ok(())
    }

    /// The network for one upscaling factor.
    pub fn network(&self, scale: usize) -> Result<NetworkSpec> {
        let deconv = self
            .deconv
            .iter()
            .find(|d| d.scale == scale)
            .ok_or_else(|| {
                Error::Config(format!(
                    "scale {scale} not in supported set {:?}",
                    self.config.scales
                ))
            })?;
        let mut layers = self
            .conv_layers
            .iter()
            .map(|c| c.to_layer().map(Layer::Conv))
            .collect::<Result<Vec<_>>>()?;
        layers.push(Layer::Deconv(deconv.to_layer(self.config.x)?));
        NetworkSpec::new(layers)
    }

    /// Assembles a document from a shared convolution stack and per-scale
    /// deconvolution layers.
    pub fn from_layers(
        config: FsrcnnConfig,
        convs: &[ConvLayerSpec],
        deconvs: &[DeconvLayerSpec],
    ) -> Result<Self> {
        let file = WeightFile {
            format: WEIGHT_FORMAT.to_string(),
            config,
            conv_layers: convs.iter().map(ConvRecord::from_layer).collect(),
            deconv: deconvs
                .iter()
                .map(|d| DeconvRecord {
                    scale: d.scale,
                    kd: d.kernel,
                    weights: d.weights.clone(),
                    bias: d.bias.clone(),
                })
                .collect(),
        };
        file.validate()?;
        Ok(file)
    }
}

impl ConvRecord {
    fn from_layer(c: &ConvLayerSpec) -> Self {
        ConvRecord {
            name: c.name.clone(),
            kc: c.kernel,
            m: c.out_maps,
            n: c.in_maps,
            weights: c.weights.clone(),
            bias: c.bias.clone(),
            prelu: c.prelu.clone(),
        }
    }

    fn to_layer(&self) -> Result<ConvLayerSpec> {
        ConvLayerSpec::new(
            self.name.clone(),
            self.kc,
            self.m,
            self.n,
            self.weights.clone(),
            self.bias.clone(),
            self.prelu.clone(),
        )
    }
}

impl DeconvRecord {
    fn to_layer(&self, in_maps: usize) -> Result<DeconvLayerSpec> {
        DeconvLayerSpec::new(
            "deconv",
            self.kd,
            self.scale,
            1,
            in_maps,
            self.weights.clone(),
            self.bias.clone(),
        )
    }
}

/// Parses a weight document.
pub fn load_weights(text: &str) -> Result<WeightFile> {
    WeightFile::from_json(text)
}

/// Serialises a weight document; values are written at full precision.
pub fn save_weights(file: &WeightFile) -> String {
    file.to_json()
}
