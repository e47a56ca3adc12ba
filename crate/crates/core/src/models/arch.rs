//! Architecture strings and model configuration.
//!
//! A layer token is `{k}C{n}{m}` (convolution) or `{k}DC{n}{m}` (transposed
//! convolution): `k` filters, stride `n`, kernel size `m`. `n` and `m` are
//! single digits. Tokens are joined by `-`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Side length of the square grayscale input images.
pub const INPUT_SIZE: usize = 32;

pub const DEFAULT_ARCH: &str = "48C23-48C13-48C23-48C13-48DC13-48DC23-48DC13-1DC23";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filters: usize,
    pub stride: usize,
    pub kernel: usize,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            LayerKind::Conv => "C",
            LayerKind::Deconv => "DC",
        };
        write!(f, "{}{}{}{}", self.filters, tag, self.stride, self.kernel)
    }
}

fn parse_token(position: usize, token: &str) -> Result<LayerSpec> {
    let fail = |reason: &str| Error::ArchParse {
        position,
        token: token.to_string(),
        reason: reason.to_string(),
    };
    let digits = token.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return Err(fail("expected a filter count"));
    }
    let filters: usize = token[..digits]
        .parse()
        .map_err(|_| fail("filter count overflows"))?;
    let rest = &token[digits..];
    let (kind, tail) = if let Some(t) = rest.strip_prefix("DC") {
        (LayerKind::Deconv, t)
    } else if let Some(t) = rest.strip_prefix('C') {
        (LayerKind::Conv, t)
    } else {
        return Err(fail("expected 'C' or 'DC' after the filter count"));
    };
    let tail = tail.as_bytes();
    if tail.len() != 2 || !tail.iter().all(u8::is_ascii_digit) {
        return Err(fail("expected two digits: stride then kernel size"));
    }
    let stride = (tail[0] - b'0') as usize;
    let kernel = (tail[1] - b'0') as usize;
    if filters == 0 || stride == 0 || kernel == 0 {
        return Err(fail("filters, stride and kernel must be positive"));
    }
    Ok(LayerSpec {
        kind,
        filters,
        stride,
        kernel,
    })
}

/// Parses a `-`-joined layer string. Positions in errors are 1-based.
pub fn parse_layers(spec: &str) -> Result<Vec<LayerSpec>> {
    spec.trim()
        .split('-')
        .enumerate()
        .map(|(i, tok)| parse_token(i + 1, tok))
        .collect()
}

pub fn format_layers(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("-")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Cae,
    Vae,
    Vqvae,
}

impl FromStr for Backbone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "cae" => Ok(Backbone::Cae),
            "vae" => Ok(Backbone::Vae),
            "vqvae" => Ok(Backbone::Vqvae),
            _ => Err(Error::Config(format!("unknown backbone {s:?}"))),
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Cae => "cae",
            Backbone::Vae => "vae",
            Backbone::Vqvae => "vqvae",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    /// Factorized: spatial mask times feature weights.
    Fr,
    /// Fully connected over the flattened feature map.
    Fc,
    /// Factorized with the spatial mask frozen at initialization.
    Fm,
}

impl FromStr for ReadoutKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fr" => Ok(ReadoutKind::Fr),
            "fc" => Ok(ReadoutKind::Fc),
            "fm" => Ok(ReadoutKind::Fm),
            _ => Err(Error::Config(format!("unknown readout {s:?}"))),
        }
    }
}

impl fmt::Display for ReadoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadoutKind::Fr => "fr",
            ReadoutKind::Fc => "fc",
            ReadoutKind::Fm => "fm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodebookSpec {
    pub entries: usize,
    pub dim: usize,
}

impl Default for CodebookSpec {
    fn default() -> Self {
        CodebookSpec {
            entries: 256,
            dim: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    #[serde(serialize_with = "ser_layers", deserialize_with = "de_layers")]
    pub layers: Vec<LayerSpec>,
    pub latent_dim: usize,
    pub backbone: Backbone,
    #[serde(default)]
    pub codebook: CodebookSpec,
}

fn ser_layers<S: Serializer>(layers: &[LayerSpec], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_layers(layers))
}

fn de_layers<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<LayerSpec>, D::Error> {
    let s = String::deserialize(d)?;
    parse_layers(&s).map_err(serde::de::Error::custom)
}

/// Parses an architecture string into a CAE spec with a 100-dim latent and
/// the default 256×32 codebook.
pub fn parse_arch(spec: &str) -> Result<ArchSpec> {
    let arch = ArchSpec {
        layers: parse_layers(spec)?,
        latent_dim: 100,
        backbone: Backbone::Cae,
        codebook: CodebookSpec::default(),
    };
    arch.validate()?;
    Ok(arch)
}

impl ArchSpec {
    pub fn encoder(&self) -> &[LayerSpec] {
        &self.layers[..4]
    }

    pub fn decoder(&self) -> &[LayerSpec] {
        &self.layers[4..]
    }

    pub fn validate(&self) -> Result<()> {
        let kinds: Vec<LayerKind> = self.layers.iter().map(|l| l.kind).collect();
        let expected = [[LayerKind::Conv; 4], [LayerKind::Deconv; 4]].concat();
        if kinds != expected {
            return Err(Error::Config(format!(
                "architecture {} must be 4 conv layers followed by 4 deconv layers",
                format_layers(&self.layers)
            )));
        }
        if self.layers[7].filters != 1 {
            return Err(Error::Config(
                "final deconv layer must have 1 filter".into(),
            ));
        }
        let down: usize = self.encoder().iter().map(|l| l.stride).product();
        let up: usize = self.decoder().iter().map(|l| l.stride).product();
        if down != up || INPUT_SIZE % down != 0 {
            return Err(Error::Config(format!(
                "encoder downsamples by {down} but decoder upsamples by {up}"
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.backbone == Backbone::Vqvae && (self.codebook.entries < 2 || self.codebook.dim == 0)
        {
            return Err(Error::Config(
                "codebook needs at least 2 entries of positive dim".into(),
            ));
        }
        Ok(())
    }

    /// Spatial side and channel count of each encoder output `h_1..h_4`.
    pub fn tap_shapes(&self) -> [(usize, usize); 4] {
        let mut side = INPUT_SIZE;
        let mut out = [(0, 0); 4];
        for (i, l) in self.encoder().iter().enumerate() {
            side = side.div_ceil(l.stride);
            out[i] = (side, l.filters);
        }
        out
    }
}

impl Default for ArchSpec {
    fn default() -> Self {
        parse_arch(DEFAULT_ARCH).expect("default architecture is valid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchSpec,
    pub readout: ReadoutKind,
    /// Encoder layer `h_i` feeding the readout, `1..=4`.
    pub tap: usize,
    pub alpha: f64,
    pub beta: f64,
    /// L1 weight on the readout's spatial masks.
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    #[serde(default = "default_commit")]
    pub commit_weight: f64,
    pub n_neurons: usize,
    pub seed: u64,
}

fn default_sparsity() -> f64 {
    1e-3
}

fn default_commit() -> f64 {
    0.25
}

impl ModelConfig {
    pub fn new(backbone: Backbone, readout: ReadoutKind, tap: usize, n_neurons: usize) -> Self {
        let mut arch = ArchSpec::default();
        arch.backbone = backbone;
        ModelConfig {
            arch,
            readout,
            tap,
            alpha: 1.0,
            beta: 1e-3,
            sparsity: default_sparsity(),
            commit_weight: default_commit(),
            n_neurons,
            seed: 0,
        }
    }

    pub fn backbone(&self) -> Backbone {
        self.arch.backbone
    }

    /// `alpha == 0`: the decoder is dropped and the encoder is trained end to
    /// end on responses only.
    pub fn is_cnm_baseline(&self) -> bool {
        self.alpha == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if !(1..=4).contains(&self.tap) {
            return Err(Error::Config(format!(
                "tap layer must be 1..=4, got {}",
                self.tap
            )));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.alpha) || !finite_nonneg(self.beta) {
            return Err(Error::Config(
                "alpha and beta must be finite and nonnegative".into(),
            ));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config("alpha and beta cannot both be zero".into()));
        }
        if !finite_nonneg(self.sparsity) || !finite_nonneg(self.commit_weight) {
            return Err(Error::Config(
                "sparsity and commit weight must be nonnegative".into(),
            ));
        }
        if self.n_neurons == 0 {
            return Err(Error::Config("n_neurons must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_conv_and_deconv_tokens() {
        let l = parse_layers("48C23").unwrap();
        assert_eq!(
            l[0],
            LayerSpec {
                kind: LayerKind::Conv,
                filters: 48,
                stride: 2,
                kernel: 3
            }
        );
        let l = parse_layers("1DC23").unwrap();
        assert_eq!(
            l[0],
            LayerSpec {
                kind: LayerKind::Deconv,
                filters: 1,
                stride: 2,
                kernel: 3
            }
        );
    }

    #[test]
    fn round_trips() {
        for s in ["48C13-48C13", DEFAULT_ARCH] {
            assert_eq!(format_layers(&parse_layers(s).unwrap()), s);
        }
    }

    #[test]
    fn reports_token_position() {
        match parse_layers("48C23-48X13-1DC23") {
            Err(Error::ArchParse {
                position, token, ..
            }) => {
                assert_eq!(position, 2);
                assert_eq!(token, "48X13");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_layers("48C2").is_err());
        assert!(parse_layers("C23").is_err());
        assert!(parse_layers("48C03").is_err());
    }

    #[test]
    fn default_tap_shapes() {
        let arch = ArchSpec::default();
        assert_eq!(arch.tap_shapes(), [(16, 48), (16, 48), (8, 48), (8, 48)]);
    }

    #[test]
    fn rejects_bad_structures() {
        assert!(parse_arch("48C23-48C13-48C23-48DC13-48DC23-48DC13-1DC23").is_err());
        assert!(parse_arch("48C23-48C13-48C23-48C13-48DC13-48DC23-48DC13-2DC23").is_err());
        assert!(parse_arch("48C23-48C13-48C23-48C13-48DC13-48DC13-48DC13-1DC23").is_err());
    }

    #[test]
    fn config_invariants() {
        let mut c = ModelConfig::new(Backbone::Cae, ReadoutKind::Fr, 2, 10);
        assert!(c.validate().is_ok());
        c.alpha = 0.0;
        c.beta = 0.0;
        assert!(c.validate().is_err());
        c.beta = 1.0;
        c.tap = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_serde() {
        let c = ModelConfig::new(Backbone::Vqvae, ReadoutKind::Fm, 3, 7);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains(DEFAULT_ARCH));
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
