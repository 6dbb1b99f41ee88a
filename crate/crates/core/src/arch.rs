//! Layer and network descriptions, and the MAC-count arithmetic over them.
//!
//! Loads are counted in multiply-accumulate operations. Fully connected
//! layers cost `i_size * o_size`; a convolution costs
//! `out_side² * ifm * ksize²` per kernel and that times `ofm` for the
//! whole layer. Integer loads use checked `u64` arithmetic throughout.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Fully connected layer: `i_size` inputs densely connected to `o_size` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FcLayerSpec {
    pub i_size: u64,
    pub o_size: u64,
}

impl FcLayerSpec {
    pub fn new(i_size: u64, o_size: u64) -> Result<Self> {
        let layer = FcLayerSpec { i_size, o_size };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.i_size == 0 || self.o_size == 0 {
            return Err(Error::InvalidLayer(format!(
                "fc sizes must be positive (i_size={}, o_size={})",
                self.i_size, self.o_size
            )));
        }
        Ok(())
    }
}

/// Square 2-D convolution over an `i_size × i_size × ifm` input with `ofm`
/// kernels of side `ksize`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvLayerSpec {
    pub i_size: u64,
    pub ifm: u64,
    pub ofm: u64,
    pub ksize: u64,
    pub stride: u64,
    /// Implicit zero padding added on each side of the input.
    pub padding: u64,
}

impl ConvLayerSpec {
    /// Unpadded convolution.
    pub fn new(i_size: u64, ifm: u64, ofm: u64, ksize: u64, stride: u64) -> Result<Self> {
        Self::with_padding(i_size, ifm, ofm, ksize, stride, 0)
    }

    pub fn with_padding(i_size: u64, ifm: u64, ofm: u64, ksize: u64, stride: u64, padding: u64) -> Result<Self> {
        let layer = ConvLayerSpec { i_size, ifm, ofm, ksize, stride, padding };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("i_size", self.i_size),
            ("ifm", self.ifm),
            ("ofm", self.ofm),
            ("ksize", self.ksize),
            ("stride", self.stride),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidLayer(format!("conv2d {name} must be positive")));
        }
        let padded = self.padded_side()?;
        if self.ksize > padded {
            return Err(Error::InvalidLayer(format!(
                "kernel side {} exceeds padded input side {}",
                self.ksize, padded
            )));
        }
        Ok(())
    }

    fn padded_side(&self) -> Result<u64> {
        self.padding.checked_mul(2).and_then(|p| p.checked_add(self.i_size)).ok_or(Error::Overflow("padded input side"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Fc,
    Conv2d,
    /// A layer of a kind the model does not cover, kept only when parsing
    /// leniently. It carries no load and no energy.
    Skipped,
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LayerKind::Fc => "fc",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Skipped => "skipped",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerShape {
    Fc(FcLayerSpec),
    Conv2d(ConvLayerSpec),
    Skipped { kind: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub shape: LayerShape,
    pub label: Option<String>,
}

impl LayerSpec {
    pub fn fc(layer: FcLayerSpec) -> Self {
        LayerSpec { shape: LayerShape::Fc(layer), label: None }
    }

    pub fn conv2d(layer: ConvLayerSpec) -> Self {
        LayerSpec { shape: LayerShape::Conv2d(layer), label: None }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn kind(&self) -> LayerKind {
        match self.shape {
            LayerShape::Fc(_) => LayerKind::Fc,
            LayerShape::Conv2d(_) => LayerKind::Conv2d,
            LayerShape::Skipped { .. } => LayerKind::Skipped,
        }
    }

    /// MAC count of the layer. Skipped layers count zero.
    pub fn load(&self, mode: LoadMode) -> Result<MacCount> {
        match &self.shape {
            LayerShape::Fc(fc) => clf(fc).map(MacCount::Exact),
            LayerShape::Conv2d(conv) => clc(conv, mode),
            LayerShape::Skipped { .. } => Ok(MacCount::Exact(0)),
        }
    }

    /// Parses one layer object. `index` is only used in diagnostics.
    /// With `lenient` set, unknown kinds become [`LayerShape::Skipped`]
    /// instead of an error.
    pub fn from_json_value(index: usize, value: &Value, lenient: bool) -> Result<Self> {
        let layer_err = |message: String| Error::LayerParse { index, message };
        let obj = value.as_object().ok_or_else(|| layer_err("expected a JSON object".into()))?;
        let kind = obj
            .get("kind")
            .ok_or_else(|| layer_err("missing field `kind`".into()))?
            .as_str()
            .ok_or_else(|| layer_err("`kind` must be a string".into()))?;
        if let Some((key, _)) = obj.iter().find(|(_, v)| v.is_array()) {
            return Err(layer_err(format!("field `{key}` is a list; only square inputs and kernels are supported")));
        }
        if kind != "fc" && kind != "conv2d" {
            if lenient {
                let label = obj.get("label").and_then(Value::as_str).map(str::to_owned);
                return Ok(LayerSpec { shape: LayerShape::Skipped { kind: kind.to_owned() }, label });
            }
            return Err(Error::UnknownKind { index, kind: kind.to_owned() });
        }
        let raw: RawLayer = serde_json::from_value(value.clone()).map_err(|e| layer_err(e.to_string()))?;
        let spec = raw.into_spec();
        match &spec.shape {
            LayerShape::Fc(fc) => fc.validate(),
            LayerShape::Conv2d(conv) => conv.validate(),
            LayerShape::Skipped { .. } => Ok(()),
        }
        .map_err(|e| layer_err(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawLayer {
    Fc {
        i_size: u64,
        o_size: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Conv2d {
        i_size: u64,
        ifm: u64,
        ofm: u64,
        ksize: u64,
        stride: u64,
        #[serde(default)]
        padding: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl RawLayer {
    fn into_spec(self) -> LayerSpec {
        match self {
            RawLayer::Fc { i_size, o_size, label } => {
                LayerSpec { shape: LayerShape::Fc(FcLayerSpec { i_size, o_size }), label }
            }
            RawLayer::Conv2d { i_size, ifm, ofm, ksize, stride, padding, label } => LayerSpec {
                shape: LayerShape::Conv2d(ConvLayerSpec { i_size, ifm, ofm, ksize, stride, padding }),
                label,
            },
        }
    }
}

impl Serialize for LayerSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let label = self.label.clone();
        match &self.shape {
            LayerShape::Fc(fc) => RawLayer::Fc { i_size: fc.i_size, o_size: fc.o_size, label }.serialize(serializer),
            LayerShape::Conv2d(c) => RawLayer::Conv2d {
                i_size: c.i_size,
                ifm: c.ifm,
                ofm: c.ofm,
                ksize: c.ksize,
                stride: c.stride,
                padding: c.padding,
                label,
            }
            .serialize(serializer),
            LayerShape::Skipped { kind } => {
                let mut obj = serde_json::Map::new();
                obj.insert("kind".into(), Value::String(kind.clone()));
                if let Some(l) = label {
                    obj.insert("label".into(), Value::String(l));
                }
                obj.serialize(serializer)
            }
        }
    }
}

impl<'de> Deserialize<'de> for LayerSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        LayerSpec::from_json_value(0, &value, false).map_err(serde::de::Error::custom)
    }
}

/// Ordered feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkArch {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ArchParseOptions {
    /// Keep layers of unknown kind as zero-cost placeholders.
    pub skip_unknown: bool,
}

impl NetworkArch {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network must have at least one layer".into()));
        }
        Ok(NetworkArch { name: name.into(), layers })
    }

    pub fn from_json_str(s: &str, opts: ArchParseOptions) -> Result<Self> {
        let doc: Value = serde_json::from_str(s).map_err(|e| Error::parse("architecture JSON", e))?;
        let obj = doc.as_object().ok_or_else(|| Error::parse("architecture JSON", "top level must be an object"))?;
        let name = match obj.get("name") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::parse("architecture JSON", "`name` must be a string")),
            None => return Err(Error::parse("architecture JSON", "missing field `name`")),
        };
        let layers = obj
            .get("layers")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::parse("architecture JSON", "missing or non-array field `layers`"))?;
        let layers = layers
            .iter()
            .enumerate()
            .map(|(i, v)| LayerSpec::from_json_value(i, v, opts.skip_unknown))
            .collect::<Result<Vec<_>>>()?;
        NetworkArch::new(name, layers)
    }

    /// Indices and kinds of layers that were kept as placeholders.
    pub fn skipped_layers(&self) -> Vec<(usize, &str)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match &l.shape {
                LayerShape::Skipped { kind } => Some((i, kind.as_str())),
                _ => None,
            })
            .collect()
    }

    /// Consecutive sub-network covering `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        NetworkArch::new(self.name.clone(), self.layers[range].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Floor-based output side, integer result.
    #[default]
    Exact,
    /// `(i_size / stride)²` in place of the output side, real-valued.
    Approx,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MacCount {
    Exact(u64),
    Approx(f64),
}

impl MacCount {
    pub fn as_f64(self) -> f64 {
        match self {
            MacCount::Exact(n) => n as f64,
            MacCount::Approx(x) => x,
        }
    }
}

impl std::fmt::Display for MacCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MacCount::Exact(n) => write!(f, "{n}"),
            MacCount::Approx(x) => write!(f, "{x}"),
        }
    }
}

/// MACs of a fully connected layer.
pub fn clf(layer: &FcLayerSpec) -> Result<u64> {
    layer.i_size.checked_mul(layer.o_size).ok_or(Error::Overflow("CLF"))
}

/// Output side of a convolution, `floor((i_size + 2·padding − ksize) / stride) + 1`.
pub fn conv_out_side(layer: &ConvLayerSpec) -> Result<u64> {
    if layer.stride == 0 {
        return Err(Error::InvalidLayer("stride must be positive".into()));
    }
    let padded = layer.padded_side()?;
    let span = padded.checked_sub(layer.ksize).ok_or_else(|| {
        Error::InvalidLayer(format!("kernel side {} exceeds padded input side {padded}", layer.ksize))
    })?;
    Ok(span / layer.stride + 1)
}

pub fn kclc_exact(layer: &ConvLayerSpec) -> Result<u64> {
    let side = conv_out_side(layer)?;
    side.checked_mul(side)
        .and_then(|v| v.checked_mul(layer.ifm))
        .and_then(|v| v.checked_mul(layer.ksize))
        .and_then(|v| v.checked_mul(layer.ksize))
        .ok_or(Error::Overflow("KCLC"))
}

pub fn kclc_approx(layer: &ConvLayerSpec) -> Result<f64> {
    if layer.padding > 0 {
        return Err(Error::ApproxWithPadding(layer.padding));
    }
    layer.validate()?;
    let ratio = layer.i_size as f64 / layer.stride as f64;
    let k = layer.ksize as f64;
    let load = ratio * ratio * layer.ifm as f64 * k * k;
    if !load.is_finite() {
        return Err(Error::Overflow("approximate KCLC"));
    }
    Ok(load)
}

/// MACs needed to produce one output feature map.
pub fn kclc(layer: &ConvLayerSpec, mode: LoadMode) -> Result<MacCount> {
    match mode {
        LoadMode::Exact => kclc_exact(layer).map(MacCount::Exact),
        LoadMode::Approx => kclc_approx(layer).map(MacCount::Approx),
    }
}

pub fn clc_exact(layer: &ConvLayerSpec) -> Result<u64> {
    kclc_exact(layer)?.checked_mul(layer.ofm).ok_or(Error::Overflow("CLC"))
}

/// MACs of the whole convolutional layer, `kclc × ofm`.
pub fn clc(layer: &ConvLayerSpec, mode: LoadMode) -> Result<MacCount> {
    match mode {
        LoadMode::Exact => clc_exact(layer).map(MacCount::Exact),
        LoadMode::Approx => {
            let load = kclc_approx(layer)? * layer.ofm as f64;
            if !load.is_finite() {
                return Err(Error::Overflow("approximate CLC"));
            }
            Ok(MacCount::Approx(load))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn conv(i: u64, ifm: u64, ofm: u64, k: u64, s: u64) -> ConvLayerSpec {
        ConvLayerSpec::new(i, ifm, ofm, k, s).unwrap()
    }

    #[test]
    fn clf_examples() {
        assert_eq!(clf(&FcLayerSpec::new(1, 1).unwrap()).unwrap(), 1);
        assert_eq!(clf(&FcLayerSpec::new(1000, 500).unwrap()).unwrap(), 500_000);
        assert_eq!(clf(&FcLayerSpec::new(4096, 4096).unwrap()).unwrap(), 16_777_216);
    }

    #[test]
    fn clf_overflow_is_reported() {
        let layer = FcLayerSpec::new(u64::MAX, 2).unwrap();
        assert!(matches!(clf(&layer), Err(Error::Overflow(_))));
    }

    #[test]
    fn out_side_examples() {
        assert_eq!(conv_out_side(&conv(32, 1, 1, 3, 1)).unwrap(), 30);
        assert_eq!(conv_out_side(&conv(32, 1, 1, 32, 1)).unwrap(), 1);
        assert_eq!(conv_out_side(&conv(28, 1, 1, 5, 3)).unwrap(), 8);
        let padded = ConvLayerSpec::with_padding(32, 1, 1, 3, 1, 1).unwrap();
        assert_eq!(conv_out_side(&padded).unwrap(), 32);
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        assert!(ConvLayerSpec::new(4, 1, 1, 5, 1).is_err());
        assert!(ConvLayerSpec::with_padding(4, 1, 1, 5, 1, 1).is_ok());
        let raw = ConvLayerSpec { i_size: 4, ifm: 1, ofm: 1, ksize: 5, stride: 1, padding: 0 };
        assert!(conv_out_side(&raw).is_err());
    }

    #[test]
    fn zero_fields_are_rejected() {
        assert!(FcLayerSpec::new(0, 3).is_err());
        assert!(ConvLayerSpec::new(8, 0, 1, 3, 1).is_err());
        assert!(ConvLayerSpec::new(8, 1, 1, 3, 0).is_err());
    }

    #[test]
    fn kclc_and_clc_examples() {
        let layer = conv(32, 16, 64, 3, 1);
        assert_eq!(kclc(&layer, LoadMode::Exact).unwrap(), MacCount::Exact(129_600));
        assert_eq!(kclc(&layer, LoadMode::Approx).unwrap(), MacCount::Approx(147_456.0));
        assert_eq!(kclc_exact(&conv(1, 1, 1, 1, 1)).unwrap(), 1);
        assert_eq!(clc_exact(&layer).unwrap(), 8_294_400);
        let single = conv(32, 16, 1, 3, 1);
        assert_eq!(clc_exact(&single).unwrap(), kclc_exact(&single).unwrap());
        assert_eq!(clc_exact(&conv(28, 1, 6, 5, 1)).unwrap(), 86_400);
    }

    #[test]
    fn approx_rejects_padding() {
        let layer = ConvLayerSpec::with_padding(32, 3, 8, 3, 1, 1).unwrap();
        assert!(matches!(kclc(&layer, LoadMode::Approx), Err(Error::ApproxWithPadding(1))));
        assert!(matches!(clc(&layer, LoadMode::Approx), Err(Error::ApproxWithPadding(1))));
    }

    #[test]
    fn exact_overflow_is_reported() {
        let layer = conv(1 << 20, 1 << 20, 1 << 20, 1, 1);
        assert!(matches!(clc_exact(&layer), Err(Error::Overflow(_))));
    }

    #[test]
    fn approx_gap_shrinks_with_input_size() {
        let gaps: Vec<f64> = [64, 256, 1024]
            .iter()
            .map(|&i| {
                let layer = conv(i, 4, 8, 3, 1);
                let exact = clc_exact(&layer).unwrap() as f64;
                let approx = clc(&layer, LoadMode::Approx).unwrap().as_f64();
                (approx - exact) / approx
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn parses_layers_and_reports_bad_index() {
        let arch = NetworkArch::from_json_str(
            r#"{"name":"n","layers":[{"kind":"conv2d","i_size":28,"ifm":1,"ofm":6,"ksize":5,"stride":1},{"kind":"fc","i_size":10,"o_size":2,"label":"head"}]}"#,
            ArchParseOptions::default(),
        )
        .unwrap();
        assert_eq!(arch.layers.len(), 2);
        assert_eq!(arch.layers[1].label.as_deref(), Some("head"));
        if let LayerShape::Conv2d(c) = arch.layers[0].shape {
            assert_eq!(c.padding, 0);
        } else {
            panic!("expected conv");
        }

        let err = NetworkArch::from_json_str(
            r#"{"name":"n","layers":[{"kind":"fc","i_size":1,"o_size":1},{"kind":"lstm","units":4}]}"#,
            ArchParseOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownKind { index: 1, .. }), "{err}");
    }

    #[test]
    fn lenient_parse_keeps_placeholder() {
        let arch = NetworkArch::from_json_str(
            r#"{"name":"n","layers":[{"kind":"maxpool","size":2},{"kind":"fc","i_size":1,"o_size":1}]}"#,
            ArchParseOptions { skip_unknown: true },
        )
        .unwrap();
        assert_eq!(arch.skipped_layers(), vec![(0, "maxpool")]);
        assert_eq!(arch.layers[0].load(LoadMode::Exact).unwrap(), MacCount::Exact(0));
    }

    #[test]
    fn rejects_non_square_and_invalid_shapes() {
        let non_square =
            r#"{"name":"n","layers":[{"kind":"conv2d","i_size":8,"ifm":1,"ofm":1,"ksize":[3,5],"stride":1}]}"#;
        assert!(matches!(
            NetworkArch::from_json_str(non_square, ArchParseOptions::default()),
            Err(Error::LayerParse { index: 0, .. })
        ));
        let extra =
            r#"{"name":"n","layers":[{"kind":"conv2d","i_size":8,"ifm":1,"ofm":1,"ksize":3,"ksize_w":5,"stride":1}]}"#;
        assert!(NetworkArch::from_json_str(extra, ArchParseOptions::default()).is_err());
        let too_big = r#"{"name":"n","layers":[{"kind":"conv2d","i_size":2,"ifm":1,"ofm":1,"ksize":3,"stride":1}]}"#;
        assert!(NetworkArch::from_json_str(too_big, ArchParseOptions::default()).is_err());
        let empty = r#"{"name":"n","layers":[]}"#;
        assert!(NetworkArch::from_json_str(empty, ArchParseOptions::default()).is_err());
    }

    #[test]
    fn layer_json_round_trip() {
        let layer = LayerSpec::conv2d(ConvLayerSpec::with_padding(32, 3, 8, 3, 2, 1).unwrap()).with_label("c1");
        let text = serde_json::to_string(&layer).unwrap();
        let back: LayerSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(layer, back);
    }

    fn conv_strategy() -> impl Strategy<Value = ConvLayerSpec> {
        (1u64..64, 1u64..32, 1u64..64, 1u64..8, 1u64..6)
            .prop_filter_map("kernel fits", |(i, ifm, ofm, k, s)| ConvLayerSpec::new(i, ifm, ofm, k, s).ok())
    }

    proptest! {
        #[test]
        fn clf_is_symmetric(a in 1u64..1_000_000, b in 1u64..1_000_000) {
            let ab = clf(&FcLayerSpec::new(a, b).unwrap()).unwrap();
            let ba = clf(&FcLayerSpec::new(b, a).unwrap()).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn clc_is_ofm_times_kclc(layer in conv_strategy()) {
            prop_assert_eq!(clc_exact(&layer).unwrap(), layer.ofm * kclc_exact(&layer).unwrap());
        }

        #[test]
        fn clc_monotone_in_parameters(layer in conv_strategy()) {
            let base = clc_exact(&layer).unwrap();
            let bumped = [
                ConvLayerSpec { i_size: layer.i_size + 1, ..layer },
                ConvLayerSpec { ifm: layer.ifm + 1, ..layer },
                ConvLayerSpec { ofm: layer.ofm + 1, ..layer },
            ];
            for l in bumped {
                prop_assert!(clc_exact(&l).unwrap() >= base);
            }
            // (i - k)(k + 1) >= (i - k + 1)k holds only while 2k <= i.
            if layer.stride == 1 && 2 * layer.ksize <= layer.i_size {
                let l = ConvLayerSpec { ksize: layer.ksize + 1, ..layer };
                prop_assert!(clc_exact(&l).unwrap() >= base);
            }
            let wider = ConvLayerSpec { stride: layer.stride + 1, ..layer };
            prop_assert!(clc_exact(&wider).unwrap() <= base);
        }

        #[test]
        fn exact_never_exceeds_approx_when_stride_divides(
            q in 1u64..32, ifm in 1u64..8, ofm in 1u64..8, k in 1u64..6, s in 1u64..5,
        ) {
            let i = q * s;
            prop_assume!(k <= i);
            let layer = ConvLayerSpec::new(i, ifm, ofm, k, s).unwrap();
            let exact = clc_exact(&layer).unwrap() as f64;
            let approx = clc(&layer, LoadMode::Approx).unwrap().as_f64();
            prop_assert!(exact <= approx);
        }
    }
}
