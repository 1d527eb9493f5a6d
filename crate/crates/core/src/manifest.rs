//! Model manifests: the declarative description of how a model is
//! evaluated (framework constraint, containers, ordered pre-processing,
//! outputs, sources).

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::doc::{self, Mark, Node, NodeKind, SyntaxError, Value};
use crate::version::{Version, VersionConstraint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("schema error at `{path}` (line {}): {reason}", mark.line)]
    Schema {
        path: String,
        reason: String,
        mark: Mark,
    },
    #[error("unsupported {what} `{value}` at `{path}`")]
    Unsupported {
        path: String,
        what: &'static str,
        value: String,
    },
    #[error("no container for platform {arch}/{device}; available: {}", available.join(", "))]
    NoContainerForPlatform {
        arch: String,
        device: String,
        available: Vec<String>,
    },
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $canon:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $canon),+ }
            }
        }

        impl FromStr for $name {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s.trim() {
                    $(s if s.eq_ignore_ascii_case($canon) $(|| s.eq_ignore_ascii_case($alias))* => Ok($name::$variant),)+
                    _ => Err(()),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> serde::Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(|_| serde::de::Error::custom(format!(
                    concat!("invalid ", stringify!($name), " `{}`"), s)))
            }
        }
    };
}

string_enum!(Task {
    Classification => "classification" | "image_classification",
    ObjectDetection => "object_detection",
    InstanceSegmentation => "instance_segmentation",
});

string_enum!(ElementType {
    Int8 => "int8",
    Uint8 => "uint8",
    Float32 => "float32",
});

string_enum!(
    /// Axis order of a 4-D image tensor.
    DataLayout {
        Nhwc => "NHWC" | "HWC",
        Nchw => "NCHW" | "CHW",
    }
);

string_enum!(ColorLayout {
    Rgb => "RGB",
    Bgr => "BGR",
});

string_enum!(DctMethod {
    IntegerFast => "INTEGER_FAST" | "integer_fast",
    IntegerAccurate => "INTEGER_ACCURATE" | "integer_accurate",
});

string_enum!(
    /// Order of type conversion and normalization.
    OrderPolicy {
        ConvertThenNormalize => "convert_then_normalize",
        NormalizeInBytesThenConvert => "normalize_in_bytes_then_convert",
    }
);

string_enum!(CropMethod { Center => "center" });

string_enum!(ResizeMethod { Bilinear => "bilinear" });

string_enum!(InputKind { Image => "image" });

string_enum!(OutputKind {
    Probability => "probability",
    Box => "box",
    Class => "class",
    Mask => "mask",
});

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeStep {
    pub element_type: ElementType,
    pub data_layout: DataLayout,
    pub color_layout: ColorLayout,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dct_method: Option<DctMethod>,
}

impl Default for DecodeStep {
    fn default() -> Self {
        Self {
            element_type: ElementType::Uint8,
            data_layout: DataLayout::Nhwc,
            color_layout: ColorLayout::Rgb,
            dct_method: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CropStep {
    pub method: CropMethod,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResizeStep {
    /// `[C, H, W]`.
    pub dimensions: Vec<usize>,
    pub method: ResizeMethod,
    pub keep_aspect_ratio: bool,
}

impl ResizeStep {
    pub fn height(&self) -> usize {
        self.dimensions.get(1).copied().unwrap_or(0)
    }

    pub fn width(&self) -> usize {
        self.dimensions.get(2).copied().unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.dimensions.first().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CastStep {
    pub element_type: ElementType,
    pub order_policy: OrderPolicy,
}

/// One pre-processing step. Steps run in manifest order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum ProcessingStep {
    Decode(DecodeStep),
    Crop(CropStep),
    Resize(ResizeStep),
    Mean { values: Vec<f64> },
    Rescale { value: f64 },
    Cast(CastStep),
}

impl ProcessingStep {
    pub fn kind(&self) -> &'static str {
        match self {
            ProcessingStep::Decode(_) => "decode",
            ProcessingStep::Crop(_) => "crop",
            ProcessingStep::Resize(_) => "resize",
            ProcessingStep::Mean { .. } => "mean",
            ProcessingStep::Rescale { .. } => "rescale",
            ProcessingStep::Cast(_) => "cast",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub kind: InputKind,
    pub layer_name: Option<String>,
    pub element_type: ElementType,
    /// Input-level layout hint used when there is no decode step.
    pub layout: Option<DataLayout>,
    pub color_layout: Option<ColorLayout>,
    pub processing: Vec<ProcessingStep>,
    pub extra: IndexMap<String, Value>,
}

impl InputSpec {
    pub fn decode_step(&self) -> Option<&DecodeStep> {
        self.processing.iter().find_map(|s| match s {
            ProcessingStep::Decode(d) => Some(d),
            _ => None,
        })
    }

    /// Decode parameters in effect: the decode step, else the input-level
    /// hints, else uint8/NHWC/RGB.
    pub fn effective_decode(&self) -> DecodeStep {
        self.decode_step().cloned().unwrap_or_else(|| DecodeStep {
            data_layout: self.layout.unwrap_or(DataLayout::Nhwc),
            color_layout: self.color_layout.unwrap_or(ColorLayout::Rgb),
            ..DecodeStep::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub kind: OutputKind,
    pub layer_name: Option<String>,
    pub element_type: ElementType,
    pub features_url: Option<String>,
    /// Other keys from the output's `processing` block.
    pub post_processing: IndexMap<String, Value>,
    pub extra: IndexMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameworkSpec {
    pub name: String,
    pub version_constraint: VersionConstraint,
}

/// `architecture -> device class -> container reference`.
pub type ContainerMap = IndexMap<String, IndexMap<String, String>>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceSpec {
    pub base_url: Option<String>,
    pub graph_path: String,
    pub weights_path: Option<String>,
    /// Hex sha256 keyed by asset field (`graph_path`, `weights_path`).
    pub checksums: IndexMap<String, String>,
}

impl SourceSpec {
    /// Joins `path` onto `base_url` unless `path` is already absolute.
    pub fn resolve(&self, path: &str) -> String {
        if path.contains("://") || path.starts_with('/') {
            return path.to_string();
        }
        match &self.base_url {
            Some(base) if base.ends_with('/') => format!("{base}{path}"),
            Some(base) => format!("{base}/{path}"),
            None => path.to_string(),
        }
    }

    pub fn graph_url(&self) -> String {
        self.resolve(&self.graph_path)
    }

    pub fn weights_url(&self) -> Option<String> {
        self.weights_path.as_deref().map(|p| self.resolve(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRef {
    pub name: String,
    pub version: Version,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelManifest {
    pub name: String,
    pub version: Version,
    pub task: Task,
    pub license: String,
    pub description: String,
    pub framework: FrameworkSpec,
    pub containers: ContainerMap,
    pub envvars: Vec<(String, String)>,
    pub inputs: Vec<InputSpec>,
    pub outputs: Vec<OutputSpec>,
    pub source: SourceSpec,
    pub training_dataset: Option<DatasetRef>,
    pub references: Vec<Value>,
    pub attributes: IndexMap<String, Value>,
    /// Unrecognized top-level keys, kept verbatim.
    pub extra: IndexMap<String, Value>,
}

impl ModelManifest {
    pub fn resolve_container(&self, arch: &str, device: &str) -> Result<&str, ManifestError> {
        self.containers
            .get(arch)
            .and_then(|devices| devices.get(device))
            .filter(|r| !r.is_empty())
            .map(String::as_str)
            .ok_or_else(|| ManifestError::NoContainerForPlatform {
                arch: arch.to_string(),
                device: device.to_string(),
                available: self
                    .containers
                    .iter()
                    .flat_map(|(a, devs)| devs.keys().map(move |d| format!("{a}/{d}")))
                    .collect(),
            })
    }

    pub fn output(&self, kind: OutputKind) -> Option<&OutputSpec> {
        self.outputs.iter().find(|o| o.kind == kind)
    }

    pub fn to_yaml(&self) -> String {
        doc::emit(&self.to_value())
    }

    /// Canonical document tree, keys in the conventional manifest order.
    pub fn to_value(&self) -> Value {
        let mut top: Vec<(String, Value)> = vec![
            ("name".into(), Value::str(&self.name)),
            ("version".into(), Value::str(self.version.to_string())),
            ("task".into(), Value::str(self.task.as_str())),
        ];
        if !self.license.is_empty() {
            top.push(("license".into(), Value::str(&self.license)));
        }
        if !self.description.is_empty() {
            top.push(("description".into(), Value::str(&self.description)));
        }
        top.push((
            "framework".into(),
            Value::Map(vec![
                ("name".into(), Value::str(&self.framework.name)),
                ("version".into(), Value::str(self.framework.version_constraint.as_str())),
            ]),
        ));
        if !self.containers.is_empty() {
            top.push((
                "container".into(),
                Value::Map(
                    self.containers
                        .iter()
                        .map(|(arch, devs)| {
                            (
                                arch.clone(),
                                Value::Map(
                                    devs.iter()
                                        .map(|(d, r)| (d.clone(), Value::str(r)))
                                        .collect(),
                                ),
                            )
                        })
                        .collect(),
                ),
            ));
        }
        if !self.envvars.is_empty() {
            top.push((
                "envvars".into(),
                Value::Seq(
                    self.envvars
                        .iter()
                        .map(|(k, v)| Value::Map(vec![(k.clone(), Value::str(v))]))
                        .collect(),
                ),
            ));
        }
        top.push((
            "inputs".into(),
            Value::Seq(self.inputs.iter().map(input_to_value).collect()),
        ));
        top.push((
            "outputs".into(),
            Value::Seq(self.outputs.iter().map(output_to_value).collect()),
        ));
        let mut source = Vec::new();
        if let Some(base) = &self.source.base_url {
            source.push(("base_url".into(), Value::str(base)));
        }
        source.push(("graph_path".into(), Value::str(&self.source.graph_path)));
        if let Some(w) = &self.source.weights_path {
            source.push(("weights_path".into(), Value::str(w)));
        }
        if !self.source.checksums.is_empty() {
            source.push((
                "checksum".into(),
                Value::Map(
                    self.source
                        .checksums
                        .iter()
                        .map(|(k, v)| (k.clone(), Value::str(v)))
                        .collect(),
                ),
            ));
        }
        top.push(("source".into(), Value::Map(source)));
        if let Some(ds) = &self.training_dataset {
            top.push((
                "training_dataset".into(),
                Value::Map(vec![
                    ("name".into(), Value::str(&ds.name)),
                    ("version".into(), Value::str(ds.version.to_string())),
                ]),
            ));
        }
        if !self.references.is_empty() {
            top.push(("references".into(), Value::Seq(self.references.clone())));
        }
        if !self.attributes.is_empty() {
            top.push((
                "attributes".into(),
                Value::Map(self.attributes.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
            ));
        }
        top.extend(self.extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        Value::Map(top)
    }
}

fn num(x: f64) -> Value {
    Value::str(format!("{x}"))
}

/// Document form of a step's parameters.
pub fn step_to_value(step: &ProcessingStep) -> Value {
    match step {
        ProcessingStep::Decode(d) => {
            let mut m = vec![
                ("element_type".into(), Value::str(d.element_type.as_str())),
                ("data_layout".into(), Value::str(d.data_layout.as_str())),
                ("color_layout".into(), Value::str(d.color_layout.as_str())),
            ];
            if let Some(dct) = d.dct_method {
                m.push(("dct_method".into(), Value::str(dct.as_str())));
            }
            Value::Map(m)
        }
        ProcessingStep::Crop(c) => Value::Map(vec![
            ("method".into(), Value::str(c.method.as_str())),
            ("percentage".into(), num(c.percentage)),
        ]),
        ProcessingStep::Resize(r) => Value::Map(vec![
            (
                "dimensions".into(),
                Value::Seq(r.dimensions.iter().map(|d| Value::str(d.to_string())).collect()),
            ),
            ("method".into(), Value::str(r.method.as_str())),
            ("keep_aspect_ratio".into(), Value::str(r.keep_aspect_ratio.to_string())),
        ]),
        ProcessingStep::Mean { values } => Value::Seq(values.iter().copied().map(num).collect()),
        ProcessingStep::Rescale { value } => num(*value),
        ProcessingStep::Cast(c) => Value::Map(vec![
            ("element_type".into(), Value::str(c.element_type.as_str())),
            ("order_policy".into(), Value::str(c.order_policy.as_str())),
        ]),
    }
}

fn input_to_value(input: &InputSpec) -> Value {
    let mut m = vec![("type".into(), Value::str(input.kind.as_str()))];
    if let Some(l) = &input.layer_name {
        m.push(("layer_name".into(), Value::str(l)));
    }
    m.push(("element_type".into(), Value::str(input.element_type.as_str())));
    if let Some(l) = input.layout {
        m.push(("layout".into(), Value::str(l.as_str())));
    }
    if let Some(c) = input.color_layout {
        m.push(("color_layout".into(), Value::str(c.as_str())));
    }
    if !input.processing.is_empty() {
        let mut kinds: Vec<&str> = input.processing.iter().map(ProcessingStep::kind).collect();
        kinds.sort_unstable();
        kinds.dedup();
        let steps = if kinds.len() == input.processing.len() {
            Value::Map(
                input
                    .processing
                    .iter()
                    .map(|s| (s.kind().to_string(), step_to_value(s)))
                    .collect(),
            )
        } else {
            // repeated step kinds need the sequence form
            Value::Seq(
                input
                    .processing
                    .iter()
                    .map(|s| Value::Map(vec![(s.kind().to_string(), step_to_value(s))]))
                    .collect(),
            )
        };
        m.push(("processing".into(), steps));
    }
    m.extend(input.extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    Value::Map(m)
}

fn output_to_value(output: &OutputSpec) -> Value {
    let mut m = vec![("type".into(), Value::str(output.kind.as_str()))];
    if let Some(l) = &output.layer_name {
        m.push(("layer_name".into(), Value::str(l)));
    }
    m.push(("element_type".into(), Value::str(output.element_type.as_str())));
    let mut processing: Vec<(String, Value)> = Vec::new();
    if let Some(url) = &output.features_url {
        processing.push(("features_url".into(), Value::str(url)));
    }
    processing.extend(output.post_processing.iter().map(|(k, v)| (k.clone(), v.clone())));
    if !processing.is_empty() {
        m.push(("processing".into(), Value::Map(processing)));
    }
    m.extend(output.extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    Value::Map(m)
}

impl fmt::Display for ModelManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_yaml())
    }
}

// ---------------------------------------------------------------------------
// Parsing

/// Parses a manifest document.
pub fn parse_manifest(text: &str) -> Result<ModelManifest, ManifestError> {
    let root = doc::parse(text)?;
    ManifestReader::default().manifest(&root)
}

impl FromStr for ModelManifest {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_manifest(s)
    }
}

/// Parses the parameters of one `kind` step, as found under `processing`.
pub fn parse_step(kind: &str, params: &Value) -> Result<ProcessingStep, ManifestError> {
    ManifestReader.step(kind, kind, &params.to_node())
}

fn schema(path: &str, node: &Node, reason: impl Into<String>) -> ManifestError {
    ManifestError::Schema {
        path: path.to_string(),
        reason: reason.into(),
        mark: node.mark,
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Consumes keys of one mapping, so the leftovers can be kept as extras.
struct Fields<'a> {
    path: String,
    node: &'a Node,
    entries: Vec<(&'a str, &'a Node)>,
}

impl<'a> Fields<'a> {
    fn new(path: &str, node: &'a Node) -> Result<Self, ManifestError> {
        let entries = node
            .as_map()
            .ok_or_else(|| schema(path, node, format!("expected a mapping, found a {}", node.kind_name())))?
            .iter()
            .map(|(k, _, v)| (k.as_str(), v))
            .collect();
        Ok(Self {
            path: path.to_string(),
            node,
            entries,
        })
    }

    fn take(&mut self, key: &str) -> Option<&'a Node> {
        let idx = self.entries.iter().position(|(k, _)| *k == key)?;
        let (_, node) = self.entries.remove(idx);
        if node.is_null() {
            None
        } else {
            Some(node)
        }
    }

    /// Takes the first present key among aliases; two aliases at once is an
    /// error.
    fn take_any(&mut self, keys: &[&str]) -> Result<Option<(&'a Node, String)>, ManifestError> {
        let mut found: Option<(&'a Node, String)> = None;
        for key in keys {
            if let Some(node) = self.take(key) {
                if found.is_some() {
                    return Err(schema(
                        &join(&self.path, key),
                        node,
                        format!("`{key}` conflicts with `{}`", keys[0]),
                    ));
                }
                found = Some((node, join(&self.path, key)));
            }
        }
        Ok(found)
    }

    fn required(&mut self, key: &str) -> Result<&'a Node, ManifestError> {
        let path = join(&self.path, key);
        self.take(key)
            .ok_or_else(|| schema(&path, self.node, "missing required field"))
    }

    fn string(&mut self, key: &str) -> Result<String, ManifestError> {
        let node = self.required(key)?;
        scalar(&join(&self.path, key), node)
    }

    fn opt_string(&mut self, key: &str) -> Result<Option<String>, ManifestError> {
        self.take(key)
            .map(|n| scalar(&join(&self.path, key), n))
            .transpose()
    }

    fn enum_field<T: FromStr>(
        &mut self,
        key: &str,
        what: &'static str,
    ) -> Result<Option<T>, ManifestError> {
        let path = join(&self.path, key);
        let Some(node) = self.take(key) else {
            return Ok(None);
        };
        parse_enum(&path, node, what).map(Some)
    }

    fn rest(self) -> IndexMap<String, Value> {
        self.entries
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_value()))
            .collect()
    }

    fn deny_rest(self) -> Result<(), ManifestError> {
        if let Some((key, node)) = self.entries.first() {
            return Err(schema(&join(&self.path, key), node, "unknown field"));
        }
        Ok(())
    }
}

fn scalar(path: &str, node: &Node) -> Result<String, ManifestError> {
    node.as_scalar()
        .map(str::to_string)
        .ok_or_else(|| schema(path, node, format!("expected a scalar, found a {}", node.kind_name())))
}

fn parse_enum<T: FromStr>(path: &str, node: &Node, what: &'static str) -> Result<T, ManifestError> {
    let s = scalar(path, node)?;
    s.parse().map_err(|_| ManifestError::Unsupported {
        path: path.to_string(),
        what,
        value: s,
    })
}

fn real(path: &str, node: &Node) -> Result<f64, ManifestError> {
    let s = scalar(path, node)?;
    s.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| schema(path, node, format!("`{s}` is not a finite number")))
}

fn boolean(path: &str, node: &Node) -> Result<bool, ManifestError> {
    match scalar(path, node)?.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        other => Err(schema(path, node, format!("`{other}` is not a boolean"))),
    }
}

fn seq<'a>(path: &str, node: &'a Node) -> Result<&'a [Node], ManifestError> {
    node.as_seq()
        .ok_or_else(|| schema(path, node, format!("expected a sequence, found a {}", node.kind_name())))
}

#[derive(Default)]
struct ManifestReader;

impl ManifestReader {
    fn manifest(&self, root: &Node) -> Result<ModelManifest, ManifestError> {
        let mut f = Fields::new("", root)?;
        let name = f.string("name")?;
        if name.trim().is_empty() {
            return Err(schema("name", root, "must not be empty"));
        }
        let version_node = f.required("version")?;
        let version = Version::parse_lenient(&scalar("version", version_node)?)
            .map_err(|e| schema("version", version_node, e.to_string()))?;
        let task = parse_enum("task", f.required("task")?, "task")?;
        let license = match f.take_any(&["license", "licence"])? {
            Some((node, path)) => scalar(&path, node)?,
            None => String::new(),
        };
        let description = f.opt_string("description")?.unwrap_or_default();
        let framework = self.framework(f.required("framework")?)?;
        let containers = match f.take_any(&["container", "containers"])? {
            Some((node, path)) => self.containers(&path, node)?,
            None => ContainerMap::new(),
        };
        let envvars = match f.take("envvars") {
            Some(node) => self.envvars(node)?,
            None => Vec::new(),
        };

        let inputs_node = f.take("inputs");
        let inputs = match inputs_node {
            Some(node) => seq("inputs", node)?
                .iter()
                .enumerate()
                .map(|(i, n)| self.input(&format!("inputs[{i}]"), n))
                .collect::<Result<Vec<_>, _>>()?,
            None => Vec::new(),
        };
        if inputs.is_empty() {
            return Err(schema("inputs", inputs_node.unwrap_or(root), "at least one input is required"));
        }
        let outputs_node = f.take("outputs");
        let outputs = match outputs_node {
            Some(node) => seq("outputs", node)?
                .iter()
                .enumerate()
                .map(|(i, n)| self.output(&format!("outputs[{i}]"), n))
                .collect::<Result<Vec<_>, _>>()?,
            None => Vec::new(),
        };
        if outputs.is_empty() {
            return Err(schema("outputs", outputs_node.unwrap_or(root), "at least one output is required"));
        }
        let source = self.source(f.required("source")?)?;
        let training_dataset = f
            .take("training_dataset")
            .map(|n| self.dataset(n))
            .transpose()?;
        let references = match f.take("references") {
            Some(node) => seq("references", node)?.iter().map(Node::to_value).collect(),
            None => Vec::new(),
        };
        let attributes = match f.take("attributes") {
            Some(node) => Fields::new("attributes", node)?.rest(),
            None => IndexMap::new(),
        };
        Ok(ModelManifest {
            name,
            version,
            task,
            license,
            description,
            framework,
            containers,
            envvars,
            inputs,
            outputs,
            source,
            training_dataset,
            references,
            attributes,
            extra: f.rest(),
        })
    }

    fn framework(&self, node: &Node) -> Result<FrameworkSpec, ManifestError> {
        let mut f = Fields::new("framework", node)?;
        let name = f.string("name")?;
        if name.trim().is_empty() {
            return Err(schema("framework.name", node, "must not be empty"));
        }
        let constraint_node = f.required("version")?;
        let version_constraint = VersionConstraint::parse(&scalar("framework.version", constraint_node)?)
            .map_err(|e| schema("framework.version", constraint_node, e.to_string()))?;
        f.deny_rest()?;
        Ok(FrameworkSpec {
            name,
            version_constraint,
        })
    }

    fn containers(&self, path: &str, node: &Node) -> Result<ContainerMap, ManifestError> {
        let archs = node
            .as_map()
            .ok_or_else(|| schema(path, node, "expected a mapping of architectures"))?;
        let mut out = ContainerMap::new();
        for (arch, _, devs) in archs {
            let arch_path = join(path, arch);
            let devs_map = devs
                .as_map()
                .ok_or_else(|| schema(&arch_path, devs, "expected a mapping of device classes"))?;
            let mut inner = IndexMap::new();
            for (device, _, reference) in devs_map {
                let reference = if reference.is_null() {
                    String::new()
                } else {
                    scalar(&join(&arch_path, device), reference)?
                };
                inner.insert(device.clone(), reference);
            }
            out.insert(arch.clone(), inner);
        }
        Ok(out)
    }

    fn envvars(&self, node: &Node) -> Result<Vec<(String, String)>, ManifestError> {
        let mut out = Vec::new();
        match &node.kind {
            NodeKind::Map(entries) => {
                for (k, _, v) in entries {
                    out.push((k.clone(), scalar(&join("envvars", k), v)?));
                }
            }
            NodeKind::Seq(items) => {
                for (i, item) in items.iter().enumerate() {
                    let path = format!("envvars[{i}]");
                    let entries = item
                        .as_map()
                        .ok_or_else(|| schema(&path, item, "expected `NAME: value`"))?;
                    for (k, _, v) in entries {
                        let value = if v.is_null() { String::new() } else { scalar(&join(&path, k), v)? };
                        out.push((k.clone(), value));
                    }
                }
            }
            NodeKind::Scalar(_) => return Err(schema("envvars", node, "expected a list of `NAME: value`")),
        }
        Ok(out)
    }

    fn input(&self, path: &str, node: &Node) -> Result<InputSpec, ManifestError> {
        let mut f = Fields::new(path, node)?;
        let kind = parse_enum(&join(path, "type"), f.required("type")?, "input type")?;
        let layer_name = f.opt_string("layer_name")?;
        let element_type = f.enum_field("element_type", "element type")?.unwrap_or(ElementType::Float32);
        let layout = f.enum_field("layout", "data layout")?;
        let color_layout = f.enum_field("color_layout", "color layout")?;
        let processing = match f.take("processing") {
            Some(steps) => self.steps(&join(path, "processing"), steps)?,
            None => Vec::new(),
        };
        Ok(InputSpec {
            kind,
            layer_name,
            element_type,
            layout,
            color_layout,
            processing,
            extra: f.rest(),
        })
    }

    fn steps(&self, path: &str, node: &Node) -> Result<Vec<ProcessingStep>, ManifestError> {
        match &node.kind {
            NodeKind::Map(entries) => entries
                .iter()
                .map(|(kind, _, params)| self.step(&join(path, kind), kind, params))
                .collect(),
            NodeKind::Seq(items) => items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let item_path = format!("{path}[{i}]");
                    match item.as_map() {
                        Some([(kind, _, params)]) => self.step(&join(&item_path, kind), kind, params),
                        _ => Err(schema(&item_path, item, "each step must be a single `kind: params` entry")),
                    }
                })
                .collect(),
            NodeKind::Scalar(_) => Err(schema(path, node, "expected an ordered mapping of steps")),
        }
    }

    fn step(&self, path: &str, kind: &str, params: &Node) -> Result<ProcessingStep, ManifestError> {
        let step = match kind {
            "decode" => {
                let mut f = Fields::new(path, params)?;
                let defaults = DecodeStep::default();
                let step = DecodeStep {
                    element_type: f.enum_field("element_type", "element type")?.unwrap_or(defaults.element_type),
                    data_layout: f.enum_field("data_layout", "data layout")?.unwrap_or(defaults.data_layout),
                    color_layout: f.enum_field("color_layout", "color layout")?.unwrap_or(defaults.color_layout),
                    dct_method: f.enum_field("dct_method", "dct method")?,
                };
                f.deny_rest()?;
                ProcessingStep::Decode(step)
            }
            "crop" => {
                let mut f = Fields::new(path, params)?;
                let method = f.enum_field("method", "crop method")?.unwrap_or(CropMethod::Center);
                let percentage = real(&join(path, "percentage"), f.required("percentage")?)?;
                f.deny_rest()?;
                ProcessingStep::Crop(CropStep { method, percentage })
            }
            "resize" => {
                let mut f = Fields::new(path, params)?;
                let dims_path = join(path, "dimensions");
                let dimensions = seq(&dims_path, f.required("dimensions")?)?
                    .iter()
                    .map(|n| {
                        let s = scalar(&dims_path, n)?;
                        s.parse::<usize>()
                            .map_err(|_| schema(&dims_path, n, format!("`{s}` is not a non-negative integer")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if dimensions.len() != 3 {
                    return Err(schema(&dims_path, params, "expected [C, H, W]"));
                }
                let method = f.enum_field("method", "resize method")?.unwrap_or(ResizeMethod::Bilinear);
                let keep_aspect_ratio = f
                    .take("keep_aspect_ratio")
                    .map(|n| boolean(&join(path, "keep_aspect_ratio"), n))
                    .transpose()?
                    .unwrap_or(false);
                f.deny_rest()?;
                ProcessingStep::Resize(ResizeStep {
                    dimensions,
                    method,
                    keep_aspect_ratio,
                })
            }
            "mean" => ProcessingStep::Mean {
                values: seq(path, params)?
                    .iter()
                    .map(|n| real(path, n))
                    .collect::<Result<_, _>>()?,
            },
            "rescale" => ProcessingStep::Rescale {
                value: real(path, params)?,
            },
            "cast" => {
                let mut f = Fields::new(path, params)?;
                let element_type = f.enum_field("element_type", "element type")?.unwrap_or(ElementType::Float32);
                let order_policy = f
                    .enum_field("order_policy", "order policy")?
                    .unwrap_or(OrderPolicy::ConvertThenNormalize);
                f.deny_rest()?;
                ProcessingStep::Cast(CastStep {
                    element_type,
                    order_policy,
                })
            }
            other => {
                return Err(ManifestError::Unsupported {
                    path: path.to_string(),
                    what: "processing step",
                    value: other.to_string(),
                })
            }
        };
        Ok(step)
    }

    fn output(&self, path: &str, node: &Node) -> Result<OutputSpec, ManifestError> {
        let mut f = Fields::new(path, node)?;
        let kind = parse_enum(&join(path, "type"), f.required("type")?, "output type")?;
        let layer_name = f.opt_string("layer_name")?;
        let element_type = f.enum_field("element_type", "element type")?.unwrap_or(ElementType::Float32);
        let mut features_url = f.opt_string("features_url")?;
        let mut post_processing = IndexMap::new();
        if let Some(proc_node) = f.take("processing") {
            let proc_path = join(path, "processing");
            let mut pf = Fields::new(&proc_path, proc_node)?;
            if let Some(url) = pf.opt_string("features_url")? {
                if features_url.is_some() {
                    return Err(schema(
                        &join(&proc_path, "features_url"),
                        proc_node,
                        "features_url given twice",
                    ));
                }
                features_url = Some(url);
            }
            post_processing = pf.rest();
        }
        Ok(OutputSpec {
            kind,
            layer_name,
            element_type,
            features_url,
            post_processing,
            extra: f.rest(),
        })
    }

    fn source(&self, node: &Node) -> Result<SourceSpec, ManifestError> {
        let mut f = Fields::new("source", node)?;
        let base_url = f.opt_string("base_url")?;
        let graph_path = f.string("graph_path")?;
        if graph_path.trim().is_empty() {
            return Err(schema("source.graph_path", node, "must not be empty"));
        }
        let weights_path = f.opt_string("weights_path")?;
        let checksums = match f.take("checksum") {
            Some(n) => {
                let mut cf = Fields::new("source.checksum", n)?;
                let mut out = IndexMap::new();
                for key in ["graph_path", "weights_path"] {
                    if let Some(hash) = cf.opt_string(key)? {
                        out.insert(key.to_string(), hash.to_ascii_lowercase());
                    }
                }
                cf.deny_rest()?;
                out
            }
            None => IndexMap::new(),
        };
        f.deny_rest()?;
        Ok(SourceSpec {
            base_url,
            graph_path,
            weights_path,
            checksums,
        })
    }

    fn dataset(&self, node: &Node) -> Result<DatasetRef, ManifestError> {
        let mut f = Fields::new("training_dataset", node)?;
        let name = f.string("name")?;
        let version_node = f.required("version")?;
        let version = Version::parse_lenient(&scalar("training_dataset.version", version_node)?)
            .map_err(|e| schema("training_dataset.version", version_node, e.to_string()))?;
        f.deny_rest()?;
        Ok(DatasetRef { name, version })
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    fn error(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            severity: Severity::Error,
            message: message.into(),
        });
    }

    fn warning(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            severity: Severity::Warning,
            message: message.into(),
        });
    }

    /// A report holding one error, for documents that do not parse.
    pub fn single_error(path: impl Into<String>, message: impl Into<String>) -> Self {
        let mut r = Self::default();
        r.error(path, message);
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Checks semantic rules that parsing does not enforce. Manifests whose
/// report has errors must not be loaded.
pub fn validate_manifest(m: &ModelManifest) -> ValidationReport {
    let mut report = ValidationReport::default();

    for (arch, devices) in &m.containers {
        if devices.is_empty() {
            report.error(format!("container.{arch}"), "architecture lists no device classes");
        }
        for (device, reference) in devices {
            if reference.trim().is_empty() {
                report.error(format!("container.{arch}.{device}"), "empty container reference");
            }
        }
    }

    for (i, (key, _)) in m.envvars.iter().enumerate() {
        if key.is_empty() || key.contains('=') {
            report.error(format!("envvars[{i}]"), "invalid environment variable name");
        }
    }

    for (i, input) in m.inputs.iter().enumerate() {
        validate_input(&mut report, i, input);
    }

    match m.task {
        Task::Classification => {
            let probs: Vec<_> = m
                .outputs
                .iter()
                .enumerate()
                .filter(|(_, o)| o.kind == OutputKind::Probability)
                .collect();
            if probs.len() != 1 {
                report.error(
                    "outputs",
                    format!("classification needs exactly one probability output, found {}", probs.len()),
                );
            }
            for (i, o) in probs {
                if o.features_url.is_none() {
                    report.warning(
                        format!("outputs[{i}].features_url"),
                        "probability output has no label list; labeled metrics are unavailable",
                    );
                }
            }
        }
        Task::ObjectDetection | Task::InstanceSegmentation => {
            let mut required = vec![OutputKind::Box, OutputKind::Probability, OutputKind::Class];
            if m.task == Task::InstanceSegmentation {
                required.push(OutputKind::Mask);
            }
            for kind in required {
                if m.output(kind).is_none() {
                    report.error("outputs", format!("{} requires a `{kind}` output", m.task));
                }
            }
        }
    }
    for (i, o) in m.outputs.iter().enumerate() {
        if o.layer_name.as_deref().is_none_or(|l| l.trim().is_empty()) {
            report.warning(
                format!("outputs[{i}].layer_name"),
                format!("no layer name; the output is addressed by position ({i})"),
            );
        }
        for key in o.extra.keys() {
            report.warning(format!("outputs[{i}].{key}"), "unknown field preserved");
        }
    }

    if let Some(ds) = &m.training_dataset {
        if ds.name.trim().is_empty() {
            report.error("training_dataset.name", "must not be empty");
        }
    }
    for (asset, hash) in &m.source.checksums {
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            report.error(format!("source.checksum.{asset}"), "expected a hex sha256 digest");
        }
    }
    if m.source.checksums.contains_key("weights_path") && m.source.weights_path.is_none() {
        report.error("source.checksum.weights_path", "checksum given for a missing weights_path");
    }
    for key in m.extra.keys() {
        report.warning(key.clone(), "unknown field preserved");
    }
    report
}

fn validate_input(report: &mut ValidationReport, index: usize, input: &InputSpec) {
    let base = format!("inputs[{index}]");
    let mut channels = 3usize;
    let mut decode_seen = false;
    for (pos, step) in input.processing.iter().enumerate() {
        let path = format!("{base}.processing.{}", step.kind());
        match step {
            ProcessingStep::Decode(_) => {
                if pos != 0 {
                    report.error(&path, "decode must be the first step");
                }
                if decode_seen {
                    report.error(&path, "decode given more than once");
                }
                decode_seen = true;
            }
            ProcessingStep::Crop(c) => {
                if !(c.percentage > 0.0 && c.percentage <= 100.0) {
                    report.error(format!("{path}.percentage"), "must be in (0, 100]");
                }
            }
            ProcessingStep::Resize(r) => {
                if r.dimensions.iter().any(|&d| d < 1) {
                    report.error(format!("{path}.dimensions"), "all dimensions must be >= 1");
                }
                if r.channels() != 3 && r.channels() >= 1 {
                    report.error(format!("{path}.dimensions"), "only 3-channel images are supported");
                }
                channels = r.channels().max(1);
            }
            ProcessingStep::Mean { values } => {
                if values.len() != channels {
                    report.error(
                        &path,
                        format!("expected {channels} values (one per channel), found {}", values.len()),
                    );
                }
            }
            ProcessingStep::Rescale { value } => {
                if *value == 0.0 {
                    report.error(&path, "must not be zero");
                }
            }
            ProcessingStep::Cast(c) => {
                if c.element_type == ElementType::Int8 {
                    report.error(format!("{path}.element_type"), "cannot cast to int8");
                }
            }
        }
    }
    if input.decode_step().is_some() && (input.layout.is_some() || input.color_layout.is_some()) {
        report.warning(&base, "input-level layout hints are ignored when a decode step is present");
    }
    for key in input.extra.keys() {
        report.warning(format!("{base}.{key}"), "unknown field preserved");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
name: tiny
version: 1.0.0
task: classification
framework:
  name: TensorFlow
  version: ^1.x
inputs:
  - type: image
    layer_name: data
    element_type: float32
    processing:
      crop:
        method: center
        percentage: 50
outputs:
  - type: probability
    layer_name: prob
    element_type: float32
    features_url: labels.txt
source:
  graph_path: weights.json
";

    #[test]
    fn minimal_manifest_parses() {
        let m = parse_manifest(MINIMAL).unwrap();
        assert_eq!(m.name, "tiny");
        assert_eq!(m.inputs[0].processing.len(), 1);
        assert!(!validate_manifest(&m).has_errors());
    }

    #[test]
    fn empty_inputs_is_schema_error() {
        let text = MINIMAL.replace(
            "  - type: image\n    layer_name: data\n    element_type: float32\n    processing:\n      crop:\n        method: center\n        percentage: 50\n",
            "",
        );
        let text = text.replace("inputs:\n", "inputs: []\n");
        match parse_manifest(&text) {
            Err(ManifestError::Schema { path, .. }) => assert_eq!(path, "inputs"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_reports_path() {
        let text = MINIMAL.replace("  graph_path: weights.json\n", "  weights_path: w\n");
        match parse_manifest(&text) {
            Err(ManifestError::Schema { path, .. }) => assert_eq!(path, "source.graph_path"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unsupported_step_and_task() {
        let text = MINIMAL.replace("      crop:", "      sharpen:");
        assert!(matches!(
            parse_manifest(&text),
            Err(ManifestError::Unsupported { what: "processing step", .. })
        ));
        let text = MINIMAL.replace("task: classification", "task: captioning");
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Unsupported { what: "task", .. })));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_manifest("name: a\nname: b\n").unwrap_err();
        match err {
            ManifestError::Syntax(e) => assert_eq!(e.mark.line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crop_zero_is_validation_error() {
        let m = parse_manifest(&MINIMAL.replace("percentage: 50", "percentage: 0")).unwrap();
        let report = validate_manifest(&m);
        let errors: Vec<_> = report.errors().collect();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].path, "inputs[0].processing.crop.percentage");
    }

    #[test]
    fn missing_features_url_is_warning() {
        let m = parse_manifest(&MINIMAL.replace("    features_url: labels.txt\n", "")).unwrap();
        let report = validate_manifest(&m);
        assert!(!report.has_errors());
        let warnings: Vec<_> = report.warnings().collect();
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].path, "outputs[0].features_url");
    }

    #[test]
    fn unknown_keys_are_preserved_as_warnings() {
        let m = parse_manifest(&format!("{MINIMAL}owner: someone\n")).unwrap();
        assert_eq!(m.extra.get("owner"), Some(&Value::str("someone")));
        let report = validate_manifest(&m);
        assert!(report.warnings().any(|w| w.path == "owner"));
        assert!(m.to_yaml().contains("owner: someone"));
    }

    #[test]
    fn repeated_steps_use_sequence_form() {
        let text = MINIMAL.replace(
            "      crop:\n        method: center\n        percentage: 50\n",
            "      - crop:\n          percentage: 50\n      - crop:\n          percentage: 80\n",
        );
        let m = parse_manifest(&text).unwrap();
        assert_eq!(m.inputs[0].processing.len(), 2);
        let again = parse_manifest(&m.to_yaml()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn mean_length_must_match_channels() {
        let text = MINIMAL.replace(
            "        percentage: 50\n",
            "        percentage: 50\n      mean: [1, 2]\n      rescale: 0\n",
        );
        let m = parse_manifest(&text).unwrap();
        let paths: Vec<_> = validate_manifest(&m).errors().map(|v| v.path.clone()).collect();
        assert_eq!(paths, ["inputs[0].processing.mean", "inputs[0].processing.rescale"]);
    }

    #[test]
    fn validation_is_pure() {
        let m = parse_manifest(&MINIMAL.replace("percentage: 50", "percentage: 101")).unwrap();
        assert_eq!(validate_manifest(&m), validate_manifest(&m));
    }

    #[test]
    fn source_resolution() {
        let s = SourceSpec {
            base_url: Some("http://host/models".into()),
            graph_path: "model-symbol.json".into(),
            weights_path: Some("https://elsewhere/w.params".into()),
            checksums: IndexMap::new(),
        };
        assert_eq!(s.graph_url(), "http://host/models/model-symbol.json");
        assert_eq!(s.weights_url().unwrap(), "https://elsewhere/w.params");
    }
}
