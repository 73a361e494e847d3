//! Declarative network description and its line-oriented text form.
//!
//! ```text
//! input c=3 h=32 w=32
//! elective mode=literal
//! seed value=7
//! conv name=Conv1 k=5 out=8 stride=1 act=relu
//! exfeat name=ExFeat1
//! add name=Add1 skip=Conv2
//! fc name=FC1 out=64 act=relu
//! classifier classes=4
//! ```
//!
//! `#` starts a comment. Layer order defines the wiring: every layer reads
//! the output of the line above it; `add` also reads its `skip` source.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{conv_output_hw, Activation, ElectiveMode};

/// Kernel sizes of the four ExFeat branches.
pub const EXFEAT_KERNELS: [usize; 4] = [1, 3, 5, 7];

pub const CANONICAL_CONFIG: &str = include_str!("../../../../configs/expertnet.cfg");
pub const DESK_CONFIG: &str = include_str!("../../../../configs/desk.cfg");

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        kernel: usize,
        out_channels: usize,
        stride: usize,
        act: Activation,
    },
    ExFeat,
    Add {
        skip: String,
    },
    Fc {
        out_units: usize,
        act: Activation,
    },
    Classifier {
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn kind_label(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv { .. } => "conv",
            LayerKind::ExFeat => "exfeat",
            LayerKind::Add { .. } => "add",
            LayerKind::Fc { .. } => "fc",
            LayerKind::Classifier { .. } => "classifier",
        }
    }
}

/// Per-sample activation shape `(channels, height, width)`.
pub type MapShape = [usize; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub input: MapShape,
    pub layers: Vec<LayerSpec>,
    pub elective_mode: ElectiveMode,
    pub seed: u64,
}

impl ModelConfig {
    pub fn canonical() -> Self {
        CANONICAL_CONFIG.parse().expect("bundled canonical config parses")
    }

    pub fn desk() -> Self {
        DESK_CONFIG.parse().expect("bundled desk config parses")
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::Classifier { classes }) => *classes,
            _ => 0,
        }
    }

    /// Replaces the classifier's class count.
    pub fn set_num_classes(&mut self, classes: usize) {
        if let Some(LayerSpec {
            kind: LayerKind::Classifier { classes: c },
            ..
        }) = self.layers.last_mut()
        {
            *c = classes;
        }
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    /// Propagates the input shape through every layer, validating the
    /// wiring on the way.
    pub fn shape_table(&self) -> Result<Vec<MapShape>> {
        if self.input.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} has a zero extent", self.input)));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("no layers".into()));
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut shapes: Vec<MapShape> = Vec::with_capacity(self.layers.len());
        let mut cur = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            if seen.insert(layer.name.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate layer name `{}`", layer.name)));
            }
            let is_last = i + 1 == self.layers.len();
            cur = match &layer.kind {
                LayerKind::Conv {
                    kernel,
                    out_channels,
                    stride,
                    ..
                } => {
                    if kernel % 2 == 0 || *kernel == 0 {
                        return Err(Error::Config(format!("{}: kernel {kernel} must be odd", layer.name)));
                    }
                    if *stride != 1 && *stride != 2 {
                        return Err(Error::Config(format!("{}: stride must be 1 or 2", layer.name)));
                    }
                    if *out_channels == 0 {
                        return Err(Error::Config(format!("{}: zero output channels", layer.name)));
                    }
                    let (h, w) = conv_output_hw(cur[1], cur[2], *kernel, *stride, kernel / 2)
                        .map_err(|e| Error::Config(format!("{}: {e}", layer.name)))?;
                    [*out_channels, h, w]
                }
                LayerKind::ExFeat => cur,
                LayerKind::Add { skip } => {
                    let j = *seen.get(skip.as_str()).filter(|&&j| j < i).ok_or_else(|| {
                        Error::Config(format!("{}: skip source `{skip}` is not an earlier layer", layer.name))
                    })?;
                    if i == 0 {
                        return Err(Error::Config(format!("{}: add cannot be the first layer", layer.name)));
                    }
                    if shapes[j] != cur {
                        return Err(Error::Config(format!(
                            "{}: skip source `{skip}` has shape {:?}, main path has {:?}",
                            layer.name, shapes[j], cur
                        )));
                    }
                    cur
                }
                LayerKind::Fc { out_units, .. } => {
                    if *out_units == 0 {
                        return Err(Error::Config(format!("{}: zero units", layer.name)));
                    }
                    [*out_units, 1, 1]
                }
                LayerKind::Classifier { classes } => {
                    if !is_last {
                        return Err(Error::Config("the classifier must be the last layer".into()));
                    }
                    if *classes < 2 {
                        return Err(Error::Config(format!("classifier needs >= 2 classes, got {classes}")));
                    }
                    [*classes, 1, 1]
                }
            };
            shapes.push(cur);
        }
        if !matches!(self.layers.last().unwrap().kind, LayerKind::Classifier { .. }) {
            return Err(Error::Config("the last layer must be a classifier".into()));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_table().map(|_| ())
    }
}

fn parse_kv<'a>(line_no: usize, tokens: &[&'a str]) -> Result<BTreeMap<&'a str, &'a str>> {
    let mut map = BTreeMap::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line_no}: expected key=value, got `{tok}`")))?;
        if map.insert(k, v).is_some() {
            return Err(Error::Config(format!("line {line_no}: repeated key `{k}`")));
        }
    }
    Ok(map)
}

struct Fields<'a> {
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.map.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<&'a str> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("line {}: missing `{key}=`", self.line)))
    }

    fn number<N: FromStr>(&mut self, key: &str, default: Option<N>) -> Result<N> {
        match self.take(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("line {}: `{key}={v}` is not a number", self.line))),
            None => default.ok_or_else(|| Error::Config(format!("line {}: missing `{key}=`", self.line))),
        }
    }

    fn act(&mut self) -> Result<Activation> {
        match self.take("act").unwrap_or("none") {
            "relu" => Ok(Activation::Relu),
            "none" | "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("line {}: unknown activation `{other}`", self.line))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::Config(format!("line {}: unknown key `{k}`", self.line))),
        }
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut input = None;
        let mut elective_mode = ElectiveMode::default();
        let mut seed = 0;
        let mut layers = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let mut f = Fields {
                line: line_no,
                map: parse_kv(line_no, &tokens[1..])?,
            };
            match tokens[0] {
                "input" => {
                    input = Some([f.number("c", None)?, f.number("h", None)?, f.number("w", None)?]);
                }
                "elective" => elective_mode = f.required("mode")?.parse()?,
                "seed" => seed = f.number("value", None)?,
                kind => {
                    let name = match kind {
                        "classifier" => f.take("name").unwrap_or("Classifier"),
                        _ => f.required("name")?,
                    }
                    .to_string();
                    let kind = match kind {
                        "conv" => LayerKind::Conv {
                            kernel: f.number("k", None)?,
                            out_channels: f.number("out", None)?,
                            stride: f.number("stride", Some(1))?,
                            act: f.act()?,
                        },
                        "exfeat" => LayerKind::ExFeat,
                        "add" => LayerKind::Add {
                            skip: f.required("skip")?.to_string(),
                        },
                        "fc" => LayerKind::Fc {
                            out_units: f.number("out", None)?,
                            act: f.act()?,
                        },
                        "classifier" => LayerKind::Classifier {
                            classes: f.number("classes", None)?,
                        },
                        other => {
                            return Err(Error::Config(format!("line {line_no}: unknown directive `{other}`")))
                        }
                    };
                    layers.push(LayerSpec { name, kind });
                }
            }
            f.finish()?;
        }
        let config = ModelConfig {
            input: input.ok_or_else(|| Error::Config("missing `input c=.. h=.. w=..` line".into()))?,
            layers,
            elective_mode,
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.input;
        writeln!(f, "input c={c} h={h} w={w}")?;
        writeln!(f, "elective mode={}", self.elective_mode)?;
        writeln!(f, "seed value={}", self.seed)?;
        for l in &self.layers {
            match &l.kind {
                LayerKind::Conv {
                    kernel,
                    out_channels,
                    stride,
                    act,
                } => writeln!(
                    f,
                    "conv name={} k={kernel} out={out_channels} stride={stride} act={}",
                    l.name,
                    act.name()
                )?,
                LayerKind::ExFeat => writeln!(f, "exfeat name={}", l.name)?,
                LayerKind::Add { skip } => writeln!(f, "add name={} skip={skip}", l.name)?,
                LayerKind::Fc { out_units, act } => {
                    writeln!(f, "fc name={} out={out_units} act={}", l.name, act.name())?
                }
                LayerKind::Classifier { classes } => {
                    writeln!(f, "classifier name={} classes={classes}", l.name)?
                }
            }
        }
        Ok(())
    }
}
