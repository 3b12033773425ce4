//! Versioned text checkpoints for trained models. Floating-point values
//! print with 17 significant digits, which round-trips `f64` bit-exactly.
//!
//! Layout: a `cdm-checkpoint v1` magic line, `kind`, metadata lines, then
//! kind-specific sections. Trees serialize pre-order; MLP weights serialize
//! row-major, one line per output row.

use crate::bench::MlpRegressor;
use crate::diffusion::{DiffusionModel, Schedule};
use crate::error::{Error, Result};
use crate::numerics::{Activation, DenseLayer, MlpParams};
use crate::propensity::{BoostedRegressionModel, BoostedTreesModel, Tree, TreeNode};
use ndarray::{Array1, Array2};
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "cdm-checkpoint v1";

/// Provenance stamped into every checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub code_version: String,
}

impl CheckpointMeta {
    pub fn new(config_hash: impl Into<String>) -> Self {
        CheckpointMeta {
            config_hash: config_hash.into(),
            code_version: crate::CODE_VERSION.to_string(),
        }
    }
}

/// Any persistable trained model.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Diffusion(DiffusionModel),
    MlpRegressor(MlpRegressor),
    GbmClassifier(BoostedTreesModel),
    GbmRegressor(BoostedRegressionModel),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Diffusion(_) => "diffusion",
            Checkpoint::MlpRegressor(_) => "mlp-regressor",
            Checkpoint::GbmClassifier(_) => "gbm-classifier",
            Checkpoint::GbmRegressor(_) => "gbm-regressor",
        }
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_mlp(out: &mut String, params: &MlpParams) {
    let _ = writeln!(out, "mlp.layers {}", params.layers().len());
    for layer in params.layers() {
        let act = match layer.activation {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        };
        let _ = writeln!(out, "layer {} {} {}", layer.in_dim(), layer.out_dim(), act);
        for row in layer.weights.rows() {
            let joined: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(out, "w {}", joined.join(" "));
        }
        let joined: Vec<String> = layer.bias.iter().map(|v| fmt_f64(*v)).collect();
        let _ = writeln!(out, "b {}", joined.join(" "));
    }
}

fn write_tree(out: &mut String, tree: &Tree) {
    fn walk(out: &mut String, tree: &Tree, idx: usize) {
        match &tree.nodes[idx] {
            TreeNode::Leaf { value } => {
                let _ = writeln!(out, "leaf {}", fmt_f64(*value));
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let _ = writeln!(out, "split {} {}", feature, fmt_f64(*threshold));
                walk(out, tree, *left);
                walk(out, tree, *right);
            }
        }
    }
    let _ = writeln!(out, "tree {}", tree.nodes.len());
    walk(out, tree, 0);
}

/// Renders a checkpoint to its text form.
pub fn render(checkpoint: &Checkpoint, meta: &CheckpointMeta) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind {}", checkpoint.kind());
    let _ = writeln!(out, "code_version {}", meta.code_version);
    let _ = writeln!(out, "config_hash {}", meta.config_hash);
    match checkpoint {
        Checkpoint::Diffusion(m) => {
            let _ = writeln!(out, "schedule.steps {}", m.schedule.steps());
            let _ = writeln!(out, "schedule.beta_min {}", fmt_f64(m.schedule.beta(1)));
            let _ = writeln!(
                out,
                "schedule.beta_max {}",
                fmt_f64(m.schedule.beta(m.schedule.steps()))
            );
            let _ = writeln!(out, "cov_dim {}", m.cov_dim);
            let _ = writeln!(out, "embed_dim {}", m.embed_dim);
            let _ = writeln!(out, "out_mean {}", fmt_f64(m.out_mean));
            let _ = writeln!(out, "out_sd {}", fmt_f64(m.out_sd));
            let _ = writeln!(out, "degenerate_sd {}", u8::from(m.degenerate_sd));
            write_mlp(&mut out, &m.denoiser);
        }
        Checkpoint::MlpRegressor(m) => {
            let _ = writeln!(out, "cov_dim {}", m.cov_dim);
            let _ = writeln!(out, "out_mean {}", fmt_f64(m.out_mean));
            let _ = writeln!(out, "out_sd {}", fmt_f64(m.out_sd));
            write_mlp(&mut out, &m.params);
        }
        Checkpoint::GbmClassifier(m) => {
            let _ = writeln!(out, "n_features {}", m.n_features);
            let _ = writeln!(out, "shrinkage {}", fmt_f64(m.shrinkage));
            let _ = writeln!(out, "init_log_odds {}", fmt_f64(m.init_log_odds));
            let _ = writeln!(out, "clip {} {}", fmt_f64(m.clip.0), fmt_f64(m.clip.1));
            let _ = writeln!(out, "n_trees {}", m.trees.len());
            for tree in &m.trees {
                write_tree(&mut out, tree);
            }
        }
        Checkpoint::GbmRegressor(m) => {
            let _ = writeln!(out, "n_features {}", m.n_features);
            let _ = writeln!(out, "shrinkage {}", fmt_f64(m.shrinkage));
            let _ = writeln!(out, "init_value {}", fmt_f64(m.init_value));
            let _ = writeln!(out, "n_trees {}", m.trees.len());
            for tree in &m.trees {
                write_tree(&mut out, tree);
            }
        }
    }
    let _ = writeln!(out, "end");
    out
}

/// Writes a checkpoint atomically (temp file + rename).
pub fn save(checkpoint: &Checkpoint, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let text = render(checkpoint, meta);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Lines<'a> {
    lines: std::iter::Peekable<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            lines: text.lines().peekable(),
            line_no: 0,
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file at line {}", self.line_no)))
    }

    fn expect_key(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        line.strip_prefix(key)
            .map(str::trim)
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "line {}: expected '{key} …', found '{line}'",
                    self.line_no
                ))
            })
    }
}

fn parse_f64(token: &str, context: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|e| Error::Checkpoint(format!("bad float in {context}: {e}")))
}

fn parse_usize(token: &str, context: &str) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|e| Error::Checkpoint(format!("bad integer in {context}: {e}")))
}

fn parse_floats(line: &str, prefix: &str, context: &str) -> Result<Vec<f64>> {
    line.strip_prefix(prefix)
        .ok_or_else(|| Error::Checkpoint(format!("expected '{prefix}' line in {context}")))?
        .split_whitespace()
        .map(|tok| parse_f64(tok, context))
        .collect()
}

fn read_mlp(lines: &mut Lines<'_>) -> Result<MlpParams> {
    let n_layers = parse_usize(lines.expect_key("mlp.layers")?, "layer count")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let header = lines.expect_key("layer")?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Checkpoint(format!("malformed layer header '{header}'")));
        }
        let in_dim = parse_usize(toks[0], "layer in_dim")?;
        let out_dim = parse_usize(toks[1], "layer out_dim")?;
        let activation = match toks[2] {
            "relu" => Activation::Relu,
            "linear" => Activation::Linear,
            other => {
                return Err(Error::Checkpoint(format!("unknown activation '{other}'")));
            }
        };
        let mut weights = Array2::zeros((out_dim, in_dim));
        for r in 0..out_dim {
            let row = parse_floats(lines.next_line()?, "w", "weight row")?;
            if row.len() != in_dim {
                return Err(Error::Checkpoint(format!(
                    "weight row has {} entries, expected {in_dim}",
                    row.len()
                )));
            }
            for (c, v) in row.into_iter().enumerate() {
                weights[[r, c]] = v;
            }
        }
        let bias = parse_floats(lines.next_line()?, "b", "bias row")?;
        if bias.len() != out_dim {
            return Err(Error::Checkpoint(format!(
                "bias has {} entries, expected {out_dim}",
                bias.len()
            )));
        }
        layers.push(DenseLayer {
            weights,
            bias: Array1::from_vec(bias),
            activation,
        });
    }
    MlpParams::new(layers)
}

fn read_tree(lines: &mut Lines<'_>) -> Result<Tree> {
    let n_nodes = parse_usize(lines.expect_key("tree")?, "tree node count")?;
    let mut tree = Tree::default();
    fn read_node(lines: &mut Lines<'_>, tree: &mut Tree) -> Result<usize> {
        let line = lines.next_line()?;
        if let Some(rest) = line.strip_prefix("leaf ") {
            tree.nodes.push(TreeNode::Leaf {
                value: parse_f64(rest.trim(), "leaf value")?,
            });
            Ok(tree.nodes.len() - 1)
        } else if let Some(rest) = line.strip_prefix("split ") {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(Error::Checkpoint(format!("malformed split '{line}'")));
            }
            let feature = parse_usize(toks[0], "split feature")?;
            let threshold = parse_f64(toks[1], "split threshold")?;
            let idx = tree.nodes.len();
            tree.nodes.push(TreeNode::Split {
                feature,
                threshold,
                left: 0,
                right: 0,
            });
            let left = read_node(lines, tree)?;
            let right = read_node(lines, tree)?;
            if let TreeNode::Split { left: l, right: r, .. } = &mut tree.nodes[idx] {
                *l = left;
                *r = right;
            }
            Ok(idx)
        } else {
            Err(Error::Checkpoint(format!("unexpected tree line '{line}'")))
        }
    }
    read_node(lines, &mut tree)?;
    if tree.nodes.len() != n_nodes {
        return Err(Error::Checkpoint(format!(
            "tree has {} nodes, header said {n_nodes}",
            tree.nodes.len()
        )));
    }
    Ok(tree)
}

/// Parses a checkpoint from its text form.
pub fn parse(text: &str) -> Result<(Checkpoint, CheckpointMeta)> {
    let mut lines = Lines::new(text);
    let magic = lines.next_line()?;
    if magic.trim() != MAGIC {
        return Err(Error::Checkpoint(format!(
            "not a checkpoint (expected '{MAGIC}', found '{magic}')"
        )));
    }
    let kind = lines.expect_key("kind")?.to_string();
    let code_version = lines.expect_key("code_version")?.to_string();
    let config_hash = lines.expect_key("config_hash")?.to_string();
    let meta = CheckpointMeta {
        config_hash,
        code_version,
    };
    let checkpoint = match kind.as_str() {
        "diffusion" => {
            let steps = parse_usize(lines.expect_key("schedule.steps")?, "steps")?;
            let beta_min = parse_f64(lines.expect_key("schedule.beta_min")?, "beta_min")?;
            let beta_max = parse_f64(lines.expect_key("schedule.beta_max")?, "beta_max")?;
            let cov_dim = parse_usize(lines.expect_key("cov_dim")?, "cov_dim")?;
            let embed_dim = parse_usize(lines.expect_key("embed_dim")?, "embed_dim")?;
            let out_mean = parse_f64(lines.expect_key("out_mean")?, "out_mean")?;
            let out_sd = parse_f64(lines.expect_key("out_sd")?, "out_sd")?;
            let degenerate_sd = lines.expect_key("degenerate_sd")? == "1";
            let denoiser = read_mlp(&mut lines)?;
            Checkpoint::Diffusion(DiffusionModel {
                schedule: Schedule::linear(steps, beta_min, beta_max)?,
                denoiser,
                cov_dim,
                embed_dim,
                out_mean,
                out_sd,
                degenerate_sd,
            })
        }
        "mlp-regressor" => {
            let cov_dim = parse_usize(lines.expect_key("cov_dim")?, "cov_dim")?;
            let out_mean = parse_f64(lines.expect_key("out_mean")?, "out_mean")?;
            let out_sd = parse_f64(lines.expect_key("out_sd")?, "out_sd")?;
            let params = read_mlp(&mut lines)?;
            Checkpoint::MlpRegressor(MlpRegressor {
                params,
                cov_dim,
                out_mean,
                out_sd,
            })
        }
        "gbm-classifier" => {
            let n_features = parse_usize(lines.expect_key("n_features")?, "n_features")?;
            let shrinkage = parse_f64(lines.expect_key("shrinkage")?, "shrinkage")?;
            let init = parse_f64(lines.expect_key("init_log_odds")?, "init_log_odds")?;
            let clip_line = lines.expect_key("clip")?;
            let toks: Vec<&str> = clip_line.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(Error::Checkpoint("malformed clip line".into()));
            }
            let clip = (parse_f64(toks[0], "clip lo")?, parse_f64(toks[1], "clip hi")?);
            let n_trees = parse_usize(lines.expect_key("n_trees")?, "n_trees")?;
            let mut trees = Vec::with_capacity(n_trees);
            for _ in 0..n_trees {
                trees.push(read_tree(&mut lines)?);
            }
            Checkpoint::GbmClassifier(BoostedTreesModel {
                trees,
                shrinkage,
                init_log_odds: init,
                clip,
                n_features,
                train_deviance: Vec::new(),
            })
        }
        "gbm-regressor" => {
            let n_features = parse_usize(lines.expect_key("n_features")?, "n_features")?;
            let shrinkage = parse_f64(lines.expect_key("shrinkage")?, "shrinkage")?;
            let init = parse_f64(lines.expect_key("init_value")?, "init_value")?;
            let n_trees = parse_usize(lines.expect_key("n_trees")?, "n_trees")?;
            let mut trees = Vec::with_capacity(n_trees);
            for _ in 0..n_trees {
                trees.push(read_tree(&mut lines)?);
            }
            Checkpoint::GbmRegressor(BoostedRegressionModel {
                trees,
                shrinkage,
                init_value: init,
                n_features,
            })
        }
        other => {
            return Err(Error::Checkpoint(format!("unknown checkpoint kind '{other}'")));
        }
    };
    let end = lines.next_line()?;
    if end.trim() != "end" {
        return Err(Error::Checkpoint(format!("expected 'end', found '{end}'")));
    }
    Ok((checkpoint, meta))
}

/// Loads a checkpoint file.
pub fn load(path: &Path) -> Result<(Checkpoint, CheckpointMeta)> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}
