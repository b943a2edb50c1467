//! Text model format.
//!
//! A model is stored as pretty-printed JSON with a fixed field order and
//! every float written with 17 significant digits, so reading a file and
//! writing it again reproduces it byte for byte.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::builder::TrainConfig;
use crate::data::{write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::polar::{to_polar, PolarWeights};
use crate::reticulum::{BetaPrior, LeafStats, NodeId, NodeWeights, Reticulum};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub prior: PriorRecord,
    pub dim: usize,
    pub nodes: Vec<NodeRecord>,
    pub leaves: Vec<LeafRecord>,
    pub train_config: Option<TrainConfig>,
    pub data: Option<DataFingerprint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorRecord {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: NodeId,
    /// Intercept first, then the normal vector.
    pub weights: Vec<f64>,
    /// Absent when the normal vector is zero.
    pub polar: Option<PolarWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafRecord {
    pub id: NodeId,
    pub alpha: f64,
    pub beta: f64,
    pub potential: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFingerprint {
    pub points: usize,
    pub dim: usize,
    pub zeros: usize,
    pub ones: usize,
}

impl DataFingerprint {
    pub fn of(data: &Dataset) -> Self {
        let (zeros, ones) = data.label_counts();
        Self {
            points: data.len(),
            dim: data.dim(),
            zeros,
            ones,
        }
    }
}

/// Pretty JSON, but floats always in `{:.16e}` form.
struct CanonicalFormatter {
    inner: PrettyFormatter<'static>,
}

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

/// Canonical text for any serializable value.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        CanonicalFormatter {
            inner: PrettyFormatter::with_indent(b"  "),
        },
    );
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

impl ModelFile {
    /// Captures a tree with fresh leaf statistics.
    pub fn from_tree(tree: &Reticulum, config: Option<&TrainConfig>, data: Option<&Dataset>) -> Result<Self> {
        if tree.is_stale() {
            return Err(Error::StaleStats);
        }
        Ok(Self {
            format_version: FORMAT_VERSION,
            prior: PriorRecord {
                alpha: tree.prior().alpha(),
                beta: tree.prior().beta(),
            },
            dim: tree.dim(),
            nodes: tree
                .nodes()
                .iter()
                .map(|(&id, w)| NodeRecord {
                    id,
                    weights: w.to_vec(),
                    polar: to_polar(w).ok(),
                })
                .collect(),
            leaves: tree
                .leaves()
                .iter()
                .map(|(&id, s)| LeafRecord {
                    id,
                    alpha: s.alpha,
                    beta: s.beta,
                    potential: s.potential,
                })
                .collect(),
            train_config: config.cloned(),
            data: data.map(DataFingerprint::of),
        })
    }

    pub fn to_tree(&self) -> Result<Reticulum> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {} (this build reads {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let prior = BetaPrior::new(self.prior.alpha, self.prior.beta)?;
        let mut nodes = std::collections::BTreeMap::new();
        for n in &self.nodes {
            if n.weights.len() != self.dim + 1 {
                return Err(Error::Format(format!("node {} has {} weights", n.id, n.weights.len())));
            }
            if nodes.insert(n.id, NodeWeights::from_slice(&n.weights)?).is_some() {
                return Err(Error::Format(format!("node {} listed twice", n.id)));
            }
        }
        let mut leaves = std::collections::BTreeMap::new();
        for l in &self.leaves {
            if !(l.alpha > 0.0 && l.beta > 0.0 && l.potential.is_finite()) {
                return Err(Error::Format(format!("leaf {} has invalid statistics", l.id)));
            }
            let stats = LeafStats {
                alpha: l.alpha,
                beta: l.beta,
                potential: l.potential,
            };
            if leaves.insert(l.id, stats).is_some() {
                return Err(Error::Format(format!("leaf {} listed twice", l.id)));
            }
        }
        Reticulum::from_parts(self.dim, prior, nodes, leaves).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_canonical_string(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.to_tree()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_canonical_string()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Plain-language summary of every hyperplane and leaf.
    pub fn explain(&self) -> String {
        let mut out = String::new();
        let internal = self.nodes.len();
        let _ = writeln!(
            out,
            "reticulum in {} dimension(s): {internal} internal node(s), {} leaf/leaves, prior Beta({}, {})",
            self.dim,
            self.leaves.len(),
            self.prior.alpha,
            self.prior.beta
        );
        if let Some(d) = &self.data {
            let _ = writeln!(out, "trained on {} points ({} of class 0, {} of class 1)", d.points, d.zeros, d.ones);
        }
        for n in &self.nodes {
            let _ = write!(out, "\nnode {} (level {})", n.id, n.id.level());
            let _ = writeln!(out, ": sends mass left where w0 + w.x > 0");
            let _ = writeln!(out, "  weights  {}", fmt_list(&n.weights));
            match &n.polar {
                Some(p) => {
                    let _ = writeln!(out, "  stiffness r = {:.6}", p.r);
                    let _ = writeln!(out, "  offset    q = {:.6} (plane at signed distance {:.6} from the origin)", p.q, -p.q);
                    if p.phi.is_empty() {
                        let side = if p.reversed { "-x" } else { "+x" };
                        let _ = writeln!(out, "  normal points towards {side}");
                    } else {
                        let degrees: Vec<f64> = p.phi.iter().map(|a| a.to_degrees()).collect();
                        let _ = writeln!(out, "  angles    {} degrees", fmt_list(&degrees));
                    }
                }
                None => {
                    let _ = writeln!(out, "  flat gate (zero normal vector)");
                }
            }
        }
        let _ = writeln!(out);
        for l in &self.leaves {
            let _ = writeln!(
                out,
                "leaf {} (level {}): alpha' = {:.4}, beta' = {:.4}, p(y=1) = {:.4}, unexplained potential = {:.4}",
                l.id,
                l.id.level(),
                l.alpha,
                l.beta,
                l.beta / (l.alpha + l.beta),
                l.potential
            );
        }
        out
    }
}

fn fmt_list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::fit;
    use crate::data::generate_cross;

    fn small_model() -> (Reticulum, Dataset, TrainConfig) {
        let data = generate_cross(200, 3);
        let config = TrainConfig {
            max_attempts: 4,
            total_gradient_steps: 60,
            rng_seed: 9,
            ..Default::default()
        };
        let (tree, _) = fit(&data, &config).unwrap();
        (tree, data, config)
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        let s = to_canonical_json(&vec![0.1, -0.0, 1e-300, 12345.678]).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("-0.0000000000000000e0"));
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, -0.0, 1e-300, 12345.678]);
    }

    #[test]
    fn reserialization_is_byte_identical() {
        let (tree, data, config) = small_model();
        let text = ModelFile::from_tree(&tree, Some(&config), Some(&data))
            .unwrap()
            .to_canonical_string()
            .unwrap();
        let again = ModelFile::parse(&text).unwrap().to_canonical_string().unwrap();
        assert_eq!(text, again);
    }

    #[test]
    fn loaded_model_predicts_identically() {
        let (tree, data, _) = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ModelFile::from_tree(&tree, None, None).unwrap().save(&path).unwrap();
        let loaded = ModelFile::load(&path).unwrap().to_tree().unwrap();
        let a = tree.predict_many(data.features()).unwrap();
        let b = loaded.predict_many(data.features()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn stale_tree_is_not_saved() {
        let mut tree = Reticulum::new(2, BetaPrior::uniform()).unwrap();
        tree.split(NodeId::ROOT, NodeWeights::zeros(2)).unwrap();
        assert!(matches!(ModelFile::from_tree(&tree, None, None), Err(Error::StaleStats)));
    }

    #[test]
    fn flat_node_has_no_polar_view() {
        let prior = BetaPrior::uniform();
        let nodes = [(NodeId::ROOT, NodeWeights::zeros(2))].into_iter().collect();
        let leaves = [(NodeId(1), LeafStats::empty(&prior)), (NodeId(2), LeafStats::empty(&prior))]
            .into_iter()
            .collect();
        let tree = Reticulum::from_parts(2, prior, nodes, leaves).unwrap();
        let model = ModelFile::from_tree(&tree, None, None).unwrap();
        assert!(model.nodes[0].polar.is_none());
        assert!(model.explain().contains("flat gate"));
        let text = model.to_canonical_string().unwrap();
        assert_eq!(ModelFile::parse(&text).unwrap(), model);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let (tree, _, _) = small_model();
        let model = ModelFile::from_tree(&tree, None, None).unwrap();
        let mut wrong_version = model.clone();
        wrong_version.format_version = 99;
        let text = wrong_version.to_canonical_string().unwrap();
        assert!(matches!(ModelFile::parse(&text), Err(Error::Format(_))));
        assert!(matches!(ModelFile::parse("{\"format_version\": 1}"), Err(Error::Json(_))));
        let mut orphan = model.clone();
        orphan.leaves.push(LeafRecord {
            id: NodeId(200),
            alpha: 1.0,
            beta: 1.0,
            potential: 0.0,
        });
        assert!(ModelFile::parse(&orphan.to_canonical_string().unwrap()).is_err());
    }

    #[test]
    fn explain_mentions_every_node_and_leaf() {
        let (tree, data, config) = small_model();
        let model = ModelFile::from_tree(&tree, Some(&config), Some(&data)).unwrap();
        let text = model.explain();
        for n in &model.nodes {
            assert!(text.contains(&format!("node {}", n.id)));
        }
        for l in &model.leaves {
            assert!(text.contains(&format!("leaf {}", l.id)));
        }
    }
}
