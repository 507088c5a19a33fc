use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::experiments::PipelineObservable;
use crate::graph::Graph;
use crate::model::{BoundaryCondition, Constraint, InitialLaw, ModelSpec, Observable, Region, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Open segment of `n` sites.
    Segment { n: usize },
    /// Open box.
    Box { dims: Vec<usize> },
    /// Graph-distance ball of `radius` in a `dim`-dimensional lattice.
    Ball { dim: usize, radius: usize },
    /// Periodic torus; no exterior.
    Torus { dims: Vec<usize> },
    /// Arbitrary connected graph; `sites` defaults to every vertex.
    Edges {
        vertices: usize,
        edges: Vec<[usize; 2]>,
        #[serde(default)]
        sites: Option<Vec<usize>>,
    },
}

impl GraphSpec {
    pub fn volume(&self) -> Result<Volume, CliError> {
        Ok(match self {
            GraphSpec::Segment { n } => Volume::segment(*n)?,
            GraphSpec::Box { dims } => Volume::lattice_box(dims)?,
            GraphSpec::Ball { dim, radius } => Volume::lattice_ball(*dim, *radius)?.0,
            GraphSpec::Torus { dims } => Volume::torus(dims)?,
            GraphSpec::Edges { vertices, edges, sites } => {
                let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                let host = Arc::new(Graph::from_edges(*vertices, &pairs, "edges")?);
                match sites {
                    Some(s) => Volume::new(host, s)?,
                    None => Volume::whole(host),
                }
            }
        })
    }

    pub fn dimension(&self) -> usize {
        match self {
            GraphSpec::Box { dims } | GraphSpec::Torus { dims } => dims.len(),
            GraphSpec::Ball { dim, .. } => *dim,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// `1 − σ(x) − q`; `site` defaults to the middle local index.
    CenteredVacancy {
        #[serde(default)]
        site: Option<usize>,
    },
    Vacancy { site: usize },
    AllEmpty { sites: Vec<usize> },
    Table { support: Vec<usize>, table: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainChoice {
    Full,
    Hat,
    Tilde,
    Taboo,
    Minimal,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSpec {
    pub ell: Option<u32>,
    pub epsilon: Option<f64>,
    /// Time used with `epsilon` to set `ℓ(t)`.
    pub t: Option<f64>,
    /// Explicit block labels in local order; overrides `ell`.
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub t: f64,
    pub epsilon: f64,
    pub speed: f64,
    pub c: f64,
    pub theta: f64,
    pub dim: usize,
    pub observable: PipelineObservable,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            t: 4.0,
            epsilon: 1.0,
            speed: 5.0,
            c: 1.0,
            theta: 2.0,
            dim: 1,
            observable: PipelineObservable::CenteredVacancy,
        }
    }
}

/// Everything a subcommand may read. Unknown keys are rejected; absent keys
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub graph: GraphSpec,
    pub q: f64,
    pub constraint: Constraint,
    pub boundary: BoundaryCondition,
    pub law: InitialLaw,
    pub observable: ObservableSpec,
    pub partition: PartitionSpec,
    pub times: Vec<f64>,
    pub replicas: usize,
    pub seed: Option<u64>,
    /// Output directory, overridden by `--out`.
    pub out: Option<String>,
    pub chain: ChainChoice,
    pub theta: f64,
    /// Site for `ξ`; defaults to the middle local index.
    pub site: Option<usize>,
    /// Dimension used by decay fits and envelopes; defaults to the graph's.
    pub dim: Option<usize>,
    pub lengths: Vec<usize>,
    pub q_grid: Vec<f64>,
    pub pipeline: PipelineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            graph: GraphSpec::Segment { n: 8 },
            q: 0.8,
            constraint: Constraint::Fa1f,
            boundary: BoundaryCondition::Empty,
            law: InitialLaw::Bernoulli { fill: 0.8 },
            observable: ObservableSpec::CenteredVacancy { site: None },
            partition: PartitionSpec::default(),
            times: vec![0.5, 1.0, 2.0, 4.0],
            replicas: 1000,
            seed: None,
            out: None,
            chain: ChainChoice::Full,
            theta: 2.0,
            site: None,
            dim: None,
            lengths: (4..=12).collect(),
            q_grid: (0..10).map(|k| 0.5 + 0.05 * f64::from(k)).collect(),
            pipeline: PipelineSection::default(),
        }
    }
}

/// 1-based line and column of the first `"key":` in `text`.
fn locate(text: &str, key: &str) -> Option<(usize, usize)> {
    let needle = format!("\"{key}\"");
    let mut from = 0;
    while let Some(off) = text[from..].find(&needle) {
        let at = from + off;
        let rest = text[at + needle.len()..].trim_start();
        if rest.starts_with(':') {
            let line = text[..at].matches('\n').count() + 1;
            let col = at - text[..at].rfind('\n').map_or(0, |i| i + 1) + 1;
            return Some((line, col));
        }
        from = at + needle.len();
    }
    None
}

impl RunConfig {
    /// Parses and validates a JSON config.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate().map_err(|(key, msg)| {
            CliError::Config(match locate(text, key) {
                Some((line, col)) => format!("{msg} at line {line} column {col}"),
                None => msg,
            })
        })?;
        Ok(cfg)
    }

    /// Checks that do not need the graph built; returns the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(("q", format!("q must lie in [0,1] (got {})", self.q)));
        }
        if let Some(q) = self.q_grid.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(("q_grid", format!("q must lie in [0,1] (got {q})")));
        }
        if let InitialLaw::Bernoulli { fill } = self.law {
            if !(0.0..=1.0).contains(&fill) {
                return Err(("fill", format!("fill must lie in [0,1] (got {fill})")));
            }
        }
        if self.times.is_empty() || self.times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(("times", "times must be finite, nonnegative and nonempty".into()));
        }
        if self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(("times", "times must be nondecreasing".into()));
        }
        if self.replicas == 0 {
            return Err(("replicas", "replicas must be positive".into()));
        }
        if !(self.theta > 1.0 && self.theta.is_finite()) {
            return Err(("theta", "theta must exceed 1".into()));
        }
        if self.dim == Some(0) {
            return Err(("dim", "dim must be positive".into()));
        }
        if self.partition.ell == Some(0) {
            return Err(("ell", "ell must be positive".into()));
        }
        let p = &self.pipeline;
        if !(p.t > 0.0 && p.epsilon > 0.0 && p.speed >= 0.0 && p.c > 0.0 && p.dim > 0) {
            return Err(("pipeline", "pipeline needs t, epsilon, c, dim > 0 and speed >= 0".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ModelSpec, CliError> {
        Ok(ModelSpec::new(self.q, self.constraint)?)
    }

    pub fn region(&self) -> Result<Arc<Region>, CliError> {
        let volume = Arc::new(self.graph.volume()?);
        Ok(Arc::new(Region::new(volume, self.boundary.clone())?))
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or_else(|| self.graph.dimension())
    }

    pub fn observable(&self, len: usize) -> Result<Observable, CliError> {
        Ok(match &self.observable {
            ObservableSpec::CenteredVacancy { site } => Observable::vacancy_at(site.unwrap_or(len / 2), self.q, len)?,
            ObservableSpec::Vacancy { site } => Observable::vacancy_indicator(*site, len)?,
            ObservableSpec::AllEmpty { sites } => Observable::all_empty(sites, len)?,
            ObservableSpec::Table { support, table } => Observable::new(support.clone(), table.clone(), len)?,
        })
    }

    /// `sha256` of the canonical JSON of the resolved config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
