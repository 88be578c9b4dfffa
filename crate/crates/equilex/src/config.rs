//! Run configuration: a TOML document with dotted sections for space,
//! sequence, builder, tail and newton settings. Unknown keys are rejected,
//! defaults are applied at parse time, and every cross-field invariant is
//! validated before a config is handed to the pipeline.

use serde::{Deserialize, Serialize};

use crate::builder::BuildParams;
use crate::error::{Error, Result};
use crate::newton::NewtonOptions;
use crate::norm::NormOracle;
use crate::sequence::{SequenceSource, TailPolicy};

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceSpec {
    UnitBasis,
    PerturbedBasis { beta: f64 },
    Block { width: usize },
}

impl SequenceSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SequenceSpec::UnitBasis => "unit_basis",
            SequenceSpec::PerturbedBasis { .. } => "perturbed_basis",
            SequenceSpec::Block { .. } => "block",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub p: f64,
    pub dim: usize,
    pub sequence: SequenceSpec,
    pub params: BuildParams,
    pub policy: TailPolicy,
    pub seed: u64,
    pub output_path: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    // Scalars first: the TOML serializer writes fields in struct order, and
    // top-level keys must precede the first table section.
    #[serde(default)]
    seed: Option<u64>,
    space: RawSpace,
    #[serde(default)]
    sequence: Option<RawSequence>,
    #[serde(default)]
    builder: Option<RawBuilder>,
    #[serde(default)]
    tail: Option<RawTail>,
    #[serde(default)]
    newton: Option<RawNewton>,
    #[serde(default)]
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    #[serde(default)]
    kind: Option<String>,
    p: f64,
    dim: usize,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    #[serde(default)]
    kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawBuilder {
    #[serde(default)]
    n_points: Option<usize>,
    #[serde(default)]
    prop_tol: Option<f64>,
    #[serde(default)]
    final_tol: Option<f64>,
    #[serde(default)]
    delta_cap: Option<f64>,
    #[serde(default)]
    k_retries: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawTail {
    #[serde(default)]
    start: Option<usize>,
    #[serde(default)]
    window: Option<usize>,
    #[serde(default)]
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawNewton {
    #[serde(default)]
    max_iter: Option<usize>,
    #[serde(default)]
    res_tol: Option<f64>,
    #[serde(default)]
    guard_samples: Option<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;

        if let Some(kind) = &raw.space.kind {
            if kind != "lp" {
                return Err(Error::Config(format!(
                    "space.kind must be \"lp\", got \"{kind}\""
                )));
            }
        }
        let p = raw.space.p;
        let dim = raw.space.dim;

        let seq_raw = raw.sequence.unwrap_or_default();
        let sequence = match seq_raw.kind.as_deref().unwrap_or("unit_basis") {
            "unit_basis" => {
                if seq_raw.beta.is_some() || seq_raw.block.is_some() {
                    return Err(Error::Config(
                        "sequence.beta / sequence.block only apply to perturbed_basis / block"
                            .into(),
                    ));
                }
                SequenceSpec::UnitBasis
            }
            "perturbed_basis" => {
                if seq_raw.block.is_some() {
                    return Err(Error::Config(
                        "sequence.block does not apply to perturbed_basis".into(),
                    ));
                }
                SequenceSpec::PerturbedBasis {
                    beta: seq_raw.beta.unwrap_or(0.5),
                }
            }
            "block" => {
                if seq_raw.beta.is_some() {
                    return Err(Error::Config(
                        "sequence.beta does not apply to block".into(),
                    ));
                }
                SequenceSpec::Block {
                    width: seq_raw.block.unwrap_or(4),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "sequence.kind must be unit_basis, perturbed_basis or block, got \"{other}\""
                )));
            }
        };

        let b = raw.builder.unwrap_or_default();
        let n_points = b.n_points.unwrap_or(8);
        if n_points < 1 {
            return Err(Error::Config("builder.n_points must be >= 1".into()));
        }
        let defaults = BuildParams::default();
        let mut params = BuildParams {
            n_points,
            prop_tol: b.prop_tol.unwrap_or(defaults.prop_tol),
            final_tol: b.final_tol.unwrap_or(defaults.final_tol),
            delta_cap: b.delta_cap.unwrap_or(defaults.delta_cap),
            k_retries: b.k_retries.unwrap_or(defaults.k_retries),
            newton: NewtonOptions::default(),
        };
        for (name, v) in [
            ("builder.prop_tol", params.prop_tol),
            ("builder.final_tol", params.final_tol),
            ("builder.delta_cap", params.delta_cap),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }

        let t = raw.tail.unwrap_or_default();
        let default_policy = TailPolicy::default_for_target(n_points);
        let policy = TailPolicy::new(
            t.start.unwrap_or(default_policy.start),
            t.window.unwrap_or(default_policy.window),
            t.tol.unwrap_or(default_policy.tol),
        )?;

        let nw = raw.newton.unwrap_or_default();
        let newton_defaults = NewtonOptions::default();
        let seed = raw.seed.unwrap_or(0);
        params.newton = NewtonOptions {
            max_iter: nw.max_iter.unwrap_or(newton_defaults.max_iter),
            res_tol: nw.res_tol.unwrap_or(newton_defaults.res_tol),
            guard_samples: nw.guard_samples.unwrap_or(newton_defaults.guard_samples),
            seed,
        };
        if !(params.newton.res_tol > 0.0 && params.newton.res_tol.is_finite()) {
            return Err(Error::Config(format!(
                "newton.res_tol must be positive, got {}",
                params.newton.res_tol
            )));
        }
        if params.newton.max_iter < 1 || params.newton.guard_samples < 1 {
            return Err(Error::Config(
                "newton.max_iter and newton.guard_samples must be >= 1".into(),
            ));
        }

        let config = RunConfig {
            p,
            dim,
            sequence,
            params,
            policy,
            seed,
            output_path: raw.output.map(|o| o.path),
        };

        // Rejects p = 1 / p = inf (not uniformly smooth) and bad dimensions.
        config.oracle()?;
        let min_dim = 2 * config.params.n_points + config.policy.start + config.policy.window;
        if config.dim < min_dim {
            return Err(Error::Config(format!(
                "space.dim = {} too small for n_points = {} with tail start {} window {}; need at least {}",
                config.dim, config.params.n_points, config.policy.start, config.policy.window, min_dim
            )));
        }
        config.source()?;
        Ok(config)
    }

    pub fn oracle(&self) -> Result<NormOracle> {
        NormOracle::lp(self.p, self.dim)
    }

    pub fn source(&self) -> Result<SequenceSource> {
        match &self.sequence {
            SequenceSpec::UnitBasis => SequenceSource::unit_basis(self.dim),
            SequenceSpec::PerturbedBasis { beta } => {
                SequenceSource::perturbed_basis(self.dim, *beta)
            }
            SequenceSpec::Block { width } => SequenceSource::block(self.dim, *width, None),
        }
    }

    /// Override the seed (CLI flag or environment), keeping the Newton guard
    /// sampler in sync.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.params.newton.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        let raw = RawConfig {
            seed: Some(self.seed),
            space: RawSpace {
                kind: Some("lp".into()),
                p: self.p,
                dim: self.dim,
            },
            sequence: Some(RawSequence {
                kind: Some(self.sequence.kind().into()),
                beta: match &self.sequence {
                    SequenceSpec::PerturbedBasis { beta } => Some(*beta),
                    _ => None,
                },
                block: match &self.sequence {
                    SequenceSpec::Block { width } => Some(*width),
                    _ => None,
                },
            }),
            builder: Some(RawBuilder {
                n_points: Some(self.params.n_points),
                prop_tol: Some(self.params.prop_tol),
                final_tol: Some(self.params.final_tol),
                delta_cap: Some(self.params.delta_cap),
                k_retries: Some(self.params.k_retries),
            }),
            tail: Some(RawTail {
                start: Some(self.policy.start),
                window: Some(self.policy.window),
                tol: Some(self.policy.tol),
            }),
            newton: Some(RawNewton {
                max_iter: Some(self.params.newton.max_iter),
                res_tol: Some(self.params.newton.res_tol),
                guard_samples: Some(self.params.newton.guard_samples),
            }),
            output: self.output_path.clone().map(|path| RawOutput { path }),
        };
        toml::to_string(&raw).expect("config serialization cannot fail")
    }
}

/// Seed precedence: explicit flag > environment variable > config document.
pub fn resolve_seed(config_seed: u64, env_seed: Option<u64>, flag_seed: Option<u64>) -> u64 {
    flag_seed.or(env_seed).unwrap_or(config_seed)
}
