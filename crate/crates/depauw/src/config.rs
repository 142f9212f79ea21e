//! Experiment configuration.
//!
//! A config file is a JSON object whose keys are the fields of
//! [`ExperimentConfig`]; unknown keys are rejected. Command-line flags
//! override file values. [`ExperimentConfig::resolve`] fills every default
//! for the chosen experiment, rejects keys that experiment does not use, and
//! produces the [`ResolvedConfig`] that is echoed into outputs and hashed.

use std::path::{Path, PathBuf};

use depauw_core::mollify::max_admissible_stage;
use depauw_core::rng::StartDistribution;
use depauw_core::Dyadic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[serde(alias = "field-eval", alias = "field_eval")]
    Field,
    Density,
    Trace,
    Converge,
    Stochasticity,
    Flow,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Field => "field",
            ExperimentKind::Density => "density",
            ExperimentKind::Trace => "trace",
            ExperimentKind::Converge => "converge",
            ExperimentKind::Stochasticity => "stochasticity",
            ExperimentKind::Flow => "flow",
        }
    }
}

/// Start and target cell levels `(m, n)` for endpoint histograms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Levels {
    pub start: u32,
    pub target: u32,
}

/// Raw configuration as read from a file or flags; every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    /// Output directory.
    pub out: Option<PathBuf>,
    /// Stream-table cache directory (`converge`, `field`).
    pub cache: Option<PathBuf>,
    /// Deepest stage `K` (times down to `2^-K`).
    pub depth: Option<u32>,
    /// Mollification radii.
    pub eps: Option<Vec<f64>>,
    /// Ensemble size or sample count.
    pub n: Option<u64>,
    pub levels: Option<Levels>,
    /// RK4 step.
    pub step: Option<f64>,
    pub start: Option<StartDistribution>,
    pub t_start: Option<Dyadic>,
    pub t_end: Option<Dyadic>,
    pub points: Option<Vec<[Dyadic; 2]>>,
    pub substeps: Option<u32>,
    pub record_every: Option<usize>,
    pub check: Option<bool>,
    pub oracle: Option<bool>,
    pub oracle_points: Option<u64>,
    pub residual_samples: Option<u64>,
    pub export_level: Option<u32>,
    pub heatmap_level: Option<u32>,
    pub resolution: Option<u32>,
    pub check_points: Option<u64>,
    pub sup_paths: Option<u64>,
}

macro_rules! overlay {
    ($base:expr, $over:expr, $($f:ident),*) => {
        ExperimentConfig { $($f: $over.$f.or($base.$f)),* }
    };
}

impl ExperimentConfig {
    /// Parses a config file; an empty or malformed file is a usage error.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Usage("config is empty".into()));
        }
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            match msg.strip_prefix("unknown field `").and_then(|r| r.split_once('`')) {
                Some((field, _)) => Error::config(field, msg.clone()),
                None => Error::Usage(format!("config: {msg}")),
            }
        })
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: ExperimentConfig) -> Self {
        overlay!(
            self, over, experiment, seed, out, cache, depth, eps, n, levels, step, start, t_start, t_end, points,
            substeps, record_every, check, oracle, oracle_points, residual_samples, export_level, heatmap_level,
            resolution, check_points, sup_paths
        )
    }

    /// Names of the fields that are set.
    fn set_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        macro_rules! probe {
            ($($f:ident),*) => { $( if self.$f.is_some() { out.push(stringify!($f)); } )* };
        }
        probe!(
            depth, eps, n, levels, step, start, t_start, t_end, points, substeps, record_every, check, oracle,
            oracle_points, residual_samples, export_level, heatmap_level, resolution, check_points, sup_paths
        );
        out
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let experiment = self.experiment.ok_or_else(|| Error::config("experiment", "missing; choose one of field, density, trace, converge, stochasticity, flow"))?;
        let allowed: &[&str] = match experiment {
            ExperimentKind::Field => &["depth", "eps", "resolution", "check_points"],
            ExperimentKind::Density => &["depth", "check", "export_level", "heatmap_level", "residual_samples"],
            ExperimentKind::Trace => {
                &["n", "depth", "eps", "step", "t_end", "substeps", "record_every", "start", "oracle", "oracle_points"]
            }
            ExperimentKind::Converge => &["eps", "n", "sup_paths", "step", "t_end", "start"],
            ExperimentKind::Stochasticity => &["depth", "n", "levels", "start"],
            ExperimentKind::Flow => &["points", "t_start", "t_end", "depth", "substeps"],
        };
        if let Some(f) = self.set_fields().into_iter().find(|f| !allowed.contains(f)) {
            return Err(Error::config(f, format!("not used by the `{}` experiment", experiment.name())));
        }
        let params = match experiment {
            ExperimentKind::Field => Params::Field(self.field()?),
            ExperimentKind::Density => Params::Density(self.density()?),
            ExperimentKind::Trace => Params::Trace(self.trace()?),
            ExperimentKind::Converge => Params::Converge(self.converge()?),
            ExperimentKind::Stochasticity => Params::Stochasticity(self.stochasticity()?),
            ExperimentKind::Flow => Params::Flow(self.flow()?),
        };
        Ok(ResolvedConfig { experiment, seed: self.seed.unwrap_or(0), params })
    }

    fn depth_or(&self, default: u32) -> Result<u32> {
        let d = self.depth.unwrap_or(default);
        if d > 40 {
            return Err(Error::config("depth", format!("{d} exceeds the supported 40")));
        }
        Ok(d)
    }

    fn positive_n(&self, default: u64) -> Result<u64> {
        match self.n.unwrap_or(default) {
            0 => Err(Error::config("n", "must be positive")),
            n => Ok(n),
        }
    }

    fn eps_list(&self, default: &[f64]) -> Result<Vec<f64>> {
        let eps = self.eps.clone().unwrap_or_else(|| default.to_vec());
        for (i, e) in eps.iter().enumerate() {
            if !(*e > 0.0 && *e < 0.25) {
                return Err(Error::config(format!("eps[{i}]"), format!("{e} is outside (0, 1/4)")));
            }
        }
        Ok(eps)
    }

    /// RK4 step: a power of two no larger than `eps / 4`, so it divides every
    /// stage segment and satisfies the admissible-step bound.
    fn step_for(&self, eps: &[f64]) -> Result<f64> {
        let step = self.step.unwrap_or(1.0 / 1024.0);
        if !(step > 0.0 && step.is_finite() && Dyadic::from_f64(step).is_ok_and(|d| d.mantissa() == 1.into())) {
            return Err(Error::config("step", format!("{step} is not a positive power of two")));
        }
        if let Some(e) = eps.iter().copied().reduce(f64::min) {
            if step > e / 4.0 {
                return Err(Error::config("step", format!("{step} exceeds eps/4 = {}", e / 4.0)));
            }
        }
        Ok(step)
    }

    fn field(&self) -> Result<FieldParams> {
        let depth = self.depth_or(3)?;
        let eps = self.eps_list(&[1.0 / 16.0])?;
        let resolution = self.resolution.unwrap_or(64);
        if resolution == 0 || resolution > 4096 {
            return Err(Error::config("resolution", "must be in 1..=4096"));
        }
        Ok(FieldParams { depth, eps, resolution, check_points: self.check_points.unwrap_or(10_000), l1_resolution: 512 })
    }

    fn density(&self) -> Result<DensityParams> {
        let depth = self.depth_or(10)?;
        if depth > 14 {
            return Err(Error::config("depth", format!("{depth} exceeds 14; grids would need 4^{} cells", depth + 1)));
        }
        let export_level = self.export_level.unwrap_or(6);
        let heatmap_level = self.heatmap_level.unwrap_or(6);
        for (f, v) in [("export_level", export_level), ("heatmap_level", heatmap_level)] {
            if v > 10 {
                return Err(Error::config(f, format!("{v} exceeds 10")));
            }
        }
        Ok(DensityParams {
            depth,
            check: self.check.unwrap_or(false),
            export_level,
            heatmap_level,
            residual_samples: self.residual_samples.unwrap_or(0),
        })
    }

    fn trace(&self) -> Result<TraceParams> {
        let n = self.positive_n(10_000)?;
        let eps = match &self.eps {
            None => None,
            Some(v) if v.len() == 1 => Some(self.eps_list(&[])?[0]),
            Some(_) => return Err(Error::config("eps", "trace takes a single radius")),
        };
        let depth = self.depth_or(10)?;
        let step = self.step_for(eps.as_slice())?;
        let t_end = match (&self.t_end, eps) {
            (Some(t), _) => t.clone(),
            (None, Some(_)) => Dyadic::pow2(-3),
            (None, None) => Dyadic::pow2(-(depth as i32)),
        };
        let t_end_f = t_end.to_f64();
        if !(t_end_f > 0.0 && t_end_f < 1.0) {
            return Err(Error::config("t_end", format!("{t_end} is outside (0, 1)")));
        }
        match eps {
            None => {
                if self.t_end.is_some() && t_end != Dyadic::pow2(-(depth as i32)) {
                    return Err(Error::config("t_end", "exact ensembles end at 2^-depth; set depth instead"));
                }
            }
            Some(e) => {
                // deepest stage traversed on the way down to t_end
                let stage = if t_end.mantissa() == 1.into() {
                    t_end.exponent() - 1
                } else {
                    depauw_core::field::stage_of_dyadic(&t_end)?.0
                };
                let max = max_admissible_stage(e);
                if max.map_or(true, |m| m < stage) {
                    return Err(Error::config(
                        "t_end",
                        format!("{t_end} reaches stage {stage}; radius {e} admits stages up to {max:?}"),
                    ));
                }
            }
        }
        let substeps = self.substeps.unwrap_or(1);
        if !substeps.is_power_of_two() {
            return Err(Error::config("substeps", format!("{substeps} is not a power of two")));
        }
        Ok(TraceParams {
            n,
            depth,
            eps,
            step,
            t_end: t_end_f,
            substeps,
            record_every: self.record_every.unwrap_or(1).max(1),
            start: self.start.clone().unwrap_or(StartDistribution::Uniform),
            oracle: self.oracle.unwrap_or(false),
            oracle_points: self.oracle_points.unwrap_or(10_000),
        })
    }

    fn converge(&self) -> Result<ConvergeParams> {
        let eps = self.eps_list(&[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0])?;
        if eps.len() < 2 {
            return Err(Error::config("eps", "need at least two radii"));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("eps", "radii must be strictly decreasing"));
        }
        let step = self.step_for(&eps)?;
        let t_end = self.t_end.clone().unwrap_or_else(|| Dyadic::pow2(-3));
        if t_end.mantissa() != 1.into() || t_end >= Dyadic::ONE || t_end.signum() <= 0 {
            return Err(Error::config("t_end", format!("{t_end} is not 2^-j with j >= 1")));
        }
        let stage = t_end.exponent() - 1;
        let max = max_admissible_stage(eps[0]);
        if max.map_or(true, |m| m < stage) {
            return Err(Error::config("t_end", format!("{t_end} needs stage {stage}; eps {} admits up to {max:?}", eps[0])));
        }
        let n = self.positive_n(10_000)?;
        let sup_paths = self.sup_paths.unwrap_or(1000);
        if sup_paths > n {
            return Err(Error::config("sup_paths", format!("{sup_paths} exceeds n = {n}")));
        }
        Ok(ConvergeParams {
            eps,
            n,
            sup_paths,
            step,
            t_end: t_end.to_f64(),
            depth: stage + 1,
            start: self.start.clone().unwrap_or(StartDistribution::Uniform),
        })
    }

    fn stochasticity(&self) -> Result<StochasticityParams> {
        let depth = self.depth_or(10)?;
        let n = self.positive_n(1 << 20)?;
        let levels = self.levels.unwrap_or(Levels { start: 6, target: 0 });
        if levels.start > 12 || levels.target > 12 {
            return Err(Error::config("levels", "levels above 12 are not supported"));
        }
        // one start per cell when n is a power of four
        let start = self.start.clone().unwrap_or(if n.is_power_of_two() && n.trailing_zeros() % 2 == 0 && n >= 4 {
            StartDistribution::Stratified { level: n.trailing_zeros() / 2 - 1 }
        } else {
            StartDistribution::Uniform
        });
        Ok(StochasticityParams { depth, n, levels, start })
    }

    fn flow(&self) -> Result<FlowParams> {
        let points = self.points.clone().unwrap_or_else(|| {
            vec![[Dyadic::new(5, 2), Dyadic::new(3, 3)], [Dyadic::new(5, 3), Dyadic::new(7, 4)]]
        });
        if points.is_empty() {
            return Err(Error::config("points", "need at least one start point"));
        }
        let t_start = self.t_start.clone().unwrap_or(Dyadic::ONE);
        let depth = self.depth_or(10)?;
        let t_end = self.t_end.clone().unwrap_or_else(|| Dyadic::pow2(-(depth as i32)));
        let floor = Dyadic::pow2(-(depth as i32));
        for (f, t) in [("t_start", &t_start), ("t_end", &t_end)] {
            if t.signum() <= 0 || *t > Dyadic::ONE {
                return Err(Error::config(f, format!("{t} is outside (0, 1]")));
            }
            if *t < floor {
                return Err(Error::config(f, format!("{t} is below 2^-depth = {floor}")));
            }
        }
        let substeps = self.substeps.unwrap_or(4);
        if !substeps.is_power_of_two() {
            return Err(Error::config("substeps", format!("{substeps} is not a power of two")));
        }
        Ok(FlowParams { points, t_start, t_end, depth, substeps })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldParams {
    pub depth: u32,
    pub eps: Vec<f64>,
    /// Grid points per side of `[0, 2)^2` for the exported samples.
    pub resolution: u32,
    pub check_points: u64,
    pub l1_resolution: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityParams {
    pub depth: u32,
    pub check: bool,
    pub export_level: u32,
    pub heatmap_level: u32,
    pub residual_samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceParams {
    pub n: u64,
    pub depth: u32,
    pub eps: Option<f64>,
    pub step: f64,
    pub t_end: f64,
    pub substeps: u32,
    pub record_every: usize,
    pub start: StartDistribution,
    pub oracle: bool,
    pub oracle_points: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergeParams {
    pub eps: Vec<f64>,
    pub n: u64,
    pub sup_paths: u64,
    pub step: f64,
    pub t_end: f64,
    /// Stages traversed, `log2(1 / t_end)`.
    pub depth: u32,
    pub start: StartDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StochasticityParams {
    pub depth: u32,
    pub n: u64,
    pub levels: Levels,
    pub start: StartDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowParams {
    pub points: Vec<[Dyadic; 2]>,
    pub t_start: Dyadic,
    pub t_end: Dyadic,
    pub depth: u32,
    pub substeps: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Field(FieldParams),
    Density(DensityParams),
    Trace(TraceParams),
    Converge(ConvergeParams),
    Stochasticity(StochasticityParams),
    Flow(FlowParams),
}

/// A fully defaulted configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub params: Params,
}

impl ResolvedConfig {
    /// SHA-256 of the compact JSON of the experiment and its parameters
    /// (the seed is reported separately).
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            experiment: ExperimentKind,
            params: &'a Params,
        }
        let bytes = serde_json::to_vec(&Keyed { experiment: self.experiment, params: &self.params })
            .expect("params serialize");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> Result<ResolvedConfig> {
        ExperimentConfig::from_json(json)?.resolve()
    }

    #[test]
    fn empty_and_missing_experiment_are_usage_errors() {
        assert_eq!(ExperimentConfig::from_json("").unwrap_err().exit_code(), 2);
        assert_eq!(ExperimentConfig::from_json("  \n").unwrap_err().exit_code(), 2);
        let e = cfg("{}").unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "experiment"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_and_misplaced_keys_name_the_field() {
        let e = cfg(r#"{"experiment": "density", "depht": 3}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "depht"), "{e}");
        let e = cfg(r#"{"experiment": "density", "oracle": true}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "oracle"), "{e}");
        let e = cfg(r#"{"experiment": "converge", "eps": [0.0625, 0.3]}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "eps[1]"), "{e}");
    }

    #[test]
    fn defaults_are_filled() {
        let r = cfg(r#"{"experiment": "stochasticity"}"#).unwrap();
        let Params::Stochasticity(p) = &r.params else { panic!() };
        assert_eq!(p.n, 1 << 20);
        assert_eq!(p.start, StartDistribution::Stratified { level: 9 });
        assert_eq!(p.levels, Levels { start: 6, target: 0 });
        let r = cfg(r#"{"experiment": "field-eval"}"#).unwrap();
        assert_eq!(r.experiment, ExperimentKind::Field);
    }

    #[test]
    fn hash_tracks_params_not_seed_or_out() {
        let a = cfg(r#"{"experiment": "density", "depth": 4}"#).unwrap();
        let b = cfg(r#"{"experiment": "density", "depth": 4, "seed": 7, "out": "x"}"#).unwrap();
        let c = cfg(r#"{"experiment": "density", "depth": 5}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn steps_and_stages_are_validated() {
        let e = cfg(r#"{"experiment": "converge", "step": 0.001}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "step"));
        let e = cfg(r#"{"experiment": "converge", "eps": [0.125, 0.0625], "t_end": "1/8"}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "t_end"), "{e}");
        let e = cfg(r#"{"experiment": "trace", "eps": [0.0625], "t_end": "1/16"}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "t_end"), "{e}");
    }

    #[test]
    fn overlay_prefers_flags() {
        let file = ExperimentConfig { depth: Some(3), n: Some(5), ..Default::default() };
        let flags = ExperimentConfig { depth: Some(7), ..Default::default() };
        let m = file.overlay(flags);
        assert_eq!((m.depth, m.n), (Some(7), Some(5)));
    }
}
