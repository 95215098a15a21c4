//! Experiment configuration: a flat key-value text format with repeated
//! keys for grids, merged with model spec files and filled with defaults.

use crate::error::{Error, Result};
use crate::zrp::{default_gamma, ZRModelSpec, DEFAULT_DELTA, DEFAULT_M_TERMS};
use serde::Serialize;
use std::path::Path;

/// Experiments the runner knows, in documentation order.
pub const EXPERIMENT_NAMES: [&str; 11] = [
    "condensation",
    "capacity-limit",
    "resolvent-check",
    "reduced-generator",
    "condition-D",
    "condition-V",
    "mixing",
    "spectral-gap",
    "superharmonic",
    "order-exit",
    "h0h1",
];

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_STATE_CAP: usize = 200_000;
pub const DEFAULT_LAMBDA_GRID: [f64; 3] = [0.5, 1.0, 2.0];

/// A parsed and normalized experiment configuration: every default is
/// filled in, every constraint already checked.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub kappa: usize,
    /// Symmetric walk, both directions listed.
    pub walk: Vec<(usize, usize, f64)>,
    pub delta: f64,
    pub gamma: f64,
    pub speedup: bool,
    pub n_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    pub samples: usize,
    pub state_cap: usize,
    pub m_terms: usize,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// The model spec for one grid point.
    pub fn model_spec(&self) -> ZRModelSpec {
        ZRModelSpec {
            kappa: Some(self.kappa),
            walk: self.walk.clone(),
            n: None,
            delta: Some(self.delta),
            gamma: Some(self.gamma),
            speedup: Some(self.speedup),
        }
    }

    /// Flat key-value rendering, same format the parser reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("experiment {}\n", self.experiment));
        out.push_str(&format!("kappa {}\n", self.kappa));
        for &(x, y, v) in &self.walk {
            if x < y {
                out.push_str(&format!("walk_rate {x} {y} {v}\n"));
            }
        }
        out.push_str(&format!("delta {}\n", self.delta));
        out.push_str(&format!("gamma {}\n", self.gamma));
        out.push_str(&format!(
            "speedup {}\n",
            if self.speedup { "on" } else { "off" }
        ));
        for n in &self.n_grid {
            out.push_str(&format!("N {n}\n"));
        }
        for l in &self.lambda_grid {
            out.push_str(&format!("lambda {l}\n"));
        }
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("samples {}\n", self.samples));
        out.push_str(&format!("state_cap {}\n", self.state_cap));
        out.push_str(&format!("m_terms {}\n", self.m_terms));
        if let Some(w) = self.workers {
            out.push_str(&format!("workers {w}\n"));
        }
        out
    }
}

/// Parses a config, resolving `model` file references against `base_dir`.
/// Collects every violation instead of stopping at the first.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut violations: Vec<String> = Vec::new();
    let mut experiment: Option<String> = None;
    let mut inline = ZRModelSpec::default();
    let mut file_model: Option<ZRModelSpec> = None;
    let mut n_grid: Vec<usize> = Vec::new();
    let mut lambda_grid: Vec<f64> = Vec::new();
    let mut seed: Option<u64> = None;
    let mut samples: Option<usize> = None;
    let mut state_cap: Option<usize> = None;
    let mut m_terms: Option<usize> = None;
    let mut workers: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let mut tokens = line.split_whitespace();
        let key = match tokens.next() {
            Some(k) => k,
            None => continue,
        };
        let rest: Vec<&str> = tokens.collect();
        let mut bad = |message: String| violations.push(format!("line {line_no}: {message}"));
        macro_rules! one {
            ($what:expr) => {{
                if rest.len() != 1 {
                    bad(format!("{key} expects one {}", $what));
                    continue;
                }
                rest[0]
            }};
        }
        macro_rules! parse_one {
            ($what:expr) => {{
                match one!($what).parse() {
                    Ok(v) => v,
                    Err(_) => {
                        bad(format!("bad {key} value {:?}", rest[0]));
                        continue;
                    }
                }
            }};
        }
        match key {
            "experiment" => experiment = Some(one!("name").to_string()),
            "model" => {
                let path = base_dir.join(one!("path"));
                match std::fs::read_to_string(&path) {
                    Ok(body) => match ZRModelSpec::parse(&body) {
                        Ok(spec) => file_model = Some(spec),
                        Err(e) => bad(format!("model file {}: {e}", path.display())),
                    },
                    Err(e) => bad(format!("model file {} unreadable: {e}", path.display())),
                }
            }
            "kappa" => inline.kappa = Some(parse_one!("integer")),
            "delta" => inline.delta = Some(parse_one!("number")),
            "gamma" => inline.gamma = Some(parse_one!("number")),
            "speedup" => match one!("flag") {
                "on" => inline.speedup = Some(true),
                "off" => inline.speedup = Some(false),
                other => bad(format!("speedup expects on or off, got {other:?}")),
            },
            "walk_rate" => {
                if rest.len() != 3 {
                    bad("walk_rate expects X Y V".into());
                    continue;
                }
                match (rest[0].parse(), rest[1].parse(), rest[2].parse::<f64>()) {
                    (Ok(x), Ok(y), Ok(v)) => {
                        inline.walk.push((x, y, v));
                        inline.walk.push((y, x, v));
                    }
                    _ => bad(format!("bad walk_rate entry {:?}", rest.join(" "))),
                }
            }
            "N" => match one!("integer").parse() {
                Ok(v) => n_grid.push(v),
                Err(_) => bad(format!("bad N value {:?}", rest[0])),
            },
            "lambda" => match one!("number").parse() {
                Ok(v) => lambda_grid.push(v),
                Err(_) => bad(format!("bad lambda value {:?}", rest[0])),
            },
            "seed" => seed = Some(parse_one!("integer")),
            "samples" => samples = Some(parse_one!("integer")),
            "state_cap" => state_cap = Some(parse_one!("integer")),
            "m_terms" => m_terms = Some(parse_one!("integer")),
            "workers" => workers = Some(parse_one!("integer")),
            other => bad(format!("unknown key {other:?}")),
        }
    }

    // Inline keys override the model file; inline walk lines replace it.
    let mut model = file_model.unwrap_or_default();
    if inline.kappa.is_some() {
        model.kappa = inline.kappa;
    }
    if inline.delta.is_some() {
        model.delta = inline.delta;
    }
    if inline.gamma.is_some() {
        model.gamma = inline.gamma;
    }
    if inline.speedup.is_some() {
        model.speedup = inline.speedup;
    }
    if !inline.walk.is_empty() {
        model.walk = inline.walk;
    }

    let experiment = match experiment {
        Some(name) => {
            if !EXPERIMENT_NAMES.contains(&name.as_str()) {
                violations.push(format!(
                    "unknown experiment {name:?}; known: {}",
                    EXPERIMENT_NAMES.join(", ")
                ));
            }
            name
        }
        None => {
            violations.push("missing experiment name".into());
            String::new()
        }
    };

    let kappa = match model.kappa {
        Some(k) if k >= 2 => k,
        Some(k) => {
            violations.push(format!("kappa must be at least 2, got {k}"));
            2
        }
        None => {
            violations.push("missing kappa (inline or via model file)".into());
            2
        }
    };
    let delta = model.delta.unwrap_or(DEFAULT_DELTA);
    if !(delta > 0.0 && delta < 1.0) {
        violations.push(format!("delta must lie in (0, 1), got {delta}"));
    }
    let gamma = model.gamma.unwrap_or_else(|| default_gamma(kappa));
    let gamma_cap = 2.0 / kappa as f64;
    if !(gamma > 0.0 && gamma < gamma_cap) {
        violations.push(format!("gamma must be < 2/kappa = {gamma_cap}"));
    }
    let speedup = model.speedup.unwrap_or(true);
    let mut walk = if model.walk.is_empty() {
        crate::zrp::complete_walk(kappa)
    } else {
        model.walk.clone()
    };
    // Canonical edge order makes the normalized config independent of the
    // line order in the source file.
    walk.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    if n_grid.is_empty() {
        violations.push("missing N grid (at least one N line)".into());
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        violations.push("N grid must be strictly increasing".into());
    }
    if lambda_grid.is_empty() {
        lambda_grid = DEFAULT_LAMBDA_GRID.to_vec();
    }
    if lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        violations.push("lambda grid must be positive and finite".into());
    }
    let samples = samples.unwrap_or(DEFAULT_SAMPLES);
    if samples == 0 {
        violations.push("samples must be positive".into());
    }
    let m_terms = m_terms.unwrap_or(DEFAULT_M_TERMS);
    if m_terms <= 2 {
        violations.push(format!("m_terms must exceed 2, got {m_terms}"));
    }
    let state_cap = state_cap.unwrap_or(DEFAULT_STATE_CAP);
    if state_cap == 0 {
        violations.push("state_cap must be positive".into());
    }
    if workers == Some(0) {
        violations.push("workers must be positive when given".into());
    }

    // Building the model at the largest N catches walk problems early.
    if violations.is_empty() {
        let spec = ZRModelSpec {
            kappa: Some(kappa),
            walk: walk.clone(),
            n: None,
            delta: Some(delta),
            gamma: Some(gamma),
            speedup: Some(speedup),
        };
        if let Some(&n) = n_grid.last() {
            if let Err(e) = spec.build(Some(n)) {
                violations.push(format!("model invalid at N = {n}: {e}"));
            }
        }
    }

    if !violations.is_empty() {
        return Err(Error::InvalidConfig(violations));
    }
    Ok(ExperimentConfig {
        experiment,
        kappa,
        walk,
        delta,
        gamma,
        speedup,
        n_grid,
        lambda_grid,
        seed: seed.unwrap_or(0),
        samples,
        state_cap,
        m_terms,
        workers,
    })
}

/// Worker count resolution: command line beats the environment beats the
/// config file beats the default thread pool size.
pub fn resolve_workers(cli: Option<usize>, config: &ExperimentConfig) -> usize {
    if let Some(w) = cli {
        return w.max(1);
    }
    if let Ok(raw) = std::env::var("METASTAB_WORKERS") {
        if let Ok(w) = raw.parse::<usize>() {
            if w >= 1 {
                return w;
            }
        }
    }
    if let Some(w) = config.workers {
        return w.max(1);
    }
    rayon::current_num_threads()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn base() -> PathBuf {
        PathBuf::from(".")
    }

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let cfg = parse_config(
            "experiment condensation\nkappa 2\nN 50\nN 100\n",
            &base(),
        )
        .unwrap();
        assert_eq!(cfg.delta, 0.25);
        assert_eq!(cfg.gamma, 0.5);
        assert!(cfg.speedup);
        assert_eq!(cfg.lambda_grid, vec![0.5, 1.0, 2.0]);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.samples, 10_000);
        assert_eq!(cfg.state_cap, 200_000);
        assert_eq!(cfg.m_terms, 8);
        assert_eq!(cfg.walk.len(), 2);
    }

    #[test]
    fn violations_are_collected_not_truncated() {
        let err = parse_config(
            "experiment warp\nkappa 2\ngamma 1.5\nN 100\nN 50\n",
            &base(),
        )
        .unwrap_err();
        match err {
            Error::InvalidConfig(list) => {
                assert!(list.iter().any(|v| v.contains("unknown experiment")));
                assert!(list
                    .iter()
                    .any(|v| v.contains("gamma must be < 2/kappa = 1")));
                assert!(list
                    .iter()
                    .any(|v| v.contains("N grid must be strictly increasing")));
            }
            other => panic!("expected config violations, got {other:?}"),
        }
    }

    #[test]
    fn config_round_trips_through_its_own_rendering() {
        let cfg = parse_config(
            "experiment mixing\nkappa 3\ndelta 0.5\nN 50\nlambda 1\nseed 7\n",
            &base(),
        )
        .unwrap();
        let again = parse_config(&cfg.to_text(), &base()).unwrap();
        assert_eq!(again.experiment, cfg.experiment);
        assert_eq!(again.kappa, cfg.kappa);
        assert_eq!(again.n_grid, cfg.n_grid);
        assert_eq!(again.lambda_grid, cfg.lambda_grid);
        assert_eq!(again.seed, cfg.seed);
        assert_eq!(again.walk, cfg.walk);
    }

    #[test]
    fn model_file_merges_under_inline_overrides() {
        let dir = std::env::temp_dir().join("metastab-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("model.txt"), "kappa 3\ndelta 0.4\nspeedup off\n")
            .unwrap();
        let cfg = parse_config(
            "experiment condensation\nmodel model.txt\ndelta 0.3\nN 60\n",
            &dir,
        )
        .unwrap();
        assert_eq!(cfg.kappa, 3);
        assert_eq!(cfg.delta, 0.3);
        assert!(!cfg.speedup);
    }
}
