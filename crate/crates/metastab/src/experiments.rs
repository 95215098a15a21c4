//! Declarative experiment runner: expands a config into (N, lambda) cells,
//! dispatches them to a worker pool, and streams rows through a single
//! writer so reruns with the same config and seed are byte-identical.

use crate::chain::ProbMeasure;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::meta::{
    check_condition_d, check_condition_r, check_condition_v, check_h0_h1,
    extract_reduced_generator, reflected_chain, spectral_gap, tv_curve, TvStart,
};
use crate::numeric::{inf_norm, kahan_sum};
use crate::potential::capacity;
use crate::sim::{order_exit_statistics, StreamSpec};
use crate::zrp::{
    capacity_test_function_q, count_configs, enumerate_configs, limit_generator_ly,
    search_superharmonic_certificate, zr_generator, zr_measure, zr_wells, ConfigTable, ZRModel,
    ZRWells,
};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Artifacts left behind by a finished run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub n_cells: usize,
    pub n_failed: usize,
}

/// Fixed column order per experiment. This is the schema contract: columns
/// are never reordered, and downstream tooling may rely on the names.
///
/// Time-like columns are in the chain's own clock; the `theta` column lets
/// a reader convert when the model was built without the speedup factor.
pub fn experiment_columns(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "condensation" => &["N", "mu_E_total", "mu_Delta", "mu_E_min", "mu_E_max", "Z"],
        "capacity-limit" => &["N", "cap_N", "limit", "ratio", "q_dirichlet", "q_witness"],
        "resolvent-check" => {
            &["N", "lambda", "osc_max", "residual", "sup_norm", "sup_bound"]
        }
        "reduced-generator" => {
            &["N", "lambda", "from", "to", "rate", "negativity_mass", "rowsum_residual"]
        }
        "condition-D" => &["N", "lambda", "well", "u_max", "u_horizon"],
        "condition-V" => &[
            "N",
            "theta",
            "well",
            "s",
            "tail",
            "tail_se",
            "markov_bound",
            "mean_max",
            "worst_state",
            "censored",
            "verdict",
        ],
        "mixing" => &["N", "theta", "s_N", "t_eval", "tv_worst"],
        "spectral-gap" => &["N", "theta", "gap", "s_N", "gap_times_s"],
        "superharmonic" => &[
            "N",
            "margin_full",
            "margin_reflected",
            "boundary_ok",
            "boundary_worst",
            "correlation",
            "bound_c1",
            "bound_c2",
            "n_checked",
            "verdict",
            "c_coeffs",
        ],
        "order-exit" => &[
            "N",
            "theta",
            "start_label",
            "samples",
            "censored",
            "sojourn_mean",
            "sojourn_se",
            "fitted_rate",
            "ly_rate",
            "ks_statistic",
            "ks_pass",
        ],
        "h0h1" => &["N", "diagnostic", "value"],
        _ => return None,
    })
}

/// Experiments whose cells carry a resolvent parameter.
fn uses_lambda(name: &str) -> bool {
    matches!(name, "resolvent-check" | "reduced-generator" | "condition-D")
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    index: usize,
    n: usize,
    lambda: Option<f64>,
}

#[derive(Serialize)]
struct CellRecord {
    index: usize,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    status: &'static str,
    rows: usize,
    wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    package_version: &'static str,
    workers: usize,
    csv: String,
    config: &'a ExperimentConfig,
    cells: Vec<CellRecord>,
    total_wall_ms: f64,
}

/// Everything a cell computes on: the model at one grid point, its
/// configuration table, stationary measure, and well geometry.
struct Instance {
    model: ZRModel,
    table: ConfigTable,
    mu: ProbMeasure,
    z: f64,
    wells: ZRWells,
    chain: Option<crate::chain::MarkovChain>,
}

impl Instance {
    fn chain(&self) -> &crate::chain::MarkovChain {
        self.chain.as_ref().expect("cell built without a generator")
    }

    /// Chain-clock time for one unit of sped-up time.
    fn clock(&self) -> f64 {
        if self.model.speedup {
            1.0
        } else {
            self.wells.scales.theta
        }
    }
}

fn build_instance(config: &ExperimentConfig, n: usize, with_chain: bool) -> Result<Instance> {
    let states = count_configs(n, config.kappa).unwrap_or(u128::MAX);
    if states > config.state_cap as u128 {
        return Err(Error::StateCapExceeded {
            states,
            cap: config.state_cap as u128,
        });
    }
    let model = config.model_spec().build(Some(n))?;
    let table = enumerate_configs(n, config.kappa)?;
    let (mu, z) = zr_measure(&model, &table)?;
    let wells = zr_wells(&model, &table)?;
    let chain = if with_chain {
        Some(zr_generator(&model, &table)?)
    } else {
        None
    };
    Ok(Instance {
        model,
        table,
        mu,
        z,
        wells,
        chain,
    })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_bool(v: bool) -> String {
    if v { "true".into() } else { "false".into() }
}

fn diag(report: &crate::meta::ConditionReport, key: &str) -> Result<f64> {
    report
        .diagnostics
        .get(key)
        .copied()
        .ok_or_else(|| Error::InvalidInput(format!("missing diagnostic {key:?}")))
}

/// Every numeric field in a result row must be finite.
fn check_finite(rows: &[Vec<String>]) -> Result<()> {
    for row in rows {
        for field in row {
            if let Ok(x) = field.parse::<f64>() {
                if !x.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite diagnostic {field:?} in result row"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn cell_rows(config: &ExperimentConfig, cell: Cell) -> Result<Vec<Vec<String>>> {
    let n = cell.n;
    let n_s = n.to_string();
    let kappa = config.kappa;
    let rows = match config.experiment.as_str() {
        "condensation" => {
            let inst = build_instance(config, n, false)?;
            let wp = &inst.wells.partition;
            let masses: Vec<f64> = (0..wp.n_labels()).map(|x| inst.mu.mass(wp.well(x))).collect();
            let e_total = kahan_sum(masses.iter().copied());
            let delta_mass = inst.mu.mass(wp.delta());
            let lo = masses.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vec![vec![n_s, fmt(e_total), fmt(delta_mass), fmt(lo), fmt(hi), fmt(inst.z)]]
        }
        "capacity-limit" => {
            let inst = build_instance(config, n, true)?;
            let wp = &inst.wells.partition;
            let raw = capacity(inst.chain(), &inst.mu, wp.well(0), &wp.other_wells(0))?.capacity;
            // The limit lives on the sped-up clock; lift an un-sped capacity.
            let cap_n = raw * inst.clock();
            let mut limit = 0.0;
            for y in 1..kappa {
                limit += 6.0 * inst.model.walk_capacity(&[0], &[y])?;
            }
            let q = capacity_test_function_q(&inst.model, &inst.table, inst.chain(), &inst.mu, 0)?;
            vec![vec![
                n_s,
                fmt(cap_n),
                fmt(limit),
                fmt(cap_n / limit),
                fmt(q.dirichlet),
                fmt(q.witness),
            ]]
        }
        "resolvent-check" => {
            let lambda = cell.lambda.expect("lambda cell");
            let inst = build_instance(config, n, true)?;
            let mut g = vec![0.0; kappa];
            g[0] = 1.0;
            let (report, f, _) =
                check_condition_r(inst.chain(), &inst.mu, &inst.wells.partition, lambda, &g)?;
            vec![vec![
                n_s,
                fmt(lambda),
                fmt(diag(&report, "osc_max")?),
                fmt(diag(&report, "residual")?),
                fmt(inf_norm(&f)),
                fmt(1.0 / lambda),
            ]]
        }
        "reduced-generator" => {
            let lambda = cell.lambda.expect("lambda cell");
            let inst = build_instance(config, n, true)?;
            let reduced =
                extract_reduced_generator(inst.chain(), &inst.mu, &inst.wells.partition, lambda)?;
            let mut out = Vec::new();
            for x in 0..kappa {
                for y in 0..kappa {
                    if x != y {
                        out.push(vec![
                            n_s.clone(),
                            fmt(lambda),
                            x.to_string(),
                            y.to_string(),
                            fmt(reduced.rate(x, y)),
                            fmt(reduced.negativity_mass),
                            fmt(reduced.rowsum_residual),
                        ]);
                    }
                }
            }
            out
        }
        "condition-D" => {
            let lambda = cell.lambda.expect("lambda cell");
            let inst = build_instance(config, n, true)?;
            let report = check_condition_d(inst.chain(), &inst.wells.partition, lambda)?;
            let mut out = Vec::new();
            for x in 0..kappa {
                out.push(vec![
                    n_s.clone(),
                    fmt(lambda),
                    x.to_string(),
                    fmt(diag(&report, &format!("u_max_well{x}"))?),
                    fmt(diag(&report, &format!("u_horizon_well{x}"))?),
                ]);
            }
            out
        }
        "condition-V" => {
            let inst = build_instance(config, n, true)?;
            let theta = inst.wells.scales.theta;
            let s_chain = inst.wells.scales.u * inst.clock();
            let streams = StreamSpec::new(config.seed, (cell.index as u64) << 32);
            let report = check_condition_v(
                inst.chain(),
                &inst.wells.partition,
                &inst.wells.anchors,
                &[s_chain],
                config.samples,
                streams,
            )?;
            let verdict = report.verdict.clone().unwrap_or_default();
            let mut out = Vec::new();
            for x in 0..kappa {
                out.push(vec![
                    n_s.clone(),
                    fmt(theta),
                    x.to_string(),
                    fmt(s_chain),
                    fmt(diag(&report, &format!("tail_well{x}_s0"))?),
                    fmt(diag(&report, &format!("tail_se_well{x}_s0"))?),
                    fmt(diag(&report, &format!("markov_well{x}_s0"))?),
                    fmt(diag(&report, &format!("mean_max_well{x}"))?),
                    fmt(diag(&report, &format!("worst_state_well{x}"))?),
                    fmt(diag(&report, &format!("censored_well{x}"))?),
                    verdict.clone(),
                ]);
            }
            out
        }
        "mixing" => {
            let inst = build_instance(config, n, true)?;
            let theta = inst.wells.scales.theta;
            let s_n = inst.wells.scales.s;
            let t_eval = s_n * inst.clock();
            let (local, kept) = reflected_chain(inst.chain(), &inst.wells.v[0])?;
            let pi =
                ProbMeasure::from_weights(kept.iter().map(|&s| inst.mu.get(s)).collect())?;
            let curve = tv_curve(&local, &pi, &[t_eval], &TvStart::Worst)?;
            vec![vec![n_s, fmt(theta), fmt(s_n), fmt(t_eval), fmt(curve[0].1)]]
        }
        "spectral-gap" => {
            let inst = build_instance(config, n, true)?;
            let theta = inst.wells.scales.theta;
            let s_n = inst.wells.scales.s;
            let (local, kept) = reflected_chain(inst.chain(), &inst.wells.v[0])?;
            let pi =
                ProbMeasure::from_weights(kept.iter().map(|&s| inst.mu.get(s)).collect())?;
            let gap = spectral_gap(&local, &pi)?;
            // gap times t_eval is clock-free.
            let product = gap * s_n * inst.clock();
            vec![vec![n_s, fmt(theta), fmt(gap), fmt(s_n), fmt(product)]]
        }
        "superharmonic" => {
            let inst = build_instance(config, n, false)?;
            let (g, report) =
                search_superharmonic_certificate(&inst.model, &inst.table, 0, config.m_terms)?;
            let coeffs: Vec<String> = g.c_coeffs.iter().map(|&c| fmt(c)).collect();
            vec![vec![
                n_s,
                fmt(report.margin_max_full),
                fmt(report.margin_max_reflected),
                fmt_bool(report.boundary_ok),
                fmt(report.boundary_worst),
                fmt(report.correlation),
                fmt(report.bound_c1),
                fmt(report.bound_c2),
                report.n_checked.to_string(),
                if report.verdict_pass { "pass" } else { "fail" }.to_string(),
                coeffs.join(";"),
            ]]
        }
        "order-exit" => {
            let inst = build_instance(config, n, true)?;
            let theta = inst.wells.scales.theta;
            let start = inst.wells.anchors[0];
            let streams = StreamSpec::new(config.seed, (cell.index as u64) << 32);
            let stats = order_exit_statistics(
                inst.chain(),
                &inst.wells.partition,
                start,
                config.samples,
                streams,
            )?;
            let ly = limit_generator_ly(&inst.model)?;
            let ly_rate = kahan_sum((0..kappa).filter(|&y| y != 0).map(|y| ly.rate(0, y)));
            vec![vec![
                n_s,
                fmt(theta),
                stats.start_label.to_string(),
                config.samples.to_string(),
                stats.censored.to_string(),
                fmt(stats.sojourn.mean),
                fmt(stats.sojourn.std_error),
                fmt(stats.fitted_rate),
                fmt(ly_rate),
                fmt(stats.ks_statistic),
                fmt_bool(stats.ks_pass_1pct),
            ]]
        }
        "h0h1" => {
            let inst = build_instance(config, n, true)?;
            let report = check_h0_h1(
                inst.chain(),
                &inst.mu,
                &inst.wells.partition,
                &inst.wells.anchors,
            )?;
            report
                .diagnostics
                .iter()
                .map(|(key, &value)| vec![n_s.clone(), key.clone(), fmt(value)])
                .collect()
        }
        other => {
            return Err(Error::InvalidInput(format!("unknown experiment {other:?}")));
        }
    };
    check_finite(&rows)?;
    Ok(rows)
}

/// RFC 4180 field: quote when the content needs it.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_line(fields: &[String]) -> String {
    let mut line = fields.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",");
    line.push_str("\r\n");
    line
}

/// Runs every (N, lambda) cell of the configured experiment on a pool of
/// `workers` threads, writing `<experiment>.csv` and `manifest.json` under
/// `out_dir`.
///
/// Cells fail independently: a failed cell is recorded in the manifest with
/// its reason and contributes no rows, while siblings keep running. Rows are
/// written in cell order with a per-cell flush, so the CSV bytes do not
/// depend on the worker count and partial output survives an interrupted
/// run.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<RunOutcome> {
    let name = config.experiment.as_str();
    let columns = experiment_columns(name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown experiment {name:?}")))?;
    let workers = workers.max(1);
    let total_start = Instant::now();

    let mut cells: Vec<Cell> = Vec::new();
    for &n in &config.n_grid {
        if uses_lambda(name) {
            for &lambda in &config.lambda_grid {
                cells.push(Cell { index: cells.len(), n, lambda: Some(lambda) });
            }
        } else {
            cells.push(Cell { index: cells.len(), n, lambda: None });
        }
    }

    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{name}.csv"));
    let manifest_path = out_dir.join("manifest.json");
    let mut file = std::fs::File::create(&csv_path)?;
    file.write_all(csv_line(&columns.iter().map(|c| c.to_string()).collect::<Vec<_>>()).as_bytes())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;

    type Done = (usize, std::result::Result<Vec<Vec<String>>, String>, f64);
    let (tx, rx) = std::sync::mpsc::channel::<Done>();
    let mut records: Vec<Option<CellRecord>> = (0..cells.len()).map(|_| None).collect();
    let mut n_failed = 0usize;

    let cells_ref = &cells;
    std::thread::scope(|scope| -> Result<()> {
        scope.spawn(move || {
            pool.install(|| {
                cells_ref.par_iter().for_each_with(tx, |tx, &cell| {
                    let t0 = Instant::now();
                    let out = cell_rows(config, cell).map_err(|e| e.to_string());
                    let _ = tx.send((cell.index, out, t0.elapsed().as_secs_f64() * 1e3));
                });
            });
        });
        // Single writer: buffer out-of-order cells, emit in index order.
        let mut pending: BTreeMap<usize, Done> = BTreeMap::new();
        let mut next = 0usize;
        for done in rx {
            pending.insert(done.0, done);
            while let Some((index, out, wall_ms)) = pending.remove(&next) {
                let cell = cells_ref[index];
                records[index] = Some(match out {
                    Ok(rows) => {
                        for row in &rows {
                            file.write_all(csv_line(row).as_bytes())?;
                        }
                        file.flush()?;
                        CellRecord {
                            index,
                            n: cell.n,
                            lambda: cell.lambda,
                            status: "ok",
                            rows: rows.len(),
                            wall_ms,
                            error: None,
                        }
                    }
                    Err(message) => {
                        n_failed += 1;
                        CellRecord {
                            index,
                            n: cell.n,
                            lambda: cell.lambda,
                            status: "failed",
                            rows: 0,
                            wall_ms,
                            error: Some(message),
                        }
                    }
                });
                next += 1;
            }
        }
        Ok(())
    })?;

    let manifest = Manifest {
        experiment: name,
        package_version: env!("CARGO_PKG_VERSION"),
        workers,
        csv: format!("{name}.csv"),
        config,
        cells: records.into_iter().map(|r| r.expect("every cell reports")).collect(),
        total_wall_ms: total_start.elapsed().as_secs_f64() * 1e3,
    };
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))?;
    json.push('\n');
    std::fs::write(&manifest_path, json)?;

    Ok(RunOutcome {
        csv_path,
        manifest_path,
        n_cells: cells.len(),
        n_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn run_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("metastab-exp-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn tiny_config(experiment: &str, extra: &str) -> ExperimentConfig {
        let text = format!(
            "experiment {experiment}\nkappa 2\nN 30\nN 40\nlambda 1\nseed 3\nsamples 200\n{extra}"
        );
        parse_config(&text, Path::new(".")).unwrap()
    }

    #[test]
    fn every_experiment_has_a_schema_and_unknown_names_do_not() {
        for name in crate::config::EXPERIMENT_NAMES {
            assert!(experiment_columns(name).is_some(), "missing schema for {name}");
        }
        assert!(experiment_columns("warp").is_none());
    }

    #[test]
    fn condensation_run_emits_one_row_per_n_and_a_manifest() {
        let config = tiny_config("condensation", "");
        let dir = run_dir("cond");
        let outcome = run_experiment(&config, &dir, 2).unwrap();
        assert_eq!(outcome.n_cells, 2);
        assert_eq!(outcome.n_failed, 0);
        let csv = std::fs::read_to_string(&outcome.csv_path).unwrap();
        let lines: Vec<&str> = csv.split("\r\n").filter(|l| !l.is_empty()).collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "N,mu_E_total,mu_Delta,mu_E_min,mu_E_max,Z");
        assert!(lines[1].starts_with("30,"));
        assert!(lines[2].starts_with("40,"));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&outcome.manifest_path).unwrap())
                .unwrap();
        assert_eq!(manifest["experiment"], "condensation");
        assert_eq!(manifest["cells"].as_array().unwrap().len(), 2);
        assert_eq!(manifest["cells"][0]["status"], "ok");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn worker_count_does_not_change_the_bytes() {
        let config = tiny_config("condition-V", "");
        let dir1 = run_dir("det1");
        let dir2 = run_dir("det2");
        let out1 = run_experiment(&config, &dir1, 1).unwrap();
        let out2 = run_experiment(&config, &dir2, 3).unwrap();
        let bytes1 = std::fs::read(&out1.csv_path).unwrap();
        let bytes2 = std::fs::read(&out2.csv_path).unwrap();
        assert_eq!(bytes1, bytes2);
        std::fs::remove_dir_all(&dir1).ok();
        std::fs::remove_dir_all(&dir2).ok();
    }

    #[test]
    fn a_failed_cell_is_recorded_and_does_not_abort_siblings() {
        // N = 3 has overlapping wells; N = 30 is fine.
        let text = "experiment condensation\nkappa 2\nN 3\nN 30\nseed 0\n";
        let config = parse_config(text, Path::new(".")).unwrap();
        let dir = run_dir("fail");
        let outcome = run_experiment(&config, &dir, 2).unwrap();
        assert_eq!(outcome.n_cells, 2);
        assert_eq!(outcome.n_failed, 1);
        let csv = std::fs::read_to_string(&outcome.csv_path).unwrap();
        let lines: Vec<&str> = csv.split("\r\n").filter(|l| !l.is_empty()).collect();
        assert_eq!(lines.len(), 2, "only the good cell contributes rows");
        assert!(lines[1].starts_with("30,"));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&outcome.manifest_path).unwrap())
                .unwrap();
        assert_eq!(manifest["cells"][0]["status"], "failed");
        assert!(manifest["cells"][0]["error"]
            .as_str()
            .unwrap()
            .contains("overlap"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn state_cap_refuses_oversized_cells_with_a_clear_reason() {
        let text = "experiment condensation\nkappa 2\nN 30\nstate_cap 10\nseed 0\n";
        let config = parse_config(text, Path::new(".")).unwrap();
        let dir = run_dir("cap");
        let outcome = run_experiment(&config, &dir, 1).unwrap();
        assert_eq!(outcome.n_failed, 1);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&outcome.manifest_path).unwrap())
                .unwrap();
        let reason = manifest["cells"][0]["error"].as_str().unwrap();
        assert!(reason.contains("31") && reason.contains("10"), "got {reason}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_quoting_follows_rfc_4180() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
