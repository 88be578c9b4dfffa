//! Report emission and standalone verification. The JSON writer is
//! hand-rolled so key order is fixed and every real is serialized with 17
//! significant digits, making identical runs byte-identical. Verification
//! reads a report back and recomputes all pairwise distances from the
//! coordinates alone, through a plain p-norm implementation that shares no
//! code with the builder's norm oracle.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::builder::EquilateralSet;
use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

fn push_real_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_real(*v));
    }
    out.push(']');
}

fn config_json(config: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str("{\"space\":{\"kind\":\"lp\",\"p\":");
    s.push_str(&fmt_real(config.p));
    let _ = write!(s, ",\"dim\":{}}}", config.dim);
    let _ = write!(s, ",\"sequence\":{{\"kind\":{}", fmt_str(config.sequence.kind()));
    match &config.sequence {
        crate::config::SequenceSpec::PerturbedBasis { beta } => {
            let _ = write!(s, ",\"beta\":{}", fmt_real(*beta));
        }
        crate::config::SequenceSpec::Block { width } => {
            let _ = write!(s, ",\"block\":{width}");
        }
        crate::config::SequenceSpec::UnitBasis => {}
    }
    s.push('}');
    let _ = write!(
        s,
        ",\"builder\":{{\"n_points\":{},\"prop_tol\":{},\"final_tol\":{},\"delta_cap\":{},\"k_retries\":{}}}",
        config.params.n_points,
        fmt_real(config.params.prop_tol),
        fmt_real(config.params.final_tol),
        fmt_real(config.params.delta_cap),
        config.params.k_retries
    );
    let _ = write!(
        s,
        ",\"tail\":{{\"start\":{},\"window\":{},\"tol\":{}}}",
        config.policy.start,
        config.policy.window,
        fmt_real(config.policy.tol)
    );
    let _ = write!(
        s,
        ",\"newton\":{{\"max_iter\":{},\"res_tol\":{},\"guard_samples\":{}}}",
        config.params.newton.max_iter,
        fmt_real(config.params.newton.res_tol),
        config.params.newton.guard_samples
    );
    let _ = write!(s, ",\"seed\":{}", config.seed);
    s.push('}');
    s
}

fn error_step(err: &Error) -> Option<usize> {
    match err {
        Error::ExhaustedPool { step, .. } | Error::InvariantViolation { step, .. } => Some(*step),
        _ => None,
    }
}

/// Render the full report document. Key order is fixed; identical inputs
/// produce identical bytes.
pub fn render_report(
    config: &RunConfig,
    outcome: &std::result::Result<EquilateralSet, Error>,
) -> String {
    let mut s = String::new();
    let _ = write!(s, "{{\"schema_version\":{SCHEMA_VERSION}");

    match outcome {
        Ok(set) => {
            s.push_str(",\"status\":\"ok\",\"error\":null");
            s.push_str(",\"config\":");
            s.push_str(&config_json(config));
            let _ = write!(s, ",\"lambda\":{}", fmt_real(set.lambda));
            let _ = write!(s, ",\"c\":{}", fmt_real(set.c));
            let _ = write!(s, ",\"defect\":{}", fmt_real(set.defect));

            s.push_str(",\"points\":[");
            for (i, p) in set.points.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                push_real_array(&mut s, p.coords());
            }
            s.push(']');

            s.push_str(",\"distance_matrix\":[");
            let oracle = config.oracle().expect("config was validated");
            for (i, a) in set.points.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                s.push('[');
                for (j, b) in set.points.iter().enumerate() {
                    if j > 0 {
                        s.push(',');
                    }
                    if i == j {
                        s.push_str(&fmt_real(0.0));
                    } else {
                        let d = oracle.norm(&a.sub(b)).expect("points are finite");
                        s.push_str(&fmt_real(d));
                    }
                }
                s.push(']');
            }
            s.push(']');

            s.push_str(",\"property_slacks\":[");
            for (i, check) in set.properties.checks.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(
                    s,
                    "{{\"id\":{},\"name\":{},\"measured\":{},\"threshold\":{},\"slack\":{},\"pass\":{},\"vacuous\":{}}}",
                    check.id,
                    fmt_str(check.name),
                    fmt_real(check.measured),
                    fmt_real(check.threshold),
                    fmt_real(check.slack()),
                    check.pass,
                    check.vacuous
                );
            }
            s.push(']');

            s.push_str(",\"eps_schedule\":");
            push_real_array(&mut s, &set.eps);
            s.push_str(",\"r_values\":");
            push_real_array(&mut s, &set.r);

            s.push_str(",\"steps\":[");
            for (i, log) in set.steps.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(
                    s,
                    "{{\"step\":{},\"chosen_k\":{},\"skipped_gate\":{},\"solver_failures\":{},\"delta\":{},\"target_norm\":{},\"newton_iterations\":{},\"inverse_norm\":{},\"a_norm\":{}",
                    log.step,
                    log.chosen_k,
                    log.skipped_gate,
                    log.solver_failures,
                    fmt_real(log.delta),
                    fmt_real(log.target_norm),
                    log.newton_iterations,
                    fmt_real(log.inverse_norm),
                    fmt_real(log.a_norm)
                );
                s.push_str(",\"radii\":");
                push_real_array(&mut s, &log.radii);
                s.push_str(",\"residuals\":");
                push_real_array(&mut s, &log.residuals);
                s.push_str(",\"guard\":");
                match &log.guard {
                    Some(g) => {
                        let _ = write!(
                            s,
                            "{{\"radius\":{},\"precondition_ok\":{},\"max_id_deviation\":{},\"max_taylor_ratio\":{},\"sample_count\":{}}}",
                            fmt_real(g.radius),
                            g.precondition_ok,
                            fmt_real(g.max_id_deviation),
                            fmt_real(g.max_taylor_ratio),
                            g.sample_count
                        );
                    }
                    None => s.push_str("null"),
                }
                s.push('}');
            }
            s.push(']');

            let _ = write!(
                s,
                ",\"stabilizer\":{{\"differenced\":{},\"dropped\":{}}}",
                set.differenced, set.dropped
            );
        }
        Err(err) => {
            s.push_str(",\"status\":\"error\",\"error\":{\"step\":");
            match error_step(err) {
                Some(step) => {
                    let _ = write!(s, "{step}");
                }
                None => s.push_str("null"),
            }
            let _ = write!(s, ",\"message\":{}}}", fmt_str(&err.to_string()));
            s.push_str(",\"config\":");
            s.push_str(&config_json(config));
            s.push_str(",\"lambda\":null,\"c\":null,\"defect\":null");
            s.push_str(",\"points\":[],\"distance_matrix\":[],\"property_slacks\":[]");
            s.push_str(",\"eps_schedule\":[],\"r_values\":[],\"steps\":[]");
            s.push_str(",\"stabilizer\":null");
        }
    }
    s.push('}');
    s.push('\n');
    s
}

/// Write-temp-then-rename so a crash never leaves a half-written report.
pub fn write_report_atomic(path: &Path, contents: &str) -> Result<()> {
    let file = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    let tmp = path.with_file_name(format!(".{file}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Plain textbook p-norm distance, deliberately independent of the oracle
/// implementation (no scaling tricks, no shared helpers).
fn independent_lp_distance(p: f64, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y).abs().powf(p);
    }
    acc.powf(1.0 / p)
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub lambda: f64,
    pub defect: f64,
    pub n_points: usize,
    pub ok: bool,
}

/// Recompute all pairwise distances of a report's points from coordinates
/// alone and compare with its declared lambda.
pub fn verify_report(text: &str, tol: f64) -> Result<VerifyOutcome> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Report(format!("malformed report: {e}")))?;

    let status = doc
        .get("status")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Report("report missing status".into()))?;
    if status != "ok" {
        return Err(Error::Report(format!(
            "report status is \"{status}\", nothing to verify"
        )));
    }
    let lambda = doc
        .get("lambda")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Report("report missing lambda".into()))?;
    let p = doc
        .pointer("/config/space/p")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Report("report missing config.space.p".into()))?;
    let points_json = doc
        .get("points")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Report("report missing points".into()))?;

    let mut points: Vec<Vec<f64>> = Vec::with_capacity(points_json.len());
    for entry in points_json {
        let coords = entry
            .as_array()
            .ok_or_else(|| Error::Report("point is not an array".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| Error::Report("non-numeric coordinate".into()))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = points.first() {
            if coords.len() != first.len() {
                return Err(Error::Report("inconsistent point dimensions".into()));
            }
        }
        points.push(coords);
    }
    if points.is_empty() {
        return Err(Error::Report("report has no points".into()));
    }

    let mut defect = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = independent_lp_distance(p, &points[i], &points[j]);
            defect = defect.max((d - lambda).abs());
        }
    }

    Ok(VerifyOutcome {
        lambda,
        defect,
        n_points: points.len(),
        ok: defect <= tol,
    })
}

pub fn verify_report_file(path: &Path, tol: f64) -> Result<VerifyOutcome> {
    let text = fs::read_to_string(path)?;
    verify_report(&text, tol)
}
