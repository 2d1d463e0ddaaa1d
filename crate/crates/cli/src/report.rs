//! Report serialization: JSON, CSV and the console summary.

use std::fmt::Write as _;
use std::io::Write;

use coalition_core::engine::{AttributionVector, DecompositionReport, FractionalFlag, GradualCertificate};
use coalition_core::estimators::QoISpec;
use coalition_core::lattice::{SetFunctionTable, SubsetMask};
use coalition_core::ring::{DkRejection, RingValue};
use serde_json::{json, Value};

/// Top-level report keys; `attribution` is present for scalar QoIs only.
pub const REPORT_KEYS: [&str; 6] = ["meta", "phi", "psi", "ratios", "diagnostics", "attribution"];

fn value_json(v: &RingValue) -> Value {
    match v {
        RingValue::Scalar(x) => json!(x),
        RingValue::HadamardMatrix(m) => json!(m.to_rows()),
    }
}

fn subset_json(a: SubsetMask) -> Value {
    json!(a.indices())
}

fn table_json(values: &SetFunctionTable<RingValue>, errors: &SetFunctionTable<RingValue>) -> Value {
    values
        .iter()
        .zip(errors.entries())
        .map(|((a, v), se)| json!({"subset": subset_json(a), "value": value_json(v), "std_error": value_json(se)}))
        .collect()
}

fn qoi_label(qoi: &QoISpec) -> String {
    match qoi {
        QoISpec::Variance { output } => format!("variance (output {output})"),
        QoISpec::Covariance { p, q } => format!("covariance (outputs {p}, {q})"),
        QoISpec::CovarianceMatrix => "covariance matrix".into(),
        QoISpec::MeanMmd(_) => "mean MMD (RBF kernel)".into(),
    }
}

fn fractional_json(flag: &FractionalFlag) -> Value {
    match flag {
        FractionalFlag::Holds => json!({"status": "holds"}),
        FractionalFlag::Violated(subsets) => json!({
            "status": "violated",
            "subsets": subsets.iter().map(|&a| subset_json(a)).collect::<Vec<_>>(),
        }),
        FractionalFlag::NotApplicable(reason) => json!({"status": "not_applicable", "reason": reason}),
    }
}

fn gradual_json(cert: &GradualCertificate) -> Value {
    match cert {
        GradualCertificate::Certified { conditioning_function } => {
            json!({"certified": true, "conditioning_function": conditioning_function})
        }
        GradualCertificate::NotCertified { reason } => json!({"certified": false, "reason": reason}),
    }
}

fn dk_json(report: &DecompositionReport) -> Value {
    match &report.dk_membership {
        None => Value::Null,
        Some(Ok(m)) => json!({"member": true, "diagonal_sign": m.diag_sign, "eigenvalues": m.eigenvalues}),
        Some(Err(rejection)) => {
            let reason = match rejection {
                DkRejection::ZeroDiagonal { .. } => "zero_diagonal",
                DkRejection::MixedDiagonalSigns { .. } => "mixed_diagonal_signs",
                DkRejection::Indefinite { .. } => "indefinite",
            };
            json!({"member": false, "reason": reason, "detail": rejection.to_string()})
        }
    }
}

fn attribution_json(a: &AttributionVector) -> Value {
    json!({"method": "shapley", "values": a.values, "std_errors": a.std_errors})
}

/// The full report as a JSON value. Contains nothing that varies between
/// reruns with the same configuration.
pub fn report_json(report: &DecompositionReport, echo: &Value) -> Value {
    let meta = json!({
        "config": echo,
        "dimension": report.dim(),
        "qoi": qoi_label(&report.meta.qoi),
        "budget": report.meta.budget.map(|b| json!({
            "n_outer": b.n_outer, "n_inner": b.n_inner, "n_ref": b.n_ref, "seed": b.seed,
        })),
        "bandwidth": report.meta.bandwidth,
        "std_error_propagation": "approximate: subset estimates treated as independent",
        "version": env!("CARGO_PKG_VERSION"),
    });
    let ratios = report.ratios.as_ref().map(|ratios| {
        report
            .psi
            .iter()
            .zip(ratios)
            .map(|((a, _), r)| json!({"subset": subset_json(a), "value": r.value, "std_error": r.std_error}))
            .collect::<Vec<_>>()
    });
    let diagnostics = json!({
        "total": value_json(&report.total),
        "sum_residual": value_json(&report.sum_residual),
        "sum_tolerance": report.sum_tolerance,
        "sum_identity_holds": report.sum_identity_holds(),
        "fractional": fractional_json(&report.fractional),
        "gradual": gradual_json(&report.gradual),
        "degenerate_total": report.degenerate,
        "dk_membership": dk_json(report),
    });
    let mut out = serde_json::Map::new();
    out.insert("meta".into(), meta);
    out.insert("phi".into(), table_json(&report.phi, &report.phi_std_errors));
    out.insert("psi".into(), table_json(&report.psi, &report.psi_std_errors));
    out.insert("ratios".into(), json!(ratios));
    out.insert("diagnostics".into(), diagnostics);
    if let Some(a) = report.attribution() {
        out.insert("attribution".into(), attribution_json(&a));
    }
    Value::Object(out)
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn cell_labels(k: usize) -> Vec<String> {
    (1..=k)
        .flat_map(|i| (i..=k).map(move |j| format!("_{i}_{j}")))
        .collect()
}

fn cells(v: &RingValue) -> Vec<String> {
    match v {
        RingValue::Scalar(x) => vec![fmt_float(*x)],
        RingValue::HadamardMatrix(m) => m.upper().iter().map(|&x| fmt_float(x)).collect(),
    }
}

/// One row per subset: `subset, size, phi, phi_se, psi, psi_se, ratio`.
///
/// Matrix-valued QoIs get one column per upper-triangular entry, e.g. `phi_1_2`.
pub fn write_csv<W: Write>(report: &DecompositionReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let suffixes = match report.total.as_matrix() {
        Some(m) => cell_labels(m.dim()),
        None => vec![String::new()],
    };
    let mut header = vec!["subset".to_string(), "size".to_string()];
    for name in ["phi", "phi_se", "psi", "psi_se"] {
        header.extend(suffixes.iter().map(|s| format!("{name}{s}")));
    }
    header.push("ratio".into());
    w.write_record(&header)?;
    for (i, (a, phi)) in report.phi.iter().enumerate() {
        let mut row = vec![a.to_string(), a.cardinality().to_string()];
        row.extend(cells(phi));
        row.extend(cells(&report.phi_std_errors.entries()[i]));
        row.extend(cells(&report.psi.entries()[i]));
        row.extend(cells(&report.psi_std_errors.entries()[i]));
        row.push(
            report
                .ratios
                .as_ref()
                .map_or_else(String::new, |r| fmt_float(r[i].value)),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_shapley_csv<W: Write>(attribution: &AttributionVector, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["input", "shapley", "std_error"])?;
    for (i, v) in attribution.values.iter().enumerate() {
        let se = attribution
            .std_errors
            .as_ref()
            .map_or_else(String::new, |s| fmt_float(s[i]));
        w.write_record([(i + 1).to_string(), fmt_float(*v), se])?;
    }
    w.flush()?;
    Ok(())
}

fn short(v: &RingValue) -> String {
    match v {
        RingValue::Scalar(x) => format!("{x:.6}"),
        RingValue::HadamardMatrix(m) => {
            let rows: Vec<String> = m
                .to_rows()
                .iter()
                .map(|r| r.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" "))
                .collect();
            format!("[{}]", rows.join("; "))
        }
    }
}

/// Human-readable summary table.
pub fn summary(report: &DecompositionReport) -> String {
    let mut s = String::new();
    let model = report.meta.model.as_ref().map_or("table", |m| m.name());
    let _ = writeln!(
        s,
        "model: {model}   qoi: {}   d = {}",
        qoi_label(&report.meta.qoi),
        report.dim()
    );
    if let Some(h) = report.meta.bandwidth {
        let _ = writeln!(s, "kernel bandwidth: {h:.6}");
    }
    let _ = writeln!(
        s,
        "{:<12} {:>16} {:>12} {:>16} {:>12} {:>10}",
        "subset", "phi", "se", "psi", "se", "ratio"
    );
    for (i, (a, phi)) in report.phi.iter().enumerate() {
        let ratio = report
            .ratios
            .as_ref()
            .map_or_else(|| "-".to_string(), |r| format!("{:.4}", r[i].value));
        let label = if a.is_empty() {
            "{}".to_string()
        } else {
            format!("{{{a}}}")
        };
        let _ = writeln!(
            s,
            "{:<12} {:>16} {:>12} {:>16} {:>12} {:>10}",
            label,
            short(phi),
            short(&report.phi_std_errors.entries()[i]),
            short(&report.psi.entries()[i]),
            short(&report.psi_std_errors.entries()[i]),
            ratio
        );
    }
    let fractional = match &report.fractional {
        FractionalFlag::Holds => "holds".to_string(),
        FractionalFlag::Violated(v) => {
            format!(
                "violated at {}",
                v.iter().map(|a| format!("{{{a}}}")).collect::<Vec<_>>().join(" ")
            )
        }
        FractionalFlag::NotApplicable(reason) => format!("not applicable ({reason})"),
    };
    let _ = writeln!(
        s,
        "sum identity: {} (|residual| = {:.3e}, tolerance {:.3e})",
        if report.sum_identity_holds() { "ok" } else { "FAILED" },
        report.sum_residual.max_abs(),
        report.sum_tolerance
    );
    let _ = writeln!(s, "fractional: {fractional}");
    if let Some(a) = report.attribution() {
        let values: Vec<String> = a.values.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "shapley: {}", values.join(", "));
    }
    let _ = writeln!(s, "wall time: {:.3} s", report.meta.wall_time.as_secs_f64());
    s
}
