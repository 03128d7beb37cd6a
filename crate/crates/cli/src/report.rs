//! Side-by-side effects table over several fitted models.
//!
//! Every parameter of every fit lands somewhere: the named effect rows, or
//! the per-model "other parameters" block.

use std::fmt::Write as _;

use coopnet::fit::FitReport;
use coopnet::postfit::{IccReport, PosteriorSummary};
use coopnet::sampler::ParamSummary;
use serde::{Deserialize, Serialize};

/// Table rows: label and the draw-parameter name behind it.
pub const EFFECT_ROWS: [(&str, &str); 4] = [
    ("Individual overlap", "b_overlap_i"),
    ("Village overlap", "b_overlap_V"),
    ("Community size (per 100)", "b_size_V"),
    ("Village random effect SD", "sigma_village"),
];

/// Only shown when some model includes it.
const OPTIONAL_ROW: &str = "b_size_V";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub estimate: f64,
    pub ci89_lower: f64,
    pub ci89_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCell {
    pub effect: String,
    pub parameter: String,
    pub value: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelColumn {
    pub label: String,
    pub family: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub n_rows: usize,
    pub n_villages: usize,
    pub failed: bool,
    pub n_divergent: usize,
    pub n_iterations: usize,
    pub effects: Vec<EffectCell>,
    pub icc: Option<PosteriorSummary>,
    pub other_parameters: Vec<ParamSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub interval_level: f64,
    pub estimate: String,
    pub models: Vec<ModelColumn>,
    pub notes: Vec<String>,
}

fn cell(p: &ParamSummary) -> Cell {
    Cell {
        estimate: p.mean,
        ci89_lower: p.ci89_lower,
        ci89_upper: p.ci89_upper,
    }
}

pub fn build(fits: &[FitReport], iccs: &[IccReport]) -> Report {
    let mut notes: Vec<String> = Vec::new();
    let mut push_note = |n: &str| {
        if !notes.iter().any(|x| x == n) {
            notes.push(n.to_string());
        }
    };
    let models = fits
        .iter()
        .map(|fit| {
            let effects = EFFECT_ROWS
                .iter()
                .map(|(effect, parameter)| EffectCell {
                    effect: effect.to_string(),
                    parameter: parameter.to_string(),
                    value: fit.params.iter().find(|p| p.name == *parameter).map(cell),
                })
                .collect();
            let other_parameters = fit
                .params
                .iter()
                .filter(|p| !EFFECT_ROWS.iter().any(|(_, name)| *name == p.name))
                .cloned()
                .collect();
            let icc = iccs.iter().find(|i| i.label == fit.label);
            for n in fit.notes.iter().chain(icc.into_iter().flat_map(|i| &i.notes)) {
                push_note(n);
            }
            ModelColumn {
                label: fit.label.clone(),
                family: fit.model.family.label().to_string(),
                outcome: fit.model.outcome.to_string(),
                covariates: fit.model.fixed_effects.iter().map(|c| c.name().to_string()).collect(),
                n_rows: fit.n_rows,
                n_villages: fit.villages.len(),
                failed: fit.failed,
                n_divergent: fit.n_divergent,
                n_iterations: fit.config.n_chains * fit.config.n_draws,
                effects,
                icc: icc.map(|i| i.icc),
                other_parameters,
            }
        })
        .collect();
    Report {
        title: "Effects on cooperation".into(),
        interval_level: 0.89,
        estimate: "posterior mean".into(),
        models,
        notes,
    }
}

/// Two decimals, without a negative sign on values that round to zero.
fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

const LABEL_W: usize = 26;
const COL_W: usize = 9;

fn triple(out: &mut String, a: &str, b: &str, c: &str) {
    let _ = write!(out, "{a:>COL_W$}{b:>COL_W$}{c:>COL_W$}  ");
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} ({}, {:.0}% credible intervals)\n",
        report.title,
        report.estimate,
        100.0 * report.interval_level
    );
    let block = 3 * COL_W + 2;
    let _ = write!(out, "{:LABEL_W$}", "");
    for m in &report.models {
        let _ = write!(out, "{:>w$}  ", m.label, w = block - 2);
    }
    out.push('\n');
    let _ = write!(out, "{:LABEL_W$}", "Effect");
    for _ in &report.models {
        triple(&mut out, "Est.", "L89", "U89");
    }
    out.push('\n');

    let show_optional = report
        .models
        .iter()
        .any(|m| m.effects.iter().any(|e| e.parameter == OPTIONAL_ROW && e.value.is_some()));
    for (row, (effect, parameter)) in EFFECT_ROWS.iter().enumerate() {
        if *parameter == OPTIONAL_ROW && !show_optional {
            continue;
        }
        let _ = write!(out, "{effect:LABEL_W$}");
        for m in &report.models {
            match &m.effects[row].value {
                Some(c) => triple(&mut out, &num(c.estimate), &num(c.ci89_lower), &num(c.ci89_upper)),
                None => triple(&mut out, "-", "", ""),
            }
        }
        out.push('\n');
    }
    if report.models.iter().any(|m| m.icc.is_some()) {
        let _ = write!(out, "{:LABEL_W$}", "ICC (median)");
        for m in &report.models {
            match &m.icc {
                Some(i) => triple(&mut out, &pct(i.median), &pct(i.ci89_lower), &pct(i.ci89_upper)),
                None => triple(&mut out, "-", "", ""),
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "{:LABEL_W$}", "N (villages)");
    for m in &report.models {
        let n = format!("{} ({})", m.n_rows, m.n_villages);
        let _ = write!(out, "{n:>w$}  ", w = block - 2);
    }
    out.push('\n');

    out.push_str("\nOther parameters\n");
    for m in &report.models {
        let _ = writeln!(out, "  {} ({}, outcome {})", m.label, m.family, m.outcome);
        for p in &m.other_parameters {
            let _ = write!(out, "    {:LABEL_W$}", p.name);
            triple(&mut out, &num(p.mean), &num(p.ci89_lower), &num(p.ci89_upper));
            let rhat = p.rhat.map_or("-".to_string(), |r| format!("{r:.3}"));
            let ess = p.ess.map_or("-".to_string(), |e| format!("{e:.0}"));
            let _ = writeln!(out, "R-hat {rhat:>6}  ESS {ess:>6}");
        }
    }

    out.push_str("\nSampler\n");
    for m in &report.models {
        let _ = writeln!(
            out,
            "  {}: {} of {} post-warmup iterations divergent{}",
            m.label,
            m.n_divergent,
            m.n_iterations,
            if m.failed { "; FIT FLAGGED AS FAILED" } else { "" }
        );
    }
    if !report.notes.is_empty() {
        out.push_str("\nNotes\n");
        for n in &report.notes {
            let _ = writeln!(out, "  - {n}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_to_zero_drops_the_sign() {
        assert_eq!(num(-0.001), "0.00");
        assert_eq!(num(-0.006), "-0.01");
        assert_eq!(pct(0.0217), "2.2%");
    }
}
