//! Machine-readable check reports for `cqed verify`.

use cqed_homodyne::error::SimError;

#[derive(Debug)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
    pub pass: bool,
}

impl CheckResult {
    pub fn new(name: &str, residual: f64, tolerance: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            residual,
            tolerance,
            pass: residual < tolerance,
            detail,
        }
    }
}

pub fn render_table(results: &[CheckResult]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>12} {:>10} {:>6}  detail\n",
        "check", "residual", "tol", "pass"
    ));
    for r in results {
        out.push_str(&format!(
            "{:<28} {:>12.3e} {:>10.1e} {:>6}  {}\n",
            r.name,
            r.residual,
            r.tolerance,
            if r.pass { "ok" } else { "FAIL" },
            r.detail
        ));
    }
    out
}

pub fn render_json(results: &[CheckResult]) -> Result<String, SimError> {
    let items: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "name": r.name,
                "residual": r.residual,
                "tolerance": r.tolerance,
                "pass": r.pass,
                "detail": r.detail,
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "checks": items,
        "all_pass": results.iter().all(|r| r.pass),
    }))
    .map_err(|e| SimError::Config(format!("report serialize: {e}")))
}
