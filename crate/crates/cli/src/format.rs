//! On-disk formats: instance and plan documents (JSON with 17 significant
//! digits), trace CSV and gap reports.

use std::fmt::Write as _;
use std::path::Path;

use eot::{EotError, GapReport, PlanTensor, Problem, SolveResult};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::Failure;

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

fn vector(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|&x| num(x)).collect();
    format!("[{}]", items.join(", "))
}

fn tensor(t: &Array3<f64>) -> String {
    let mats: Vec<String> = t
        .outer_iter()
        .map(|m| {
            let rows: Vec<String> = m.outer_iter().map(|r| format!("      {}", vector(&r.to_vec()))).collect();
            format!("    [\n{}\n    ]", rows.join(",\n"))
        })
        .collect();
    format!("[\n{}\n  ]", mats.join(",\n"))
}

fn to_array3(rows: Vec<Vec<Vec<f64>>>, agents: usize, n: usize, what: &str) -> Result<Array3<f64>, Failure> {
    let ok = rows.len() == agents && rows.iter().all(|m| m.len() == n && m.iter().all(|r| r.len() == n));
    if !ok {
        return Err(Failure::config(format!("{what} must hold {agents} matrices of size {n}x{n}")));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().flatten().collect();
    Ok(Array3::from_shape_vec((agents, n, n), flat).expect("shape checked"))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))
}

pub fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

#[derive(Deserialize)]
struct InstanceDoc {
    n: usize,
    #[serde(rename = "N")]
    agents: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    costs: Vec<Vec<Vec<f64>>>,
}

pub fn instance_to_string(p: &Problem) -> String {
    format!(
        "{{\n  \"n\": {},\n  \"N\": {},\n  \"a\": {},\n  \"b\": {},\n  \"costs\": {}\n}}\n",
        p.n(),
        p.agents(),
        vector(p.a()),
        vector(p.b()),
        tensor(p.costs())
    )
}

pub fn load_instance(path: &Path) -> Result<Problem, Failure> {
    let doc: InstanceDoc = serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::config(format!("malformed instance {}: {e}", path.display())))?;
    if doc.a.len() != doc.n || doc.b.len() != doc.n {
        return Err(Failure::config(format!("a and b must have length n = {}", doc.n)));
    }
    let costs = to_array3(doc.costs, doc.agents, doc.n, "costs")?;
    eot::validate_problem(doc.a, doc.b, costs).map_err(Failure::from)
}

#[derive(Deserialize)]
struct PlanDoc {
    lambda: Vec<f64>,
    plans: Vec<Vec<Vec<f64>>>,
}

pub fn plan_to_string(result: &SolveResult<f64>) -> String {
    format!(
        "{{\n  \"algorithm\": \"{}\",\n  \"lambda\": {},\n  \"plans\": {}\n}}\n",
        result.algorithm,
        vector(&result.lambda_hat),
        tensor(result.plan.pi())
    )
}

/// Plans and weights from a plan document, sized against `problem`.
pub fn load_plan(path: &Path, problem: &Problem) -> Result<(PlanTensor<f64>, Vec<f64>), Failure> {
    let doc: PlanDoc = serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::config(format!("malformed plan file {}: {e}", path.display())))?;
    let pi = to_array3(doc.plans, problem.agents(), problem.n(), "plans")?;
    Ok((PlanTensor::unchecked(pi), doc.lambda))
}

pub fn load_lambda(path: &Path) -> Result<Vec<f64>, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::config(format!("malformed lambda file {}: {e}", path.display())))
}

/// Trace CSV: fixed columns, absent quantities left empty.
pub fn trace_csv(result: &SolveResult<f64>, agents: usize) -> String {
    let mut out = String::from("iter,time_ms,F,col_residual_l1,lambda_step_l2,lambda_y_gap_l2");
    for k in 1..=agents {
        let _ = write!(out, ",cost_agent_{k}");
    }
    out.push_str(",hamiltonian\n");
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for r in &result.trace {
        let _ = write!(
            out,
            "{},{:.3},{},{},{},{}",
            r.iter,
            r.time_ms,
            num(r.objective),
            num(r.col_residual),
            num(r.lambda_step),
            opt(r.lambda_y_gap)
        );
        for c in &r.agent_costs {
            let _ = write!(out, ",{}", num(*c));
        }
        let _ = writeln!(out, ",{}", opt(r.hamiltonian));
    }
    out
}

#[derive(Serialize)]
pub struct GapDoc {
    pub upper: f64,
    pub lower: f64,
    pub gap: f64,
    pub spread: f64,
    pub worst_agent: usize,
    pub agent_costs: Vec<f64>,
    pub epsilon: f64,
    pub certified: bool,
}

impl GapDoc {
    pub fn new(report: &GapReport<f64>, epsilon: f64) -> Self {
        GapDoc {
            upper: report.upper,
            lower: report.lower,
            gap: report.gap,
            spread: report.spread,
            worst_agent: report.worst_agent + 1,
            agent_costs: report.agent_costs.clone(),
            epsilon,
            certified: report.certifies(epsilon),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gap report serializes") + "\n"
    }
}

impl From<EotError> for Failure {
    fn from(e: EotError) -> Self {
        match e {
            EotError::NonFinite { .. } => Failure { code: 3, message: e.to_string() },
            other => Failure::config(other.to_string()),
        }
    }
}
