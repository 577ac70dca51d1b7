use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIters,
    /// No progress over the stall window, or the search direction was annihilated.
    Stalled,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIters => "max-iters",
            Status::Stalled => "stalled",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the trace. Iteration `0` is the initial point and has no step data.
/// ASD records the stepsizes of its `L` and `R` half-steps as `alpha` and `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub rel_residual: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub restarted: bool,
    pub rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterRecord>,
    pub status: Status,
    /// Forward applications of the sensing operator (one per matrix sensed).
    pub applies: u64,
    /// Adjoint applications of the sensing operator.
    pub adjoints: u64,
}

impl SolverTrace {
    /// Number of steps taken.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn final_rel_residual(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.rel_residual)
    }

    pub fn final_rel_error(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.rel_error)
    }

    pub fn rel_residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rel_residual).collect()
    }

    pub fn rel_errors(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.rel_error).collect()
    }

    pub const CSV_HEADER: &'static str = "iter,rel_residual,alpha,beta,restarted,rel_error";

    /// CSV with header `iter,rel_residual,alpha,beta,restarted,rel_error`; absent values are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.iter,
                r.rel_residual,
                opt(r.alpha),
                opt(r.beta),
                r.restarted,
                opt(r.rel_error)
            )?;
        }
        Ok(())
    }

    /// One JSON object per iteration.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SolverTrace {
        SolverTrace {
            records: vec![
                IterRecord {
                    iter: 0,
                    rel_residual: 1.0,
                    alpha: None,
                    beta: None,
                    restarted: false,
                    rel_error: Some(0.5),
                },
                IterRecord {
                    iter: 1,
                    rel_residual: 0.25,
                    alpha: Some(1.5),
                    beta: Some(-0.125),
                    restarted: true,
                    rel_error: Some(0.1),
                },
            ],
            status: Status::MaxIters,
            applies: 3,
            adjoints: 1,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "iter,rel_residual,alpha,beta,restarted,rel_error");
        assert_eq!(lines[1], "0,1,,,false,0.5");
        assert_eq!(lines[2], "1,0.25,1.5,-0.125,true,0.1");
    }

    #[test]
    fn jsonl_round_trip() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let back: Vec<IterRecord> =
            String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, t.records);
        assert_eq!(t.iterations(), 1);
    }
}
