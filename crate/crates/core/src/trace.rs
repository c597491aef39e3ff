//! Per-iteration solver history.

use std::io::{self, Write};

/// Residual and objective history of a fixed-point / saddle-point run.
///
/// `wall_clock` (seconds per iteration) is kept in memory for benchmarking
/// but never written to CSV so that output files stay bit-deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixedPointTrace {
    /// Relative primal residual per iteration, >= 0.
    pub primal_res: Vec<f64>,
    /// Relative dual residual per iteration.
    pub dual_res: Vec<f64>,
    /// Objective (or objective surrogate) per iteration.
    pub objective: Vec<f64>,
    /// Seconds spent per iteration.
    pub wall_clock: Vec<f64>,
    /// Set when the run violated a step-size rule or the residuals grew.
    pub unstable: bool,
    pub warnings: Vec<String>,
}

impl FixedPointTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, primal: f64, dual: f64, objective: f64, wall: f64) {
        self.primal_res.push(primal);
        self.dual_res.push(dual);
        self.objective.push(objective);
        self.wall_clock.push(wall);
    }

    pub fn len(&self) -> usize {
        self.primal_res.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primal_res.is_empty()
    }

    /// CSV with header `iter,primal_res,dual_res,objective`, `,` separator,
    /// `.` decimal. Iterations are 1-based.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "iter,primal_res,dual_res,objective")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                i + 1,
                self.primal_res[i],
                self.dual_res[i],
                self.objective[i]
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Parses the CSV produced by [`write_csv`](Self::write_csv).
    pub fn from_csv(text: &str) -> Result<FixedPointTrace, String> {
        let mut trace = FixedPointTrace::new();
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty trace file")?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 4 || cols[0] != "iter" {
            return Err(format!("unexpected trace header: {header}"));
        }
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 4 {
                return Err(format!("line {}: expected 4 columns", n + 2));
            }
            let parse = |s: &str| -> Result<f64, String> {
                s.parse::<f64>().map_err(|e| format!("line {}: {e}", n + 2))
            };
            trace.push(parse(f[1])?, parse(f[2])?, parse(f[3])?, 0.0);
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = FixedPointTrace::new();
        t.push(0.5, 0.25, 1.0, 0.001);
        t.push(0.25, 0.125, 0.5, 0.001);
        let s = t.to_csv_string();
        let u = FixedPointTrace::from_csv(&s).unwrap();
        assert_eq!(u.primal_res, t.primal_res);
        assert_eq!(u.objective, t.objective);
    }
}
