//! Cost function backed by a child process: bitstrings go to its standard
//! input one per line, one cost per line comes back on standard output.

use std::io::Write;
use std::process::{Command, Stdio};

use symtn::geo::CostFunction;
use symtn::{Bitstring, Error, Result};

#[derive(Clone, Debug)]
pub struct ExternalCost {
    /// Run through `sh -c`.
    pub command: String,
}

impl CostFunction for ExternalCost {
    fn evaluate(&self, xs: &[Bitstring]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Cost(format!("cannot start {:?}: {e}", self.command)))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let input = crate::format::bitstring_lines(xs);
        // Feed stdin from a thread so a child that streams its answers cannot
        // deadlock against a full pipe.
        let feeder = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let out = child.wait_with_output().map_err(|e| Error::Cost(format!("cost command failed: {e}")))?;
        let fed = feeder.join().expect("stdin feeder panicked");
        if !out.status.success() {
            return Err(Error::Cost(format!("cost command exited with {}", out.status)));
        }
        fed.map_err(|e| Error::Cost(format!("cannot write to cost command: {e}")))?;
        let text = String::from_utf8(out.stdout).map_err(|_| Error::Cost("cost output is not UTF-8".into()))?;
        let costs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| Error::Cost(format!("bad cost line {l:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if costs.len() != xs.len() {
            return Err(Error::Cost(format!("cost command returned {} values for {} bitstrings", costs.len(), xs.len())));
        }
        Ok(costs)
    }
}
