//! The `quantize` subcommand: truncate an `S2T1` tensor file in plain FP8
//! or S2FP8, write the result, and report the statistics and error.

use crate::CliError;
use s2fp8_core::codec::{self, S2Stats};
use s2fp8_core::formats::{self, FP8};
use s2fp8_core::tensor;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizeMode {
    Fp8,
    S2fp8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Container {
    S2t1,
    S2f8,
}

#[derive(Debug, Clone)]
pub struct QuantizeReport {
    pub stats: S2Stats,
    pub elements: usize,
    /// Nonzero inputs that came back zero.
    pub flushed: usize,
    /// Max over nonzero inputs of `|out - in| / |in|`.
    pub max_rel_err: f64,
}

impl QuantizeReport {
    pub fn render(&self) -> String {
        format!(
            "mu = {}\nm = {}\nalpha = {}\nbeta = {}\nn_nonzero = {}\n\
             flushed_to_zero = {} / {}\nmax_rel_err = {}\n",
            self.stats.log2_mean,
            self.stats.log2_max,
            self.stats.squeeze,
            self.stats.shift,
            self.stats.n_nonzero,
            self.flushed,
            self.elements,
            self.max_rel_err
        )
    }
}

pub fn run_quantize(
    input: &Path,
    mode: QuantizeMode,
    target_max: f64,
    out: &Path,
    container: Container,
) -> Result<QuantizeReport, CliError> {
    if container == Container::S2f8 && mode != QuantizeMode::S2fp8 {
        return Err(CliError::config(
            "the s2f8 container requires --mode s2fp8",
        ));
    }
    let x = tensor::read_s2t1_file(input)
        .map_err(|e| CliError::io(format!("{}: {e}", input.display())))?;
    let stats = codec::compute_statistics(&x, target_max)?;
    let truncated = match mode {
        QuantizeMode::Fp8 => formats::truncate_tensor(&x, FP8)?,
        QuantizeMode::S2fp8 => codec::s2fp8_truncate(&x, target_max)?,
    };
    match container {
        Container::S2t1 => tensor::write_s2t1_file(out, &truncated)
            .map_err(|e| CliError::io(format!("{}: {e}", out.display())))?,
        Container::S2f8 => {
            let encoded = codec::encode_with_stats(&x, &stats)?;
            codec::write_s2f8_file(out, &encoded)
                .map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
        }
    }

    let mut flushed = 0usize;
    let mut max_rel_err = 0.0f64;
    for (&a, &b) in x.data().iter().zip(truncated.data()) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            flushed += 1;
        }
        let rel = ((b as f64) - (a as f64)).abs() / (a as f64).abs();
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(QuantizeReport {
        stats,
        elements: x.len(),
        flushed,
        max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use s2fp8_core::Tensor;

    fn write_input(dir: &Path, values: &[f32]) -> std::path::PathBuf {
        let p = dir.join("in.s2t1");
        let t = Tensor::new(vec![values.len()], values.to_vec()).unwrap();
        tensor::write_s2t1_file(&p, &t).unwrap();
        p
    }

    #[test]
    fn exact_powers_report_zero_error() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_input(dir.path(), &[1.0, 4.0]);
        let out = dir.path().join("out.s2t1");
        let report =
            run_quantize(&input, QuantizeMode::S2fp8, 15.0, &out, Container::S2t1).unwrap();
        assert_eq!(report.stats.squeeze, 15.0);
        assert_eq!(report.stats.shift, -15.0);
        assert_eq!(report.flushed, 0);
        assert_eq!(report.max_rel_err, 0.0);
        let back = tensor::read_s2t1_file(&out).unwrap();
        assert_eq!(back.data(), &[1.0, 4.0]);
    }

    #[test]
    fn zero_tensor_reports_nothing_flushed() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_input(dir.path(), &[0.0, 0.0, 0.0]);
        let out = dir.path().join("out.s2t1");
        let report =
            run_quantize(&input, QuantizeMode::Fp8, 15.0, &out, Container::S2t1).unwrap();
        assert_eq!(report.flushed, 0);
        assert_eq!(report.max_rel_err, 0.0);
        let back = tensor::read_s2t1_file(&out).unwrap();
        assert_eq!(back.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn tiny_spectrum_flushes_in_fp8_but_not_s2fp8() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f32> = (0..32)
            .map(|i| (2.0f64.powf(-40.0 + i as f64 * 20.0 / 31.0)) as f32)
            .collect();
        let input = write_input(dir.path(), &values);

        let out = dir.path().join("fp8.s2t1");
        let fp8 = run_quantize(&input, QuantizeMode::Fp8, 15.0, &out, Container::S2t1).unwrap();
        assert_eq!(fp8.flushed, 32);
        assert_eq!(fp8.max_rel_err, 1.0);

        let out = dir.path().join("s2.s2t1");
        let s2 = run_quantize(&input, QuantizeMode::S2fp8, 15.0, &out, Container::S2t1).unwrap();
        assert_eq!(s2.flushed, 0);
        assert!(s2.max_rel_err < 0.1, "max rel err {}", s2.max_rel_err);
    }

    #[test]
    fn s2f8_container_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_input(dir.path(), &[0.37, -12.0, 0.0, 5.5e-3]);
        let out = dir.path().join("out.s2f8");
        run_quantize(&input, QuantizeMode::S2fp8, 15.0, &out, Container::S2f8).unwrap();
        let enc = codec::read_s2f8_file(&out).unwrap();
        let decoded = codec::decode(&enc).unwrap();
        let x = tensor::read_s2t1_file(&input).unwrap();
        let direct = codec::s2fp8_truncate(&x, 15.0).unwrap();
        assert_eq!(
            decoded.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            direct.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn s2f8_container_needs_s2fp8_mode() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_input(dir.path(), &[1.0]);
        let out = dir.path().join("out.s2f8");
        assert!(matches!(
            run_quantize(&input, QuantizeMode::Fp8, 15.0, &out, Container::S2f8),
            Err(CliError::Config(_))
        ));
    }
}
