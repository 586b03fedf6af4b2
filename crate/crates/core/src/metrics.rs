//! SI-SDR, projection SDR and permutation-aligned score reports.

use std::fmt::Write as _;

use itertools::Itertools;

use crate::cxla::{solve_real, RMatrix};
use crate::error::{Error, Result};

/// Scores are clamped to `±MAX_DB`.
pub const MAX_DB: f64 = 100.0;

/// Filter length of the projection SDR used in reports.
pub const DEFAULT_SDR_TAPS: usize = 512;

fn ratio_db(signal: f64, residual: f64) -> f64 {
    if signal == 0.0 {
        return -MAX_DB;
    }
    if residual == 0.0 {
        return MAX_DB;
    }
    (10.0 * (signal / residual).log10()).clamp(-MAX_DB, MAX_DB)
}

fn check_pair(estimate: &[f64], reference: &[f64]) -> Result<()> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if reference.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(())
}

fn energy_of_residual(estimate: &[f64], projection: &[f64]) -> (f64, f64) {
    let signal = projection.iter().map(|p| p * p).sum();
    let residual = projection
        .iter()
        .zip(estimate)
        .map(|(p, e)| (p - e) * (p - e))
        .sum();
    (signal, residual)
}

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(estimate, reference)?;
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    let cross: f64 = estimate.iter().zip(reference).map(|(e, r)| e * r).sum();
    let alpha = cross / ref_energy;
    let projection: Vec<f64> = reference.iter().map(|r| alpha * r).collect();
    let (signal, residual) = energy_of_residual(estimate, &projection);
    Ok(ratio_db(signal, residual))
}

/// SDR after projecting the estimate onto the span of the reference
/// delayed by `0..taps` samples.
pub fn sdr_simple(estimate: &[f64], reference: &[f64], taps: usize) -> Result<f64> {
    check_pair(estimate, reference)?;
    if taps == 0 {
        return Err(Error::InvalidArgument("sdr needs at least one filter tap".into()));
    }
    let n = reference.len();
    let taps = taps.min(n);

    // Gram matrix of the delayed references, G[i][j] = Σ_n r[n−i] r[n−j]
    let mut gram = RMatrix::zeros(taps, taps);
    for j in 0..taps {
        gram[(0, j)] = (j..n).map(|k| reference[k] * reference[k - j]).sum();
    }
    for i in 0..taps - 1 {
        for j in i..taps - 1 {
            gram[(i + 1, j + 1)] = gram[(i, j)] - reference[n - 1 - i] * reference[n - 1 - j];
        }
    }
    for i in 0..taps {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let mut cross = RMatrix::zeros(taps, 1);
    for i in 0..taps {
        cross[(i, 0)] = (i..n).map(|k| estimate[k] * reference[k - i]).sum();
    }
    let coeffs = solve_real(&gram, &cross)?;

    let mut projection = vec![0.0; n];
    for k in 0..taps {
        let a = coeffs[(k, 0)];
        for (p, r) in projection[k..].iter_mut().zip(reference) {
            *p += a * r;
        }
    }
    let (signal, residual) = energy_of_residual(estimate, &projection);
    Ok(ratio_db(signal, residual))
}

/// Drops `edge` samples at both ends of the common prefix of all signals.
pub fn trim_for_scoring(signals: &[&[f64]], edge: usize) -> Vec<Vec<f64>> {
    let len = signals.iter().map(|s| s.len()).min().unwrap_or(0);
    let (start, end) = if len > 2 * edge {
        (edge, len - edge)
    } else {
        (0, len)
    };
    signals.iter().map(|s| s[start..end].to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitResult {
    /// `permutation[j]` is the estimate assigned to reference `j`.
    pub permutation: Vec<usize>,
    /// SI-SDR of each reference under the chosen permutation.
    pub scores: Vec<f64>,
}

impl PitResult {
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Exhaustive search over assignments for the best mean SI-SDR.
pub fn pit_assign(estimates: &[&[f64]], references: &[&[f64]]) -> Result<PitResult> {
    let j = references.len();
    if estimates.len() != j || j == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates for {} references",
            estimates.len(),
            j
        )));
    }
    if j > 4 {
        return Err(Error::InvalidArgument(format!("permutation search over {j} speakers")));
    }
    let mut table = vec![vec![0.0; j]; j];
    for (r, reference) in references.iter().enumerate() {
        for (e, estimate) in estimates.iter().enumerate() {
            table[r][e] = si_sdr(estimate, reference)?;
        }
    }
    let mut best: Option<PitResult> = None;
    for perm in (0..j).permutations(j) {
        let scores: Vec<f64> = perm.iter().enumerate().map(|(r, &e)| table[r][e]).collect();
        let candidate = PitResult {
            permutation: perm,
            scores,
        };
        if best.as_ref().is_none_or(|b| candidate.mean() > b.mean()) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one permutation"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerScore {
    pub si_sdr: f64,
    pub sdr: f64,
    pub input_si_sdr: f64,
    pub input_sdr: f64,
}

impl SpeakerScore {
    pub fn delta_si_sdr(&self) -> f64 {
        self.si_sdr - self.input_si_sdr
    }

    pub fn delta_sdr(&self) -> f64 {
        self.sdr - self.input_sdr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub permutation: Vec<usize>,
    pub speakers: Vec<SpeakerScore>,
}

impl ScoreReport {
    /// Scores `estimates` against `references` after PIT alignment;
    /// `input` is the unprocessed reference-channel mixture.
    pub fn evaluate(estimates: &[&[f64]], references: &[&[f64]], input: &[f64], edge: usize) -> Result<Self> {
        let mut all: Vec<&[f64]> = Vec::with_capacity(2 * references.len() + 1);
        all.extend_from_slice(estimates);
        all.extend_from_slice(references);
        all.push(input);
        let trimmed = trim_for_scoring(&all, edge);
        let j = references.len();
        let est: Vec<&[f64]> = trimmed[..estimates.len()].iter().map(Vec::as_slice).collect();
        let refs: Vec<&[f64]> = trimmed[estimates.len()..estimates.len() + j]
            .iter()
            .map(Vec::as_slice)
            .collect();
        let mixture = trimmed.last().expect("input").as_slice();

        let pit = pit_assign(&est, &refs)?;
        let speakers = refs
            .iter()
            .enumerate()
            .map(|(r, reference)| {
                let chosen = est[pit.permutation[r]];
                Ok(SpeakerScore {
                    si_sdr: pit.scores[r],
                    sdr: sdr_simple(chosen, reference, DEFAULT_SDR_TAPS)?,
                    input_si_sdr: si_sdr(mixture, reference)?,
                    input_sdr: sdr_simple(mixture, reference, DEFAULT_SDR_TAPS)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            permutation: pit.permutation,
            speakers,
        })
    }

    pub fn mean_si_sdr(&self) -> f64 {
        self.speakers.iter().map(|s| s.si_sdr).sum::<f64>() / self.speakers.len() as f64
    }

    pub fn mean_delta_si_sdr(&self) -> f64 {
        self.speakers.iter().map(SpeakerScore::delta_si_sdr).sum::<f64>() / self.speakers.len() as f64
    }

    /// `speaker<TAB>metric<TAB>value_dB`, one record per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (j, s) in self.speakers.iter().enumerate() {
            let rows = [
                ("si_sdr", s.si_sdr),
                ("sdr", s.sdr),
                ("input_si_sdr", s.input_si_sdr),
                ("input_sdr", s.input_sdr),
                ("delta_si_sdr", s.delta_si_sdr()),
                ("delta_sdr", s.delta_sdr()),
            ];
            for (metric, value) in rows {
                writeln!(out, "{}\t{}\t{:.6}", j + 1, metric, value).unwrap();
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let perm = self.permutation.iter().map(|p| (p + 1).to_string()).join(",");
        writeln!(out, "permutation: ({perm})").unwrap();
        writeln!(
            out,
            "{:<8} {:>9} {:>9} {:>10} {:>10} {:>6} {:>6}",
            "speaker", "SI-SDR", "SDR", "dSI-SDR", "dSDR", "PESQ", "STOI"
        )
        .unwrap();
        for (j, s) in self.speakers.iter().enumerate() {
            writeln!(
                out,
                "{:<8} {:>9.2} {:>9.2} {:>10.2} {:>10.2} {:>6} {:>6}",
                j + 1,
                s.si_sdr,
                s.sdr,
                s.delta_si_sdr(),
                s.delta_sdr(),
                "n/a",
                "n/a"
            )
            .unwrap();
        }
        out
    }
}
