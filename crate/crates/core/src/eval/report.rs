use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::ttest::{paired_ttest, Verdict};
use super::{chunk_losses, mean_loss, position_means};
use crate::error::{KerpleError, Result};
use crate::kernel::Variant;
use crate::model::{Model, ModelConfig};
use crate::plot::LineChart;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub lengths: Vec<usize>,
    /// Variant every other variant is tested against.
    pub reference: Variant,
    pub alpha: f64,
    /// Windowed baselines of the reference variant; windows not shorter
    /// than an evaluation length are skipped for that length.
    pub windows: Vec<usize>,
}

impl EvalOptions {
    pub fn new(lengths: Vec<usize>) -> Self {
        Self {
            lengths,
            reference: Variant::Log,
            alpha: 0.05,
            windows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PplRecord {
    pub variant: Variant,
    pub length: usize,
    pub seed: u64,
    pub ppl: f64,
}

/// Perplexity over seeds at one length. `std` uses `n - 1` and is 0 for a
/// single seed; `stderr = std / √n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthSummary {
    pub variant: Variant,
    pub length: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

/// Seed-averaged loss at each position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionCurve {
    pub label: String,
    pub variant: Variant,
    pub window: Option<usize>,
    pub length: usize,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TTestEntry {
    pub reference: Variant,
    pub variant: Variant,
    pub length: usize,
    pub t: f64,
    pub p: f64,
    pub verdict: Verdict,
    /// Significant and the reference has the lower mean perplexity.
    pub dagger: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub lengths: Vec<usize>,
    pub reference: Variant,
    pub alpha: f64,
    pub records: Vec<PplRecord>,
    pub summaries: Vec<LengthSummary>,
    pub positions: Vec<PositionCurve>,
    pub ttests: Vec<TTestEntry>,
}

/// FNV-1a over the config with `variant` and `seed` blanked, so runs that
/// differ only in those two fields share a hash.
pub fn config_hash(config: &ModelConfig) -> String {
    let normalized = ModelConfig {
        variant: Variant::Log,
        seed: 0,
        ..config.clone()
    };
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in normalized.to_toml_string().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluates every `(variant, seed)` model at every length.
///
/// Each model is identified by its own config's `variant` and `seed`. All
/// models must share one config up to those two fields. With fewer than two
/// seeds no t-tests are run.
pub fn build_report(
    variants: &[Variant],
    seeds: &[u64],
    models: &[Model],
    corpus: &[usize],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if variants.is_empty() || seeds.is_empty() || opts.lengths.is_empty() {
        return Err(KerpleError::InvalidArgument("need at least one variant, seed and length".into()));
    }
    let run_tests = seeds.len() >= 2 && variants.len() >= 2;
    if run_tests && !variants.contains(&opts.reference) {
        return Err(KerpleError::InvalidArgument(format!(
            "reference variant {} is not among the evaluated variants",
            opts.reference
        )));
    }
    let mut grid: Vec<Vec<&Model>> = Vec::new();
    for &v in variants {
        let mut row = Vec::new();
        for &s in seeds {
            let mut found = models.iter().filter(|m| m.config().variant == v && m.config().seed == s);
            let m = found.next().ok_or_else(|| KerpleError::MissingCheckpoint {
                variant: v.to_string(),
                seed: s,
            })?;
            if found.next().is_some() {
                return Err(KerpleError::InvalidArgument(format!("two checkpoints for {v}, seed {s}")));
            }
            row.push(m);
        }
        grid.push(row);
    }
    let hash = config_hash(grid[0][0].config());
    if let Some(m) = grid.iter().flatten().find(|m| config_hash(m.config()) != hash) {
        return Err(KerpleError::Config(format!(
            "checkpoint {} seed {} was trained under a different config",
            m.config().variant,
            m.config().seed
        )));
    }

    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut positions = Vec::new();
    let mut ttests = Vec::new();
    for &length in &opts.lengths {
        let mut ppl_by_variant = Vec::with_capacity(variants.len());
        for (vi, &variant) in variants.iter().enumerate() {
            let mut ppls = Vec::with_capacity(seeds.len());
            let mut curve = vec![0.0; length];
            for (si, model) in grid[vi].iter().enumerate() {
                let losses = chunk_losses(model, corpus, length, None)?;
                let ppl = mean_loss(&losses).exp();
                records.push(PplRecord {
                    variant,
                    length,
                    seed: seeds[si],
                    ppl,
                });
                ppls.push(ppl);
                for (c, l) in curve.iter_mut().zip(position_means(&losses)) {
                    *c += l / seeds.len() as f64;
                }
            }
            let (mean, std) = mean_std(&ppls);
            summaries.push(LengthSummary {
                variant,
                length,
                mean,
                std,
                stderr: std / (ppls.len() as f64).sqrt(),
            });
            positions.push(PositionCurve {
                label: variant.to_string(),
                variant,
                window: None,
                length,
                losses: curve,
            });
            if variant == opts.reference {
                for &w in opts.windows.iter().filter(|&&w| w < length) {
                    let mut curve = vec![0.0; length];
                    for model in &grid[vi] {
                        for (c, l) in curve.iter_mut().zip(position_means(&chunk_losses(model, corpus, length, Some(w))?)) {
                            *c += l / seeds.len() as f64;
                        }
                    }
                    positions.push(PositionCurve {
                        label: format!("{variant}-windowed@{w}"),
                        variant,
                        window: Some(w),
                        length,
                        losses: curve,
                    });
                }
            }
            ppl_by_variant.push(ppls);
        }
        if run_tests {
            let ri = variants.iter().position(|&v| v == opts.reference).expect("checked above");
            let reference = &ppl_by_variant[ri];
            for (vi, &variant) in variants.iter().enumerate() {
                if vi == ri {
                    continue;
                }
                let r = paired_ttest(reference, &ppl_by_variant[vi], opts.alpha)?;
                ttests.push(TTestEntry {
                    reference: opts.reference,
                    variant,
                    length,
                    t: r.t,
                    p: r.p,
                    verdict: r.verdict,
                    dagger: r.verdict == Verdict::Significant && r.mean_diff < 0.0,
                });
            }
        }
    }
    Ok(EvalReport {
        config_hash: hash,
        variants: variants.to_vec(),
        seeds: seeds.to_vec(),
        lengths: opts.lengths.clone(),
        reference: opts.reference,
        alpha: opts.alpha,
        records,
        summaries,
        positions,
        ttests,
    })
}

impl EvalReport {
    pub fn summary(&self, variant: Variant, length: usize) -> Option<&LengthSummary> {
        self.summaries.iter().find(|s| s.variant == variant && s.length == length)
    }

    pub fn ttest(&self, variant: Variant, length: usize) -> Option<&TTestEntry> {
        self.ttests.iter().find(|t| t.variant == variant && t.length == length)
    }

    /// One t-test per (non-reference variant, length), each with `p ∈ [0, 1]`.
    pub fn dagger_table_complete(&self) -> bool {
        self.variants.iter().filter(|&&v| v != self.reference).all(|&v| {
            self.lengths
                .iter()
                .all(|&l| self.ttest(v, l).is_some_and(|t| (0.0..=1.0).contains(&t.p)))
        })
    }

    /// Plain-text table: one row per length, `mean ± std` per variant, with
    /// `†` where the reference is significantly better.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>8}", "length");
        for v in &self.variants {
            let _ = write!(out, " {:>22}", v.name());
        }
        out.push('\n');
        for &l in &self.lengths {
            let _ = write!(out, "{l:>8}");
            for &v in &self.variants {
                let cell = match self.summary(v, l) {
                    Some(s) => {
                        let mark = if self.ttest(v, l).is_some_and(|t| t.dagger) { "†" } else { "" };
                        format!("{:.3} ± {:.3}{mark}", s.mean, s.std)
                    }
                    None => "-".into(),
                };
                let _ = write!(out, " {cell:>22}");
            }
            out.push('\n');
        }
        out
    }

    /// Position-wise loss chart for one evaluation length.
    pub fn positions_svg(&self, length: usize) -> String {
        let mut chart = LineChart::new(format!("mean loss by position, L = {length}"), "position", "loss (nats)");
        for c in self.positions.iter().filter(|c| c.length == length) {
            chart.add_series(&c.label, c.losses.iter().enumerate().map(|(i, &l)| (i as f64, l)).collect());
        }
        chart.to_svg()
    }
}

/// Columns: `variant,length,seed,ppl`.
pub fn write_report_csv<W: Write>(mut w: W, report: &EvalReport) -> Result<()> {
    writeln!(w, "variant,length,seed,ppl")?;
    for r in &report.records {
        writeln!(w, "{},{},{},{}", r.variant, r.length, r.seed, r.ppl)?;
    }
    Ok(())
}

/// Columns: `variant,length,position,mean_loss`; windowed curves carry a
/// `<variant>-windowed@<W>` label.
pub fn write_positions_csv<W: Write>(mut w: W, report: &EvalReport) -> Result<()> {
    writeln!(w, "variant,length,position,mean_loss")?;
    for c in &report.positions {
        for (p, l) in c.losses.iter().enumerate() {
            writeln!(w, "{},{},{p},{l}", c.label, c.length)?;
        }
    }
    Ok(())
}

/// Columns: `reference,variant,length,t,p,verdict,dagger`.
pub fn write_ttest_csv<W: Write>(mut w: W, report: &EvalReport) -> Result<()> {
    writeln!(w, "reference,variant,length,t,p,verdict,dagger")?;
    for t in &report.ttests {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            t.reference,
            t.variant,
            t.length,
            t.t,
            t.p,
            t.verdict.name(),
            t.dagger
        )?;
    }
    Ok(())
}

/// Columns: `variant,length,mean_ppl,std,stderr`.
pub fn write_summary_csv<W: Write>(mut w: W, report: &EvalReport) -> Result<()> {
    writeln!(w, "variant,length,mean_ppl,std,stderr")?;
    for s in &report.summaries {
        writeln!(w, "{},{},{},{},{}", s.variant, s.length, s.mean, s.std, s.stderr)?;
    }
    Ok(())
}
