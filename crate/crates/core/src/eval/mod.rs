//! Non-overlapping evaluation of a trained model.
//!
//! A test corpus is cut into disjoint consecutive chunks of `L + 1` tokens;
//! each chunk scores `L` next-token losses. The tail that does not fill a
//! whole chunk is dropped. Losses are in nats and perplexity is `e^loss`.

mod report;
mod ttest;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{KerpleError, Result};
use crate::model::{Batch, Model};

pub use report::{
    build_report, config_hash, write_positions_csv, write_report_csv, write_summary_csv, write_ttest_csv, EvalOptions,
    EvalReport, LengthSummary, PositionCurve, PplRecord, TTestEntry,
};
pub use ttest::{ln_gamma, paired_ttest, regularized_incomplete_beta, student_t_two_sided, TTest, Verdict};

/// Chunks scored per forward pass.
const CHUNKS_PER_BATCH: usize = 8;

/// `floor((n - 1) / L)`: the last token of one chunk is only ever a target.
pub fn chunk_count(corpus_len: usize, eval_len: usize) -> usize {
    if eval_len == 0 {
        return 0;
    }
    corpus_len.saturating_sub(1) / eval_len
}

/// Chunk `i` is `corpus[i·L ..= i·L + L]`.
pub fn chunks(corpus: &[usize], eval_len: usize) -> Result<Vec<&[usize]>> {
    if eval_len == 0 {
        return Err(KerpleError::InvalidArgument("evaluation length must be at least 1".into()));
    }
    let count = chunk_count(corpus.len(), eval_len);
    if count == 0 {
        return Err(KerpleError::CorpusTooShort {
            len: corpus.len(),
            needed: eval_len + 1,
        });
    }
    Ok((0..count).map(|i| &corpus[i * eval_len..=(i + 1) * eval_len]).collect())
}

/// Per-chunk, per-position losses (`chunks x L`). Batches are scored in
/// parallel and reassembled in corpus order.
pub fn chunk_losses(model: &Model, corpus: &[usize], eval_len: usize, window: Option<usize>) -> Result<Array2<f64>> {
    if window == Some(0) {
        return Err(KerpleError::InvalidArgument("window must be at least 1".into()));
    }
    let all = chunks(corpus, eval_len)?;
    let vocab = model.config().vocab_size;
    let parts: Vec<Array2<f64>> = all
        .par_chunks(CHUNKS_PER_BATCH)
        .map(|group| {
            let rows: Vec<Vec<usize>> = group.iter().map(|c| c.to_vec()).collect();
            model.score_batch(&Batch::new(&rows, vocab)?, window)
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((all.len(), eval_len));
    let mut row = 0;
    for part in parts {
        let n = part.nrows();
        out.slice_mut(ndarray::s![row..row + n, ..]).assign(&part);
        row += n;
    }
    Ok(out)
}

/// Mean next-token loss over every scored position, summed in corpus order.
pub fn mean_loss(losses: &Array2<f64>) -> f64 {
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// `exp` of the mean loss over all chunk positions.
pub fn nonoverlap_ppl(model: &Model, corpus: &[usize], eval_len: usize) -> Result<f64> {
    Ok(mean_loss(&chunk_losses(model, corpus, eval_len, None)?).exp())
}

/// Element `p` is the loss at position `p` averaged over chunks.
pub fn positionwise_losses(model: &Model, corpus: &[usize], eval_len: usize) -> Result<Vec<f64>> {
    Ok(position_means(&chunk_losses(model, corpus, eval_len, None)?))
}

/// [`positionwise_losses`] with every query restricted to its `window` most
/// recent keys.
pub fn windowed_baseline(model: &Model, corpus: &[usize], eval_len: usize, window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(KerpleError::InvalidArgument("window must be at least 1".into()));
    }
    Ok(position_means(&chunk_losses(model, corpus, eval_len, Some(window))?))
}

pub fn position_means(losses: &Array2<f64>) -> Vec<f64> {
    let n = losses.nrows() as f64;
    losses.columns().into_iter().map(|c| c.sum() / n).collect()
}
