//! Deterministic data-parallel reductions.
//!
//! Points are split into fixed-size chunks; each chunk accumulates into its
//! own buffer and the buffers are added in chunk order. The result does not
//! depend on the number of worker threads.

use std::ops::Range;

use rayon::prelude::*;

pub(crate) const CHUNK: usize = 512;

pub(crate) fn chunked_sum<F>(len: usize, width: usize, accumulate: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync,
{
    let chunks = len.div_ceil(CHUNK);
    let run = |c: usize| {
        let mut acc = vec![0.0; width];
        accumulate(c * CHUNK..((c + 1) * CHUNK).min(len), &mut acc);
        acc
    };
    let partials: Vec<Vec<f64>> = if chunks > 1 {
        (0..chunks).into_par_iter().map(run).collect()
    } else {
        (0..chunks).map(run).collect()
    };
    let mut total = vec![0.0; width];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

/// Like [`chunked_sum`], but each point also owns `stride` slots of `cache`
/// that the accumulator fills as it goes.
pub(crate) fn chunked_fill_sum<F>(len: usize, stride: usize, cache: &mut [f64], width: usize, accumulate: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64], &mut [f64]) + Sync,
{
    debug_assert_eq!(cache.len(), len * stride);
    if stride == 0 {
        return chunked_sum(len, width, |range, acc| accumulate(range, &mut [], acc));
    }
    let run = |(c, slab): (usize, &mut [f64])| {
        let mut acc = vec![0.0; width];
        let start = c * CHUNK;
        accumulate(start..start + slab.len() / stride, slab, &mut acc);
        acc
    };
    let partials: Vec<Vec<f64>> = if len > CHUNK {
        cache.par_chunks_mut(CHUNK * stride).enumerate().map(run).collect()
    } else {
        cache.chunks_mut(CHUNK * stride).enumerate().map(run).collect()
    };
    let mut total = vec![0.0; width];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_sequential_chunk_order() {
        let values: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = chunked_sum(values.len(), 1, |r, acc| {
            for i in r {
                acc[0] += values[i];
            }
        });
        let mut expected = 0.0;
        for chunk in values.chunks(CHUNK) {
            expected += chunk.iter().sum::<f64>();
        }
        assert_eq!(got[0], expected);
        assert_eq!(chunked_sum(0, 3, |_, _| unreachable!()), vec![0.0; 3]);
    }
}
