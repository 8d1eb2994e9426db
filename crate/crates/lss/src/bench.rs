//! Parallel benchmark runs. Index packages are built up front, in input
//! order, so the query that first meets a candidate set is the one charged
//! for it no matter how the threads are scheduled.

use lss_core::bench::{
    run_variant, BenchQuery, IndexCache, PeakObserver, QueryReport, ScorerSource, Variant, VariantConfig,
};
use lss_core::binding::NullSink;
use rayon::prelude::*;

use crate::error::Result;

/// Reports come back in input order, with the longest text each role was
/// shown across the whole run.
pub fn run_parallel(queries: &[BenchQuery], config: &VariantConfig, scorers: ScorerSource<'_>) -> Result<(Vec<QueryReport>, PeakObserver)> {
    let config = config.validate()?;
    let mut cache = IndexCache::default();
    let packages: Vec<_> = queries
        .iter()
        .map(|q| {
            (config.variant == Variant::LensIndexWorker).then(|| cache.get_or_build(&q.candidates, config.brief_limit, &mut ()))
        })
        .collect();
    let results: Vec<(QueryReport, PeakObserver)> = queries
        .par_iter()
        .zip(packages.par_iter())
        .map(|(q, pkg)| {
            let mut peaks = PeakObserver::default();
            let scorer = scorers.scorer_for(q);
            let (index, fresh) = match pkg {
                Some((p, fresh)) => (Some(p.as_ref()), *fresh),
                None => (None, false),
            };
            let r = run_variant(q, &config, scorer.as_ref(), index, fresh, &mut peaks, &mut NullSink::default())?;
            Ok((r, peaks))
        })
        .collect::<lss_core::Result<_>>()?;
    let peaks = results.iter().fold(PeakObserver::default(), |acc, (_, p)| PeakObserver {
        lens: acc.lens.max(p.lens),
        worker_snippet: acc.worker_snippet.max(p.worker_snippet),
    });
    Ok((results.into_iter().map(|(r, _)| r).collect(), peaks))
}
