use std::path::Path;

use lss::formats::{parse_corpus, parse_report, render_corpus, render_report, ReportRow, SummaryRow};
use lss_core::bench::{run_all, synthetic_corpus, BenchCandidate, BenchQuery, ScorerSource, Variant, VariantConfig};
use lss_core::LexicalScorer;
use proptest::prelude::*;

fn query() -> impl Strategy<Value = BenchQuery> {
    (
        "[a-z0-9]{1,6}",
        "\\PC{0,40}",
        prop::collection::btree_map("[a-z]{1,4}", "\\PC{0,30}", 1..6),
    )
        .prop_flat_map(|(id, ctx, cands)| {
            let n = cands.len();
            (Just(id), Just(ctx), Just(cands), 0..n)
        })
        .prop_map(|(id, ctx, cands, gold)| {
            let gold_id = cands.keys().nth(gold).unwrap().clone();
            let candidates = cands.into_iter().map(|(candidate_id, text)| BenchCandidate { candidate_id, text }).collect();
            BenchQuery::new(id, ctx, candidates, gold_id).unwrap()
        })
}

proptest! {
    #[test]
    fn corpus_round_trips(qs in prop::collection::vec(query(), 0..8)) {
        let text = render_corpus(&qs);
        prop_assert_eq!(text.lines().count(), qs.len());
        prop_assert_eq!(parse_corpus(Path::new("c.jsonl"), &text).unwrap(), qs);
    }
}

#[test]
fn report_rows_follow_the_runs() {
    let qs = synthetic_corpus(5, 12, 6);
    let summaries: Vec<_> = Variant::ALL
        .iter()
        .map(|&v| run_all(&qs, &VariantConfig::new(v), ScorerSource::Shared(&LexicalScorer), &mut ()).unwrap())
        .map(|reports| lss_core::bench::compute_metrics(&reports).unwrap())
        .collect();
    let text = render_report(&summaries).unwrap();
    let (rows, sums) = parse_report(Path::new("r.csv"), &text).unwrap();
    let want_rows: Vec<ReportRow> = summaries.iter().flat_map(|s| s.traces.iter().map(ReportRow::from)).collect();
    let want_sums: Vec<SummaryRow> = summaries.iter().map(SummaryRow::from).collect();
    assert_eq!(rows, want_rows);
    assert_eq!(sums, want_sums);
    assert_eq!(render_report(&summaries).unwrap(), text);
}

#[test]
fn report_parser_rejects_damage() {
    let qs = synthetic_corpus(2, 3, 4);
    let s = lss_core::bench::compute_metrics(
        &run_all(&qs, &VariantConfig::new(Variant::WorkerOnly), ScorerSource::Shared(&LexicalScorer), &mut ()).unwrap(),
    )
    .unwrap();
    let text = render_report(&[s]).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "q,worker_only,yes,0,1,0,0,1";
    assert!(parse_report(Path::new("r.csv"), &lines.join("\n")).is_err());
    assert!(parse_report(Path::new("r.csv"), "nonsense\n").is_err());
}
