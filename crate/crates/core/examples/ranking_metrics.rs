//! Raw and filtered ranks for hand-written logits, and the aggregate report.

use relpred::kg_data::{EntityId, PairRelationIndex, RelationId, Triple};
use relpred::metrics::{filtered_rank, rank_of, rank_queries, MetricsReport, TiePolicy};
use relpred::model::{probabilities, Logits};

fn main() -> relpred::Result<()> {
    let logits = Logits(vec![2.0, 1.5, 0.3, -1.0]);
    let p = probabilities(&logits);
    println!("probabilities {:.3?}", p);

    let gt = RelationId(2);
    let valid = [RelationId(0), RelationId(2)];
    println!("raw rank {}", rank_of(&logits, gt));
    println!("filtered rank {}", filtered_rank(&logits, gt, &valid)?);

    // Two queries sharing the pair (0, 1), one on (1, 2).
    let (a, b, c) = (EntityId(0), EntityId(1), EntityId(2));
    let queries = [
        Triple::new(a, RelationId(0), b),
        Triple::new(a, RelationId(2), b),
        Triple::new(b, RelationId(3), c),
    ];
    let mut index = PairRelationIndex::default();
    index.extend(&queries);
    let scores = vec![logits.clone(), logits.clone(), Logits(vec![0.0, 0.0, 0.0, 0.0])];

    for policy in [TiePolicy::Optimistic, TiePolicy::Pessimistic, TiePolicy::Mean] {
        let records = rank_queries(&queries, &scores, &index, policy)?;
        let ranks: Vec<_> = records.iter().map(|r| (r.raw_rank, r.filtered_rank)).collect();
        println!("{policy:?}: (raw, filtered) = {ranks:?}");
    }
    let records = rank_queries(&queries, &scores, &index, TiePolicy::Optimistic)?;
    let report = MetricsReport::from_records(&records, &[1, 3])?;
    println!("{report}");
    println!("{}", report.to_json());
    Ok(())
}
