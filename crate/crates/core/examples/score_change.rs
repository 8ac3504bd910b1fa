//! Score semantic change per target word with the identity metric, a learned
//! metric and the cosine baseline, then correlate each with gold ratings.

use semshift::eval::eval_scd;
use semshift::itml::{default_gamma_grid, slack_search, BoundPercentiles, SearchConfig};
use semshift::scoring::{apd_cosine_baseline, occurrence_pairs, score_batch, ChangeScore};
use semshift::synthetic::{planted_drift, DriftConfig};
use semshift::MahalanobisMatrix;

fn main() -> semshift::Result<()> {
    let data = planted_drift(&DriftConfig::default())?;
    let pairs = occurrence_pairs(&data.store, &data.targets);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());

    let search = SearchConfig {
        percentiles: BoundPercentiles::classical(),
        ..SearchConfig::default()
    };
    let learned = slack_search(&data.train, &data.dev, &data.store, &default_gamma_grid(), &search)?.state.matrix;
    let identity = MahalanobisMatrix::identity(data.store.dim());

    for (name, a) in [("identity", &identity), ("learned", &learned)] {
        let scores: Vec<ChangeScore> = score_batch(a, &pairs, &data.store, workers)?
            .into_iter()
            .collect::<semshift::Result<_>>()?;
        println!("{name:>9}: spearman r = {:.3}", eval_scd(&scores, &data.gold)?.spearman_r);
    }
    let cosine: Vec<ChangeScore> = pairs
        .iter()
        .map(|(s1, s2)| apd_cosine_baseline(s1, s2, &data.store))
        .collect::<semshift::Result<_>>()?;
    println!("{:>9}: spearman r = {:.3}", "cosine", eval_scd(&cosine, &data.gold)?.spearman_r);
    Ok(())
}
