//! Per-dimension change scores, their correlation with gold ratings and the
//! quartile comparison against a learned metric's row importance.

use semshift::dimensions::{analyze_dimensions, QUARTILE_LABELS};
use semshift::itml::{default_gamma_grid, slack_search, BoundPercentiles, SearchConfig};
use semshift::synthetic::{planted_drift, DriftConfig};

fn main() -> semshift::Result<()> {
    let data = planted_drift(&DriftConfig::default())?;
    let search = SearchConfig {
        percentiles: BoundPercentiles::classical(),
        ..SearchConfig::default()
    };
    let a = slack_search(&data.train, &data.dev, &data.store, &default_gamma_grid(), &search)?.state.matrix;
    let report = analyze_dimensions(&a, &data.targets, &data.store, &data.gold)?;

    println!("aware dims: {:?}", data.aware);
    for &i in report.dim_order.iter().take(8) {
        println!(
            "dim {i:>2}: r = {:+.3}, importance band {}",
            report.per_dim_correlation[i], QUARTILE_LABELS[report.importance_quartile[i]]
        );
    }
    println!();
    print!("{}", report.confusion_text());
    Ok(())
}
