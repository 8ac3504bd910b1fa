//! Same/different-meaning accuracy of a learned metric against the raw
//! cosine-margin rule, with interval-based significance.

use semshift::eval::{eval_wic, eval_wic_margin_baseline, significantly_different};
use semshift::itml::{default_gamma_grid, slack_search, BoundPercentiles, SearchConfig};
use semshift::synthetic::{planted_wic, WicConfig};

fn main() -> semshift::Result<()> {
    let data = planted_wic(&WicConfig {
        train: 1000,
        ..WicConfig::default()
    })?;
    let search = SearchConfig {
        percentiles: BoundPercentiles::classical(),
        ..SearchConfig::default()
    };
    let res = slack_search(&data.train, &data.dev, &data.store, &default_gamma_grid(), &search)?;
    let learned = eval_wic(&res.state.matrix, &res.bounds.bounds, &data.test, &data.store)?;
    let baseline = eval_wic_margin_baseline(&data.test, &data.store, 0.5)?;

    for (name, r) in [("learned", &learned), ("cosine", &baseline)] {
        println!(
            "{name:>8}: accuracy {:.3}  95% [{:.3}, {:.3}]  90% [{:.3}, {:.3}]",
            r.accuracy, r.ci_low, r.ci_high, r.ci90_low, r.ci90_high
        );
    }
    println!("significant at 95%: {}", significantly_different(learned.ci95(), baseline.ci95()));
    Ok(())
}
