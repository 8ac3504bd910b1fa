//! Fit a metric on planted synthetic WiC data with a slack-parameter search,
//! then check which dimensions the metric emphasizes.

use semshift::eval::eval_wic;
use semshift::itml::{default_gamma_grid, slack_search, BoundPercentiles, SearchConfig};
use semshift::metric::row_importance;
use semshift::synthetic::{planted_wic, WicConfig};

fn main() -> semshift::Result<()> {
    let data = planted_wic(&WicConfig::default())?;
    let cfg = SearchConfig {
        percentiles: BoundPercentiles::classical(),
        ..SearchConfig::default()
    };
    let res = slack_search(&data.train, &data.dev, &data.store, &default_gamma_grid(), &cfg)?;
    for p in &res.grid {
        println!("gamma {:>8}: {:?}", p.gamma, p.outcome);
    }
    let b = res.bounds.bounds;
    println!("bounds u = {:.3}, l = {:.3}; best gamma {}", b.upper, b.lower, res.best_gamma);

    let test = eval_wic(&res.state.matrix, &b, &data.test, &data.store)?;
    let (lo, hi) = test.ci95();
    println!("test accuracy {:.3} (95% CI {lo:.3}..{hi:.3})", test.accuracy);

    let imp = row_importance(&res.state.matrix);
    let mut order: Vec<usize> = (0..imp.len()).collect();
    order.sort_by(|&x, &y| imp[y].total_cmp(&imp[x]));
    println!("planted dims: {:?}", data.planted);
    println!("top rows:     {:?}", &order[..data.planted.len()]);
    Ok(())
}
