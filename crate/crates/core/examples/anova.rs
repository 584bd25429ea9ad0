//! One-way ANOVA on per-run precision grouped by a factor.
//!
//! cargo run --example anova

use cq_workbench::stats::{f_survival, one_way_anova, FactorGroups};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let groups = FactorGroups::new("toy")
        .with_group("a", &[1.0, 2.0, 3.0])
        .with_group("b", &[2.0, 3.0, 4.0])
        .with_group("c", &[3.0, 4.0, 5.0]);
    let r = one_way_anova(&groups)?;
    println!(
        "toy: F({}, {}) = {:.4}, p = {:.4}",
        r.df_between, r.df_within, r.f_statistic, r.p_value
    );

    // Precision of ten runs at each of three context sizes.
    let mut by_paper = FactorGroups::new("n_paper");
    let samples = [
        (
            "1",
            [0.40, 0.47, 0.33, 0.53, 0.40, 0.47, 0.60, 0.33, 0.47, 0.40],
        ),
        (
            "3",
            [0.53, 0.60, 0.47, 0.67, 0.53, 0.60, 0.53, 0.73, 0.47, 0.60],
        ),
        (
            "10",
            [0.60, 0.67, 0.73, 0.53, 0.67, 0.60, 0.80, 0.67, 0.60, 0.73],
        ),
    ];
    for (level, values) in samples {
        for v in values {
            by_paper.push(level, v);
        }
    }
    let r = one_way_anova(&by_paper)?;
    println!(
        "\nn_paper: F({}, {}) = {:.4}, p = {:.6}",
        r.df_between, r.df_within, r.f_statistic, r.p_value
    );
    for (level, m) in &r.group_means {
        println!("  mean precision at {level:>2} papers: {m:.3}");
    }

    println!("\nupper tail of F(2, 27):");
    for f in [0.5, 1.0, 2.0, 3.35, 5.0, 10.0] {
        println!("  P(F > {f:>5}) = {:.6}", f_survival(f, 2.0, 27.0)?);
    }
    Ok(())
}
