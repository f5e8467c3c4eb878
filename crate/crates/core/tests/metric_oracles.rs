#[path = "support/oracles.rs"]
mod oracles;

#[test]
fn auroc_equals_pairwise_count() {
    assert_eq!(oracles::auroc_oracle_suite(500, 21), 0);
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    let worst = oracles::kl_monte_carlo_suite(20, 1_000_000, 22);
    assert!(worst < 0.01, "worst abs error {worst}");
}
