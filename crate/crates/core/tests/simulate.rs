use statrs::distribution::{ChiSquared, ContinuousCDF};
use sslogit_core::simulate::{expected_table, simulate_panel, InitialSpec};
use sslogit_core::{CommonParams, Gamma, HeterogeneityDist, QuadratureRule, INITIAL_PAIRS};

/// Pearson statistic of simulated sequence counts against the exact mixture
/// probabilities, pooling cells expected below 5.
fn chi_square_p_value(dist: &HeterogeneityDist, null: &HeterogeneityDist, restricted: bool, seed: u64) -> f64 {
    let n = 100_000;
    let p = CommonParams::dynamic(Gamma::new(2.5, -1.5, -1.5, 2.5), 1.0, 2.0);
    let panel = simulate_panel(&p, dist, n, 3, restricted, seed).unwrap();
    let observed = panel.sequence_table().unwrap();
    let quad = QuadratureRule::gauss_hermite(64).unwrap();
    let exact = expected_table(&p, null, 3, restricted, &InitialSpec::default(), &quad).unwrap();
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pooled_o, mut pooled_e) = (0.0, 0.0);
    for init in INITIAL_PAIRS {
        for code in 0..64 {
            let e = exact.count(init, code) * n as f64;
            let o = observed.count(init, code);
            if e < 5.0 {
                pooled_o += o;
                pooled_e += e;
            } else {
                stat += (o - e) * (o - e) / e;
                cells += 1;
            }
        }
    }
    if pooled_e > 0.0 {
        stat += (pooled_o - pooled_e) * (pooled_o - pooled_e) / pooled_e;
        cells += 1;
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn simulated_frequencies_match_exact_probabilities() {
    let cases = [
        (HeterogeneityDist::DiscreteApproxNormal, true),
        (HeterogeneityDist::DiscreteAsymmetric, true),
        (HeterogeneityDist::VeryHeteroskedastic, true),
        (HeterogeneityDist::correctly_specified(), true),
        (HeterogeneityDist::Heteroskedastic, false),
    ];
    for (k, (dist, restricted)) in cases.iter().enumerate() {
        let pv = chi_square_p_value(dist, dist, *restricted, 100 + k as u64);
        assert!(pv > 1e-3, "{}: p = {pv}", dist.name());
    }
}

#[test]
fn chi_square_detects_a_wrong_law() {
    // the check must have teeth: simulate one law, test against another
    let pv = chi_square_p_value(&HeterogeneityDist::DiscreteApproxNormal, &HeterogeneityDist::correctly_specified(), true, 1);
    assert!(pv < 1e-3, "p = {pv}");
}
