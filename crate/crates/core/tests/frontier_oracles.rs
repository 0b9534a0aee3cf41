use std::f64::consts::SQRT_2;

use bbm_core::frontier::{
    conditional_max_cdf, uniform_grid, LOG_COEFFICIENT, MartingaleSnapshot,
};
use bbm_core::kpp::kpp_solve;
use bbm_core::*;

#[test]
fn centering_decomposition_is_exact() {
    for &(t, s) in &[(10.0, 3.0), (100.0, 1.0), (57.3, 20.0), (2.0, 1.5)] {
        let lhs = front_centering(t).unwrap() - front_centering(t - s).unwrap();
        let rhs = SQRT_2 * s + LOG_COEFFICIENT * ((t - s) / t).ln();
        assert!((lhs - rhs).abs() < 1e-12 * t, "t={t} s={s}");
    }
}

#[test]
fn snapshot_matches_sorted_positions() {
    let law = OffspringLaw::binary();
    let mut s = RandomStream::new(8);
    let mut pop = Population::new(0.1, &mut s).unwrap();
    pop.advance(6.0, &law, &PruneConfig::default(), &mut s).unwrap();
    let a = martingale_snapshot(&pop).unwrap();
    let b = MartingaleSnapshot::from_positions(pop.time(), pop.snapshot_positions().unwrap());
    for (x, y) in [(a.y, b.y), (a.z, b.z), (a.z2, b.z2)] {
        assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-300), "{x} vs {y}");
    }
    assert_eq!(a.min_y, b.min_y);
    assert!(a.y > 0.0 && a.z2 >= 0.0);
}

/// Two frozen particles: the conditional law of the maximum is the product of
/// the single-particle laws, each given by the PDE.
#[test]
fn two_particle_state_has_product_law() {
    let law = OffspringLaw::binary();
    let (a, b) = (0.0, 1.0);
    let horizon = 2.0;
    let mut s = RandomStream::new(19);
    let frozen = Population::from_positions(0.0, &[a, b], 0.1, &mut s).unwrap();
    let grid = uniform_grid(-3.0, 4.0, 141);
    let cdf = conditional_max_cdf(&frozen, horizon, grid.clone(), 4000, &law, &PruneConfig::disabled(), &mut s)
        .unwrap();
    let sol = kpp_solve(&law, horizon, Grid1D::with_steps(0.05, 0.00025).unwrap()).unwrap();
    let m = front_centering(horizon).unwrap();
    let d = cdf.sup_distance_to(|x| sol.value_at(m + x - a) * sol.value_at(m + x - b));
    // Kolmogorov noise at n = 4000 is about 0.014
    assert!(d < 0.035, "sup distance {d}");
}

#[test]
fn continuation_counts_agree() {
    let law = OffspringLaw::binary();
    let mut s = RandomStream::new(23);
    let mut early = Population::new(0.1, &mut s).unwrap();
    early.advance(2.0, &law, &PruneConfig::default(), &mut s).unwrap();
    let grid = uniform_grid(-4.0, 3.0, 71);
    let prune = PruneConfig::default();
    let small = conditional_max_cdf(&early, 5.0, grid.clone(), 400, &law, &prune, &mut RandomStream::new(1))
        .unwrap();
    let large = conditional_max_cdf(&early, 5.0, grid, 1600, &law, &prune, &mut RandomStream::new(2))
        .unwrap();
    for (p, q) in small.values().iter().zip(large.values()) {
        // binomial standard errors of the two estimates, combined, times 4
        let se = (p * (1.0 - p) / 400.0 + q * (1.0 - q) / 1600.0).sqrt();
        assert!((p - q).abs() <= 4.0 * se + 1e-12, "{p} vs {q}");
    }
}

#[test]
fn ergodic_run_is_reproducible() {
    let law = OffspringLaw::binary();
    let prune = PruneConfig::default();
    let run = |seed| frontier::ergodic_run(8.0, 0.25, 2.0, &law, &prune, 0.1, &mut RandomStream::new(seed)).unwrap();
    let a = run(3);
    assert_eq!(a, run(3));
    assert_eq!(a.m_path.len(), 60);
    assert!((a.m_path[0].0 - 2.0).abs() < 1e-12);
    let d = a.sup_distance(0.3, uniform_grid(-6.0, 4.0, 101)).unwrap();
    assert!((0.0..=1.0).contains(&d));
}
