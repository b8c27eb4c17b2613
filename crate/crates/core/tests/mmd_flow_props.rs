use std::sync::Arc;

use distlab::mmd_gan::{mmd2_iterates, project_simplex, DensityIterate, MmdFlow};
use distlab::{Activation, FeatureBank, FeatureLaw, GridDensity};
use nalgebra::DVector;
use proptest::prelude::*;

fn iterate(values: Vec<f64>) -> DensityIterate {
    let like = GridDensity::uniform(1, values.len()).unwrap();
    DensityIterate::new(&like, DVector::from_vec(values)).unwrap()
}

fn sine_target(cells: usize) -> GridDensity {
    GridDensity::from_fn(1, cells, |x| 1.0 + 0.5 * (std::f64::consts::TAU * x[0]).sin()).unwrap()
}

proptest! {
    #[test]
    fn projection_is_one_lipschitz(
        pair in (2usize..40).prop_flat_map(|n| (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
        ))
    ) {
        let (p, q) = (iterate(pair.0), iterate(pair.1));
        let (pp, pq) = (project_simplex(&p), project_simplex(&q));
        let proj_gap = DensityIterate::from_grid(&pp).l2_distance(&DensityIterate::from_grid(&pq));
        prop_assert!(proj_gap <= p.l2_distance(&q) + 1e-12);
    }

    #[test]
    fn projection_lands_on_densities_and_is_idempotent(v in prop::collection::vec(-3.0f64..3.0, 2..40)) {
        let g = project_simplex(&iterate(v));
        prop_assert!((g.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!(g.values().iter().all(|x| *x >= 0.0));
        let again = project_simplex(&DensityIterate::from_grid(&g));
        for (a, b) in g.values().iter().zip(again.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    /// Variational characterization: `⟨p − Π(p), q − Π(p)⟩ ≤ 0` for every density `q`.
    #[test]
    fn projection_satisfies_obtuse_angle_condition(
        pair in (2usize..20).prop_flat_map(|n| (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(0.0f64..3.0, n),
        ))
    ) {
        prop_assume!(pair.1.iter().any(|x| *x > 0.0));
        let n = pair.0.len();
        let p = DVector::from_vec(pair.0.clone());
        let proj = DVector::from_column_slice(project_simplex(&iterate(pair.0)).values());
        let q = GridDensity::new(1, n, pair.1).unwrap().normalize().unwrap();
        let q = DVector::from_column_slice(q.values());
        prop_assert!((&p - &proj).dot(&(&q - &proj)) <= 1e-10);
    }
}

#[test]
fn mmd_is_nonincreasing_along_population_flow() {
    let target = sine_target(32);
    let bank = Arc::new(FeatureBank::draw(1, 512, Activation::Relu, FeatureLaw::L1Sphere, 2).unwrap());
    let flow = MmdFlow::population(&bank, &target).unwrap();
    let p0 = DensityIterate::from_grid(&GridDensity::uniform(1, 32).unwrap());
    let star = DensityIterate::from_grid(&target);
    let path = flow.euler(&p0, 0.5, 2000.0, 10).unwrap();
    let values: Vec<f64> = path.iter().map(|(_, p)| mmd2_iterates(&flow, p, &star)).collect();
    for w in values.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    assert!(values[values.len() - 1] < 0.01 * values[0]);
}

#[test]
fn euler_converges_to_spectral_solution() {
    let target = sine_target(64);
    let bank = Arc::new(FeatureBank::draw(1, 1024, Activation::Relu, FeatureLaw::L1Sphere, 1).unwrap());
    let flow = MmdFlow::population(&bank, &target).unwrap();
    let p0 = DensityIterate::from_grid(&GridDensity::uniform(1, 64).unwrap());
    for t in [1.0, 10.0, 100.0] {
        let gap = |dt: f64| {
            let path = flow.euler(&p0, dt, t, (t / dt).round() as usize).unwrap();
            let (_, last) = path.last().unwrap();
            (last.values() - flow.spectral(&p0, t).values()).amax()
        };
        let (coarse, fine) = (gap(1e-2), gap(5e-3));
        assert!(fine <= 1e-4, "t = {t}: {fine}");
        // first-order convergence
        assert!(fine < 0.6 * coarse || fine < 1e-12, "t = {t}: {coarse} -> {fine}");
    }
}

#[test]
fn projection_of_unnormalized_iterates_conserves_mass() {
    let target = sine_target(16);
    let bank = Arc::new(FeatureBank::draw(1, 256, Activation::Relu, FeatureLaw::L1Sphere, 6).unwrap());
    let sample = target.sample(20, 3).unwrap();
    let flow = MmdFlow::empirical(&bank, &target, &sample).unwrap();
    let p0 = DensityIterate::from_grid(&GridDensity::uniform(1, 16).unwrap());
    for t in [1.0, 1e3, 1e6] {
        let p = flow.spectral(&p0, t);
        let proj = project_simplex(&p);
        assert!((proj.total_mass() - 1.0).abs() < 1e-12);
    }
}
