//! Fixtures shared by the sampler benchmarks.

use nalgebra::{DMatrix, DVector, Matrix2};
use spatialgl::harness::simulate_problem;
use spatialgl::tuning::ridge_initialize;
use spatialgl::{Dataset, Hyperparameters, ModelState, SpatialStructure};

pub struct Fixture {
    pub dataset: Dataset,
    pub spatial: SpatialStructure,
    pub hyper: Hyperparameters,
    pub state: ModelState,
    pub w_ridge: DMatrix<f64>,
}

/// A simulated problem with a ridge start, at `ρ = 0.8`, `λ² = 60`.
pub fn fixture(n: usize, c: usize, d: usize, seed: u64) -> Fixture {
    let sim = simulate_problem(n, c, d, 0.8, 0.8, 60.0, seed).expect("valid dimensions");
    let spatial = SpatialStructure::new(sim.a, 0.8).expect("valid neighborhood");
    let hyper = Hyperparameters::new(60.0).expect("positive lambda2");
    let w_ridge = ridge_initialize(&sim.dataset, 5, &[0.1, 1.0, 10.0], seed)
        .expect("ridge fit")
        .w_ridge;
    let state = ModelState::new(
        w_ridge.clone(),
        Matrix2::identity(),
        DVector::from_element(d, 1.0),
    )
    .expect("valid state");
    Fixture {
        dataset: sim.dataset,
        spatial,
        hyper,
        state,
        w_ridge,
    }
}
