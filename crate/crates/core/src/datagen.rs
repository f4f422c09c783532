//! Data generation for the open- and closed-loop studies: random stable
//! discrete-time systems, sign-of-Gaussian excitation, innovation-noise
//! simulation and the observer-based closed-loop configuration.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{N2sidError, Result};
use crate::model::{simulate_innovation, IoBatch, StateSpaceModel};

/// Open-loop study configuration, defaulting to the benchmark setup:
/// second-order SISO systems, N = 50, noise std 0.2, x0 std 5, spectral
/// radius capped at 0.99.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenLoopConfig {
    pub order: usize,
    pub num_inputs: usize,
    pub num_outputs: usize,
    pub num_samples: usize,
    pub noise_std: f64,
    pub x0_std: f64,
    pub stability_cap: f64,
}

impl Default for OpenLoopConfig {
    fn default() -> Self {
        Self {
            order: 2,
            num_inputs: 1,
            num_outputs: 1,
            num_samples: 50,
            noise_std: 0.2,
            x0_std: 5.0,
            stability_cap: 0.99,
        }
    }
}

impl OpenLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.num_inputs == 0 || self.num_outputs == 0 || self.num_samples == 0
        {
            return Err(N2sidError::Config("dimensions must be positive".into()));
        }
        if !(self.stability_cap > 0.0 && self.stability_cap < 1.0) {
            return Err(N2sidError::Config("stability cap must lie in (0, 1)".into()));
        }
        if self.noise_std < 0.0 || self.x0_std < 0.0 {
            return Err(N2sidError::Config("standard deviations must be >= 0".into()));
        }
        Ok(())
    }
}

/// Closed-loop study configuration: fixed plant, observer-based state
/// feedback L, reference through a gain normalizing the DC gain to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub plant: StateSpaceModel,
    pub state_feedback: DMatrix<f64>,
    pub noise_std: f64,
    pub num_samples: usize,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            plant: closed_loop_plant(),
            state_feedback: DMatrix::from_row_slice(1, 2, &[0.25, -0.3]),
            noise_std: 0.1,
            num_samples: 50,
        }
    }
}

/// The benchmark closed-loop plant: A upper triangular with eigenvalues
/// {0, 0.7}, observer gain K chosen so A - KC has both eigenvalues at 0.5.
pub fn closed_loop_plant() -> StateSpaceModel {
    StateSpaceModel::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.7]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::zeros(1, 1),
        DMatrix::from_row_slice(2, 1, &[-0.3, 0.04]),
    )
    .expect("fixed plant dimensions are consistent")
}

fn sample_normal_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

/// Derive a per-purpose RNG from a master seed. Stream constants keep the
/// draws for different purposes independent of each other.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha12Rng {
    let mixed = master_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .rotate_left(31)
        ^ stream;
    ChaCha12Rng::seed_from_u64(mixed)
}

/// Random stable system: A scaled to a spectral radius uniform on
/// [0.1, cap], B, C, D, K standard normal. Deterministic per seed.
pub fn random_stable_system(config: &OpenLoopConfig, seed: u64) -> Result<StateSpaceModel> {
    config.validate()?;
    let mut rng = stream_rng(seed, 1);
    let n = config.order;
    for _attempt in 0..100 {
        let raw = sample_normal_matrix(&mut rng, n, n);
        let radius = raw
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if radius <= 1e-12 {
            continue;
        }
        let target: f64 = 0.1 + (config.stability_cap - 0.1) * rng.gen_range(0.0..1.0);
        let a = raw * (target / radius);
        let b = sample_normal_matrix(&mut rng, n, config.num_inputs);
        let c = sample_normal_matrix(&mut rng, config.num_outputs, n);
        let d = sample_normal_matrix(&mut rng, config.num_outputs, config.num_inputs);
        let k = sample_normal_matrix(&mut rng, n, config.num_outputs);
        let model = StateSpaceModel::new(a, b, c, d, k)?;
        if model.spectral_radius() <= config.stability_cap + 1e-12 {
            return Ok(model);
        }
    }
    Err(N2sidError::Generation(
        "rejection budget exhausted while sampling a stable system".into(),
    ))
}

use rand::Rng;

/// Sign-of-Gaussian excitation: entries are exactly +-1, deterministic per seed.
pub fn sign_input(channels: usize, num_samples: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 2);
    DMatrix::from_fn(channels, num_samples, |_, _| {
        let v: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        if v >= 0.0 {
            1.0
        } else {
            -1.0
        }
    })
}

/// Gaussian noise matrix with a given standard deviation, deterministic per seed.
pub fn noise_matrix(channels: usize, num_samples: usize, std: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 3);
    DMatrix::from_fn(channels, num_samples, |_, _| {
        std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    })
}

/// Gaussian initial state with a given standard deviation.
pub fn initial_state(n: usize, std: f64, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, 4);
    DVector::from_fn(n, |_, _| {
        std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    })
}

/// A complete open-loop identification batch for one trial seed.
pub fn open_loop_batch(
    model: &StateSpaceModel,
    config: &OpenLoopConfig,
    seed: u64,
) -> Result<(IoBatch, DMatrix<f64>, DVector<f64>)> {
    let u = sign_input(config.num_inputs, config.num_samples, seed);
    let e = noise_matrix(
        config.num_outputs,
        config.num_samples,
        config.noise_std,
        seed,
    );
    let x0 = initial_state(config.order, config.x0_std, seed);
    let io = simulate_innovation(model, &u, &e, &x0)?;
    Ok((io, e, x0))
}

/// Feed-forward gain making the closed-loop DC gain from reference to output
/// equal to one: g = 1 / (C (I - A + BL)^{-1} B).
pub fn reference_gain(config: &ClosedLoopConfig) -> Result<f64> {
    let plant = &config.plant;
    let n = plant.order();
    let m = DMatrix::identity(n, n) - &plant.a + &plant.b * &config.state_feedback;
    let inv = m
        .lu()
        .try_inverse()
        .ok_or_else(|| N2sidError::Config("closed loop is singular at DC".into()))?;
    let gain = (&plant.c * inv * &plant.b)[(0, 0)];
    if gain.abs() < 1e-12 {
        return Err(N2sidError::Config("DC gain from input to output is zero".into()));
    }
    Ok(1.0 / gain)
}

/// Simulate plant + observer-based state feedback + scaled reference
/// feed-forward; returns the measured (u, y) pair and the innovation draw.
pub fn simulate_closed_loop(
    config: &ClosedLoopConfig,
    reference: &DMatrix<f64>,
    seed: u64,
) -> Result<(IoBatch, DMatrix<f64>)> {
    let plant = &config.plant;
    let n = plant.order();
    let p = plant.num_outputs();
    let horizon = reference.ncols();
    if reference.nrows() != 1 {
        return Err(N2sidError::Config("reference must be a single channel".into()));
    }
    let g = reference_gain(config)?;
    let e = noise_matrix(p, horizon, config.noise_std, seed);
    let mut x = DVector::<f64>::zeros(n);
    let mut xhat = DVector::<f64>::zeros(n);
    let mut u = DMatrix::zeros(plant.num_inputs(), horizon);
    let mut y = DMatrix::zeros(p, horizon);
    for k in 0..horizon {
        let uk = -&config.state_feedback * &xhat + DVector::from_element(1, g * reference[(0, k)]);
        let yk = &plant.c * &x + &plant.d * &uk + e.column(k);
        u.set_column(k, &uk);
        y.set_column(k, &yk);
        // plant in innovation form; observer uses the measured output
        let innov = &yk - &plant.c * &xhat - &plant.d * &uk;
        x = &plant.a * &x + &plant.b * &uk + &plant.k * e.column(k);
        xhat = &plant.a * &xhat + &plant.b * &uk + &plant.k * innov;
    }
    Ok((IoBatch::new(u, y)?, e))
}
