//! Reference simulator of the double thermoelastic pendulum.
//!
//! Spring `i` stores `e_i(λ, s) = (k_i/2)(λ − λ⁰_i)² + C_i·θ_ref·(λ/λ⁰_i)^β·exp(s/C_i)`,
//! so its temperature `θ_i = ∂e_i/∂s` is positive everywhere. Heat flows
//! between the springs with `ṡ₁ = κ(θ₂/θ₁ − 1)`, `ṡ₂ = κ(θ₁/θ₂ − 1)`, which
//! exchanges no energy (`θ₁ṡ₁ + θ₂ṡ₂ = 0`) and produces entropy
//! `κ(θ₂/θ₁ + θ₁/θ₂ − 2) ≥ 0`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;
use crate::state::{Dataset, DatasetMeta, IcSpec, PendulumParams, StateVector, SystemState, Trajectory, SYSTEM_DIM};

/// Output grid of the reference experiment.
pub const DEFAULT_DT: f64 = 0.3;
pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_SUBSTEPS: usize = 30;

const PROBE_STEPS: usize = 20;
const PROBE_DRIFT: f64 = 1e-6;
const MAX_REDRAWS: usize = 100;
/// Initial conditions with a spring shorter than this are re-drawn.
const MIN_SPRING_LENGTH: f64 = 1e-6;

/// Geometry of both springs at one configuration.
#[derive(Debug, Clone, Copy)]
struct Springs {
    lam: [f64; 2],
    /// Unit vectors along `q1` and `q2 − q1`.
    n: [[f64; 2]; 2],
}

fn springs(v: &[f64; SYSTEM_DIM]) -> Result<Springs> {
    let d = [[v[0], v[1]], [v[5] - v[0], v[6] - v[1]]];
    let lam = [d[0][0].hypot(d[0][1]), d[1][0].hypot(d[1][1])];
    if !(lam[0] > 0.0 && lam[1] > 0.0) {
        return Err(Error::Domain(format!(
            "degenerate spring length (lambda1 = {}, lambda2 = {})",
            lam[0], lam[1]
        )));
    }
    Ok(Springs {
        lam,
        n: [
            [d[0][0] / lam[0], d[0][1] / lam[0]],
            [d[1][0] / lam[1], d[1][1] / lam[1]],
        ],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    params: PendulumParams,
    substeps: usize,
}

impl OracleModel {
    /// Validates the parameters and checks, with a short run from the mean
    /// initial condition, that `substeps` keeps energy drift below 1e-6.
    pub fn new(params: PendulumParams, substeps: usize) -> Result<Self> {
        params.validate()?;
        if substeps == 0 {
            return Err(Error::InvalidInput("substeps must be at least 1".into()));
        }
        let model = OracleModel { params, substeps };
        let ic = IcSpec::default();
        let z0 = model.initial_state(ic.q1, ic.p1, ic.q2, ic.p2, ic.temperature)?;
        let probe = model
            .simulate(&z0, PROBE_STEPS, DEFAULT_DT)
            .map_err(|e| Error::InvalidInput(format!("oracle probe run failed with {substeps} substeps: {e}")))?;
        let drift = model.max_energy_drift(&probe)?;
        if !(drift <= PROBE_DRIFT) {
            return Err(Error::InvalidInput(format!(
                "{substeps} substeps give relative energy drift {drift:e} over the probe run \
                 (limit {PROBE_DRIFT:e})"
            )));
        }
        Ok(model)
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    fn check_length(lam: f64) -> Result<()> {
        if lam > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!("spring length must be positive, got {lam}")))
        }
    }

    /// `θ_ref·(λ/λ⁰)^β·exp(s/C)`; also the thermal part of the energy divided by `C`.
    fn thermal_factor(&self, lam: f64, s: f64, i: usize) -> f64 {
        let p = &self.params;
        p.theta_ref * (lam / p.rest_length(i)).powf(p.beta) * (s / p.heat_capacity(i)).exp()
    }

    pub fn internal_energy(&self, lam: f64, s: f64, i: usize) -> Result<f64> {
        Self::check_length(lam)?;
        let p = &self.params;
        let stretch = lam - p.rest_length(i);
        Ok(0.5 * p.stiffness(i) * stretch * stretch + p.heat_capacity(i) * self.thermal_factor(lam, s, i))
    }

    /// `θ_i = ∂e_i/∂s`.
    pub fn temperature(&self, lam: f64, s: f64, i: usize) -> Result<f64> {
        Self::check_length(lam)?;
        Ok(self.thermal_factor(lam, s, i))
    }

    /// `∂e_i/∂λ = k_i(λ − λ⁰_i) + β·C_i·θ_i/λ`, the spring tension.
    pub fn tension(&self, lam: f64, s: f64, i: usize) -> Result<f64> {
        Self::check_length(lam)?;
        let p = &self.params;
        let theta = self.thermal_factor(lam, s, i);
        Ok(p.stiffness(i) * (lam - p.rest_length(i)) + p.beta * p.heat_capacity(i) * theta / lam)
    }

    /// Entropy giving temperature `theta` at spring length `lam`.
    pub fn entropy_for_temperature(&self, lam: f64, theta: f64, i: usize) -> Result<f64> {
        Self::check_length(lam)?;
        if !(theta > 0.0) {
            return Err(Error::Domain(format!("temperature must be positive, got {theta}")));
        }
        let p = &self.params;
        let base = p.theta_ref * (lam / p.rest_length(i)).powf(p.beta);
        Ok(p.heat_capacity(i) * (theta / base).ln())
    }

    /// Builds a state whose springs both sit at temperature `theta`.
    pub fn initial_state(
        &self,
        q1: [f64; 2],
        p1: [f64; 2],
        q2: [f64; 2],
        p2: [f64; 2],
        theta: f64,
    ) -> Result<SystemState> {
        let geom = SystemState::new(StateVector::new(q1, p1, 0.0)?, StateVector::new(q2, p2, 0.0)?)?;
        let [l1, l2] = geom.spring_lengths();
        SystemState::new(
            StateVector::new(q1, p1, self.entropy_for_temperature(l1, theta, 0)?)?,
            StateVector::new(q2, p2, self.entropy_for_temperature(l2, theta, 1)?)?,
        )
    }

    pub fn rhs(&self, z: &SystemState) -> Result<[f64; SYSTEM_DIM]> {
        self.rhs_array(&z.to_array())
    }

    fn rhs_array(&self, v: &[f64; SYSTEM_DIM]) -> Result<[f64; SYSTEM_DIM]> {
        let p = &self.params;
        let sp = springs(v)?;
        let f1 = self.tension(sp.lam[0], v[4], 0)?;
        let f2 = self.tension(sp.lam[1], v[9], 1)?;
        let t1 = self.thermal_factor(sp.lam[0], v[4], 0);
        let t2 = self.thermal_factor(sp.lam[1], v[9], 1);
        let mut out = [0.0; SYSTEM_DIM];
        out[0] = v[2] / p.m1;
        out[1] = v[3] / p.m1;
        out[2] = -f1 * sp.n[0][0] + f2 * sp.n[1][0];
        out[3] = -f1 * sp.n[0][1] + f2 * sp.n[1][1];
        out[4] = p.kappa * (t2 / t1 - 1.0);
        out[5] = v[7] / p.m2;
        out[6] = v[8] / p.m2;
        out[7] = -f2 * sp.n[1][0];
        out[8] = -f2 * sp.n[1][1];
        out[9] = p.kappa * (t1 / t2 - 1.0);
        Ok(out)
    }

    pub fn total_energy(&self, z: &SystemState) -> Result<f64> {
        let p = &self.params;
        let [l1, l2] = z.spring_lengths();
        let kin = |m: f64, q: [f64; 2]| (q[0] * q[0] + q[1] * q[1]) / (2.0 * m);
        Ok(kin(p.m1, z.z1.p)
            + kin(p.m2, z.z2.p)
            + self.internal_energy(l1, z.z1.s, 0)?
            + self.internal_energy(l2, z.z2.s, 1)?)
    }

    pub fn total_entropy(&self, z: &SystemState) -> f64 {
        z.z1.s + z.z2.s
    }

    /// `∂E/∂z` of the whole system.
    pub fn energy_gradient(&self, z: &SystemState) -> Result<[f64; SYSTEM_DIM]> {
        let p = &self.params;
        let v = z.to_array();
        let sp = springs(&v)?;
        let f1 = self.tension(sp.lam[0], v[4], 0)?;
        let f2 = self.tension(sp.lam[1], v[9], 1)?;
        let mut g = [0.0; SYSTEM_DIM];
        for a in 0..2 {
            g[a] = f1 * sp.n[0][a] - f2 * sp.n[1][a];
            g[2 + a] = v[2 + a] / p.m1;
            g[5 + a] = f2 * sp.n[1][a];
            g[7 + a] = v[7 + a] / p.m2;
        }
        g[4] = self.thermal_factor(sp.lam[0], v[4], 0);
        g[9] = self.thermal_factor(sp.lam[1], v[9], 1);
        Ok(g)
    }

    /// One classic RK4 step of size `h`.
    pub fn rk4_step(&self, v: &[f64; SYSTEM_DIM], h: f64) -> Result<[f64; SYSTEM_DIM]> {
        let shifted = |k: &[f64; SYSTEM_DIM], a: f64| {
            let mut y = *v;
            for i in 0..SYSTEM_DIM {
                y[i] += a * k[i];
            }
            y
        };
        let k1 = self.rhs_array(v)?;
        let k2 = self.rhs_array(&shifted(&k1, 0.5 * h))?;
        let k3 = self.rhs_array(&shifted(&k2, 0.5 * h))?;
        let k4 = self.rhs_array(&shifted(&k3, h))?;
        let mut out = *v;
        for i in 0..SYSTEM_DIM {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(out)
    }

    /// Integrates `n_steps` output steps of size `dt`, each split into
    /// `substeps` RK4 steps.
    pub fn simulate(&self, z0: &SystemState, n_steps: usize, dt: f64) -> Result<Trajectory> {
        if n_steps == 0 {
            return Err(Error::InvalidInput("n_steps must be at least 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        let h = dt / self.substeps as f64;
        let mut v = z0.to_array();
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(SystemState::new(z0.z1, z0.z2)?);
        for step in 1..=n_steps {
            for _ in 0..self.substeps {
                v = self
                    .rk4_step(&v, h)
                    .map_err(|e| Error::Numeric(format!("oracle failed during output step {step}: {e}")))?;
            }
            let z = SystemState::from_array(&v)
                .map_err(|e| Error::Numeric(format!("oracle state invalid at output step {step}: {e}")))?;
            states.push(z);
        }
        Trajectory::new(dt, states)
    }

    /// `max_t |E(z_t) − E(z_0)| / |E(z_0)|`.
    pub fn max_energy_drift(&self, traj: &Trajectory) -> Result<f64> {
        let e0 = self.total_energy(traj.initial())?;
        let mut worst: f64 = 0.0;
        for z in traj.states() {
            worst = worst.max((self.total_energy(z)? - e0).abs());
        }
        Ok(worst / e0.abs())
    }

    /// Smallest per-step change of total entropy.
    pub fn min_entropy_increment(&self, traj: &Trajectory) -> f64 {
        traj.states()
            .windows(2)
            .map(|w| self.total_entropy(&w[1]) - self.total_entropy(&w[0]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Simulates `n_sims` trajectories from random initial conditions.
    ///
    /// Initial conditions are drawn one after another from the `"ic"`
    /// substream of `seed`, so the result does not depend on how many
    /// threads run the simulations. Every trajectory is tagged train.
    pub fn generate_dataset(&self, n_sims: usize, seed: u64, ic: &IcSpec, n_steps: usize, dt: f64) -> Result<Dataset> {
        if n_sims == 0 {
            return Err(Error::InvalidInput("n_sims must be at least 1".into()));
        }
        if !(ic.spread >= 0.0 && ic.spread.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "spread must be non-negative, got {}",
                ic.spread
            )));
        }
        let mut rng = seed::substream(seed, "ic");
        let mut starts = Vec::with_capacity(n_sims);
        for sim in 0..n_sims {
            starts.push(
                self.draw_initial(&mut rng, ic)
                    .map_err(|e| Error::InvalidInput(format!("initial condition {sim}: {e}")))?,
            );
        }
        let trajectories = starts
            .par_iter()
            .enumerate()
            .map(|(sim, z0)| {
                self.simulate(z0, n_steps, dt)
                    .map_err(|e| Error::Numeric(format!("simulation {sim}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            trajectories,
            DatasetMeta {
                params: self.params,
                ic: *ic,
                substeps: self.substeps,
                seed,
            },
        )
    }

    fn draw_initial<R: Rng>(&self, rng: &mut R, ic: &IcSpec) -> Result<SystemState> {
        let mean = [
            ic.q1[0], ic.q1[1], ic.p1[0], ic.p1[1], ic.q2[0], ic.q2[1], ic.p2[0], ic.p2[1],
        ];
        for _ in 0..MAX_REDRAWS {
            let mut x = [0.0; 8];
            for (xi, m) in x.iter_mut().zip(mean) {
                *xi = m + rng.gen_range(-1.0..=1.0) * ic.spread * m.abs();
            }
            let q1 = [x[0], x[1]];
            let q2 = [x[4], x[5]];
            let l1 = q1[0].hypot(q1[1]);
            let l2 = (q2[0] - q1[0]).hypot(q2[1] - q1[1]);
            if l1 < MIN_SPRING_LENGTH || l2 < MIN_SPRING_LENGTH {
                continue;
            }
            return self.initial_state(q1, [x[2], x[3]], q2, [x[6], x[7]], ic.temperature);
        }
        Err(Error::Domain(format!(
            "no non-degenerate initial condition after {MAX_REDRAWS} draws"
        )))
    }
}
