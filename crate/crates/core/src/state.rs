//! Pendulum states, trajectories and datasets.
//!
//! Each pendulum is described by `z = (q, p, s)`: the planar position and
//! linear momentum of its mass and the entropy of its spring. The coupled
//! system state stacks both pendula into a 10-vector ordered as
//! `(q1x, q1y, p1x, p1y, s1, q2x, q2y, p2x, p2y, s2)`.

use rand::seq::SliceRandom;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Dimension of a single pendulum state.
pub const STATE_DIM: usize = 5;
/// Dimension of the coupled two-pendulum state.
pub const SYSTEM_DIM: usize = 2 * STATE_DIM;

/// State of one pendulum mass and its spring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    /// Position, m.
    pub q: [f64; 2],
    /// Linear momentum, kg·m/s.
    pub p: [f64; 2],
    /// Entropy, J/K.
    pub s: f64,
}

impl StateVector {
    pub fn new(q: [f64; 2], p: [f64; 2], s: f64) -> Result<Self> {
        let z = StateVector { q, p, s };
        z.check_finite()?;
        Ok(z)
    }

    pub fn zero() -> Self {
        StateVector {
            q: [0.0; 2],
            p: [0.0; 2],
            s: 0.0,
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != STATE_DIM {
            return Err(Error::InvalidInput(format!(
                "state vector needs {STATE_DIM} components, got {}",
                v.len()
            )));
        }
        StateVector::new([v[0], v[1]], [v[2], v[3]], v[4])
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.q[0], self.q[1], self.p[0], self.p[1], self.s]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "non-finite state component in {:?}",
                self.to_array()
            )))
        }
    }
}

/// Coupled state of both pendula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub z1: StateVector,
    pub z2: StateVector,
}

impl SystemState {
    /// Builds a state, rejecting non-finite components and collapsed springs.
    pub fn new(z1: StateVector, z2: StateVector) -> Result<Self> {
        let z = SystemState { z1, z2 };
        if !z.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite system state {:?}",
                z.to_array()
            )));
        }
        let [l1, l2] = z.spring_lengths();
        if !(l1 > 0.0 && l2 > 0.0) {
            return Err(Error::Domain(format!(
                "degenerate spring length (lambda1 = {l1}, lambda2 = {l2})"
            )));
        }
        Ok(z)
    }

    /// Builds a state without the spring-length check. Learned rollouts may
    /// legitimately wander through configurations the oracle cannot handle.
    pub fn from_array_unchecked(v: &[f64; SYSTEM_DIM]) -> Self {
        SystemState {
            z1: StateVector {
                q: [v[0], v[1]],
                p: [v[2], v[3]],
                s: v[4],
            },
            z2: StateVector {
                q: [v[5], v[6]],
                p: [v[7], v[8]],
                s: v[9],
            },
        }
    }

    pub fn from_array(v: &[f64; SYSTEM_DIM]) -> Result<Self> {
        let z = SystemState::from_array_unchecked(v);
        SystemState::new(z.z1, z.z2)
    }

    pub fn to_array(&self) -> [f64; SYSTEM_DIM] {
        let mut out = [0.0; SYSTEM_DIM];
        out[..STATE_DIM].copy_from_slice(&self.z1.to_array());
        out[STATE_DIM..].copy_from_slice(&self.z2.to_array());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.z1.is_finite() && self.z2.is_finite()
    }

    /// `[|q1|, |q2 - q1|]`.
    pub fn spring_lengths(&self) -> [f64; 2] {
        let d2 = [self.z2.q[0] - self.z1.q[0], self.z2.q[1] - self.z1.q[1]];
        [self.z1.q[0].hypot(self.z1.q[1]), d2[0].hypot(d2[1])]
    }
}

/// Uniformly sampled sequence of system states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    states: Vec<SystemState>,
}

impl Trajectory {
    pub fn new(dt: f64, states: Vec<SystemState>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        if states.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "trajectory needs at least 2 states, got {}",
                states.len()
            )));
        }
        Ok(Trajectory { dt, states })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> &[SystemState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of time increments (`len() - 1`).
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn initial(&self) -> &SystemState {
        &self.states[0]
    }
}

/// Single-step training pairs `(z_t, (z_{t+1} - z_t) / dt)`.
pub fn derivative_labels(traj: &Trajectory) -> Result<Vec<(SystemState, [f64; SYSTEM_DIM])>> {
    if traj.states.len() < 2 {
        return Err(Error::InvalidInput("trajectory shorter than 2 states".into()));
    }
    let inv_dt = 1.0 / traj.dt;
    Ok(traj
        .states
        .windows(2)
        .map(|w| {
            let a = w[0].to_array();
            let b = w[1].to_array();
            let mut dz = [0.0; SYSTEM_DIM];
            for i in 0..SYSTEM_DIM {
                dz[i] = (b[i] - a[i]) * inv_dt;
            }
            (w[0], dz)
        })
        .collect())
}

/// Material and thermal constants of the double thermoelastic pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    /// Masses, kg.
    pub m1: f64,
    pub m2: f64,
    /// Natural spring lengths, m.
    pub lam01: f64,
    pub lam02: f64,
    /// Thermal constants, J/K.
    pub c1: f64,
    pub c2: f64,
    /// Heat-exchange coefficient.
    pub kappa: f64,
    /// Spring stiffnesses, N/m.
    pub k1: f64,
    pub k2: f64,
    /// Thermoelastic coupling exponent.
    pub beta: f64,
    /// Reference temperature, K.
    pub theta_ref: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            m1: 1.0,
            m2: 2.0,
            lam01: 2.0,
            lam02: 1.0,
            c1: 0.02,
            c2: 0.2,
            kappa: 0.5,
            k1: 0.2,
            k2: 0.2,
            beta: -1.0,
            theta_ref: 1.0,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("lam01", self.lam01),
            ("lam02", self.lam02),
            ("c1", self.c1),
            ("c2", self.c2),
            ("k1", self.k1),
            ("k2", self.k2),
            ("theta_ref", self.theta_ref),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kappa must be non-negative, got {}",
                self.kappa
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidInput(format!("beta must be finite, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn mass(&self, i: usize) -> f64 {
        [self.m1, self.m2][i]
    }

    pub fn rest_length(&self, i: usize) -> f64 {
        [self.lam01, self.lam02][i]
    }

    pub fn heat_capacity(&self, i: usize) -> f64 {
        [self.c1, self.c2][i]
    }

    pub fn stiffness(&self, i: usize) -> f64 {
        [self.k1, self.k2][i]
    }
}

/// Distribution of random initial conditions: each component of the mean
/// positions and momenta is drawn uniformly in `mean ± spread·|mean|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct IcSpec {
    pub q1: [f64; 2],
    pub p1: [f64; 2],
    pub q2: [f64; 2],
    pub p2: [f64; 2],
    /// Relative half-width of the uniform draw.
    pub spread: f64,
    /// Initial temperature of both springs, K.
    pub temperature: f64,
}

impl Default for IcSpec {
    fn default() -> Self {
        IcSpec {
            q1: [4.5, 4.5],
            p1: [2.0, 4.5],
            q2: [-0.5, 1.5],
            p2: [1.4, -0.2],
            spread: 0.03,
            temperature: 300.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// How a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub params: PendulumParams,
    pub ic: IcSpec,
    /// RK4 stages per output step used by the oracle.
    pub substeps: usize,
    pub seed: u64,
}

/// Trajectories sharing one time grid, each tagged train or test.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub split: Vec<Split>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Assembles a dataset with every trajectory tagged `train`.
    pub fn new(trajectories: Vec<Trajectory>, meta: DatasetMeta) -> Result<Self> {
        let split = vec![Split::Train; trajectories.len()];
        let ds = Dataset {
            trajectories,
            split,
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.len() != self.trajectories.len() {
            return Err(Error::InvalidInput(format!(
                "{} split tags for {} trajectories",
                self.split.len(),
                self.trajectories.len()
            )));
        }
        if let Some(first) = self.trajectories.first() {
            for (i, t) in self.trajectories.iter().enumerate() {
                if t.dt() != first.dt() || t.len() != first.len() {
                    return Err(Error::InvalidInput(format!(
                        "trajectory {i} has dt {} and {} states, expected dt {} and {} states",
                        t.dt(),
                        t.len(),
                        first.dt(),
                        first.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn dt(&self) -> Option<f64> {
        self.trajectories.first().map(Trajectory::dt)
    }

    pub fn n_steps(&self) -> Option<usize> {
        self.trajectories.first().map(Trajectory::n_steps)
    }

    pub fn iter_split(&self, which: Split) -> impl Iterator<Item = &Trajectory> {
        self.trajectories
            .iter()
            .zip(&self.split)
            .filter(move |(_, s)| **s == which)
            .map(|(t, _)| t)
    }

    pub fn count(&self, which: Split) -> usize {
        self.split.iter().filter(|s| **s == which).count()
    }
}

/// Retags trajectories: a seeded shuffle, then the first
/// `floor(train_fraction · N)` become train and the rest test.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty dataset".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    let n_train = (train_fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::substream(seed, "split"));
    let mut split = vec![Split::Test; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    Ok(Dataset {
        trajectories: ds.trajectories.clone(),
        split,
        meta: ds.meta.clone(),
    })
}
