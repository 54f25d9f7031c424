//! Rollouts of learned models, relative-L2 boxplot statistics and
//! thermodynamic audits.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metriplectic::{dot5, norm5, Mat5, MetriplecticOutput, Vec5};
use crate::oracle::OracleModel;
use crate::port::PortModel;
use crate::state::{Dataset, Split, SystemState, Trajectory, STATE_DIM, SYSTEM_DIM};

const N: usize = STATE_DIM;

/// Position, momentum and entropy components of the system vector.
pub const Q_IDX: [usize; 4] = [0, 1, 5, 6];
pub const P_IDX: [usize; 4] = [2, 3, 7, 8];
pub const S_IDX: [usize; 2] = [4, 9];

/// Entropy rates below this count as violations.
pub const ENTROPY_RATE_TOL: f64 = -1e-6;

/// Anything that produces `ż` and per-pendulum bulk operator bundles.
pub trait DynamicsModel: Sync {
    fn eval_batch(&self, states: &[SystemState]) -> Result<Vec<[f64; SYSTEM_DIM]>>;

    /// Bulk bundles of pendulum 1 and 2 at each state, physical units.
    fn bulk_bundles(&self, states: &[SystemState]) -> Result<Vec<[MetriplecticOutput; 2]>>;

    /// One rollout step; forward Euler unless the model integrates itself.
    fn advance(&self, z: &SystemState, dt: f64) -> Result<[f64; SYSTEM_DIM]> {
        let f = self.eval_batch(std::slice::from_ref(z))?[0];
        let mut v = z.to_array();
        for i in 0..SYSTEM_DIM {
            v[i] += dt * f[i];
        }
        Ok(v)
    }
}

impl DynamicsModel for PortModel {
    fn eval_batch(&self, states: &[SystemState]) -> Result<Vec<[f64; SYSTEM_DIM]>> {
        PortModel::eval_batch(self, states)
    }

    fn bulk_bundles(&self, states: &[SystemState]) -> Result<Vec<[MetriplecticOutput; 2]>> {
        Ok(self.bundles(states)?.into_iter().map(|b| b.bulk).collect())
    }
}

/// The reference simulator seen as a model. It advances with its own RK4
/// substeps, so its rollouts reproduce generated data. Each pendulum's bulk
/// part is canonical Hamiltonian motion in its own spring with `M = 0` and
/// `∇S = e_s`; the coupling force and heat exchange act through the
/// ports.
impl DynamicsModel for OracleModel {
    fn eval_batch(&self, states: &[SystemState]) -> Result<Vec<[f64; SYSTEM_DIM]>> {
        states.iter().map(|z| self.rhs(z)).collect()
    }

    fn bulk_bundles(&self, states: &[SystemState]) -> Result<Vec<[MetriplecticOutput; 2]>> {
        let mut l: Mat5 = [[0.0; N]; N];
        for a in 0..2 {
            l[a][2 + a] = 1.0;
            l[2 + a][a] = -1.0;
        }
        let grad_s = [0.0, 0.0, 0.0, 0.0, 1.0];
        states
            .iter()
            .map(|z| {
                let p = self.params();
                let [l1, l2] = z.spring_lengths();
                let d2 = [z.z2.q[0] - z.z1.q[0], z.z2.q[1] - z.z1.q[1]];
                let f1 = self.tension(l1, z.z1.s, 0)?;
                let f2 = self.tension(l2, z.z2.s, 1)?;
                let g1 = [
                    f1 * z.z1.q[0] / l1,
                    f1 * z.z1.q[1] / l1,
                    z.z1.p[0] / p.m1,
                    z.z1.p[1] / p.m1,
                    self.temperature(l1, z.z1.s, 0)?,
                ];
                let g2 = [
                    f2 * d2[0] / l2,
                    f2 * d2[1] / l2,
                    z.z2.p[0] / p.m2,
                    z.z2.p[1] / p.m2,
                    self.temperature(l2, z.z2.s, 1)?,
                ];
                let zero = [[0.0; N]; N];
                Ok([
                    MetriplecticOutput::new(l, zero, g1, grad_s),
                    MetriplecticOutput::new(l, zero, g2, grad_s),
                ])
            })
            .collect()
    }

    fn advance(&self, z: &SystemState, dt: f64) -> Result<[f64; SYSTEM_DIM]> {
        let h = dt / self.substeps() as f64;
        let mut v = z.to_array();
        for _ in 0..self.substeps() {
            v = self.rk4_step(&v, h)?;
        }
        Ok(v)
    }
}

/// The reference right-hand side stepped with forward Euler, like a
/// learned model.
#[derive(Debug, Clone, Copy)]
pub struct EulerOracle<'a>(pub &'a OracleModel);

impl DynamicsModel for EulerOracle<'_> {
    fn eval_batch(&self, states: &[SystemState]) -> Result<Vec<[f64; SYSTEM_DIM]>> {
        self.0.eval_batch(states)
    }

    fn bulk_bundles(&self, states: &[SystemState]) -> Result<Vec<[MetriplecticOutput; 2]>> {
        self.0.bulk_bundles(states)
    }
}

/// `ż ≡ 0`: rollouts stay at the initial state (persistence baseline).
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroModel;

impl DynamicsModel for ZeroModel {
    fn eval_batch(&self, states: &[SystemState]) -> Result<Vec<[f64; SYSTEM_DIM]>> {
        Ok(vec![[0.0; SYSTEM_DIM]; states.len()])
    }

    fn bulk_bundles(&self, states: &[SystemState]) -> Result<Vec<[MetriplecticOutput; 2]>> {
        Ok(vec![[MetriplecticOutput::zero(); 2]; states.len()])
    }
}

/// A model rollout, possibly cut short.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    /// Output step at which the rollout stopped, if it did not finish.
    pub truncated_at: Option<usize>,
    pub reason: Option<String>,
}

/// `z_{t+1} = advance(z_t, dt)`. A non-finite state or a model error stops
/// the rollout; the states so far are kept and the step is flagged.
pub fn rollout(model: &dyn DynamicsModel, z0: &SystemState, n_steps: usize, dt: f64) -> Result<Rollout> {
    if !(dt > 0.0 && dt.is_finite()) || n_steps == 0 {
        return Err(Error::InvalidInput(format!(
            "invalid rollout grid: {n_steps} steps of {dt}"
        )));
    }
    if !z0.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite initial state {:?}",
            z0.to_array()
        )));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(*z0);
    let mut stop = None;
    for step in 1..=n_steps {
        let v = match model.advance(&states[step - 1], dt) {
            Ok(v) => v,
            Err(e) => {
                stop = Some((step, e.to_string()));
                break;
            }
        };
        if !v.iter().all(|c| c.is_finite()) {
            stop = Some((step, "state became non-finite".to_string()));
            break;
        }
        states.push(SystemState::from_array_unchecked(&v));
    }
    if states.len() < 2 {
        // Keep the trajectory well-formed: repeat the initial state.
        states.push(*z0);
    }
    let (truncated_at, reason) = match stop {
        Some((s, r)) => (Some(s), Some(r)),
        None => (None, None),
    };
    Ok(Rollout {
        trajectory: Trajectory::new(dt, states)?,
        truncated_at,
        reason,
    })
}

/// Per-snapshot relative errors of the three variable groups.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupErrors {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
}

impl GroupErrors {
    pub fn extend(&mut self, other: &GroupErrors) {
        self.q.extend(&other.q);
        self.p.extend(&other.p);
        self.s.extend(&other.s);
    }
}

fn group_norm(v: &[f64; SYSTEM_DIM], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// `‖pred_g(t) − truth_g(t)‖ / ‖truth_g(t)‖` for `g ∈ {q, p}` at every
/// snapshot; entropy errors are divided by the norm of the truth's
/// per-component entropy range instead. A zero denominator leaves the
/// absolute error.
pub fn relative_l2_errors(pred: &Trajectory, truth: &Trajectory) -> Result<GroupErrors> {
    if pred.len() != truth.len() || pred.dt() != truth.dt() {
        return Err(Error::InvalidInput(format!(
            "prediction has {} states at dt {}, truth {} at dt {}",
            pred.len(),
            pred.dt(),
            truth.len(),
            truth.dt()
        )));
    }
    let s_range = {
        let mut r = [0.0; 2];
        for (k, &i) in S_IDX.iter().enumerate() {
            let vals = truth.states().iter().map(|z| z.to_array()[i]);
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            r[k] = hi - lo;
        }
        r[0].hypot(r[1])
    };
    let mut out = GroupErrors::default();
    for (a, b) in pred.states().iter().zip(truth.states()) {
        let (a, b) = (a.to_array(), b.to_array());
        let mut d = [0.0; SYSTEM_DIM];
        for i in 0..SYSTEM_DIM {
            d[i] = a[i] - b[i];
        }
        out.q.push(ratio(group_norm(&d, &Q_IDX), group_norm(&b, &Q_IDX)));
        out.p.push(ratio(group_norm(&d, &P_IDX), group_norm(&b, &P_IDX)));
        out.s.push(ratio(group_norm(&d, &S_IDX), s_range));
    }
    Ok(out)
}

/// Errors of a possibly truncated rollout; snapshots it never reached
/// count as infinitely wrong.
pub fn rollout_errors(r: &Rollout, truth: &Trajectory) -> Result<GroupErrors> {
    let n = r.trajectory.len().min(truth.len());
    // The padding state added for one-step failures is not a real snapshot.
    let reached = r.truncated_at.map_or(n, |k| n.min(k));
    let head = |t: &Trajectory| Trajectory::new(t.dt(), t.states()[..reached.max(2)].to_vec());
    let mut e = relative_l2_errors(&head(&r.trajectory)?, &head(truth)?)?;
    for v in [&mut e.q, &mut e.p, &mut e.s] {
        v.truncate(reached);
        v.resize(truth.len(), f64::INFINITY);
    }
    Ok(e)
}

/// Five-number boxplot summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub lw: f64,
    pub lq: f64,
    pub med: f64,
    pub uq: f64,
    pub uw: f64,
}

/// Quantile by linear interpolation between order statistics of `sorted`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let (a, b) = (sorted[lo], sorted[hi]);
    if a == b {
        a
    } else {
        a + (h - lo as f64) * (b - a)
    }
}

impl BoxStats {
    /// Quartiles by linear interpolation; whiskers at the most extreme data
    /// within 1.5·IQR of the box.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("boxplot needs non-empty, NaN-free data".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lq = quantile(&v, 0.25);
        let med = quantile(&v, 0.5);
        let uq = quantile(&v, 0.75);
        let iqr = uq - lq;
        let (lo_fence, hi_fence) = (lq - 1.5 * iqr, uq + 1.5 * iqr);
        let lw = v.iter().copied().find(|x| *x >= lo_fence).unwrap_or(lq).min(lq);
        let uw = v.iter().rev().copied().find(|x| *x <= hi_fence).unwrap_or(uq).max(uq);
        Ok(BoxStats { lw, lq, med, uq, uw })
    }

    pub fn as_row(&self) -> [f64; 5] {
        [self.lw, self.lq, self.med, self.uq, self.uw]
    }
}

/// Thermodynamic audit of a model along one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub n_states: usize,
    /// `max |⟨∇E_i, ż_bulk,i⟩|` per pendulum.
    pub max_bulk_energy_rate: [f64; 2],
    /// Smallest `⟨∇S₁, ż₁⟩ + ⟨∇S₂, ż₂⟩` with the full port dynamics.
    pub min_entropy_rate: f64,
    /// States where that rate falls below `ENTROPY_RATE_TOL`.
    pub entropy_rate_violations: usize,
    /// Mean of `Σ_i ‖L_i∇S_i‖² + ‖M_i∇E_i‖²`; comparable to the training `L_deg`.
    pub mean_degeneracy: f64,
    /// Mean `‖L_i∇S_i‖` and `‖M_i∇E_i‖` per pendulum.
    pub mean_residual_norm: [[f64; 2]; 2],
    /// Smallest per-step change of `s₁ + s₂` along the trajectory.
    pub min_entropy_increment: f64,
    /// `max_t |E(z_t) − E(z_0)| / |E(z_0)|` under the reference energy,
    /// when an oracle is supplied and every state is in its domain.
    pub max_energy_drift: Option<f64>,
}

pub fn thermo_audit(model: &dyn DynamicsModel, traj: &Trajectory, oracle: Option<&OracleModel>) -> Result<Audit> {
    let states = traj.states();
    if !states.iter().all(SystemState::is_finite) {
        return Err(Error::InvalidInput("audit needs a finite trajectory".into()));
    }
    let bundles = model.bulk_bundles(states)?;
    let z_dot = model.eval_batch(states)?;
    let mut a = Audit {
        n_states: states.len(),
        max_bulk_energy_rate: [0.0; 2],
        min_entropy_rate: f64::INFINITY,
        entropy_rate_violations: 0,
        mean_degeneracy: 0.0,
        mean_residual_norm: [[0.0; 2]; 2],
        min_entropy_increment: f64::INFINITY,
        max_energy_drift: None,
    };
    for (b, zd) in bundles.iter().zip(&z_dot) {
        let mut rate = 0.0;
        for sub in 0..2 {
            let (de, _) = b[sub].energy_entropy_rates();
            a.max_bulk_energy_rate[sub] = a.max_bulk_energy_rate[sub].max(de.abs());
            let full: Vec5 = std::array::from_fn(|i| zd[sub * N + i]);
            rate += dot5(&b[sub].grad_s, &full);
            let (rl, rm) = b[sub].degeneracy_residual();
            a.mean_degeneracy += dot5(&rl, &rl) + dot5(&rm, &rm);
            a.mean_residual_norm[sub][0] += norm5(&rl);
            a.mean_residual_norm[sub][1] += norm5(&rm);
        }
        a.min_entropy_rate = a.min_entropy_rate.min(rate);
        if rate < ENTROPY_RATE_TOL {
            a.entropy_rate_violations += 1;
        }
    }
    let n = states.len() as f64;
    a.mean_degeneracy /= n;
    a.mean_residual_norm.iter_mut().flatten().for_each(|v| *v /= n);
    a.min_entropy_increment = states
        .windows(2)
        .map(|w| (w[1].z1.s + w[1].z2.s) - (w[0].z1.s + w[0].z2.s))
        .fold(f64::INFINITY, f64::min);
    if let Some(o) = oracle {
        let energies: Result<Vec<f64>> = states.iter().map(|z| o.total_energy(z)).collect();
        if let Ok(e) = energies {
            let e0 = e[0];
            a.max_energy_drift = Some(e.iter().map(|v| (v - e0).abs()).fold(0.0, f64::max) / e0.abs());
        }
    }
    Ok(a)
}

/// Audits of several trajectories folded into one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub n_states: usize,
    pub max_bulk_energy_rate: [f64; 2],
    pub min_entropy_rate: f64,
    pub entropy_rate_violations: usize,
    pub mean_degeneracy: f64,
    pub min_entropy_increment: f64,
    pub max_energy_drift: Option<f64>,
}

impl AuditSummary {
    pub fn combine(audits: &[Audit]) -> Option<Self> {
        let first = audits.first()?;
        let mut s = AuditSummary {
            n_states: 0,
            max_bulk_energy_rate: [0.0; 2],
            min_entropy_rate: f64::INFINITY,
            entropy_rate_violations: 0,
            mean_degeneracy: 0.0,
            min_entropy_increment: f64::INFINITY,
            max_energy_drift: first.max_energy_drift.map(|_| 0.0),
        };
        for a in audits {
            s.n_states += a.n_states;
            for i in 0..2 {
                s.max_bulk_energy_rate[i] = s.max_bulk_energy_rate[i].max(a.max_bulk_energy_rate[i]);
            }
            s.min_entropy_rate = s.min_entropy_rate.min(a.min_entropy_rate);
            s.entropy_rate_violations += a.entropy_rate_violations;
            s.mean_degeneracy += a.mean_degeneracy * a.n_states as f64;
            s.min_entropy_increment = s.min_entropy_increment.min(a.min_entropy_increment);
            s.max_energy_drift = match (s.max_energy_drift, a.max_energy_drift) {
                (Some(x), Some(y)) => Some(x.max(y)),
                _ => None,
            };
        }
        s.mean_degeneracy /= s.n_states as f64;
        Some(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: Split,
    pub n_trajectories: usize,
    pub truncated: usize,
    pub q: BoxStats,
    pub p: BoxStats,
    pub s: BoxStats,
    /// Audit along the model's own rollouts (finite parts only).
    pub audit: Option<AuditSummary>,
    #[serde(skip)]
    pub errors: GroupErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n_steps: usize,
    pub dt: f64,
    pub splits: Vec<SplitReport>,
}

impl EvalReport {
    pub fn split(&self, which: Split) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == which)
    }

    /// Whitespace table with columns `lw lq med uq uw` and rows `q p s`.
    pub fn table(&self, which: Split) -> Option<String> {
        let s = self.split(which)?;
        let mut out = String::from("group lw lq med uq uw\n");
        for (name, b) in [("q", &s.q), ("p", &s.p), ("s", &s.s)] {
            let row: Vec<String> = b.as_row().iter().map(|v| format!("{v:.6e}")).collect();
            out.push_str(&format!("{name} {}\n", row.join(" ")));
        }
        Some(out)
    }

    /// `report.json`, `{split}_boxplot.txt` and `{split}_errors.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
        };
        write("report.json", (serde_json::to_string_pretty(self)? + "\n").as_bytes())?;
        for s in &self.splits {
            let tag = match s.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            write(&format!("{tag}_boxplot.txt"), self.table(s.split).unwrap().as_bytes())?;
            let mut csv = String::from("index,q,p,s\n");
            for i in 0..s.errors.q.len() {
                csv.push_str(&format!(
                    "{i},{:.16e},{:.16e},{:.16e}\n",
                    s.errors.q[i], s.errors.p[i], s.errors.s[i]
                ));
            }
            write(&format!("{tag}_errors.csv"), csv.as_bytes())?;
        }
        Ok(())
    }
}

/// Rolls the model out for `n_steps` from the first state of every
/// trajectory of each split and compares with the stored trajectories.
pub fn evaluate(
    name: &str,
    model: &dyn DynamicsModel,
    ds: &Dataset,
    splits: &[Split],
    n_steps: usize,
    oracle: Option<&OracleModel>,
) -> Result<EvalReport> {
    let dt = ds.dt().ok_or_else(|| Error::InvalidInput("empty dataset".into()))?;
    let available = ds.n_steps().unwrap();
    if n_steps == 0 || n_steps > available {
        return Err(Error::InvalidInput(format!(
            "rollout length {n_steps} outside 1..={available} of the dataset"
        )));
    }
    let mut reports = Vec::new();
    for &which in splits {
        let trajs = ds
            .iter_split(which)
            .map(|t| Trajectory::new(dt, t.states()[..=n_steps].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        if trajs.is_empty() {
            continue;
        }
        let results = trajs
            .par_iter()
            .map(|truth| -> Result<(GroupErrors, bool, Option<Audit>)> {
                let r = rollout(model, truth.initial(), n_steps, dt)?;
                let e = rollout_errors(&r, truth)?;
                let finite: Vec<SystemState> = match r.truncated_at {
                    Some(t) => r.trajectory.states()[..t.min(r.trajectory.len())].to_vec(),
                    None => r.trajectory.states().to_vec(),
                };
                let audit = if finite.len() >= 2 {
                    thermo_audit(model, &Trajectory::new(dt, finite)?, oracle).ok()
                } else {
                    None
                };
                Ok((e, r.truncated_at.is_some(), audit))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut errors = GroupErrors::default();
        let mut audits = Vec::new();
        let mut truncated = 0;
        for (e, t, a) in &results {
            errors.extend(e);
            truncated += *t as usize;
            audits.extend(a);
        }
        reports.push(SplitReport {
            split: which,
            n_trajectories: trajs.len(),
            truncated,
            q: BoxStats::from_values(&errors.q)?,
            p: BoxStats::from_values(&errors.p)?,
            s: BoxStats::from_values(&errors.s)?,
            audit: AuditSummary::combine(&audits),
            errors,
        });
    }
    Ok(EvalReport {
        model: name.to_string(),
        n_steps,
        dt,
        splits: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{DEFAULT_DT, DEFAULT_SUBSTEPS};
    use crate::state::{IcSpec, PendulumParams};

    fn oracle() -> OracleModel {
        OracleModel::new(PendulumParams::default(), DEFAULT_SUBSTEPS).unwrap()
    }

    fn truth() -> Trajectory {
        let o = oracle();
        let ic = IcSpec::default();
        let z0 = o.initial_state(ic.q1, ic.p1, ic.q2, ic.p2, 300.0).unwrap();
        o.simulate(&z0, 40, DEFAULT_DT).unwrap()
    }

    #[test]
    fn zero_model_rollout_is_constant() {
        let t = truth();
        let r = rollout(&ZeroModel, t.initial(), 10, DEFAULT_DT).unwrap();
        assert!(r.truncated_at.is_none());
        assert!(r.trajectory.states().iter().all(|z| z == t.initial()));
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let t = truth();
        let e = relative_l2_errors(&t, &t).unwrap();
        for v in [&e.q, &e.p, &e.s] {
            let b = BoxStats::from_values(v).unwrap();
            assert_eq!(b.as_row(), [0.0; 5]);
        }
    }

    #[test]
    fn one_percent_position_scaling() {
        let t = truth();
        let scaled: Vec<SystemState> = t
            .states()
            .iter()
            .map(|z| {
                let mut v = z.to_array();
                for i in Q_IDX {
                    v[i] *= 1.01;
                }
                SystemState::from_array_unchecked(&v)
            })
            .collect();
        let pred = Trajectory::new(t.dt(), scaled).unwrap();
        let e = relative_l2_errors(&pred, &t).unwrap();
        let b = BoxStats::from_values(&e.q).unwrap();
        assert!((b.med - 0.01).abs() < 1e-12);
        assert_eq!(BoxStats::from_values(&e.p).unwrap().med, 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let t = truth();
        let short = Trajectory::new(t.dt(), t.states()[..5].to_vec()).unwrap();
        assert!(relative_l2_errors(&short, &t).is_err());
    }

    #[test]
    fn boxplot_ordering_and_whiskers() {
        let b = BoxStats::from_values(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.lq, b.med, b.uq), (2.0, 3.0, 4.0));
        assert_eq!((b.lw, b.uw), (1.0, 4.0));
        assert!(BoxStats::from_values(&[]).is_err());
    }

    #[test]
    fn zero_model_audit_is_all_zero() {
        let a = thermo_audit(&ZeroModel, &truth(), None).unwrap();
        assert_eq!(a.max_bulk_energy_rate, [0.0; 2]);
        assert_eq!(a.min_entropy_rate, 0.0);
        assert_eq!(a.mean_degeneracy, 0.0);
    }

    #[test]
    fn truncated_rollout_pads_with_infinity() {
        struct Blowup;
        impl DynamicsModel for Blowup {
            fn eval_batch(&self, s: &[SystemState]) -> Result<Vec<[f64; SYSTEM_DIM]>> {
                let v = s[0].to_array()[0];
                Ok(vec![[if v > 5.0 { f64::INFINITY } else { 10.0 }; SYSTEM_DIM]; s.len()])
            }
            fn bulk_bundles(&self, s: &[SystemState]) -> Result<Vec<[MetriplecticOutput; 2]>> {
                ZeroModel.bulk_bundles(s)
            }
        }
        let t = truth();
        let r = rollout(&Blowup, t.initial(), t.n_steps(), t.dt()).unwrap();
        let at = r.truncated_at.unwrap();
        let e = rollout_errors(&r, &t).unwrap();
        assert_eq!(e.q.len(), t.len());
        assert!(e.q[..at].iter().all(|v| v.is_finite()));
        assert!(e.q[at..].iter().all(|v| v.is_infinite()));
    }
}
