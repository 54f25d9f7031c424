//! Port-metriplectic assembly of the two pendula.
//!
//! ```text
//! ż₁ = L₁∇E₁ + M₁∇S₁ − L_b1∇E_b1 − M_b1∇S_b1     (bulk1(z₁), boun1(z₁, z₂))
//! ż₂ = L₂∇E₂ + M₂∇S₂ − M_b2∇S_b2                (bulk2(z₂), boun2(z₂, z₁))
//! ```
//!
//! The second boundary network is built without a conservative head, so
//! pendulum 1 cannot act reversibly on pendulum 2 whatever the weights are.

use std::fs;
use std::path::Path;

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Dense, Matrix, Mlp, ParamFile, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::metriplectic::{
    gram_from_lower, matvec, skew_from_strict_lower, BulkNet, BulkNetConfig, BulkVars, Mat5, MetriplecticOutput, Vec5,
    SKEW_ENTRIES, TRI_ENTRIES,
};
use crate::seed;
use crate::state::{StateVector, SystemState, STATE_DIM, SYSTEM_DIM};

const N: usize = STATE_DIM;
/// Conservative port head: strict lower triangle of `L_b` and `∇E_b`.
pub const CONS_OUTPUTS: usize = SKEW_ENTRIES + N;
/// Dissipative port head: lower triangle of `D_b` and `∇S_b`.
pub const DISS_OUTPUTS: usize = TRI_ENTRIES + N;

/// Parameter-name prefixes of the four sub-networks.
pub const PARTS: [&str; 4] = ["bulk1", "bulk2", "boun1", "boun2"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BoundaryNetConfig {
    /// Hidden widths of the shared tanh trunk; must be non-empty.
    pub hidden: Vec<usize>,
}

impl Default for BoundaryNetConfig {
    fn default() -> Self {
        BoundaryNetConfig { hidden: vec![64, 64] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub bulk: BulkNetConfig,
    pub boundary: BoundaryNetConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.boundary.hidden.is_empty() {
            return Err(Error::InvalidInput(
                "boundary networks need at least one hidden layer".into(),
            ));
        }
        if self.bulk.hidden.contains(&0) || self.boundary.hidden.contains(&0) {
            return Err(Error::InvalidInput("hidden layers must have positive width".into()));
        }
        Ok(())
    }
}

/// Which port terms a boundary network emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortFlags {
    pub conservative: bool,
    pub dissipative: bool,
}

/// Tape handles of a boundary network's heads, in scaled units.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryVars {
    /// `(L_b entries, ∇E_b)`.
    pub cons: Option<(Var, Var)>,
    /// `(D_b entries, ∇S_b)`.
    pub diss: Option<(Var, Var)>,
}

/// Maps `(z_self, z_other)` to port operators through a tanh trunk and
/// one linear head per port kind.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryNet {
    trunk: Mlp,
    cons: Option<Dense>,
    diss: Option<Dense>,
}

impl BoundaryNet {
    fn trunk_sizes(cfg: &BoundaryNetConfig) -> Vec<usize> {
        let mut s = vec![2 * N];
        s.extend(&cfg.hidden);
        s
    }

    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cfg: &BoundaryNetConfig,
        flags: PortFlags,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = Self::trunk_sizes(cfg);
        let width = *sizes.last().unwrap();
        let trunk = Mlp::init(store, &format!("{name}.trunk"), &sizes, Activation::Tanh, rng)?;
        let cons = if flags.conservative {
            Some(Dense::init(
                store,
                &format!("{name}.head_cons"),
                width,
                CONS_OUTPUTS,
                rng,
            )?)
        } else {
            None
        };
        let diss = if flags.dissipative {
            Some(Dense::init(
                store,
                &format!("{name}.head_diss"),
                width,
                DISS_OUTPUTS,
                rng,
            )?)
        } else {
            None
        };
        Ok(BoundaryNet { trunk, cons, diss })
    }

    /// Binds to stored parameters; the port flags follow from which heads exist.
    pub fn attach(store: &ParamStore, name: &str, cfg: &BoundaryNetConfig) -> Result<Self> {
        let sizes = Self::trunk_sizes(cfg);
        let width = *sizes.last().unwrap();
        let trunk = Mlp::attach(store, &format!("{name}.trunk"), &sizes, Activation::Tanh)?;
        let head = |kind: &str, n_out: usize| -> Result<Option<Dense>> {
            let prefix = format!("{name}.{kind}");
            if store.id(&format!("{prefix}.w")).is_some() {
                Dense::attach(store, &prefix, width, n_out).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(BoundaryNet {
            trunk,
            cons: head("head_cons", CONS_OUTPUTS)?,
            diss: head("head_diss", DISS_OUTPUTS)?,
        })
    }

    pub fn flags(&self) -> PortFlags {
        PortFlags {
            conservative: self.cons.is_some(),
            dissipative: self.diss.is_some(),
        }
    }

    pub fn has_conservative_port(&self) -> bool {
        self.cons.is_some()
    }

    pub fn has_dissipative_port(&self) -> bool {
        self.diss.is_some()
    }

    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<BoundaryVars> {
        let h = self.trunk.record(tape, x)?;
        let cons = match &self.cons {
            Some(layer) => {
                let c = layer.record(tape, h)?;
                Some((tape.columns(c, 0, SKEW_ENTRIES)?, tape.columns(c, SKEW_ENTRIES, N)?))
            }
            None => None,
        };
        let diss = match &self.diss {
            Some(layer) => {
                let d = layer.record(tape, h)?;
                Some((tape.columns(d, 0, TRI_ENTRIES)?, tape.columns(d, TRI_ENTRIES, N)?))
            }
            None => None,
        };
        Ok(BoundaryVars { cons, diss })
    }
}

/// Affine input normalization and per-component output scale, all
/// computed from training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f64; SYSTEM_DIM],
    pub std: [f64; SYSTEM_DIM],
    /// Output scale `σ` of each component of `ż`.
    pub scale: [f64; SYSTEM_DIM],
}

/// Standard deviations below this are treated as 1 (constant component).
const MIN_STD: f64 = 1e-12;

fn mean_std(rows: impl Iterator<Item = [f64; SYSTEM_DIM]> + Clone) -> ([f64; SYSTEM_DIM], [f64; SYSTEM_DIM]) {
    let n = rows.clone().count().max(1) as f64;
    let mut mean = [0.0; SYSTEM_DIM];
    for r in rows.clone() {
        for i in 0..SYSTEM_DIM {
            mean[i] += r[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; SYSTEM_DIM];
    for r in rows {
        for i in 0..SYSTEM_DIM {
            var[i] += (r[i] - mean[i]).powi(2);
        }
    }
    let std = var.map(|v| {
        let s = (v / n).sqrt();
        if s > MIN_STD {
            s
        } else {
            1.0
        }
    });
    (mean, std)
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            mean: [0.0; SYSTEM_DIM],
            std: [1.0; SYSTEM_DIM],
            scale: [1.0; SYSTEM_DIM],
        }
    }

    /// Input statistics of the states and output scale from the label
    /// standard deviations.
    pub fn from_pairs(pairs: &[(SystemState, [f64; SYSTEM_DIM])]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("normalization needs at least one sample".into()));
        }
        let (mean, std) = mean_std(pairs.iter().map(|(z, _)| z.to_array()));
        let (_, scale) = mean_std(pairs.iter().map(|(_, d)| *d));
        Ok(Normalization { mean, std, scale })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mean.iter().all(|v| v.is_finite())
            && self.std.iter().chain(&self.scale).all(|v| *v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid normalization {self:?}")))
        }
    }

    pub fn scale_of(&self, sub: usize) -> Vec5 {
        std::array::from_fn(|i| self.scale[sub * N + i])
    }

    fn normalize(&self, z: &[f64; SYSTEM_DIM], sub: usize) -> Vec5 {
        std::array::from_fn(|i| (z[sub * N + i] - self.mean[sub * N + i]) / self.std[sub * N + i])
    }
}

/// One port operator pair in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortTerm {
    /// `L_b` (skew) or `M_b` (symmetric PSD).
    pub op: Mat5,
    /// `∇E_b` or `∇S_b`.
    pub grad: Vec5,
}

impl PortTerm {
    pub fn apply(&self) -> Vec5 {
        matvec(&self.op, &self.grad)
    }
}

/// Every operator of the coupled model at one state, in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemBundle {
    pub bulk: [MetriplecticOutput; 2],
    /// Conservative port of pendulum 1.
    pub cons1: PortTerm,
    /// Dissipative ports of pendulum 1 and 2.
    pub diss: [PortTerm; 2],
    pub z_dot: [f64; SYSTEM_DIM],
}

/// Tape handles of one batched evaluation. `z_dot` is in scaled units.
#[derive(Debug, Clone, Copy)]
pub struct SystemVars {
    pub z_dot: [Var; 2],
    pub bulk: [BulkVars; 2],
    pub boundary: [BoundaryVars; 2],
    /// `L·∇S` and `M·∇E` of each bulk network, scaled units.
    pub r_l: [Var; 2],
    pub r_m: [Var; 2],
}

/// How the data term weighs the components of `ż`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum DataNorm {
    /// Each component divided by its output scale.
    Standardized,
    /// Plain squared error in physical units.
    Raw,
}

/// Tape handles of a batched loss.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// `batch × 1` data term per sample.
    pub data: Var,
    /// `batch × 1` degeneracy term per sample.
    pub deg: Var,
    /// `1 × 1` mean of `λ·data + deg`.
    pub total: Var,
}

/// Bulk and boundary networks of both pendula with one shared parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct PortModel {
    config: ModelConfig,
    norm: Normalization,
    params: ParamStore,
    bulk: [BulkNet; 2],
    boundary: [BoundaryNet; 2],
}

const BOUN1_FLAGS: PortFlags = PortFlags {
    conservative: true,
    dissipative: true,
};
const BOUN2_FLAGS: PortFlags = PortFlags {
    conservative: false,
    dissipative: true,
};

impl PortModel {
    /// Fresh Glorot-initialized model drawing weights from the `"init"`
    /// substream of `seed`.
    pub fn new(config: ModelConfig, norm: Normalization, seed: u64) -> Result<Self> {
        config.validate()?;
        norm.validate()?;
        let mut rng = seed::substream(seed, "init");
        let mut params = ParamStore::new();
        let bulk = [
            BulkNet::init(&mut params, PARTS[0], &config.bulk, &mut rng)?,
            BulkNet::init(&mut params, PARTS[1], &config.bulk, &mut rng)?,
        ];
        let boundary = [
            BoundaryNet::init(&mut params, PARTS[2], &config.boundary, BOUN1_FLAGS, &mut rng)?,
            BoundaryNet::init(&mut params, PARTS[3], &config.boundary, BOUN2_FLAGS, &mut rng)?,
        ];
        Ok(PortModel {
            config,
            norm,
            params,
            bulk,
            boundary,
        })
    }

    /// Binds existing parameters, checking shapes and port flags.
    pub fn from_params(config: ModelConfig, norm: Normalization, params: ParamStore) -> Result<Self> {
        config.validate()?;
        norm.validate()?;
        let bulk = [
            BulkNet::attach(&params, PARTS[0], &config.bulk)?,
            BulkNet::attach(&params, PARTS[1], &config.bulk)?,
        ];
        let boundary = [
            BoundaryNet::attach(&params, PARTS[2], &config.boundary)?,
            BoundaryNet::attach(&params, PARTS[3], &config.boundary)?,
        ];
        for (net, want, name) in [
            (&boundary[0], BOUN1_FLAGS, PARTS[2]),
            (&boundary[1], BOUN2_FLAGS, PARTS[3]),
        ] {
            if net.flags() != want {
                return Err(Error::InvalidInput(format!(
                    "{name} has ports {:?}, expected {want:?}",
                    net.flags()
                )));
            }
        }
        let expected: usize = PortModel::new(config.clone(), norm, 0)?.params.len();
        if params.len() != expected {
            return Err(Error::InvalidInput(format!(
                "parameter store has {} values, configuration needs {expected}",
                params.len()
            )));
        }
        Ok(PortModel {
            config,
            norm,
            params,
            bulk,
            boundary,
        })
    }

    /// Same architecture with every parameter zero: `ż ≡ 0`.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        let mut m = PortModel::new(config, Normalization::identity(), 0)?;
        m.params.flat_mut().iter_mut().for_each(|v| *v = 0.0);
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bulk_net(&self, sub: usize) -> &BulkNet {
        &self.bulk[sub]
    }

    pub fn boundary_net(&self, sub: usize) -> &BoundaryNet {
        &self.boundary[sub]
    }

    /// Normalized network inputs: bulk 1, bulk 2, boundary 1, boundary 2.
    fn inputs(&self, states: &[SystemState]) -> Result<[Matrix; 4]> {
        let b = states.len();
        let mut x = [
            Vec::with_capacity(b * N),
            Vec::with_capacity(b * N),
            Vec::with_capacity(2 * b * N),
            Vec::with_capacity(2 * b * N),
        ];
        for z in states {
            let v = z.to_array();
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite model input {v:?}")));
            }
            let n1 = self.norm.normalize(&v, 0);
            let n2 = self.norm.normalize(&v, 1);
            x[0].extend_from_slice(&n1);
            x[1].extend_from_slice(&n2);
            x[2].extend_from_slice(&n1);
            x[2].extend_from_slice(&n2);
            x[3].extend_from_slice(&n2);
            x[3].extend_from_slice(&n1);
        }
        let [a, c, d, e] = x;
        Ok([
            Matrix::from_vec(b, N, a)?,
            Matrix::from_vec(b, N, c)?,
            Matrix::from_vec(b, 2 * N, d)?,
            Matrix::from_vec(b, 2 * N, e)?,
        ])
    }

    /// Records `ż` of both subsystems for a batch of states.
    pub fn record(&self, tape: &mut Tape, states: &[SystemState]) -> Result<SystemVars> {
        let [x1, x2, xb1, xb2] = self.inputs(states)?;
        let x = [tape.input(x1), tape.input(x2)];
        let xb = [tape.input(xb1), tape.input(xb2)];
        let bulk = [self.bulk[0].record(tape, x[0])?, self.bulk[1].record(tape, x[1])?];
        let boundary = [
            self.boundary[0].record(tape, xb[0])?,
            self.boundary[1].record(tape, xb[1])?,
        ];
        let mut z_dot = Vec::with_capacity(2);
        let mut r_l = Vec::with_capacity(2);
        let mut r_m = Vec::with_capacity(2);
        for sub in 0..2 {
            let b = &bulk[sub];
            let a = tape.skew_matvec(b.l, b.grad_e)?;
            let c = tape.gram_matvec(b.d, b.grad_s)?;
            let mut zd = tape.add(a, c)?;
            if let Some((l, g)) = boundary[sub].cons {
                let t = tape.skew_matvec(l, g)?;
                zd = tape.sub(zd, t)?;
            }
            if let Some((d, g)) = boundary[sub].diss {
                let t = tape.gram_matvec(d, g)?;
                zd = tape.sub(zd, t)?;
            }
            z_dot.push(zd);
            r_l.push(tape.skew_matvec(b.l, b.grad_s)?);
            r_m.push(tape.gram_matvec(b.d, b.grad_e)?);
        }
        Ok(SystemVars {
            z_dot: [z_dot[0], z_dot[1]],
            bulk,
            boundary,
            r_l: [r_l[0], r_l[1]],
            r_m: [r_m[0], r_m[1]],
        })
    }

    /// Records the composite loss `mean(λ·L_data + L_deg)` over a batch.
    ///
    /// `L_data` is the squared error of `ż` against `labels` (standardized
    /// or raw per `data_norm`); `L_deg` is `‖L·∇S‖² + ‖M·∇E‖²` of both bulk
    /// networks in physical units.
    pub fn record_loss(
        &self,
        tape: &mut Tape,
        states: &[SystemState],
        labels: &[[f64; SYSTEM_DIM]],
        lambda: f64,
        data_norm: DataNorm,
    ) -> Result<LossVars> {
        if states.len() != labels.len() || states.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} states with {} labels",
                states.len(),
                labels.len()
            )));
        }
        let vars = self.record(tape, states)?;
        let mut data = None;
        let mut deg = None;
        for sub in 0..2 {
            let scale = self.norm.scale_of(sub);
            let sq: Vec<f64> = scale.iter().map(|s| s * s).collect();
            let y: Vec<f64> = labels
                .iter()
                .flat_map(|l| (0..N).map(move |i| l[sub * N + i] / scale[i]))
                .collect();
            let y = tape.input(Matrix::from_vec(labels.len(), N, y)?);
            let err = tape.sub(vars.z_dot[sub], y)?;
            let w = match data_norm {
                DataNorm::Standardized => vec![1.0; N],
                DataNorm::Raw => sq.clone(),
            };
            let d = tape.weighted_sq_norm(err, &w)?;
            let rl = tape.weighted_sq_norm(vars.r_l[sub], &sq)?;
            let rm = tape.weighted_sq_norm(vars.r_m[sub], &sq)?;
            let g = tape.add(rl, rm)?;
            data = Some(match data {
                None => d,
                Some(prev) => tape.add(prev, d)?,
            });
            deg = Some(match deg {
                None => g,
                Some(prev) => tape.add(prev, g)?,
            });
        }
        let (data, deg) = (data.unwrap(), deg.unwrap());
        let weighted = tape.scale(data, lambda);
        let per = tape.add(weighted, deg)?;
        let total = tape.mean(per);
        Ok(LossVars { data, deg, total })
    }

    /// Operator bundles at each state, in physical units.
    pub fn bundles(&self, states: &[SystemState]) -> Result<Vec<SystemBundle>> {
        let mut tape = Tape::new(&self.params);
        let vars = self.record(&mut tape, states)?;
        let s = [self.norm.scale_of(0), self.norm.scale_of(1)];
        let unscale = |g: &[f64], sc: &Vec5| -> Vec5 { std::array::from_fn(|i| g[i] / sc[i]) };
        let mut out = Vec::with_capacity(states.len());
        for (r, z) in states.iter().enumerate() {
            let heads = [
                tape.value(vars.bulk[0].heads).row(r),
                tape.value(vars.bulk[1].heads).row(r),
            ];
            if heads.iter().any(|h| !h.iter().all(|v| v.is_finite())) {
                return Err(Error::Numeric(format!(
                    "non-finite network output at z = {:?}",
                    z.to_array()
                )));
            }
            let bulk = [
                MetriplecticOutput::from_heads(heads[0], &s[0])?,
                MetriplecticOutput::from_heads(heads[1], &s[1])?,
            ];
            let zero = PortTerm {
                op: [[0.0; N]; N],
                grad: [0.0; N],
            };
            let cons1 = match vars.boundary[0].cons {
                Some((l, g)) => PortTerm {
                    op: skew_from_strict_lower(tape.value(l).row(r), &s[0]),
                    grad: unscale(tape.value(g).row(r), &s[0]),
                },
                None => zero,
            };
            let mut diss = [zero; 2];
            for sub in 0..2 {
                if let Some((d, g)) = vars.boundary[sub].diss {
                    diss[sub] = PortTerm {
                        op: gram_from_lower(tape.value(d).row(r), &s[sub]),
                        grad: unscale(tape.value(g).row(r), &s[sub]),
                    };
                }
            }
            let ports = [cons1.apply(), diss[0].apply(), diss[1].apply()];
            let mut z_dot = [0.0; SYSTEM_DIM];
            for i in 0..N {
                z_dot[i] = bulk[0].z_dot[i] - ports[0][i] - ports[1][i];
                z_dot[N + i] = bulk[1].z_dot[i] - ports[2][i];
            }
            if !z_dot.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite model output at z = {:?}",
                    z.to_array()
                )));
            }
            out.push(SystemBundle {
                bulk,
                cons1,
                diss,
                z_dot,
            });
        }
        Ok(out)
    }

    pub fn eval_system(&self, z: &SystemState) -> Result<[f64; SYSTEM_DIM]> {
        Ok(self.bundles(std::slice::from_ref(z))?[0].z_dot)
    }

    pub fn eval_subsystem1(&self, z1: &StateVector, z2: &StateVector) -> Result<Vec5> {
        let zd = self.eval_system(&SystemState { z1: *z1, z2: *z2 })?;
        Ok(std::array::from_fn(|i| zd[i]))
    }

    pub fn eval_subsystem2(&self, z2: &StateVector, z1: &StateVector) -> Result<Vec5> {
        let zd = self.eval_system(&SystemState { z1: *z1, z2: *z2 })?;
        Ok(std::array::from_fn(|i| zd[N + i]))
    }

    /// `ż` for many states at once, in physical units.
    pub fn eval_batch(&self, states: &[SystemState]) -> Result<Vec<[f64; SYSTEM_DIM]>> {
        Ok(self.bundles(states)?.into_iter().map(|b| b.z_dot).collect())
    }

    /// Writes the four sub-network parameter files and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(PARTS.len());
        for part in PARTS {
            let file = format!("{part}.json");
            self.params.subset(&format!("{part}.")).save(&dir.join(&file))?;
            files.push(file);
        }
        let manifest = ModelManifest {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            state_dim: N,
            config: self.config.clone(),
            normalization: self.norm,
            ports: [self.boundary[0].flags(), self.boundary[1].flags()],
            files,
            checksum: self.params.checksum(),
        };
        let path = dir.join(MODEL_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: ModelManifest =
            serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported model format {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        if m.state_dim != N {
            return Err(Error::InvalidInput(format!(
                "{}: checkpoint state dimension {} does not match {N}",
                path.display(),
                m.state_dim
            )));
        }
        if m.files.len() != PARTS.len() {
            return Err(Error::InvalidInput(format!(
                "{}: expected {} parameter files",
                path.display(),
                PARTS.len()
            )));
        }
        let mut params = ParamStore::new();
        for (file, part) in m.files.iter().zip(PARTS) {
            let sub = ParamStore::load(&dir.join(file))?;
            if let Some(stray) = sub.names().find(|n| !n.starts_with(&format!("{part}."))) {
                return Err(Error::InvalidInput(format!("{file}: parameter {stray} outside {part}")));
            }
            params.extend_from(&sub)?;
        }
        let found = params.checksum();
        if found != m.checksum {
            return Err(Error::Checksum {
                path,
                expected: m.checksum,
                found,
            });
        }
        let model = PortModel::from_params(m.config, m.normalization, params)?;
        if [model.boundary[0].flags(), model.boundary[1].flags()] != m.ports {
            return Err(Error::InvalidInput(format!(
                "{}: port flags {:?} disagree with the stored networks",
                path.display(),
                m.ports
            )));
        }
        Ok(model)
    }
}

const MODEL_FORMAT: &str = "pmnn-port-model";
const MODEL_VERSION: u32 = 1;
pub const MODEL_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub state_dim: usize,
    pub config: ModelConfig,
    pub normalization: Normalization,
    pub ports: [PortFlags; 2],
    pub files: Vec<String>,
    pub checksum: String,
}

/// Reads only the manifest of a checkpoint directory.
pub fn load_manifest(dir: &Path) -> Result<ModelManifest> {
    let path = dir.join(MODEL_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

/// Parameter file of one sub-network, for inspection.
pub fn load_part(dir: &Path, part: &str) -> Result<ParamFile> {
    let path = dir.join(format!("{part}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
