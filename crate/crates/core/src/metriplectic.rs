//! Bulk metriplectic network: `z ↦ (L, M, ∂E/∂z, ∂S/∂z)` with
//! `ż = L·∂E/∂z + M·∂S/∂z`.
//!
//! `L` is assembled from its strict lower triangle and `M = D·Dᵀ` from a
//! lower-triangular factor, so skew-symmetry and positive semi-definiteness
//! hold for any network weights. Degeneracy (`L·∂S/∂z = 0`, `M·∂E/∂z = 0`)
//! is only encouraged through the loss.
//!
//! Networks work in scaled units: with per-component output scale `σ`,
//! the physical operators are `L = σ·L̃·σ`, `D = σ·D̃` and the physical
//! gradients `g = g̃/σ`, which leaves `ż = σ ⊙ (L̃·g̃E + D̃D̃ᵀ·g̃S)` and keeps
//! the structure exact.

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Matrix, Mlp, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::state::STATE_DIM;

const N: usize = STATE_DIM;
/// Strict lower triangle of a 5×5 matrix.
pub const SKEW_ENTRIES: usize = N * (N - 1) / 2;
/// Lower triangle including the diagonal.
pub const TRI_ENTRIES: usize = N * (N + 1) / 2;
/// `L` entries, `D` entries, `∂E/∂z`, `∂S/∂z`.
pub const BULK_OUTPUTS: usize = SKEW_ENTRIES + TRI_ENTRIES + 2 * N;

pub type Mat5 = [[f64; N]; N];
pub type Vec5 = [f64; N];

pub fn matvec(a: &Mat5, x: &Vec5) -> Vec5 {
    let mut y = [0.0; N];
    for (yi, row) in y.iter_mut().zip(a) {
        *yi = row.iter().zip(x).map(|(r, v)| r * v).sum();
    }
    y
}

pub fn dot5(a: &Vec5, b: &Vec5) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm5(a: &Vec5) -> f64 {
    dot5(a, a).sqrt()
}

/// Skew matrix `σ_i·e_ij·σ_j` below the diagonal, mirrored with opposite sign.
pub fn skew_from_strict_lower(e: &[f64], scale: &Vec5) -> Mat5 {
    debug_assert_eq!(e.len(), SKEW_ENTRIES);
    let mut l = [[0.0; N]; N];
    let mut k = 0;
    for i in 1..N {
        for j in 0..i {
            let v = scale[i] * e[k] * scale[j];
            l[i][j] = v;
            l[j][i] = -v;
            k += 1;
        }
    }
    l
}

/// `M = D·Dᵀ` with `D_ij = σ_i·e_ij` for `i ≥ j`; each off-diagonal
/// entry is computed once and mirrored, so `M` is exactly symmetric.
pub fn gram_from_lower(e: &[f64], scale: &Vec5) -> Mat5 {
    debug_assert_eq!(e.len(), TRI_ENTRIES);
    let mut d = [[0.0; N]; N];
    let mut k = 0;
    for i in 0..N {
        for j in 0..=i {
            d[i][j] = scale[i] * e[k];
            k += 1;
        }
    }
    let mut m = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let v: f64 = (0..=j).map(|c| d[i][c] * d[j][c]).sum();
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// One evaluation of a bulk network in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetriplecticOutput {
    pub l: Mat5,
    pub m: Mat5,
    pub grad_e: Vec5,
    pub grad_s: Vec5,
    pub z_dot: Vec5,
}

impl MetriplecticOutput {
    /// Assembles the bundle from explicit operators; `z_dot` is derived.
    pub fn new(l: Mat5, m: Mat5, grad_e: Vec5, grad_s: Vec5) -> Self {
        let a = matvec(&l, &grad_e);
        let b = matvec(&m, &grad_s);
        let mut z_dot = [0.0; N];
        for i in 0..N {
            z_dot[i] = a[i] + b[i];
        }
        MetriplecticOutput {
            l,
            m,
            grad_e,
            grad_s,
            z_dot,
        }
    }

    /// Builds the bundle from raw network heads in scaled units.
    pub fn from_heads(heads: &[f64], scale: &Vec5) -> Result<Self> {
        if heads.len() != BULK_OUTPUTS {
            return Err(Error::InvalidInput(format!(
                "bulk heads need {BULK_OUTPUTS} values, got {}",
                heads.len()
            )));
        }
        let (le, rest) = heads.split_at(SKEW_ENTRIES);
        let (de, rest) = rest.split_at(TRI_ENTRIES);
        let mut ge = [0.0; N];
        let mut gs = [0.0; N];
        for i in 0..N {
            ge[i] = rest[i] / scale[i];
            gs[i] = rest[N + i] / scale[i];
        }
        Ok(Self::new(
            skew_from_strict_lower(le, scale),
            gram_from_lower(de, scale),
            ge,
            gs,
        ))
    }

    pub fn zero() -> Self {
        Self::new([[0.0; N]; N], [[0.0; N]; N], [0.0; N], [0.0; N])
    }

    /// `(L·∂S/∂z, M·∂E/∂z)`.
    pub fn degeneracy_residual(&self) -> (Vec5, Vec5) {
        (matvec(&self.l, &self.grad_s), matvec(&self.m, &self.grad_e))
    }

    /// `‖L·∂S/∂z‖² + ‖M·∂E/∂z‖²`.
    pub fn degeneracy_sq(&self) -> f64 {
        let (rl, rm) = self.degeneracy_residual();
        dot5(&rl, &rl) + dot5(&rm, &rm)
    }

    /// `(⟨∂E/∂z, ż⟩, ⟨∂S/∂z, ż⟩)`.
    pub fn energy_entropy_rates(&self) -> (f64, f64) {
        (dot5(&self.grad_e, &self.z_dot), dot5(&self.grad_s, &self.z_dot))
    }
}

/// Architecture of a bulk network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BulkNetConfig {
    pub hidden: Vec<usize>,
}

impl Default for BulkNetConfig {
    fn default() -> Self {
        BulkNetConfig { hidden: vec![64, 64] }
    }
}

impl BulkNetConfig {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![N];
        s.extend(&self.hidden);
        s.push(BULK_OUTPUTS);
        s
    }
}

/// Tape handles of the four bulk heads, in scaled units.
#[derive(Debug, Clone, Copy)]
pub struct BulkVars {
    pub heads: Var,
    pub l: Var,
    pub d: Var,
    pub grad_e: Var,
    pub grad_s: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BulkNet {
    mlp: Mlp,
}

impl BulkNet {
    pub fn init<R: Rng>(store: &mut ParamStore, name: &str, cfg: &BulkNetConfig, rng: &mut R) -> Result<Self> {
        Ok(BulkNet {
            mlp: Mlp::init(store, name, &cfg.sizes(), Activation::Identity, rng)?,
        })
    }

    pub fn attach(store: &ParamStore, name: &str, cfg: &BulkNetConfig) -> Result<Self> {
        Ok(BulkNet {
            mlp: Mlp::attach(store, name, &cfg.sizes(), Activation::Identity)?,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Records the network on normalized inputs `x` (`batch × 5`).
    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<BulkVars> {
        let heads = self.mlp.record(tape, x)?;
        Ok(BulkVars {
            heads,
            l: tape.columns(heads, 0, SKEW_ENTRIES)?,
            d: tape.columns(heads, SKEW_ENTRIES, TRI_ENTRIES)?,
            grad_e: tape.columns(heads, SKEW_ENTRIES + TRI_ENTRIES, N)?,
            grad_s: tape.columns(heads, SKEW_ENTRIES + TRI_ENTRIES + N, N)?,
        })
    }
}

/// Evaluates a bulk network at one state. `mean`/`std` normalize the input,
/// `scale` is the output scale `σ`.
pub fn eval_bulk(
    net: &BulkNet,
    params: &ParamStore,
    z: &Vec5,
    mean: &Vec5,
    std: &Vec5,
    scale: &Vec5,
) -> Result<MetriplecticOutput> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite bulk input {z:?}")));
    }
    let x: Vec<f64> = (0..N).map(|i| (z[i] - mean[i]) / std[i]).collect();
    let (out, _) = net.mlp.forward(params, &Matrix::from_vec(1, N, x)?)?;
    if !out.data().iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite bulk network output at z = {z:?}")));
    }
    MetriplecticOutput::from_heads(out.row(0), scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::substream;

    fn random_heads<R: Rng>(rng: &mut R) -> Vec<f64> {
        (0..BULK_OUTPUTS).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn skew_and_gram_structure_is_exact() {
        let mut rng = substream(1, "t");
        for _ in 0..200 {
            let h = random_heads(&mut rng);
            let scale = [0.5, 3.0, 1e-2, 7.0, 1.0];
            let out = MetriplecticOutput::from_heads(&h, &scale).unwrap();
            for i in 0..N {
                for j in 0..N {
                    assert_eq!(out.l[i][j], -out.l[j][i]);
                    assert_eq!(out.m[i][j], out.m[j][i]);
                }
            }
            let x: Vec5 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            assert!(dot5(&x, &matvec(&out.m, &x)) >= -1e-12);
            assert!(dot5(&out.grad_e, &matvec(&out.l, &out.grad_e)).abs() <= 1e-12);
        }
    }

    #[test]
    fn gram_matches_explicit_product() {
        let e: Vec<f64> = (1..=TRI_ENTRIES).map(|v| v as f64 * 0.1).collect();
        let m = gram_from_lower(&e, &[1.0; N]);
        let mut d = [[0.0; N]; N];
        let mut k = 0;
        for i in 0..N {
            for j in 0..=i {
                d[i][j] = e[k];
                k += 1;
            }
        }
        for i in 0..N {
            for j in 0..N {
                let v: f64 = (0..N).map(|c| d[i][c] * d[j][c]).sum();
                assert!((m[i][j] - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn residuals_and_rates_in_trivial_cases() {
        let mut rng = substream(2, "t");
        let mut h = random_heads(&mut rng);
        for v in &mut h[BULK_OUTPUTS - N..] {
            *v = 0.0;
        }
        let out = MetriplecticOutput::from_heads(&h, &[1.0; N]).unwrap();
        assert_eq!(out.degeneracy_residual().0, [0.0; N]);

        let zero = MetriplecticOutput::zero();
        assert_eq!(zero.degeneracy_residual().1, [0.0; N]);
        // M = 0 with ∂S/∂z in the kernel of L: no entropy production.
        let mut le = h[..SKEW_ENTRIES].to_vec();
        for v in &mut le[6..] {
            *v = 0.0;
        }
        let l = skew_from_strict_lower(&le, &[1.0; N]);
        let only_l = MetriplecticOutput::new(l, [[0.0; N]; N], [1.0, 2.0, 3.0, 4.0, 5.0], [0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(only_l.degeneracy_residual(), ([0.0; N], [0.0; N]));
        let (de, ds) = only_l.energy_entropy_rates();
        assert!(de.abs() <= 1e-12);
        assert_eq!(ds, 0.0);
    }

    #[test]
    fn zero_last_layer_gives_zero_field() {
        let mut store = ParamStore::new();
        let net = BulkNet::init(&mut store, "b", &BulkNetConfig::default(), &mut substream(0, "w")).unwrap();
        let last = net.mlp().layers().last().unwrap();
        store.get_mut(last.w).iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(last.b).iter_mut().for_each(|v| *v = 0.0);
        let out = eval_bulk(
            &net,
            &store,
            &[1.0, 2.0, 0.3, 0.4, 0.1],
            &[0.0; N],
            &[1.0; N],
            &[2.0; N],
        )
        .unwrap();
        assert_eq!(out.l, [[0.0; N]; N]);
        assert_eq!(out.m, [[0.0; N]; N]);
        assert_eq!(out.z_dot, [0.0; N]);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut store = ParamStore::new();
        let net = BulkNet::init(&mut store, "b", &BulkNetConfig::default(), &mut substream(0, "w")).unwrap();
        let z = [f64::NAN, 0.0, 0.0, 0.0, 0.0];
        assert!(eval_bulk(&net, &store, &z, &[0.0; N], &[1.0; N], &[1.0; N]).is_err());
    }
}
