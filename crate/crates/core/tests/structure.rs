use pmnn::metriplectic::{matvec, BulkNetConfig, Mat5, MetriplecticOutput};
use pmnn::port::{BoundaryNetConfig, ModelConfig, Normalization, PortModel};
use pmnn::state::{StateVector, SystemState, SYSTEM_DIM};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        bulk: BulkNetConfig { hidden: vec![8, 8] },
        boundary: BoundaryNetConfig { hidden: vec![8, 8] },
    }
}

fn is_skew(a: &Mat5) -> bool {
    (0..5).all(|i| (0..5).all(|j| a[i][j] == -a[j][i]))
}

fn quad(a: &Mat5, x: &[f64; 5]) -> f64 {
    matvec(a, x).iter().zip(x).map(|(u, v)| u * v).sum()
}

/// A model with arbitrary weights of magnitude `w` and arbitrary
/// normalization, evaluated at an arbitrary state.
fn random_case(seed: u64, w: f64) -> (PortModel, SystemState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = Normalization {
        mean: std::array::from_fn(|_| rng.gen_range(-2.0..2.0)),
        std: std::array::from_fn(|_| rng.gen_range(0.05..3.0)),
        scale: std::array::from_fn(|_| 10f64.powf(rng.gen_range(-3.0..1.0))),
    };
    let mut m = PortModel::new(small(), norm, seed).unwrap();
    for v in m.params_mut().flat_mut() {
        *v = w * rng.gen_range(-1.0..1.0);
    }
    let mut sv = || {
        StateVector::new(
            [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)],
            [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
            rng.gen_range(-1.0..1.0),
        )
        .unwrap()
    };
    let z = SystemState::new(sv(), sv()).unwrap();
    (m, z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn operators_are_skew_and_positive_semidefinite(seed in any::<u64>(), w in 0.01f64..3.0, xs in prop::collection::vec(-1.0f64..1.0, 5 * 20)) {
        let (m, z) = random_case(seed, w);
        let b = m.bundles(std::slice::from_ref(&z)).unwrap()[0];
        let skews = [b.bulk[0].l, b.bulk[1].l, b.cons1.op];
        let grams = [b.bulk[0].m, b.bulk[1].m, b.diss[0].op, b.diss[1].op];
        for l in &skews {
            prop_assert!(is_skew(l));
        }
        for g in &grams {
            prop_assert!((0..5).all(|i| (0..5).all(|j| g[i][j] == g[j][i])));
            let big = g.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            for x in xs.chunks(5) {
                let x: [f64; 5] = x.try_into().unwrap();
                prop_assert!(quad(g, &x) >= -1e-12 * big.max(1.0));
            }
        }
    }

    #[test]
    fn port_form_assembles_the_field(seed in any::<u64>(), w in 0.01f64..2.0) {
        let (m, z) = random_case(seed, w);
        let b = m.bundles(std::slice::from_ref(&z)).unwrap()[0];
        let (c, d1, d2) = (b.cons1.apply(), b.diss[0].apply(), b.diss[1].apply());
        let mut want = [0.0; SYSTEM_DIM];
        for i in 0..5 {
            want[i] = b.bulk[0].z_dot[i] - c[i] - d1[i];
            want[5 + i] = b.bulk[1].z_dot[i] - d2[i];
        }
        prop_assert_eq!(b.z_dot, want);
    }
}

/// Operators whose gradients lie in each other's null spaces: skew `L`
/// with `L·∇S = 0` and PSD `M` with `M·∇E = 0`.
#[test]
fn constructed_degenerate_operators_conserve_and_produce() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let g_s: [f64; 5] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let g_e: [f64; 5] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let proj = |v: &[f64; 5], n: &[f64; 5]| -> [f64; 5] {
            let k = v.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() / n.iter().map(|a| a * a).sum::<f64>();
            std::array::from_fn(|i| v[i] - k * n[i])
        };
        let a: [f64; 5] = proj(&std::array::from_fn(|_| rng.gen_range(-1.0..1.0)), &g_s);
        let c: [f64; 5] = proj(&std::array::from_fn(|_| rng.gen_range(-1.0..1.0)), &g_s);
        let d: [f64; 5] = proj(&std::array::from_fn(|_| rng.gen_range(-1.0..1.0)), &g_e);
        let l: Mat5 = std::array::from_fn(|i| std::array::from_fn(|j| a[i] * c[j] - c[i] * a[j]));
        let m: Mat5 = std::array::from_fn(|i| std::array::from_fn(|j| d[i] * d[j]));
        let out = MetriplecticOutput::new(l, m, g_e, g_s);
        let (de, ds) = out.energy_entropy_rates();
        assert!(de.abs() <= 1e-12, "{de:e}");
        assert!(ds >= -1e-12, "{ds:e}");
        assert!(out.degeneracy_sq() <= 1e-24);
    }
}

#[test]
fn field_is_continuous_under_tiny_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..20 {
        let (m, z) = random_case(seed, 0.5);
        let v = z.to_array();
        let f = m.eval_system(&z).unwrap();
        let mut w = v;
        for c in w.iter_mut() {
            *c += 1e-9 * rng.gen_range(-1.0..1.0);
        }
        let g = m.eval_system(&SystemState::from_array(&w).unwrap()).unwrap();
        let d = f.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let n = f.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(d <= 1e-5 * n, "{d:e} vs {n:e}");
    }
}
