use pmnn::evaluator::DynamicsModel;
use pmnn::metriplectic::BulkNetConfig;
use pmnn::oracle::{OracleModel, DEFAULT_DT, DEFAULT_STEPS, DEFAULT_SUBSTEPS};
use pmnn::port::{BoundaryNetConfig, DataNorm, ModelConfig, PortModel};
use pmnn::state::{split_dataset, Dataset, DatasetMeta, IcSpec, PendulumParams, Split, Trajectory};
use pmnn::trainer::{mean_loss, train, LrSchedule, Pairs, StopReason, TrainConfig, Trainer};
use pmnn::Error;

fn net(width: usize) -> ModelConfig {
    ModelConfig {
        bulk: BulkNetConfig {
            hidden: vec![width, width],
        },
        boundary: BoundaryNetConfig {
            hidden: vec![width, width],
        },
    }
}

fn dataset(n: usize, steps: usize) -> Dataset {
    let o = OracleModel::new(PendulumParams::default(), DEFAULT_SUBSTEPS).unwrap();
    let ds = o
        .generate_dataset(n, 11, &IcSpec::default(), steps, DEFAULT_DT)
        .unwrap();
    split_dataset(&ds, 0.5, 11).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let ds = dataset(3, 20);
    let (m1, r1) = train(&ds, &net(8), &quick(4)).unwrap();
    let (m2, r2) = train(&ds, &net(8), &quick(4)).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1.params(), m2.params());
    let (_, r3) = train(&ds, &net(8), &TrainConfig { seed: 6, ..quick(4) }).unwrap();
    assert_ne!(r1.checksum, r3.checksum);
}

#[test]
fn report_has_one_row_per_epoch_from_zero() {
    let ds = dataset(3, 20);
    let (_, r) = train(&ds, &net(8), &quick(6)).unwrap();
    let epochs: Vec<usize> = r.rows.iter().map(|row| row.epoch).collect();
    assert_eq!(epochs, (0..=6).collect::<Vec<_>>());
    assert_eq!(r.stop, Some(StopReason::Completed));
    let csv = String::from_utf8(r.to_csv().unwrap()).unwrap();
    assert_eq!(csv.lines().count(), 8);
    assert_eq!(
        csv.lines().next().unwrap(),
        "epoch,train_data,train_deg,test_data,test_deg"
    );
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let ds = dataset(3, 20);
    let cfg = quick(5);
    let mut straight = Trainer::new(&ds, &net(8), &cfg).unwrap();
    for _ in 0..3 {
        straight.step_epoch().unwrap();
    }
    let mut first = Trainer::new(&ds, &net(8), &cfg).unwrap();
    for _ in 0..2 {
        first.step_epoch().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    first.save_state(dir.path()).unwrap();
    let mut resumed = Trainer::resume(&ds, &cfg, dir.path()).unwrap();
    let row = resumed.step_epoch().unwrap();
    assert_eq!(row, straight.rows()[3]);
    assert_eq!(resumed.model().params(), straight.model().params());
}

#[test]
fn reloaded_best_model_reproduces_recorded_test_loss() {
    let ds = dataset(4, 20);
    let cfg = quick(5);
    let (model, report) = train(&ds, &net(8), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = PortModel::load(dir.path()).unwrap();
    let test = Pairs::from_split(&ds, Split::Test).unwrap();
    let (data, deg) = mean_loss(&loaded, &test, cfg.lambda, cfg.data_norm).unwrap();
    assert_eq!(data.to_bits(), report.best().test_data.to_bits());
    assert_eq!(deg.to_bits(), report.best().test_deg.to_bits());
}

#[test]
fn constant_trajectories_train_to_a_vanishing_field() {
    let o = OracleModel::new(PendulumParams::default(), DEFAULT_SUBSTEPS).unwrap();
    let ic = IcSpec::default();
    let trajs: Vec<Trajectory> = (0..8)
        .map(|i| {
            let d = 0.02 * i as f64;
            let z = o
                .initial_state(
                    [ic.q1[0] + d, ic.q1[1]],
                    [ic.p1[0], ic.p1[1] - d],
                    [ic.q2[0], ic.q2[1] + d],
                    ic.p2,
                    300.0,
                )
                .unwrap();
            Trajectory::new(DEFAULT_DT, vec![z; DEFAULT_STEPS + 1]).unwrap()
        })
        .collect();
    let meta = DatasetMeta {
        params: *o.params(),
        ic,
        substeps: DEFAULT_SUBSTEPS,
        seed: 0,
    };
    let ds = split_dataset(&Dataset::new(trajs, meta).unwrap(), 0.5, 0).unwrap();
    let (_, r) = train(
        &ds,
        &net(16),
        &TrainConfig {
            epochs: 200,
            ..quick(200)
        },
    )
    .unwrap();
    let last = r.rows.last().unwrap();
    assert!(last.train_data <= 1e-8, "L_data {:e}", last.train_data);
}

#[test]
fn divergence_aborts_with_a_report() {
    let ds = dataset(3, 20);
    let cfg = TrainConfig {
        learning_rate: 5.0,
        schedule: LrSchedule::Constant,
        divergence_factor: 1.5,
        data_norm: DataNorm::Raw,
        ..quick(50)
    };
    let mut t = Trainer::new(&ds, &net(8), &cfg).unwrap();
    let err = t.run().unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    assert_eq!(t.report().stop, Some(StopReason::Diverged));
    assert!(t.report().rows.iter().all(|r| r.train_data.is_finite()));
}

#[test]
fn training_rejects_a_dataset_without_train_split() {
    let ds = dataset(2, 10);
    let mut all_test = ds.clone();
    all_test.split = vec![Split::Test; ds.len()];
    assert!(Trainer::new(&all_test, &net(8), &quick(1)).is_err());
}

#[test]
fn evaluator_degeneracy_matches_trainer_degeneracy() {
    let ds = dataset(4, 20);
    let cfg = quick(5);
    let (model, report) = train(&ds, &net(8), &cfg).unwrap();
    let test = Pairs::from_split(&ds, Split::Test).unwrap();
    let bundles = model.bulk_bundles(&test.states).unwrap();
    let mean = bundles
        .iter()
        .map(|b| b[0].degeneracy_sq() + b[1].degeneracy_sq())
        .sum::<f64>()
        / bundles.len() as f64;
    let recorded = report.best().test_deg;
    assert!((mean - recorded).abs() <= 1e-10 * recorded, "{mean:e} vs {recorded:e}");
}
