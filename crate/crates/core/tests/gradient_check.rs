use curriculum::data::{generate_gaussian_mixture, Example};
use curriculum::gradients::per_example_gradients;
use curriculum::model::{Architecture, Model};
use curriculum::sequencer::CurriculumPlan;
use curriculum::trainer::{evaluate, train, TrainOptions};
use curriculum::LrSchedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const STEP: f64 = 1e-5;

fn random_batch(rng: &mut ChaCha8Rng, k: usize, d: usize, n: usize) -> Vec<Example> {
    (0..n)
        .map(|id| Example {
            id,
            features: (0..d).map(|_| StandardNormal.sample(rng)).collect(),
            label: rng.random_range(0..k),
        })
        .collect()
}

fn random_model(rng: &mut ChaCha8Rng, arch: Architecture, k: usize, d: usize) -> Model {
    let mut m = Model::init(arch, k, d, rng.random());
    for p in m.params_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *p += 0.3 * z;
    }
    m
}

fn mean_loss(model: &Model, batch: &[Example]) -> f64 {
    model.forward_loss(batch).unwrap().mean
}

/// Central-difference directional derivatives along random unit directions
/// and along every coordinate.
fn check(arch_of: impl Fn(&mut ChaCha8Rng) -> Architecture, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(2..=6);
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=10);
        let arch = arch_of(&mut rng);
        let batch = random_batch(&mut rng, k, d, n);
        let model = random_model(&mut rng, arch, k, d);
        let (_, grad) = model.loss_and_gradient(&batch).unwrap();

        let mut directions: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let v: Vec<f64> = (0..grad.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        directions.extend((0..grad.len()).map(|j| {
            let mut e = vec![0.0; grad.len()];
            e[j] = 1.0;
            e
        }));

        for v in &directions {
            let shifted = |sign: f64| {
                let mut m = model.clone();
                for (p, dv) in m.params_mut().iter_mut().zip(v) {
                    *p += sign * STEP * dv;
                }
                mean_loss(&m, &batch)
            };
            let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * STEP);
            let analytic: f64 = grad.iter().zip(v).map(|(g, dv)| g * dv).sum();
            let scale = numeric.abs().max(analytic.abs()).max(1e-3);
            let rel = (numeric - analytic).abs() / scale;
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{arch:?}: numeric {numeric} vs analytic {analytic}");
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn linear_softmax_matches_finite_differences() {
    check(|_| Architecture::LinearSoftmax, 11);
}

#[test]
fn mlp_matches_finite_differences() {
    check(
        |rng| Architecture::Mlp1 {
            hidden: rng.random_range(1..=8),
        },
        12,
    );
}

#[test]
fn per_example_rows_match_finite_differences() {
    let ds = generate_gaussian_mixture(3, 4, 5, 1.0, 2).unwrap();
    let model = Model::init(Architecture::Mlp1 { hidden: 5 }, 3, 4, 9);
    let ids: Vec<usize> = (0..ds.len()).collect();
    let gs = per_example_gradients(&model, &ids, &ds, "all").unwrap();
    for (row, &id) in gs.rows().iter().zip(&ids) {
        let ex = ds.example(id);
        for (j, &analytic) in row.iter().enumerate() {
            let at = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[j] += delta;
                m.example_loss(&ex.features, ex.label)
            };
            let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
            let scale = numeric.abs().max(analytic.abs()).max(1e-3);
            assert!((numeric - analytic).abs() / scale < 1e-4, "id {id} coord {j}");
        }
    }
}

#[test]
fn one_small_step_never_increases_the_batch_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let k = rng.random_range(2..=5);
        let d = rng.random_range(1..=6);
        let n = rng.random_range(1..=8);
        let batch = random_batch(&mut rng, k, d, n);
        let mut model = random_model(&mut rng, Architecture::LinearSoftmax, k, d);
        let (before, grad) = model.loss_and_gradient(&batch).unwrap();
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= 1e-4 * g;
        }
        assert!(mean_loss(&model, &batch) <= before);
    }
}

#[test]
fn separable_single_example_gradient_vanishes() {
    let ex = Example {
        id: 0,
        features: vec![1.0, -0.5],
        label: 1,
    };
    let mut model = Model::init(Architecture::LinearSoftmax, 2, 2, 4);
    let mut norm = f64::INFINITY;
    for _ in 0..200_000 {
        let (_, grad) = model.loss_and_gradient(std::slice::from_ref(&ex)).unwrap();
        norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-6 {
            break;
        }
        let step = 1.0 / norm.sqrt();
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= step.min(50.0) * g;
        }
    }
    assert!(norm < 1e-6, "gradient norm {norm}");
}

#[test]
fn vanilla_training_is_plain_sgd() {
    let ds = generate_gaussian_mixture(3, 5, 30, 1.0, 6).unwrap();
    let schedule = LrSchedule::Exponential {
        lr0: 0.05,
        decrease_factor: 2.0,
        lr_step_length: 40,
    };
    let opts = TrainOptions {
        architecture: Architecture::Mlp1 { hidden: 6 },
        schedule: schedule.clone(),
        record_every: 10,
        init_seed: 17,
        self_paced: false,
    };
    let plan = CurriculumPlan::vanilla(&ds, 8, 120, 3).unwrap();
    let (trained, _) = train(&ds, &ds, &plan, &opts).unwrap();

    let mut reference = Model::init(opts.architecture, 3, 5, 17);
    for t in 0..120 {
        let batch: Vec<&Example> = plan.minibatch_at(t).into_iter().map(|id| ds.example(id)).collect();
        let (_, grad) = reference.loss_and_gradient(batch).unwrap();
        let lr = schedule.lr(t);
        for (p, g) in reference.params_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
    }
    assert_eq!(trained.params(), reference.params());
    assert_eq!(evaluate(&trained, &ds), evaluate(&reference, &ds));
}
