use physfit::symreg::{evolve, fitness};
use physfit::{Dataset, ExprTree, GpConfig, Primitive};
use proptest::prelude::*;

fn quadratic_data() -> Dataset {
    let x: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| v * v + v).collect();
    Dataset::from_xy(&x, &y).unwrap()
}

fn small_config(seed: u64) -> GpConfig {
    GpConfig {
        primitives: vec![Primitive::Add, Primitive::Sub, Primitive::Mul, Primitive::Var, Primitive::Const],
        population_size: 60,
        generations: 15,
        max_depth: 4,
        seed,
        ..GpConfig::default()
    }
}

#[test]
fn evolution_is_reproducible() {
    let d = quadratic_data();
    let a = evolve(&d, &small_config(3)).unwrap();
    let b = evolve(&d, &small_config(3)).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.population, b.population);
    assert_eq!(
        a.history.iter().map(|h| h.best_fitness.to_bits()).collect::<Vec<_>>(),
        b.history.iter().map(|h| h.best_fitness.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn best_fitness_history_never_worsens() {
    let r = evolve(&quadratic_data(), &small_config(8)).unwrap();
    assert_eq!(r.history.len(), 16);
    for w in r.history.windows(2) {
        assert!(w[1].best_fitness <= w[0].best_fitness);
    }
    assert_eq!(r.best_fitness, r.history.last().unwrap().best_fitness);
    assert_eq!(fitness(&r.best, &quadratic_data()), r.best_fitness);
}

#[test]
fn final_population_respects_limits() {
    let cfg = small_config(5);
    let r = evolve(&quadratic_data(), &cfg).unwrap();
    assert_eq!(r.population.len(), cfg.population_size);
    assert!(r.population.iter().all(|t| t.depth() <= cfg.max_depth));
}

#[test]
fn exact_expression_has_zero_fitness() {
    let t = ExprTree::parse_prefix("(+ (* x0 x0) x0)").unwrap();
    assert_eq!(fitness(&t, &quadratic_data()), 0.0);
}

proptest! {
    #[test]
    fn prefix_text_round_trips(seed in 0u64..40) {
        let r = evolve(&quadratic_data(), &GpConfig { generations: 1, population_size: 20, seed, ..small_config(0) }).unwrap();
        for t in &r.population {
            let back = ExprTree::parse_prefix(&t.to_prefix()).unwrap();
            prop_assert_eq!(&back.to_prefix(), &t.to_prefix());
        }
    }
}
