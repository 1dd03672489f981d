use physfit::data::generate_fig2_like;
use physfit::linear::ridge_fit;
use physfit::resampling::{bootstrap_ensemble, ensemble_predict};
use physfit::{BasisSpec, DMatrix, Dataset, ResampleMode};
use proptest::prelude::*;

fn fit(d: &Dataset) -> physfit::Result<physfit::LinearModel> {
    ridge_fit(d, &BasisSpec::Polynomial { degree: 3 }, 1e-6)
}

#[test]
fn members_do_not_depend_on_ensemble_size() {
    let d = generate_fig2_like(80, 1).unwrap();
    for mode in [ResampleMode::Split, ResampleMode::Replacement] {
        let small = bootstrap_ensemble(&d, fit, 5, 0.3, mode, 9).unwrap();
        let large = bootstrap_ensemble(&d, fit, 12, 0.3, mode, 9).unwrap();
        assert_eq!(small.splits[..], large.splits[..5]);
        assert_eq!(small.in_sample_mse[..], large.in_sample_mse[..5]);
        assert_eq!(small.weight_population, large.weight_population.columns(0, 5));
    }
}

#[test]
fn split_mode_row_counts() {
    let d = generate_fig2_like(1000, 2).unwrap();
    let r = bootstrap_ensemble(&d, fit, 8, 0.3, ResampleMode::Split, 4).unwrap();
    for s in &r.splits {
        assert_eq!(s.train.len(), 700);
        assert_eq!(s.test.len(), 300);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }
}

#[test]
fn replacement_draws_differ_between_members() {
    let d = generate_fig2_like(100, 3).unwrap();
    let r = bootstrap_ensemble(&d, fit, 10, 0.3, ResampleMode::Replacement, 5).unwrap();
    let multisets: Vec<Vec<usize>> = r
        .splits
        .iter()
        .map(|s| {
            let mut t = s.train.clone();
            t.sort_unstable();
            t
        })
        .collect();
    for i in 0..multisets.len() {
        for j in i + 1..multisets.len() {
            assert_ne!(multisets[i], multisets[j]);
        }
    }
    for s in &r.splits {
        assert_eq!(s.train.len(), 70);
        assert!(s.test.iter().all(|i| !s.train.contains(i)));
    }
}

proptest! {
    #[test]
    fn ensemble_uncertainty_is_at_least_data_noise(
        members in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..8),
        j_i in 0.0f64..2.0,
    ) {
        let pop = DMatrix::from_fn(2, members.len(), |i, j| members[j][i]);
        let xg = DMatrix::from_column_slice(4, 1, &[-1.0, 0.0, 0.5, 2.0]);
        let p = ensemble_predict(&xg, &pop, j_i, |x, w| Ok(x.map(|v| w[0] * v + w[1]))).unwrap();
        let identical = members.iter().all(|m| m == &members[0]);
        for &u in p.uncertainty.iter() {
            prop_assert!(u >= j_i.sqrt() - 1e-15);
            if identical {
                prop_assert!((u - j_i.sqrt()).abs() < 1e-12);
            }
        }
    }
}
