use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwrc::conductance::{rescaled_field, sample_field, tail_functional, ConductanceField, ConductanceModel, EllipticModel, TailModel};
use rwrc::lattice::{Domain, LatticeBox};
use rwrc::spectrum::{assemble, dirichlet_form, principal_eigen, semigroup_apply, DEFAULT_TOLERANCE};
use rwrc::varprob::{solve_chi_d, RegimeParams, SolverConfig};
use rwrc::walker::nonexit_exact;

fn unit_box(d: usize, alpha: f64) -> Arc<LatticeBox> {
    Arc::new(LatticeBox::build(d, alpha, Domain::unit_cube(d)).unwrap())
}

fn random_unit_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rayleigh_quotients_bound_the_principal_eigenvalue(seed in any::<u64>(), v0 in 0.0f64..2.0) {
        let b = unit_box(2, 6.0);
        let f = sample_field(&b, &ConductanceModel::Elliptic(EllipticModel::new(0.3, rwrc::conductance::EllipticLaw::Uniform).unwrap()), seed);
        let v: Vec<f64> = (0..b.len()).map(|i| v0 * (i % 3) as f64).collect();
        let op = assemble(&f, Some(&v), 1.0).unwrap();
        let lambda = principal_eigen(&op, DEFAULT_TOLERANCE).unwrap().eigenvalue;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let g = random_unit_vector(b.len(), &mut rng);
            let q = dirichlet_form(&f, &g).unwrap() + g.iter().zip(&v).map(|(g, v)| v * g * g).sum::<f64>();
            prop_assert!(lambda <= q + 1e-12 * q.abs().max(1.0));
        }
    }

    #[test]
    fn semigroup_is_positive_and_sub_markovian(seed in any::<u64>(), t in 0.0f64..8.0) {
        let b = unit_box(1, 12.0);
        let f = sample_field(&b, &ConductanceModel::Tail(TailModel::new(1.0, 1.0, 1.0).unwrap()), seed);
        let op = assemble(&f, None, 1.0).unwrap();
        let u = semigroup_apply(&op, t, &vec![1.0; b.len()]).unwrap();
        for x in u {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&x), "{}", x);
        }
    }

    /// `P^phi(stay) >= exp(-4 d eps t) P^(psi - eps)(stay)` when `|phi - psi| <= eps`.
    #[test]
    fn perturbed_fields_compare(seed in any::<u64>(), n in 1usize..=9, eps in 0.01f64..0.5, t in prop::sample::select(vec![1.0, 5.0])) {
        let b = Arc::new(LatticeBox::path(n).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = b.edges().len();
        let psi: Vec<f64> = (0..m).map(|_| rng.gen_range(eps + 0.05..2.0)).collect();
        let phi: Vec<f64> = psi.iter().map(|p| p + eps * rng.gen_range(-1.0..=1.0)).collect();
        let lowered: Vec<f64> = psi.iter().map(|p| p - eps).collect();
        let start = [((n + 1) / 2) as i64];
        let p_phi = nonexit_exact(&ConductanceField::from_weights(&b, phi).unwrap(), &start, t).unwrap();
        let p_low = nonexit_exact(&ConductanceField::from_weights(&b, lowered).unwrap(), &start, t).unwrap();
        prop_assert!(p_phi >= (-4.0 * eps * t).exp() * p_low * (1.0 - 1e-10));
    }

    #[test]
    fn ellipticity_brackets_the_principal_eigenvalue(lambda in 0.2f64..1.0, seed in any::<u64>()) {
        let b = unit_box(2, 7.0);
        let f = sample_field(&b, &ConductanceModel::Elliptic(EllipticModel::new(lambda, rwrc::conductance::EllipticLaw::Uniform).unwrap()), seed);
        let ones = ConductanceField::constant(&b, 1.0).unwrap();
        let l = principal_eigen(&assemble(&f, None, 1.0).unwrap(), DEFAULT_TOLERANCE).unwrap().eigenvalue;
        let l1 = principal_eigen(&assemble(&ones, None, 1.0).unwrap(), DEFAULT_TOLERANCE).unwrap().eigenvalue;
        prop_assert!(lambda * l1 <= l * (1.0 + 1e-9) && l <= l1 / lambda * (1.0 + 1e-9));
    }
}

/// `lambda_1 >= beta^-1 alpha^(-d/eta) chi^d(B)^((eta+1)/eta) (tail functional)^(-1/eta)`.
#[test]
fn holder_lower_bound_on_small_boxes() {
    for (d, alpha) in [(1usize, 8.0), (1, 20.0), (2, 4.0), (2, 7.0)] {
        let b = unit_box(d, alpha);
        assert!(b.len() <= 49);
        for eta in [1.0, 2.0, 3.0] {
            let params = RegimeParams::new(eta, 1.0).unwrap();
            let chi = solve_chi_d(&b, params.p(), &SolverConfig::default()).unwrap().value;
            for seed in 0..4 {
                let f = sample_field(&b, &ConductanceModel::Tail(TailModel::new(eta, 1.0, 1.0).unwrap()), seed);
                let lambda = principal_eigen(&assemble(&f, None, 1.0).unwrap(), DEFAULT_TOLERANCE).unwrap().eigenvalue;
                let beta = 2.5;
                let tf = tail_functional(&rescaled_field(&f, beta).unwrap(), b.domain(), eta);
                let bound = chi.powf((eta + 1.0) / eta) * tf.powf(-1.0 / eta) / beta / alpha.powf(d as f64 / eta);
                assert!(lambda >= bound * (1.0 - 1e-6), "d={d} alpha={alpha} eta={eta}: {lambda} < {bound}");
            }
        }
    }
}
