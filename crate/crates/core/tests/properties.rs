use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ppdiv::divergence::{
    bhatt_poisson_gaussian, csd_poisson_gm, csd_poisson_mixture, MixturePoissonModel, PoissonModel,
};
use ppdiv::gaussmix::{
    gauss_inner, mixture_inner, mixture_scale, prune_merge, Gaussian, GaussianMixture, HyperVolumeUnit, PruneConfig,
};

fn gaussian(d: usize) -> impl Strategy<Value = Gaussian> {
    (
        prop::collection::vec(-5.0..5.0f64, d),
        prop::collection::vec(-1.0..1.0f64, d * d),
        0.05..2.0f64,
    )
        .prop_map(move |(m, a, jitter)| {
            let a = DMatrix::from_row_slice(d, d, &a);
            let cov = &a * a.transpose() + DMatrix::identity(d, d) * jitter;
            Gaussian::new(DVector::from_vec(m), cov).unwrap()
        })
}

fn gaussian_pair() -> impl Strategy<Value = (Gaussian, Gaussian)> {
    (1usize..4).prop_flat_map(|d| (gaussian(d), gaussian(d)))
}

fn mixture(d: usize, max_comps: usize) -> impl Strategy<Value = GaussianMixture> {
    prop::collection::vec((0.01..3.0f64, gaussian(d)), 1..=max_comps)
        .prop_map(move |comps| GaussianMixture::from_components(d, comps).unwrap())
}

fn model(d: usize) -> impl Strategy<Value = PoissonModel> {
    (mixture(d, 3), 0.1..10.0f64).prop_map(|(gm, k)| PoissonModel::new(gm, HyperVolumeUnit::new(k).unwrap()))
}

fn pair(max_d: usize) -> impl Strategy<Value = (PoissonModel, PoissonModel)> {
    (1..=max_d)
        .prop_flat_map(|d| (model(d), model(d)))
        .prop_map(|(a, mut b)| {
            b.unit = a.unit;
            (a, b)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gauss_inner_is_exactly_symmetric(a in gaussian(2), b in gaussian(2)) {
        prop_assert_eq!(gauss_inner(&a, &b).unwrap(), gauss_inner(&b, &a).unwrap());
    }

    #[test]
    fn gauss_inner_cauchy_schwarz((a, b) in gaussian_pair()) {
        let ab = gauss_inner(&a, &b).unwrap();
        prop_assert!(ab * ab <= gauss_inner(&a, &a).unwrap() * gauss_inner(&b, &b).unwrap() + 1e-12);
    }

    #[test]
    fn mixture_inner_is_linear_in_each_weight(u in mixture(2, 4), v in mixture(2, 3), c in 0.01..50.0f64, pick in any::<prop::sample::Index>()) {
        let base = mixture_inner(&u, &v).unwrap();
        let i = pick.index(u.len());
        let (scaled, rest) = u.iter().enumerate().fold(
            (GaussianMixture::empty(2), GaussianMixture::empty(2)),
            |(mut s, mut r), (j, comp)| {
                s.push(if j == i { comp.weight * c } else { comp.weight }, comp.gaussian.clone()).unwrap();
                if j != i { r.push(comp.weight, comp.gaussian.clone()).unwrap(); }
                (s, r)
            });
        let single = GaussianMixture::single(u.components()[i].weight, u.components()[i].gaussian.clone()).unwrap();
        let expected = mixture_inner(&rest, &v).unwrap() + c * mixture_inner(&single, &v).unwrap();
        let got = mixture_inner(&scaled, &v).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * expected.abs().max(base.abs()).max(1e-300));
    }

    #[test]
    fn prune_with_zero_thresholds_is_identity(u in mixture(3, 6)) {
        let cfg = PruneConfig { truncation_threshold: 0.0, merge_threshold: 0.0, max_components: u.len() };
        let out = prune_merge(&u, &cfg);
        prop_assert_eq!(out.len(), u.len());
        for c in u.iter() {
            prop_assert!(out.iter().any(|o| o == c));
        }
    }

    #[test]
    fn prune_never_gains_mass_or_exceeds_cap(u in mixture(2, 40), cap in 1usize..20) {
        let cfg = PruneConfig { max_components: cap, ..PruneConfig::default() };
        let out = prune_merge(&u, &cfg);
        prop_assert!(out.len() <= cap);
        prop_assert!(out.mass() <= u.mass() * (1.0 + 1e-12));
    }

    #[test]
    fn csd_nonnegative_symmetric_and_self_zero((a, b) in pair(4)) {
        let ab = csd_poisson_gm(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, csd_poisson_gm(&b, &a).unwrap());
        prop_assert!(csd_poisson_gm(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn csd_is_linear_in_unit((a, b) in pair(3), factor in 0.01..100.0f64) {
        let base = csd_poisson_gm(&a, &b).unwrap();
        let k = HyperVolumeUnit::new(a.unit.value() * factor).unwrap();
        let scaled = csd_poisson_gm(&PoissonModel::new(a.intensity.clone(), k), &PoissonModel::new(b.intensity.clone(), k)).unwrap();
        prop_assert!((scaled - factor * base).abs() <= 1e-10 * (factor * base).max(1e-300));
    }

    #[test]
    fn csd_invariant_under_change_of_length_unit((a, b) in pair(4), s in prop_oneof![0.01..0.5f64, 2.0..100.0f64]) {
        let base = csd_poisson_gm(&a, &b).unwrap();
        prop_assume!(base > 1e-8);
        let k = HyperVolumeUnit::new(a.unit.value() * s.powi(a.dim() as i32)).unwrap();
        let sa = PoissonModel::new(mixture_scale(&a.intensity, s).unwrap(), k);
        let sb = PoissonModel::new(mixture_scale(&b.intensity, s).unwrap(), k);
        let scaled = csd_poisson_gm(&sa, &sb).unwrap();
        prop_assert!((scaled - base).abs() <= 1e-10 * base, "{scaled} vs {base}");
    }

    #[test]
    fn mixture_csd_properties((a, b) in pair(2), (c, d) in pair(2), w in 0.05..0.95f64) {
        prop_assume!(a.dim() == c.dim());
        let mut c = c;
        let mut d = d;
        c.unit = a.unit;
        d.unit = a.unit;
        let fa = MixturePoissonModel::new(vec![(w, a), (1.0 - w, c)]).unwrap();
        let fb = MixturePoissonModel::new(vec![(0.5, b), (0.5, d)]).unwrap();
        let ab = csd_poisson_mixture(&fa, &fb).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, csd_poisson_mixture(&fb, &fa).unwrap());
        prop_assert!(csd_poisson_mixture(&fa, &fa).unwrap().abs() < 1e-12);
    }

    #[test]
    fn bhattacharyya_nonnegative_and_symmetric((g1, g2) in gaussian_pair(), w1 in 0.01..5.0f64, w2 in 0.01..5.0f64) {
        let a = PoissonModel::unit_k(GaussianMixture::single(w1, g1).unwrap());
        let b = PoissonModel::unit_k(GaussianMixture::single(w2, g2).unwrap());
        let ab = bhatt_poisson_gaussian(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, bhatt_poisson_gaussian(&b, &a).unwrap());
        prop_assert!(bhatt_poisson_gaussian(&a, &a).unwrap().abs() < 1e-12);
    }
}

#[test]
fn prune_caps_two_hundred_components() {
    let mut u = GaussianMixture::empty(2);
    for i in 0..200 {
        let x = (i % 20) as f64 * 50.0;
        let y = (i / 20) as f64 * 50.0;
        u.push(
            0.01 + i as f64 * 1e-4,
            Gaussian::diagonal(&[x, y], &[1.0, 1.0]).unwrap(),
        )
        .unwrap();
    }
    let out = prune_merge(&u, &PruneConfig::default());
    assert_eq!(out.len(), 100);
    assert!(out.mass() <= u.mass());
}
