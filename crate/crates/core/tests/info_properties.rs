use proptest::prelude::*;

use infobound::info_core::{
    averaged_subset_entropy, conditional_mutual_information, disintegrated_mi, entropy, kl_divergence,
    mutual_information, mutual_information_between,
};
use infobound::{FiniteJointPmf, FinitePmf};

fn pmf(size: usize) -> impl Strategy<Value = FinitePmf> {
    // zeros are allowed so that boundary supports get exercised
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.01f64..1.0], size)
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 0.0)
        .prop_map(|w| FinitePmf::normalized(w).unwrap())
}

fn joint(dims: Vec<usize>) -> impl Strategy<Value = FiniteJointPmf> {
    let total: usize = dims.iter().product();
    pmf(total).prop_map(move |p| FiniteJointPmf::new(dims.clone(), p.probs().to_vec()).unwrap())
}

fn dims(axes: usize, max_card: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_card, axes)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn entropy_is_between_zero_and_log_support(p in (1usize..8).prop_flat_map(pmf)) {
        let h = entropy(&p);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (p.support_size() as f64).ln() + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal(
        (q, p) in (1usize..6).prop_flat_map(|s| (pmf(s), pmf(s)))
    ) {
        let d = kl_divergence(&q, &p).unwrap();
        prop_assert!(d >= -1e-12 || d.is_infinite());
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn mutual_information_is_symmetric_and_bounded(j in dims(2, 4).prop_flat_map(joint)) {
        let i = mutual_information(&j).unwrap();
        let swapped = mutual_information(&j.permute_axes(&[1, 0]).unwrap()).unwrap();
        prop_assert!(i >= -1e-12);
        prop_assert!((i - swapped).abs() <= 1e-12);
        let hx = entropy_of_axes(&j, &[0]);
        let hy = entropy_of_axes(&j, &[1]);
        prop_assert!(i <= hx.min(hy) + 1e-12);
    }

    #[test]
    fn chain_rule_and_tower_property(j in dims(3, 3).prop_flat_map(joint)) {
        // I(X; Y, Z) = I(X; Z) + I(X; Y | Z)
        let cmi = conditional_mutual_information(&j).unwrap();
        let lhs = mutual_information_between(&j, &[0], &[1, 2]).unwrap();
        let rhs = mutual_information_between(&j, &[0], &[2]).unwrap() + cmi;
        prop_assert!(cmi >= -1e-12);
        prop_assert!((lhs - rhs).abs() <= 1e-10);
        let pz = j.marginal(&[2]).unwrap();
        let mut tower = 0.0;
        for z in 0..j.dims()[2] {
            let w = pz.probs()[z];
            if w > 0.0 {
                let d = disintegrated_mi(&j, z).unwrap();
                prop_assert!(d >= -1e-12);
                tower += w * d;
            }
        }
        prop_assert!((tower - cmi).abs() <= 1e-12);
    }

    #[test]
    fn averaged_subset_entropy_is_nonincreasing(
        j in (1usize..=4).prop_flat_map(|n| dims(n, 3)).prop_flat_map(|mut x| {
            x.push(3);
            joint(x)
        })
    ) {
        let n = j.ndim() - 1;
        let h: Vec<f64> = (1..=n).map(|k| averaged_subset_entropy(&j, k).unwrap()).collect();
        for w in h.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{h:?}");
        }
    }
}

fn entropy_of_axes(j: &FiniteJointPmf, axes: &[usize]) -> f64 {
    entropy(&FinitePmf::new(j.marginal(axes).unwrap().probs().to_vec()).unwrap())
}
