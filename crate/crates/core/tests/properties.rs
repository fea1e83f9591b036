//! Randomised properties of networks, constructions and bounds.

use proptest::prelude::*;

use ritz_core::bounds::{dudley_rademacher_bound, pdim_bound};
use ritz_core::constructions::{build_product_gadget, build_univariate_bspline, prescribe_architecture};
use ritz_core::{Architecture, Network};

fn net_from(d: usize, hidden: &[usize], params: &[f64]) -> Network {
    let arch = Architecture::relu2_mlp(d, hidden).unwrap();
    let p: Vec<f64> = params.iter().cycle().take(arch.parameter_count()).copied().collect();
    Network::from_parameters(arch, &p).unwrap()
}

proptest! {
    #[test]
    fn single_neuron_is_positively_homogeneous_of_degree_two(
        a in -3.0f64..3.0, b in -3.0f64..3.0, x in 0.0f64..1.0, c in 0.01f64..10.0,
    ) {
        let base = net_from(1, &[1], &[a, b, 1.0, 0.0]);
        let scaled = net_from(1, &[1], &[c * a, c * b, 1.0, 0.0]);
        let u = base.forward(&[x]).unwrap();
        let v = scaled.forward(&[x]).unwrap();
        prop_assert!((v - c * c * u).abs() <= 1e-12 * (1.0 + v.abs()));
    }

    #[test]
    fn value_from_gradient_pass_equals_forward(
        params in prop::collection::vec(-1.5f64..1.5, 8..40),
        x in prop::collection::vec(0.0f64..1.0, 2),
    ) {
        let net = net_from(2, &[5, 3], &params);
        prop_assert_eq!(net.forward_with_input_gradient(&x).unwrap().value, net.forward(&x).unwrap());
    }

    #[test]
    fn parameters_round_trip(params in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let net = net_from(3, &[4, 2], &params);
        let again = Network::from_parameters(net.architecture().clone(), &net.parameters()).unwrap();
        prop_assert_eq!(again, net);
    }

    #[test]
    fn product_gadget_is_symmetric_and_exact(x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let g = build_product_gadget();
        let xy = g.forward(&[x, y]).unwrap();
        prop_assert!((xy - x * y).abs() <= 1e-12 * (x * y).abs().max(1.0));
        prop_assert!((g.forward(&[y, x]).unwrap() - xy).abs() <= 1e-12 * xy.abs().max(1.0));
    }

    #[test]
    fn bspline_is_nonnegative_and_vanishes_off_support(level in 1u32..6, offset in 0i64..40, x in -0.5f64..1.5) {
        let i = offset % ((1i64 << level) + 2) - 2;
        let v = build_univariate_bspline(level, i).unwrap().forward(&[x]).unwrap();
        let h = 1.0 / (1u64 << level) as f64;
        prop_assert!(v >= -1e-12);
        if x <= i as f64 * h || x >= (i + 3) as f64 * h {
            prop_assert!(v.abs() <= 1e-12);
        }
    }

    #[test]
    fn pdim_grows_with_depth_and_width(depth in 1usize..10, width in 1usize..100) {
        prop_assert!(pdim_bound(depth + 1, width, 1.0) > pdim_bound(depth, width, 1.0));
        prop_assert!(pdim_bound(depth, width + 1, 1.0) > pdim_bound(depth, width, 1.0));
    }

    #[test]
    fn rademacher_bound_shrinks_with_n(n in 20.0f64..1e6, b in 0.1f64..10.0) {
        let a = dudley_rademacher_bound(n, b, 10.0).unwrap();
        let c = dudley_rademacher_bound(2.0 * n, b, 10.0).unwrap();
        prop_assert!(c < a);
    }

    #[test]
    fn prescribed_width_never_shrinks_with_n(d in 1usize..4, k in 4u32..20) {
        let a = prescribe_architecture(d, 1 << k, 0.0);
        let b = prescribe_architecture(d, 1 << (k + 1), 0.0);
        prop_assert!(b.width() >= a.width());
        prop_assert_eq!(a.depth(), b.depth());
    }
}
