//! Exact network for `|∇u_θ|²` given a ReLU² network `u_θ`.
//!
//! With `z_t = A_t h_{t-1} + b_t`, `h_t = σ₂(z_t)` and Jacobians
//! `J_t = ∂h_t/∂x = 2σ₁(z_t) ⊙ (A_t J_{t-1})`, the gradient is
//! `A_D J_{D-1}`. Layer `t` of the new network carries `σ₁(z_t)`, `σ₂(z_t)`
//! (when still needed) and the product units materialising `J_{t-1}`. One
//! extra layer materialises `J_{D-1}`, one squares the gradient components,
//! and a linear layer sums the squares.

use super::builder::{product_readout, product_units, Affine, NetBuilder};
use crate::error::{Error, Result};
use crate::network::{ActivationKind, Network};

/// Depth and width bounds `(D + 2, d (D + 2) W)` for the transformed network
/// of a depth-`D`, width-`W`, `d`-input ReLU² network.
pub fn gradient_norm_bounds(input_dim: usize, depth: usize, width: usize) -> (usize, usize) {
    (depth + 2, input_dim * (depth + 2) * width)
}

fn check_source(net: &Network) -> Result<()> {
    let arch = net.architecture();
    if arch.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: arch.output_dim(),
        });
    }
    let last = arch.activations.len() - 1;
    for (layer, act) in arch.activations.iter().enumerate() {
        let want = if layer == last {
            ActivationKind::Identity
        } else {
            ActivationKind::Relu2
        };
        if !act.is_all(want) {
            return Err(Error::UnsupportedActivation {
                layer,
                reason: format!("expected every unit to be {}", want.tag()),
            });
        }
    }
    Ok(())
}

fn is_constant(e: &Affine) -> bool {
    e.terms.iter().all(|&(_, c)| c == 0.0)
}

/// `y[i][q] = Σ_k A[q,k] j[i][k]` for a row-major `rows × cols` matrix.
fn apply_rows(a: &[f64], rows: usize, j: &[Vec<Affine>]) -> Vec<Vec<Affine>> {
    let cols = a.len() / rows.max(1);
    j.iter()
        .map(|ji| {
            (0..rows)
                .map(|q| Affine::combination(&a[q * cols..(q + 1) * cols], ji))
                .collect()
        })
        .collect()
}

/// Units materialising `J[i][q] = 2 s[q] y[i][q]`, appended to `units`;
/// returns the readout expressions over the layer being built.
fn jacobian_units(s: &[Affine], y: &[Vec<Affine>], units: &mut Vec<(ActivationKind, Affine)>) -> Vec<Vec<Affine>> {
    if y.iter().flatten().all(is_constant) {
        // y does not depend on x: pass s through a ReLU (s ≥ 0) and scale.
        let base = units.len();
        units.extend(s.iter().map(|sq| (ActivationKind::Relu, sq.clone())));
        y.iter()
            .map(|yi| {
                yi.iter()
                    .enumerate()
                    .map(|(q, yiq)| Affine::unit(base + q).scaled(2.0 * yiq.constant))
                    .collect()
            })
            .collect()
    } else {
        y.iter()
            .map(|yi| {
                yi.iter()
                    .enumerate()
                    .map(|(q, yiq)| {
                        let first = units.len();
                        units.extend(product_units(&s[q], yiq));
                        product_readout(first, 2.0)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Builds `x ↦ |∇u(x)|²` exactly (up to rounding) for a ReLU² network `u`
/// with linear output. Depth is at most `D + 2` and width at most
/// `d (D + 2) W`.
pub fn build_gradient_norm_network(net: &Network) -> Result<Network> {
    check_source(net)?;
    let d = net.input_dim();
    let depth = net.depth();
    let dims = &net.architecture().layer_dims;
    let weights = net.weights();
    let biases = net.biases();
    let mut b = NetBuilder::new(d);

    if depth == 1 {
        let norm2: f64 = weights[0].iter().map(|a| a * a).sum();
        return b.finish(vec![Affine::constant(norm2)]);
    }

    // J_0 = identity, constant in x.
    let mut jac: Vec<Vec<Affine>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|k| Affine::constant(if i == k { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    let mut h_prev = b.inputs();
    let mut s_prev: Vec<Affine> = Vec::new();

    for t in 1..depth {
        let (a, bias, rows) = (&weights[t - 1], &biases[t - 1], dims[t]);
        let cols = dims[t - 1];
        let z: Vec<Affine> = (0..rows)
            .map(|q| Affine::combination(&a[q * cols..(q + 1) * cols], &h_prev).plus(&Affine::constant(bias[q])))
            .collect();

        let mut units: Vec<(ActivationKind, Affine)> = z.iter().map(|zq| (ActivationKind::Relu, zq.clone())).collect();
        let keep_h = t + 1 < depth;
        if keep_h {
            units.extend(z.iter().map(|zq| (ActivationKind::Relu2, zq.clone())));
        }
        let new_jac = if t >= 2 {
            let y = apply_rows(&weights[t - 2], dims[t - 1], &jac);
            Some(jacobian_units(&s_prev, &y, &mut units))
        } else {
            None
        };
        b.push_layer(units);

        s_prev = (0..rows).map(Affine::unit).collect();
        h_prev = if keep_h {
            (rows..2 * rows).map(Affine::unit).collect()
        } else {
            Vec::new()
        };
        if let Some(j) = new_jac {
            jac = j;
        }
    }

    // Materialise J_{D-1}.
    let y = apply_rows(&weights[depth - 2], dims[depth - 1], &jac);
    if y.iter().flatten().all(is_constant) {
        jac = y
            .iter()
            .map(|yi| {
                yi.iter()
                    .enumerate()
                    .map(|(q, yiq)| s_prev[q].scaled(2.0 * yiq.constant))
                    .collect()
            })
            .collect();
    } else {
        let mut units = Vec::new();
        jac = jacobian_units(&s_prev, &y, &mut units);
        b.push_layer(units);
    }

    let out_row = &weights[depth - 1];
    let grad: Vec<Affine> = jac.iter().map(|ji| Affine::combination(out_row, ji)).collect();
    let mut units = Vec::with_capacity(2 * d);
    for g in &grad {
        units.push((ActivationKind::Relu2, g.clone()));
        units.push((ActivationKind::Relu2, g.scaled(-1.0)));
    }
    let squares = b.push_layer(units);
    let total = Affine::combination(&vec![1.0; squares.len()], &squares);
    let out = b.finish(vec![total])?;

    let (max_depth, max_width) = gradient_norm_bounds(d, depth, net.width());
    assert!(
        out.depth() <= max_depth && out.width() <= max_width,
        "gradient-norm network {}x{} exceeds depth {max_depth} / width {max_width}",
        out.depth(),
        out.width()
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Architecture, LayerActivation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, d: usize, hidden: &[usize]) -> Network {
        let arch = Architecture::relu2_mlp(d, hidden).unwrap();
        let p: Vec<f64> = (0..arch.parameter_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Network::from_parameters(arch, &p).unwrap()
    }

    fn central_difference_norm2(net: &Network, x: &[f64]) -> f64 {
        let h = 1e-5;
        let mut s = 0.0;
        let mut xp = x.to_vec();
        for k in 0..x.len() {
            xp[k] = x[k] + h;
            let up = net.forward(&xp).unwrap();
            xp[k] = x[k] - h;
            let dn = net.forward(&xp).unwrap();
            xp[k] = x[k];
            let g = (up - dn) / (2.0 * h);
            s += g * g;
        }
        s
    }

    #[test]
    fn matches_finite_differences_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (d, hidden) in [
            (1, vec![]),
            (1, vec![3]),
            (2, vec![4]),
            (2, vec![3, 5]),
            (3, vec![4, 4, 2]),
        ] {
            let net = random_net(&mut rng, d, &hidden);
            let g = build_gradient_norm_network(&net).unwrap();
            let (md, mw) = gradient_norm_bounds(d, net.depth(), net.width());
            assert!(g.depth() <= md && g.width() <= mw);
            for _ in 0..50 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
                let want = central_difference_norm2(&net, &x);
                let got = g.forward(&x).unwrap();
                assert!(
                    (got - want).abs() <= 1e-6 * want.max(1.0),
                    "d={d} {hidden:?}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn affine_network_gives_constant() {
        let arch = Architecture::relu2_mlp(2, &[]).unwrap();
        let net = Network::new(arch, vec![vec![3.0, -4.0]], vec![vec![7.0]]).unwrap();
        let g = build_gradient_norm_network(&net).unwrap();
        assert_eq!(g.forward(&[0.2, 0.9]).unwrap(), 25.0);
    }

    #[test]
    fn rejects_other_activations() {
        let arch = Architecture::new(
            vec![1, 2, 1],
            vec![
                LayerActivation::Uniform(ActivationKind::Relu),
                ActivationKind::Identity.into(),
            ],
        )
        .unwrap();
        let net = Network::zeros(arch).unwrap();
        assert!(matches!(
            build_gradient_norm_network(&net),
            Err(Error::UnsupportedActivation { layer: 0, .. })
        ));
    }
}
