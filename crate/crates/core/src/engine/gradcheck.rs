//! Central finite-difference check of tape gradients.

use super::mlp::{BoundMlp, MlpParams};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Worst entry of a gradient comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Backward and finite-difference values at the worst entry.
    pub worst: (f64, f64),
    pub checked: usize,
}

/// Compares backward gradients of the scalar built by `f` against
/// fourth-order central differences with step `h`, over every parameter of every network in
/// `nets`. Relative error is `|g − fd| / max(|g|, |fd|, floor)`.
///
/// `f` must be deterministic: it is rebuilt on a fresh tape for every
/// perturbation.
pub fn check_gradients<F>(nets: &mut [MlpParams], h: f64, floor: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape, &[BoundMlp]) -> Result<Var>,
{
    let analytic: Vec<Vec<Vec<f64>>> = {
        let mut tape = Tape::new();
        let bound: Vec<BoundMlp> = nets.iter().map(|n| n.bind(&mut tape, true)).collect();
        let loss = f(&mut tape, &bound)?;
        let grads = tape.backward(loss)?;
        bound
            .iter()
            .map(|b| {
                b.grads(&tape, &grads)
                    .into_iter()
                    .map(|t| t.into_data())
                    .collect()
            })
            .collect()
    };
    let mut eval = |nets: &[MlpParams]| -> Result<f64> {
        let mut tape = Tape::new();
        let bound: Vec<BoundMlp> = nets.iter().map(|n| n.bind(&mut tape, false)).collect();
        let loss = f(&mut tape, &bound)?;
        tape.value(loss).item()
    };

    let mut max_rel_error = 0.0f64;
    let mut worst = (0.0, 0.0);
    let mut checked = 0;
    for net in 0..nets.len() {
        let n_tensors = nets[net].tensors().count();
        for t in 0..n_tensors {
            let len = nets[net].tensors().nth(t).map_or(0, |x| x.len());
            for j in 0..len {
                let original = *entry(&mut nets[net], t, j);
                let mut at = |offset: f64| -> Result<f64> {
                    *entry(&mut nets[net], t, j) = original + offset;
                    eval(nets)
                };
                let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
                *entry(&mut nets[net], t, j) = original;
                let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
                let g = analytic[net][t][j];
                if !fd.is_finite() || !g.is_finite() {
                    return Err(Error::Numeric("non-finite value in gradient check".into()));
                }
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(floor);
                if rel > max_rel_error {
                    max_rel_error = rel;
                    worst = (g, fd);
                }
                checked += 1;
            }
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst,
        checked,
    })
}

fn entry(net: &mut MlpParams, tensor: usize, index: usize) -> &mut f64 {
    let t = net.tensors_mut().nth(tensor).expect("tensor index");
    &mut t.data_mut()[index]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Activation, MlpSpec, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_network_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut spec = MlpSpec::new(3, vec![5], 1);
        spec.hidden_activation = Activation::Tanh;
        let mut nets = vec![MlpParams::init(&spec, &mut rng)];
        let x = Tensor::from_rows(&[vec![0.3, -0.2, 0.9], vec![-1.0, 0.5, 0.1]]).unwrap();
        let r = check_gradients(&mut nets, 1e-6, 1e-8, |tape, b| {
            let x = tape.constant(x.clone());
            let y = b[0].forward(tape, x)?;
            let y = tape.square(y);
            Ok(tape.mean(y))
        })
        .unwrap();
        assert_eq!(r.checked, nets[0].num_params());
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nets = vec![MlpParams::init(&MlpSpec::new(2, vec![], 1), &mut rng)];
        let x = Tensor::row(&[1.0, 2.0]);
        // detach hides the dependency from backward but not from the values
        let r = check_gradients(&mut nets, 1e-6, 1e-8, |tape, b| {
            let x = tape.constant(x.clone());
            let y = b[0].forward(tape, x)?;
            let d = tape.detach(y);
            let s = tape.mul(y, d)?;
            Ok(tape.mean(s))
        })
        .unwrap();
        assert!(r.max_rel_error > 0.3);
    }
}
