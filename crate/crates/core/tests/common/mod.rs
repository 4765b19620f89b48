//! Shared test helpers: seeded random tensors and the central
//! finite-difference gradient oracle. The oracle only ever evaluates
//! forward passes, so it stays independent of the backward rules it
//! checks.

use fenrec_core::graph::{Graph, NodeId};
use fenrec_core::rng::Stream;
use fenrec_core::Tensor;

pub fn rand_tensor(stream: &mut Stream, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len: usize = shape.iter().product::<usize>().max(1);
    let data: Vec<f64> = (0..len).map(|_| lo + stream.unit_f64() * (hi - lo)).collect();
    match shape.len() {
        0 => Tensor::scalar(data[0]),
        1 => Tensor::vector(data),
        2 => Tensor::matrix(shape[0], shape[1], data),
        _ => panic!("rank > 2 not supported"),
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

fn eval<F>(build: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &ids);
    g.value(loss).item()
}

/// Compare every autodiff gradient entry against a central finite
/// difference of the forward value. `check_inputs` restricts which leaves
/// are compared (all when `None`); use it when some inputs sit inside
/// non-differentiable guards.
pub fn fd_check<F>(name: &str, inputs: &[Tensor], check_inputs: Option<&[usize]>, build: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &ids);
    assert!(
        g.value(loss).item().is_finite(),
        "{name}: loss not finite"
    );
    g.backward(loss).expect("backward");
    let grads: Vec<Tensor> = ids.iter().map(|&id| g.grad(id)).collect();

    for (i, input) in inputs.iter().enumerate() {
        if let Some(keep) = check_inputs {
            if !keep.contains(&i) {
                continue;
            }
        }
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let fd = (eval(&build, &plus) - eval(&build, &minus)) / (2.0 * FD_STEP);
            let ad = grads[i].data()[j];
            let scale = 1.0_f64.max(ad.abs()).max(fd.abs());
            assert!(
                (ad - fd).abs() <= FD_TOL * scale,
                "{name}: input {i} elem {j}: autodiff {ad} vs finite-diff {fd}"
            );
        }
    }
}
