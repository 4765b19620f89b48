//! Randomized finite-difference gradient checks for every tape primitive:
//! 20 random inputs per op, dimensions at most 8, relative error <= 1e-4.

mod common;

use common::{fd_check, rand_tensor};
use fenrec_core::graph::{Graph, NodeId};
use fenrec_core::rng::Stream;
use fenrec_core::Tensor;

/// Weight the op output with a fixed random tensor so every output element
/// receives a distinct upstream gradient, then reduce to a scalar.
fn weighted_sum(g: &mut Graph, out: NodeId, weights: &Tensor) -> NodeId {
    if g.value(out).is_scalar() {
        return out;
    }
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w).expect("weight shape");
    g.sum(prod)
}

fn trials(op: &str, seed_salt: u64, f: impl Fn(&mut Stream, usize)) {
    for trial in 0..20 {
        let mut stream = Stream::new(0x5eed_0000 + seed_salt * 1000 + trial);
        f(&mut stream, trial as usize);
    }
    let _ = op;
}

#[test]
fn grad_add_scale_mul() {
    trials("add/scale/mul", 1, |s, _| {
        let a = rand_tensor(s, &[5], -1.0, 1.0);
        let b = rand_tensor(s, &[5], -1.0, 1.0);
        let w = rand_tensor(s, &[5], -1.0, 1.0);
        fd_check("add", &[a.clone(), b.clone()], None, |g, ids| {
            let out = g.add(ids[0], ids[1]).unwrap();
            weighted_sum(g, out, &w)
        });
        fd_check("scale", &[a.clone()], None, |g, ids| {
            let out = g.scale(ids[0], -1.7);
            weighted_sum(g, out, &w)
        });
        fd_check("add_const", &[a.clone()], None, |g, ids| {
            let out = g.add_const(ids[0], 0.9);
            weighted_sum(g, out, &w)
        });
        fd_check("mul", &[a, b], None, |g, ids| {
            let out = g.mul(ids[0], ids[1]).unwrap();
            weighted_sum(g, out, &w)
        });
    });
}

#[test]
fn grad_matmul_family() {
    trials("matmul", 2, |s, _| {
        let a = rand_tensor(s, &[3, 4], -1.0, 1.0);
        let b = rand_tensor(s, &[4, 2], -1.0, 1.0);
        let bt = rand_tensor(s, &[2, 4], -1.0, 1.0);
        let x = rand_tensor(s, &[4], -1.0, 1.0);
        let w_mm = rand_tensor(s, &[3, 2], -1.0, 1.0);
        let w_v = rand_tensor(s, &[3], -1.0, 1.0);
        fd_check("matmul", &[a.clone(), b], None, |g, ids| {
            let out = g.matmul(ids[0], ids[1]).unwrap();
            weighted_sum(g, out, &w_mm)
        });
        fd_check("matmul_trans_b", &[a.clone(), bt], None, |g, ids| {
            let out = g.matmul_trans_b(ids[0], ids[1]).unwrap();
            weighted_sum(g, out, &w_mm)
        });
        fd_check("matvec", &[a, x], None, |g, ids| {
            let out = g.matvec(ids[0], ids[1]).unwrap();
            weighted_sum(g, out, &w_v)
        });
    });
}

#[test]
fn grad_inner_norm_scalar_ops() {
    trials("inner/norm", 3, |s, _| {
        let u = rand_tensor(s, &[6], 0.3, 1.3);
        let v = rand_tensor(s, &[6], -1.0, 1.0);
        let sc = rand_tensor(s, &[], 0.5, 1.5);
        let w = rand_tensor(s, &[6], -1.0, 1.0);
        fd_check("inner", &[u.clone(), v.clone()], None, |g, ids| {
            g.inner(ids[0], ids[1]).unwrap()
        });
        fd_check("l2_norm", &[u.clone()], None, |g, ids| g.l2_norm(ids[0]));
        fd_check("div_by_scalar", &[v.clone(), sc.clone()], None, |g, ids| {
            let out = g.div_by_scalar(ids[0], ids[1]).unwrap();
            weighted_sum(g, out, &w)
        });
        fd_check("mul_by_scalar", &[v, sc], None, |g, ids| {
            let out = g.mul_by_scalar(ids[0], ids[1]).unwrap();
            weighted_sum(g, out, &w)
        });
        fd_check("normalize", &[u], None, |g, ids| {
            let out = g.normalize(ids[0]).unwrap();
            weighted_sum(g, out, &w)
        });
    });
}

#[test]
fn grad_softmax_family() {
    trials("softmax", 4, |s, _| {
        let x = rand_tensor(s, &[7], -2.0, 2.0);
        let m = rand_tensor(s, &[4, 4], -2.0, 2.0);
        let w = rand_tensor(s, &[7], -1.0, 1.0);
        let wm = rand_tensor(s, &[4, 4], -1.0, 1.0);
        fd_check("softmax", &[x.clone()], None, |g, ids| {
            let out = g.softmax(ids[0]);
            weighted_sum(g, out, &w)
        });
        fd_check("log_softmax", &[x.clone()], None, |g, ids| {
            let out = g.log_softmax(ids[0]);
            weighted_sum(g, out, &w)
        });
        fd_check("logsumexp", &[x], None, |g, ids| g.logsumexp(ids[0]));
        fd_check("causal_row_softmax", &[m], None, |g, ids| {
            let out = g.causal_row_softmax(ids[0]).unwrap();
            weighted_sum(g, out, &wm)
        });
    });
}

#[test]
fn grad_pointwise_nonlinearities() {
    trials("pointwise", 5, |s, _| {
        let x = rand_tensor(s, &[8], -1.5, 1.5);
        let pos = rand_tensor(s, &[8], 0.4, 2.0);
        let w = rand_tensor(s, &[8], -1.0, 1.0);
        fd_check("exp", &[x.clone()], None, |g, ids| {
            let out = g.exp(ids[0]);
            weighted_sum(g, out, &w)
        });
        fd_check("log", &[pos], None, |g, ids| {
            let out = g.log(ids[0]);
            weighted_sum(g, out, &w)
        });
        fd_check("tanh", &[x.clone()], None, |g, ids| {
            let out = g.tanh(ids[0]);
            weighted_sum(g, out, &w)
        });
        fd_check("sum", &[x.clone()], None, |g, ids| g.sum(ids[0]));
        fd_check("mean", &[x], None, |g, ids| g.mean(ids[0]));
    });
}

#[test]
fn grad_gather_and_stack() {
    trials("gather", 6, |s, _| {
        let m = rand_tensor(s, &[5, 3], -1.0, 1.0);
        let a = rand_tensor(s, &[3], -1.0, 1.0);
        let b = rand_tensor(s, &[3], -1.0, 1.0);
        let v = rand_tensor(s, &[6], -1.0, 1.0);
        let w3 = rand_tensor(s, &[3], -1.0, 1.0);
        let w2x3 = rand_tensor(s, &[2, 3], -1.0, 1.0);
        let w3v = rand_tensor(s, &[3], -1.0, 1.0);
        let w7 = rand_tensor(s, &[7], -1.0, 1.0);
        // repeated row: gradients must accumulate
        fd_check("gather_rows", &[m.clone()], None, |g, ids| {
            let out = g.gather_rows(ids[0], &[1, 1]).unwrap();
            weighted_sum(g, out, &w2x3)
        });
        fd_check("stack_rows", &[a.clone(), b.clone()], None, |g, ids| {
            let out = g.stack_rows(&[ids[0], ids[1]]).unwrap();
            weighted_sum(g, out, &w2x3)
        });
        fd_check("select_row", &[m], None, |g, ids| {
            let out = g.select_row(ids[0], 2);
            weighted_sum(g, out, &w3)
        });
        fd_check("gather_elems", &[v.clone()], None, |g, ids| {
            let out = g.gather_elems(ids[0], &[0, 4, 4]);
            weighted_sum(g, out, &w3v)
        });
        fd_check("concat", &[a, b, v.clone()], None, |g, ids| {
            let sc = g.sum(ids[2]);
            let out = g.concat(&[ids[0], sc, ids[1]]);
            weighted_sum(g, out, &w7)
        });
    });
}

#[test]
fn grad_row_ops_and_score_all() {
    trials("rowops", 7, |s, _| {
        let table = rand_tensor(s, &[5, 4], 0.3, 1.3);
        let q = rand_tensor(s, &[4], -1.0, 1.0);
        let m = rand_tensor(s, &[3, 4], 0.3, 1.3);
        let sv = rand_tensor(s, &[3], 0.5, 1.5);
        let row = rand_tensor(s, &[4], -1.0, 1.0);
        let w4 = rand_tensor(s, &[4], -1.0, 1.0);
        let w3 = rand_tensor(s, &[3], -1.0, 1.0);
        let wm = rand_tensor(s, &[3, 4], -1.0, 1.0);
        fd_check("score_all", &[table, q], None, |g, ids| {
            let out = g.score_all(ids[0], ids[1]).unwrap();
            weighted_sum(g, out, &w4)
        });
        fd_check("row_normalize", &[m.clone()], None, |g, ids| {
            let out = g.row_normalize(ids[0]).unwrap();
            weighted_sum(g, out, &wm)
        });
        fd_check("row_standardize", &[m.clone()], None, |g, ids| {
            let out = g.row_standardize(ids[0]);
            weighted_sum(g, out, &wm)
        });
        fd_check("row_norms", &[m.clone()], None, |g, ids| {
            let out = g.row_norms(ids[0]);
            weighted_sum(g, out, &w3)
        });
        fd_check("row_scale", &[m.clone(), sv], None, |g, ids| {
            let out = g.row_scale(ids[0], ids[1]).unwrap();
            weighted_sum(g, out, &wm)
        });
        fd_check("row_affine", &[m, row], None, |g, ids| {
            let out = g.row_affine(ids[0], ids[1], 0.4, 0.6).unwrap();
            weighted_sum(g, out, &wm)
        });
    });
}

#[test]
fn forward_is_deterministic() {
    let mut s = Stream::new(99);
    let a = rand_tensor(&mut s, &[4, 4], -1.0, 1.0);
    let b = rand_tensor(&mut s, &[4, 4], -1.0, 1.0);
    let run = || {
        let mut g = Graph::new();
        let (x, y) = (g.leaf(a.clone()), g.leaf(b.clone()));
        let mm = g.matmul(x, y).unwrap();
        let sm = g.causal_row_softmax(mm).unwrap();
        let out = g.sum(sm);
        g.value(out).item()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}
