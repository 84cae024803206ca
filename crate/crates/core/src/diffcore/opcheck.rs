//! Finite-difference checks of every differentiable graph operation in
//! isolation, each reduced to a scalar through fixed random weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradient_check, GradCheckReport, Graph, Matrix, Var, LAYER_NORM_EPS};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub report: GradCheckReport,
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("consistent shape")
}

/// `Σ w ⊙ x` with `w` held fixed.
fn weighted(g: &mut Graph, x: Var, w: &Matrix) -> Result<Var> {
    let w = g.leaf(w.clone());
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

type Body = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Runs the gradient check of each operation on inputs drawn from `seed`.
pub fn op_gradient_checks(seed: u64, step: f64, tolerance: f64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(&'static str, Vec<Matrix>, Body)> = Vec::new();
    let unary = |name: &'static str,
                 rows: usize,
                 cols: usize,
                 out: (usize, usize),
                 rng: &mut ChaCha8Rng,
                 op: fn(&mut Graph, Var) -> Result<Var>| {
        let w = random(rng, out.0, out.1);
        let x = random(rng, rows, cols);
        (
            name,
            vec![x],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let y = op(g, v[0])?;
                weighted(g, y, &w)
            }) as Body,
        )
    };
    cases.push(unary("scale", 3, 4, (3, 4), &mut rng, |g, a| Ok(g.scale(a, -1.7))));
    cases.push(unary("transpose", 3, 4, (4, 3), &mut rng, |g, a| Ok(g.transpose(a))));
    cases.push(unary("relu", 3, 4, (3, 4), &mut rng, |g, a| Ok(g.relu(a))));
    cases.push(unary("sin", 3, 4, (3, 4), &mut rng, |g, a| Ok(g.sin(a))));
    cases.push(unary("cos", 3, 4, (3, 4), &mut rng, |g, a| Ok(g.cos(a))));
    cases.push(unary("max_normalize", 3, 4, (3, 4), &mut rng, |g, a| {
        Ok(g.max_normalize(a))
    }));
    cases.push(unary("normalize_rows", 3, 4, (3, 4), &mut rng, |g, a| {
        Ok(g.normalize_rows(a))
    }));
    cases.push(unary("gather_rows", 3, 4, (4, 4), &mut rng, |g, a| {
        g.gather_rows(a, &[2, 0, 2, 1])
    }));
    cases.push(unary("gather_entries", 3, 4, (4, 1), &mut rng, |g, a| {
        g.gather_entries(a, &[(0, 3), (2, 1), (0, 3), (1, 0)])
    }));
    cases.push(unary("sum", 3, 4, (1, 1), &mut rng, |g, a| Ok(g.sum(a))));
    cases.push(unary("mean", 3, 4, (1, 1), &mut rng, |g, a| g.mean(a)));
    cases.push(unary("hinge", 1, 1, (1, 1), &mut rng, |g, a| Ok(g.hinge(a, 2.5))));

    let mut binary = |name: &'static str,
                      a: (usize, usize),
                      b: (usize, usize),
                      out: (usize, usize),
                      op: fn(&mut Graph, Var, Var) -> Result<Var>| {
        let w = random(&mut rng, out.0, out.1);
        let x = random(&mut rng, a.0, a.1);
        let y = random(&mut rng, b.0, b.1);
        cases.push((
            name,
            vec![x, y],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let z = op(g, v[0], v[1])?;
                weighted(g, z, &w)
            }) as Body,
        ));
    };
    binary("matmul", (3, 4), (4, 2), (3, 2), |g, a, b| g.matmul(a, b));
    binary("add", (3, 4), (3, 4), (3, 4), |g, a, b| g.add(a, b));
    binary("add_row", (3, 4), (1, 4), (3, 4), |g, a, b| g.add_row(a, b));
    binary("sub", (3, 4), (3, 4), (3, 4), |g, a, b| g.sub(a, b));
    binary("mul", (3, 4), (3, 4), (3, 4), |g, a, b| g.mul(a, b));
    binary("concat_cols", (3, 2), (3, 3), (3, 7), |g, a, b| {
        g.concat_cols(&[a, b, a])
    });
    binary("interleave_cols", (3, 4), (3, 4), (3, 8), |g, a, b| {
        g.interleave_cols(a, b)
    });
    binary("pairwise_l2", (3, 4), (5, 4), (3, 5), |g, a, b| g.pairwise_l2(a, b));
    binary("l2_distance", (3, 4), (3, 4), (1, 1), |g, a, b| g.l2_distance(a, b));
    binary("row_l2", (3, 4), (3, 4), (3, 1), |g, a, b| g.row_l2(a, b));

    let w = random(&mut rng, 3, 4);
    let params = vec![random(&mut rng, 3, 4), random(&mut rng, 1, 4), random(&mut rng, 1, 4)];
    cases.push((
        "layer_norm",
        params,
        Box::new(move |g: &mut Graph, v: &[Var]| {
            let y = g.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)?;
            weighted(g, y, &w)
        }),
    ));
    let target = random(&mut rng, 3, 4);
    cases.push((
        "l1_loss",
        vec![random(&mut rng, 3, 4)],
        Box::new(move |g: &mut Graph, v: &[Var]| g.l1_loss(v[0], &target)),
    ));

    cases
        .into_iter()
        .map(|(op, params, body)| {
            Ok(OpCheck {
                op,
                report: gradient_check(body, &params, step, tolerance)?,
            })
        })
        .collect()
}
