use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::matrix::Matrix;

/// Denominator floor for relative errors, so that gradients that are zero up
/// to rounding do not report huge relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error per parameter tensor.
    pub max_rel_error: Vec<f64>,
    pub analytic: Vec<Matrix>,
    pub numeric: Vec<Matrix>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.shape() != (1, 1) {
        return Err(Error::Contract(format!(
            "gradient_check builder must return a scalar, got {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central finite differences with the given `step`.
///
/// `f` receives one leaf per entry of `params`, in order, and must be
/// deterministic.
pub fn gradient_check<F>(f: F, params: &[Matrix], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::Contract(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Matrix> = vars.iter().map(|&v| g.grad(v)).collect();

    let mut work: Vec<Matrix> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let mut num = Matrix::zeros(p.rows(), p.cols());
        let mut worst: f64 = 0.0;
        for k in 0..p.len() {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + step;
            let plus = evaluate(&f, &work)?;
            work[pi].data_mut()[k] = orig - step;
            let minus = evaluate(&f, &work)?;
            work[pi].data_mut()[k] = orig;
            let d = (plus - minus) / (2.0 * step);
            num.data_mut()[k] = d;
            worst = worst.max(relative_error(analytic[pi].data()[k], d));
        }
        numeric.push(num);
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error,
        analytic,
        numeric,
        tolerance,
    })
}
