use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, floor)` per input.
    pub rel_errors: Vec<f64>,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Norm floor below which gradients count as zero.
pub const NORM_FLOOR: f64 = 1e-6;

/// Compares `d f / d input` from [`Tape::backward`] with central finite
/// differences of step `step` for every coordinate of every input.
///
/// `f` records a scalar function of its inputs onto a fresh tape.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_gradients_with(inputs, step, None, f)
}

/// Like [`check_gradients`], but records on tapes built by `make_tape`.
pub fn check_gradients_with<F>(
    inputs: &[Tensor],
    step: f64,
    make_tape: Option<&dyn Fn() -> Tape>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let fresh = || make_tape.map_or_else(Tape::new, |m| m());
    let mut tape = fresh();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.take(v).expect("param leaf has a gradient"))
        .collect();

    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut coordinates_checked = 0;
    for (idx, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work[idx].data()[j];
            work[idx].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[idx].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[idx].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        coordinates_checked += numeric.len();
        let diff: f64 = grad
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        rel_errors.push(diff / na.max(nn).max(NORM_FLOOR));
    }
    Ok(GradCheckReport {
        rel_errors,
        coordinates_checked,
    })
}
