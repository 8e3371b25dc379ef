//! Central finite-difference gradient checks.

use crate::error::TapeError;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64, TapeError> {
    let t = tape.value(v);
    if t.shape() != [1, 1] {
        return Err(TapeError::NonScalarLoss(t.shape()));
    }
    Ok(t.item())
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences with step [`FD_STEP`] for every input coordinate and returns
/// the worst [`relative_error`].
pub fn grad_check<F>(f: F, inputs: &[Tensor]) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TapeError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TapeError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            probe[i].data_mut()[k] = orig + FD_STEP;
            let plus = eval(&probe)?;
            probe[i].data_mut()[k] = orig - FD_STEP;
            let minus = eval(&probe)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
    }
    Ok(worst)
}

/// Like [`grad_check`], but perturbs every trainable entry of `store`.
pub fn grad_check_params<F>(store: &ParamStore, f: F) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, TapeError>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out)?;
    let grads = tape.param_grads(store);

    let mut worst = 0.0f64;
    let mut probe = store.clone();
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, e)| e.trainable)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            let mut eval = |value: f64| -> Result<f64, TapeError> {
                probe.get_mut(id).data_mut()[k] = value;
                let mut t = Tape::new();
                let out = f(&mut t, &probe)?;
                scalar_of(&t, out)
            };
            let plus = eval(orig + FD_STEP)?;
            let minus = eval(orig - FD_STEP)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads.get(id).data()[k], numeric));
        }
    }
    Ok(worst)
}
