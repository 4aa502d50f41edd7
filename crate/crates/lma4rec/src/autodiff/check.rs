use super::{Tape, TapeError, Tensor, Var};

/// Compare analytic gradients against central finite differences.
///
/// `f` must be deterministic: any random draws (masks, negatives) have to be
/// frozen inside the closure. The returned value is the worst per-coordinate
/// error `|analytic - numeric| / max(|analytic|, |numeric|, 1)`, taken over
/// every coordinate of every `requires_grad` parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TapeError>,
{
    let analytic = analytic_gradients(&f, params)?;

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        if !p.requires_grad {
            continue;
        }
        for ci in 0..p.numel() {
            let base = p.data()[ci];
            work[pi].data_mut()[ci] = base + step;
            let up = eval(&f, &work)?;
            work[pi].data_mut()[ci] = base - step;
            let down = eval(&f, &work)?;
            work[pi].data_mut()[ci] = base;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi][ci];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// One analytic forward+backward; gradients ordered like `params` (empty
/// buffers for non-trainable entries).
pub fn analytic_gradients<F>(f: &F, params: &[Tensor]) -> Result<Vec<Vec<f64>>, TapeError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TapeError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    Ok(params
        .iter()
        .zip(&vars)
        .map(|(p, v)| if p.requires_grad { tape.grad(*v).unwrap_or(&[]).to_vec() } else { Vec::new() })
        .collect())
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TapeError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(TapeError::Contract {
            msg: format!("grad_check needs a scalar objective, got shape {:?}", tape.shape(loss)),
        });
    }
    Ok(tape.scalar_value(loss))
}
