use super::{AdError, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Flat index (over all inputs, in order) where the maximum occurs.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative-error denominator floor, so near-zero gradients compare
/// absolutely.
const DENOM_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`.
///
/// `f` builds the function on a fresh tape from the given leaf variables and
/// returns the scalar output.
pub fn grad_check<F>(inputs: &[Tensor], h: f64, mut f: F) -> Result<GradCheckReport, AdError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let mut eval = |inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var), AdError> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(inputs) {
        match grads.get(*v) {
            Some(g) => analytic.extend_from_slice(g),
            None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
        }
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let (t, _, o) = eval(&work)?;
            let plus = t.value(o).item();
            work[i].data_mut()[j] = orig - h;
            let (t, _, o) = eval(&work)?;
            let minus = t.value(o).item();
            work[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
    }

    let (mut max_rel_error, mut worst_index) = (0.0, 0);
    for (idx, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(DENOM_FLOOR);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = idx;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
