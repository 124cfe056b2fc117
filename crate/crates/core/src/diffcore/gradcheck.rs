use super::{Bound, DiffError, NodeId, ParamStore, Tape};
use crate::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions<T> {
    /// Central-difference step.
    pub step: T,
    /// Largest acceptable relative error.
    pub tol: T,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding are compared absolutely.
    pub denom_floor: T,
}

impl<T: Scalar> GradCheckOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        GradCheckOptions { step: T::lit(1e-5), tol, denom_floor: T::lit(1e-4) }
    }
}

impl<T: Scalar> Default for GradCheckOptions<T> {
    fn default() -> Self {
        Self::with_tol(T::lit(1e-4))
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck<T> {
    pub name: String,
    pub max_rel_error: T,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: T,
    pub numeric: T,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    pub tensors: Vec<TensorCheck<T>>,
    pub tol: T,
    pub passed: bool,
}

impl<T: Scalar> GradCheckReport<T> {
    pub fn max_rel_error(&self) -> T {
        self.tensors.iter().map(|t| t.max_rel_error).fold(T::zero(), T::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &TensorCheck<T>> {
        self.tensors.iter().filter(move |t| !(t.max_rel_error <= self.tol))
    }
}

/// Compares reverse-mode gradients of a scalar graph against central finite
/// differences for every tensor in `store`.
///
/// `build` must construct the same graph for the same parameter values; it
/// is evaluated twice up front and rejected if the results differ.
pub fn grad_check<T, F>(
    store: &mut ParamStore<T>,
    opts: GradCheckOptions<T>,
    build: F,
) -> Result<GradCheckReport<T>, DiffError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &Bound) -> Result<NodeId, DiffError>,
{
    let eval = |store: &ParamStore<T>| -> Result<T, DiffError> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let root = build(&mut tape, &bound)?;
        let shape = tape.shape(root);
        if !shape.is_scalar() {
            return Err(DiffError::NonScalarRoot(shape));
        }
        Ok(tape.scalar(root))
    };

    let first = eval(store)?;
    let second = eval(store)?;
    if first != second && !(first.is_nan() && second.is_nan()) {
        return Err(DiffError::NonDeterministic { first: first.as_f64(), second: second.as_f64() });
    }

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let root = build(&mut tape, &bound)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<T>> = bound.ids().iter().map(|&id| tape.grad(id).to_vec()).collect();

    let two = T::lit(2.0);
    let mut tensors = Vec::with_capacity(store.len());
    for i in 0..store.len() {
        let mut worst = TensorCheck {
            name: store.tensor(i).name.clone(),
            max_rel_error: T::zero(),
            worst_index: 0,
            analytic: T::zero(),
            numeric: T::zero(),
        };
        for k in 0..store.tensor(i).data.len() {
            let original = store.tensor(i).data[k];
            store.data_mut(i)[k] = original + opts.step;
            let plus = eval(store);
            store.data_mut(i)[k] = original - opts.step;
            let minus = eval(store);
            store.data_mut(i)[k] = original;
            let numeric = (plus? - minus?) / (two * opts.step);
            let a = analytic[i][k];
            let denom = a.abs().max(numeric.abs()).max(opts.denom_floor);
            let rel = (a - numeric).abs() / denom;
            if !worst.max_rel_error.is_nan() && (rel.is_nan() || rel > worst.max_rel_error) {
                worst.max_rel_error = rel;
                worst.worst_index = k;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        tensors.push(worst);
    }
    let passed = tensors.iter().all(|t| t.max_rel_error <= opts.tol);
    Ok(GradCheckReport { tensors, tol: opts.tol, passed })
}
