//! Dense tensors and a reverse-mode tape, just enough for the encoder,
//! regressor, hypernetwork and the generated target networks.

pub(crate) mod kernels;
mod params;
mod tape;
mod tensor;

pub use params::{GradBuffer, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Central difference `(f(p + h) - f(p - h)) / 2h` for one coordinate of
/// one parameter. The parameter is restored before returning.
pub fn central_difference(
    store: &mut ParamStore,
    id: ParamId,
    index: usize,
    h: f64,
    mut f: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<f64> {
    let orig = store.get(id).data()[index];
    store.get_mut(id).data_mut()[index] = orig + h;
    let plus = f(store);
    store.get_mut(id).data_mut()[index] = orig - h;
    let minus = f(store);
    store.get_mut(id).data_mut()[index] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}
