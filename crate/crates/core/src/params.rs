//! Named views over learnable tensors, shared by the optimizer, the
//! checkpoint codec and the gradient checker.

pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorViewMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Anything holding a fixed, ordered list of learnable tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

pub(crate) fn view<'a, D: ndarray::Dimension>(
    name: String,
    a: &'a ndarray::Array<f64, D>,
) -> TensorView<'a> {
    TensorView {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameter tensors are kept in standard layout"),
    }
}

pub(crate) fn view_mut<'a, D: ndarray::Dimension>(
    name: String,
    a: &'a mut ndarray::Array<f64, D>,
) -> TensorViewMut<'a> {
    let shape = a.shape().to_vec();
    TensorViewMut {
        name,
        shape,
        data: a
            .as_slice_mut()
            .expect("parameter tensors are kept in standard layout"),
    }
}
