use super::Tensor;

/// Central-difference gradient of a scalar function: coordinate `j` is
/// `(f(x + h·e_j) − f(x − h·e_j)) / 2h`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, point: &Tensor, h: f64) -> Tensor {
    let mut probe = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for j in 0..point.len() {
        let x = point.data()[j];
        probe.data_mut()[j] = x + h;
        let plus = f(&probe);
        probe.data_mut()[j] = x - h;
        let minus = f(&probe);
        probe.data_mut()[j] = x;
        grad.data_mut()[j] = (plus - minus) / (2.0 * h);
    }
    grad
}
