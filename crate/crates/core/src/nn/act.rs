use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    x.zip_map(dy, |v, g| if v > 0.0 { g } else { 0.0 })
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor, slope: f64) -> Tensor {
    x.zip_map(dy, |v, g| if v > 0.0 { g } else { slope * g })
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Takes the forward *output*.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    y.zip_map(dy, |v, g| g * (1.0 - v * v))
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Takes the forward *output*.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    y.zip_map(dy, |v, g| g * v * (1.0 - v))
}
