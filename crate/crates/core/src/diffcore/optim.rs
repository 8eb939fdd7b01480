use super::matrix::Matrix;

/// A trainable tensor with its accumulated gradient and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub momentum: Matrix,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            momentum: Matrix::zeros(r, c),
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Matrix) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value)
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate(&mut self, delta: &Matrix) {
        self.grad.add_assign(delta);
    }
}

/// Anything that owns an ordered list of parameters.
pub trait ParamSet {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

impl ParamSet for Vec<Parameter> {
    fn params(&self) -> Vec<&Parameter> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.iter_mut().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// One update over all trainable parameters:
    /// `g = grad + wd·value; buf = momentum·buf + g; value -= lr·buf`.
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        sgd_step(params, self.lr, self.momentum, self.weight_decay);
    }
}

pub fn sgd_step<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for p in params {
        if !p.trainable {
            continue;
        }
        let Parameter {
            value,
            grad,
            momentum: buf,
            ..
        } = p;
        for ((v, g), b) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(buf.data_mut())
        {
            let step = g + weight_decay * *v;
            *b = momentum * *b + step;
            *v -= lr * *b;
        }
    }
}
