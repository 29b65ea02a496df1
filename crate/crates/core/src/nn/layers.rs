use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis, Ix2};
use rand::Rng;

use super::{Param, Parameters, Scalar};

/// Fully connected layer, `y = x W^T + b` with `W` of shape `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::fan_in_uniform(format!("{name}.weight"), &[outputs, inputs], inputs, rng),
            bias: Param::fan_in_uniform(format!("{name}.bias"), &[outputs], inputs, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn weight_view(&self) -> ArrayView2<'_, T> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = Array2::zeros((x.nrows(), self.outputs()));
        general_mat_mul(T::one(), &x, &self.weight_view().t(), T::zero(), &mut y);
        let bias = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d bias");
        y += &bias;
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: ArrayView2<T>, dy: ArrayView2<T>, need_dx: bool) -> Option<Array2<T>> {
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-d grad");
            general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut gw);
        }
        let gb = dy.sum_axis(Axis(0));
        self.bias.grad += &gb.into_dyn();
        need_dx.then(|| dy.dot(&self.weight_view()))
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Square-kernel 2-d convolution without padding, NCHW layout.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel > 0 && stride > 0);
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::fan_in_uniform(format!("{name}.weight"), &[out_channels, fan_in], fan_in, rng),
            bias: Param::fan_in_uniform(format!("{name}.bias"), &[out_channels], fan_in, rng),
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Output spatial size, or `None` when the input is smaller than the kernel.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        (h >= self.kernel && w >= self.kernel)
            .then(|| ((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }

    fn weight_view(&self) -> ArrayView2<'_, T> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        let (ho, wo) = self.output_hw(h, w).expect("input smaller than kernel");
        Geometry {
            c: self.in_channels,
            h,
            w,
            k: self.kernel,
            s: self.stride,
            ho,
            wo,
        }
    }

    pub fn forward(&self, x: ArrayView4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let g = self.geometry(h, w);
        let x = x.as_standard_layout();
        let weight = self.weight_view();
        let bias = self.bias.value.as_slice().expect("contiguous bias");
        let mut out = Array4::zeros((n, self.out_channels, g.ho, g.wo));
        let mut cols = Array2::zeros((g.rows(), g.ho * g.wo));
        for (xs, ys) in x.outer_iter().zip(out.outer_iter_mut()) {
            im2col(xs.as_slice().expect("contiguous sample"), &g, cols.as_slice_mut().expect("cols"));
            let mut ymat = ys
                .into_shape_with_order((self.out_channels, g.ho * g.wo))
                .expect("contiguous output");
            general_mat_mul(T::one(), &weight, &cols, T::zero(), &mut ymat);
            for (mut row, &b) in ymat.outer_iter_mut().zip(bias) {
                row.mapv_inplace(|v| v + b);
            }
        }
        out
    }

    pub fn backward(&mut self, x: ArrayView4<T>, dy: ArrayView4<T>, need_dx: bool) -> Option<Array4<T>> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let g = self.geometry(h, w);
        let x = x.as_standard_layout();
        let dy = dy.as_standard_layout();
        let hw = g.ho * g.wo;
        let mut cols = Array2::zeros((g.rows(), hw));
        let mut dcols = Array2::zeros((g.rows(), hw));
        let mut dx = need_dx.then(|| Array4::<T>::zeros((n, c, h, w)));
        let weight = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-d grad");
        let mut gb = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().expect("1-d grad");
        for (i, (xs, dys)) in x.outer_iter().zip(dy.outer_iter()).enumerate() {
            let dymat = dys
                .into_shape_with_order((self.out_channels, hw))
                .expect("contiguous grad");
            im2col(xs.as_slice().expect("contiguous sample"), &g, cols.as_slice_mut().expect("cols"));
            general_mat_mul(T::one(), &dymat, &cols.t(), T::one(), &mut gw);
            gb += &dymat.sum_axis(Axis(1));
            if let Some(dx) = dx.as_mut() {
                general_mat_mul(T::one(), &weight.t(), &dymat, T::zero(), &mut dcols);
                let mut dxs = dx.index_axis_mut(Axis(0), i);
                col2im(dcols.as_slice().expect("dcols"), &g, dxs.as_slice_mut().expect("dx"));
            }
        }
        dx
    }
}

impl<T: Scalar> Parameters<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }
}

// cols[(c, ki, kj), (oi, oj)] = x[c, oi*s + ki, oj*s + kj]
fn im2col<T: Copy>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((ci * g.k + ki) * g.k + kj) * hw;
                for oi in 0..g.ho {
                    let src = ci * g.h * g.w + (oi * g.s + ki) * g.w + kj;
                    let dst = row + oi * g.wo;
                    if g.s == 1 {
                        cols[dst..dst + g.wo].copy_from_slice(&x[src..src + g.wo]);
                    } else {
                        for oj in 0..g.wo {
                            cols[dst + oj] = x[src + oj * g.s];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((ci * g.k + ki) * g.k + kj) * hw;
                for oi in 0..g.ho {
                    let dst = ci * g.h * g.w + (oi * g.s + ki) * g.w + kj;
                    let src = row + oi * g.wo;
                    for oj in 0..g.wo {
                        x[dst + oj * g.s] = x[dst + oj * g.s] + cols[src + oj];
                    }
                }
            }
        }
    }
}

/// Output nonlinearity of an [`Mlp`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply<T: Scalar>(self, y: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => y.mapv_inplace(|v| v.tanh()),
            Activation::Sigmoid => y.mapv_inplace(|v| T::one() / (T::one() + (-v).exp())),
        }
    }

    fn backward<T: Scalar>(self, y: &Array2<T>, dy: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => ndarray::Zip::from(dy).and(y).for_each(|d, &v| *d = *d * (T::one() - v * v)),
            Activation::Sigmoid => ndarray::Zip::from(dy).and(y).for_each(|d, &v| *d = *d * v * (T::one() - v)),
        }
    }
}

/// Stack of [`Linear`] layers with ReLU between them and a configurable
/// output activation.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    layers: Vec<Linear<T>>,
    output: Activation,
}

/// Activations recorded by [`Mlp::forward_tape`].
#[derive(Clone, Debug)]
pub struct MlpTape<T> {
    /// `inputs[i]` is the input of layer `i`.
    inputs: Vec<Array2<T>>,
    pub output: Array2<T>,
}

impl<T: Scalar> Mlp<T> {
    /// `widths` lists every layer size including input and output.
    pub fn new<R: Rng + ?Sized>(name: &str, widths: &[usize], output: Activation, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.fc{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, output }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("nonempty").outputs()
    }

    pub fn layers(&self) -> &[Linear<T>] {
        &self.layers
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            h = layer.forward(h.view());
        }
        self.output.apply(&mut h);
        h
    }

    pub fn forward_tape(&self, x: Array2<T>) -> MlpTape<T> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(h.view());
            inputs.push(h);
            if i < last {
                relu_inplace(&mut y);
            }
            h = y;
        }
        self.output.apply(&mut h);
        MlpTape { inputs, output: h }
    }

    /// Backpropagates `dout` (gradient w.r.t. the tape output), accumulating
    /// parameter gradients and returning the gradient w.r.t. the MLP input.
    pub fn backward(&mut self, tape: &MlpTape<T>, dout: Array2<T>) -> Array2<T> {
        let mut d = dout;
        self.output.backward(&tape.output, &mut d);
        for i in (0..self.layers.len()).rev() {
            let dx = self.layers[i]
                .backward(tape.inputs[i].view(), d.view(), true)
                .expect("input gradient requested");
            d = dx;
            if i > 0 {
                // inputs[i] is relu(pre-activation), so its positivity is the mask.
                ndarray::Zip::from(&mut d)
                    .and(&tape.inputs[i])
                    .for_each(|g, &a| {
                        if a <= T::zero() {
                            *g = T::zero();
                        }
                    });
            }
        }
        d
    }
}

impl<T: Scalar> Parameters<T> for Mlp<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

pub fn relu_inplace<T: Scalar, D: ndarray::Dimension>(a: &mut ndarray::Array<T, D>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Direct nested-loop convolution used as an oracle for the im2col path.
    fn naive_conv(conv: &Conv2d<f64>, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = conv.output_hw(h, w).unwrap();
        let k = conv.kernel();
        let s = conv.stride();
        let wt = conv.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut out = Array4::zeros((n, conv.out_channels(), ho, wo));
        for b in 0..n {
            for o in 0..conv.out_channels() {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = conv.bias.value[[o]];
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    acc += wt[[o, (ci * k + ki) * k + kj]] * x[[b, ci, i * s + ki, j * s + kj]];
                                }
                            }
                        }
                        out[[b, o, i, j]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &stride in &[1, 2] {
            let conv = Conv2d::<f64>::new("c", 3, 4, 3, stride, &mut rng);
            let x = Array::from_shape_fn((2, 3, 9, 8), |_| rng.random_range(-1.0..1.0));
            let fast = conv.forward(x.view());
            let slow = naive_conv(&conv, &x);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_output_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::<f32>::new("c", 9, 32, 3, 2, &mut rng);
        assert_eq!(conv.output_hw(84, 84), Some((41, 41)));
        assert_eq!(conv.output_hw(2, 2), None);
    }

    #[test]
    fn mlp_tanh_output_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::<f32>::new("m", &[4, 8, 2], Activation::Tanh, &mut rng);
        let x = Array::from_shape_fn((16, 4), |_| rng.random_range(-100.0..100.0));
        assert!(mlp.forward(x.view()).iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::<f64>::new("m", &[3, 5, 5, 1], Activation::Sigmoid, &mut rng);
        let x = Array::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        assert_eq!(mlp.forward(x.view()), mlp.forward_tape(x.clone()).output);
    }
}
