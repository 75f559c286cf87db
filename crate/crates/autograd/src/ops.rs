//! Differentiable operations. Every backward rule is expressed with these same
//! operations, so the set is closed under differentiation.

use crate::kernels;
use crate::tensor::Tensor;
use crate::var::Var;

fn unary(name: &'static str, x: &Var, value: Tensor, backward: impl Fn(&Var, &Var, &Var) -> Var + 'static) -> Var {
    Var::from_op(
        name,
        value,
        vec![x.clone()],
        Box::new(move |inp, out, g, needs| vec![needs[0].then(|| backward(&inp[0], out, g))]),
    )
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        let v = kernels::broadcast_binary(self.value(), other.value(), |a, b| a + b);
        Var::from_op(
            "add",
            v,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g, needs| {
                vec![
                    needs[0].then(|| g.sum_to(inp[0].shape())),
                    needs[1].then(|| g.sum_to(inp[1].shape())),
                ]
            }),
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        let v = kernels::broadcast_binary(self.value(), other.value(), |a, b| a - b);
        Var::from_op(
            "sub",
            v,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g, needs| {
                vec![
                    needs[0].then(|| g.sum_to(inp[0].shape())),
                    needs[1].then(|| g.neg().sum_to(inp[1].shape())),
                ]
            }),
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        let v = kernels::broadcast_binary(self.value(), other.value(), |a, b| a * b);
        Var::from_op(
            "mul",
            v,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g, needs| {
                vec![
                    needs[0].then(|| g.mul(&inp[1]).sum_to(inp[0].shape())),
                    needs[1].then(|| g.mul(&inp[0]).sum_to(inp[1].shape())),
                ]
            }),
        )
    }

    pub fn div(&self, other: &Var) -> Var {
        let v = kernels::broadcast_binary(self.value(), other.value(), |a, b| a / b);
        Var::from_op(
            "div",
            v,
            vec![self.clone(), other.clone()],
            Box::new(|inp, out, g, needs| {
                vec![
                    needs[0].then(|| g.div(&inp[1]).sum_to(inp[0].shape())),
                    needs[1].then(|| g.mul(out).div(&inp[1]).neg().sum_to(inp[1].shape())),
                ]
            }),
        )
    }

    pub fn neg(&self) -> Var {
        unary("neg", self, self.value().map(|x| -x), |_, _, g| g.neg())
    }

    pub fn scale(&self, c: f64) -> Var {
        unary("scale", self, self.value().map(|x| x * c), move |_, _, g| g.scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        unary("add_scalar", self, self.value().map(|x| x + c), |_, _, g| g.clone())
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn sqrt(&self) -> Var {
        unary("sqrt", self, self.value().map(f64::sqrt), |_, out, g| g.div(out).scale(0.5))
    }

    pub fn tanh(&self) -> Var {
        unary("tanh", self, self.value().map(f64::tanh), |_, out, g| {
            g.mul(&out.square().neg().add_scalar(1.0))
        })
    }

    /// `max(x, 0) + slope * min(x, 0)`.
    pub fn leaky_relu(&self, slope: f64) -> Var {
        let v = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        unary("leaky_relu", self, v, move |x, _, g| {
            let mask = x.value().map(|v| if v > 0.0 { 1.0 } else { slope });
            g.mul(&Var::constant(mask))
        })
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = kernels::broadcast_to(self.value(), shape);
        unary("broadcast_to", self, v, |x, _, g| g.sum_to(x.shape()))
    }

    /// Sums down to a shape `self` broadcasts to; the adjoint of [`Var::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = kernels::sum_to(self.value(), shape);
        unary("sum_to", self, v, |x, _, g| g.broadcast_to(x.shape()))
    }

    pub fn sum_all(&self) -> Var {
        self.sum_to(&[])
    }

    pub fn mean_all(&self) -> Var {
        let n = self.numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_keepdim(&self, axes: &[usize]) -> Var {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_keepdim(&self, axes: &[usize]) -> Var {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_keepdim(axes).scale(1.0 / count as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self.value().clone().reshape(shape);
        unary("reshape", self, v, |x, _, g| g.reshape(x.shape()))
    }

    pub fn matmul(&self, other: &Var) -> Var {
        let v = kernels::matmul(self.value(), other.value());
        Var::from_op(
            "matmul",
            v,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g, needs| {
                vec![
                    needs[0].then(|| g.matmul(&inp[1].transpose())),
                    needs[1].then(|| inp[0].transpose().matmul(g)),
                ]
            }),
        )
    }

    pub fn transpose(&self) -> Var {
        unary("transpose", self, kernels::transpose2d(self.value()), |_, _, g| g.transpose())
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        if start == 0 && len == self.shape()[axis] {
            return self.clone();
        }
        let d = self.shape()[axis];
        let v = kernels::narrow(self.value(), axis, start, len);
        unary("narrow", self, v, move |_, _, g| g.pad(axis, start, d - start - len))
    }

    /// Zero padding along one axis; the adjoint of [`Var::narrow`].
    pub fn pad(&self, axis: usize, before: usize, after: usize) -> Var {
        if before == 0 && after == 0 {
            return self.clone();
        }
        let d = self.shape()[axis];
        let v = kernels::pad(self.value(), axis, before, after);
        unary("pad", self, v, move |_, _, g| g.narrow(axis, before, d))
    }

    pub fn upsample2x(&self) -> Var {
        unary("upsample2x", self, kernels::upsample2x(self.value()), |_, _, g| g.sum_pool2x())
    }

    pub fn sum_pool2x(&self) -> Var {
        unary("sum_pool2x", self, kernels::sum_pool2x(self.value()), |_, _, g| g.upsample2x())
    }

    pub fn avg_pool2x(&self) -> Var {
        self.sum_pool2x().scale(0.25)
    }
}

pub fn concat(vars: &[Var], axis: usize) -> Var {
    assert!(!vars.is_empty(), "concat of zero variables");
    if vars.len() == 1 {
        return vars[0].clone();
    }
    let values: Vec<&Tensor> = vars.iter().map(Var::value).collect();
    let v = kernels::concat(&values, axis);
    let sizes: Vec<usize> = vars.iter().map(|x| x.shape()[axis]).collect();
    Var::from_op(
        "concat",
        v,
        vars.to_vec(),
        Box::new(move |_, _, g, needs| {
            let mut start = 0;
            sizes
                .iter()
                .zip(needs)
                .map(|(&len, &need)| {
                    let r = need.then(|| g.narrow(axis, start, len));
                    start += len;
                    r
                })
                .collect()
        }),
    )
}

/// 2-d convolution, `x: N×C×H×W`, `w: O×C×k×k`, no bias.
pub fn conv2d(x: &Var, w: &Var, stride: usize, pad: usize) -> Var {
    let v = kernels::conv2d(x.value(), w.value(), stride, pad);
    let hw = (x.shape()[2], x.shape()[3]);
    let k = w.shape()[2];
    Var::from_op(
        "conv2d",
        v,
        vec![x.clone(), w.clone()],
        Box::new(move |inp, _, g, needs| {
            vec![
                needs[0].then(|| conv2d_input_grad(g, &inp[1], hw, stride, pad)),
                needs[1].then(|| conv2d_weight_grad(&inp[0], g, k, stride, pad)),
            ]
        }),
    )
}

/// Transposed convolution: the input gradient of [`conv2d`].
pub fn conv2d_input_grad(g: &Var, w: &Var, in_hw: (usize, usize), stride: usize, pad: usize) -> Var {
    let v = kernels::conv2d_input_grad(g.value(), w.value(), in_hw, stride, pad);
    let k = w.shape()[2];
    Var::from_op(
        "conv2d_input_grad",
        v,
        vec![g.clone(), w.clone()],
        Box::new(move |inp, _, gz, needs| {
            vec![
                needs[0].then(|| conv2d(gz, &inp[1], stride, pad)),
                needs[1].then(|| conv2d_weight_grad(gz, &inp[0], k, stride, pad)),
            ]
        }),
    )
}

/// The weight gradient of [`conv2d`], as a differentiable op.
pub fn conv2d_weight_grad(x: &Var, g: &Var, kernel: usize, stride: usize, pad: usize) -> Var {
    let v = kernels::conv2d_weight_grad(x.value(), g.value(), kernel, stride, pad);
    let hw = (x.shape()[2], x.shape()[3]);
    Var::from_op(
        "conv2d_weight_grad",
        v,
        vec![x.clone(), g.clone()],
        Box::new(move |inp, _, gw, needs| {
            vec![
                needs[0].then(|| conv2d_input_grad(&inp[1], gw, hw, stride, pad)),
                needs[1].then(|| conv2d(&inp[0], gw, stride, pad)),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::var::grad;
    use proptest::prelude::*;

    fn det_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    /// Central-difference check of d f / d inputs against `grad`.
    fn check_grads(inputs: &[Tensor], f: impl Fn(&[Var]) -> Var) {
        let vars: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
        let out = f(&vars);
        let analytic = grad(&out, &vars, false);
        let h = 1e-6;
        for (vi, t) in inputs.iter().enumerate() {
            let a = analytic[vi].as_ref().expect("missing gradient").value().clone();
            for j in 0..t.numel() {
                let eval = |delta: f64| {
                    let mut moved: Vec<Var> = Vec::new();
                    for (k, u) in inputs.iter().enumerate() {
                        let mut u = u.clone();
                        if k == vi {
                            u.data_mut()[j] += delta;
                        }
                        moved.push(Var::constant(u));
                    }
                    f(&moved).value().item()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let an = a.data()[j];
                let err = (an - numeric).abs() / an.abs().max(numeric.abs()).max(1e-6);
                assert!(err < 1e-5, "input {vi} coord {j}: analytic {an} numeric {numeric}");
            }
        }
    }

    #[test]
    fn elementwise_broadcast_grads() {
        check_grads(&[det_tensor(&[2, 3, 2, 2], 1), det_tensor(&[1, 3, 1, 1], 2)], |v| {
            let a = v[0].add(&v[1]).mul(&v[1]);
            let b = v[0].sub(&v[1]).div(&v[1].square().add_scalar(1.0));
            a.add(&b).tanh().sum_all()
        });
    }

    #[test]
    fn reduction_and_sqrt_grads() {
        check_grads(&[det_tensor(&[2, 3, 4], 3)], |v| {
            let m = v[0].mean_keepdim(&[2]);
            let c = v[0].sub(&m);
            let var = c.square().mean_keepdim(&[2]).add_scalar(1e-3);
            c.div(&var.sqrt()).leaky_relu(0.2).square().mean_all()
        });
    }

    #[test]
    fn matmul_reshape_narrow_concat_grads() {
        check_grads(&[det_tensor(&[3, 4], 4), det_tensor(&[4, 6], 5)], |v| {
            let y = v[0].matmul(&v[1]).reshape(&[3, 2, 3]);
            let a = y.narrow(1, 0, 1);
            let b = y.narrow(1, 1, 1).scale(2.0);
            concat(&[b, a], 1).transpose_last2_via_reshape().square().sum_all()
        });
    }

    impl Var {
        fn transpose_last2_via_reshape(&self) -> Var {
            let s = self.shape().to_vec();
            self.reshape(&[s[0] * s[1], s[2]]).transpose()
        }
    }

    #[test]
    fn conv_and_pooling_grads() {
        for &(s, p) in &[(1usize, 1usize), (2, 1)] {
            check_grads(&[det_tensor(&[2, 2, 4, 4], 6), det_tensor(&[3, 2, 3, 3], 7)], |v| {
                let y = conv2d(&v[0], &v[1], s, p);
                let y = if y.shape()[2] % 2 == 0 { y.avg_pool2x().upsample2x() } else { y };
                y.tanh().sum_all()
            });
        }
    }

    #[test]
    fn second_order_through_conv_matches_finite_differences() {
        // f(w) = || d/dx sum(tanh(conv(x, w))) ||^2, the shape of a gradient penalty
        let x0 = det_tensor(&[1, 2, 4, 4], 8);
        let penalty = |w: &Var| {
            let x = Var::leaf(x0.clone());
            let y = conv2d(&x, w, 1, 1).tanh().sum_all();
            let gx = grad(&y, &[x], true)[0].clone().unwrap();
            gx.square().sum_all()
        };
        check_grads(&[det_tensor(&[2, 2, 3, 3], 9)], |v| penalty(&v[0]));
    }

    #[test]
    fn second_order_through_weight_grad() {
        // differentiate a weight gradient with respect to the input
        let w0 = det_tensor(&[2, 2, 3, 3], 10);
        check_grads(&[det_tensor(&[1, 2, 4, 4], 11)], |v| {
            let w = Var::leaf(w0.clone());
            let y = conv2d(&v[0], &w, 2, 1).square().sum_all();
            let gw = grad(&y, &[w], true)[0].clone().unwrap();
            gw.square().sum_all()
        });
    }

    proptest! {
        #[test]
        fn forward_is_deterministic(seed in 0u64..1000) {
            let x = Var::constant(det_tensor(&[2, 3, 4, 4], seed));
            let w = Var::constant(det_tensor(&[4, 3, 3, 3], seed + 1));
            let a = conv2d(&x, &w, 1, 1).leaky_relu(0.2);
            let b = conv2d(&x, &w, 1, 1).leaky_relu(0.2);
            prop_assert_eq!(a.value(), b.value());
        }

        #[test]
        fn sum_to_inverts_broadcast_mass(seed in 0u64..1000, n in 1usize..4, c in 1usize..4) {
            let t = det_tensor(&[1, c, 1], seed);
            let b = Var::constant(t.clone()).broadcast_to(&[n, c, 5]);
            let s = b.sum_to(&[1, c, 1]);
            for (x, y) in s.value().data().iter().zip(t.data()) {
                prop_assert!((x - y * (5 * n) as f64).abs() < 1e-12);
            }
        }
    }
}
