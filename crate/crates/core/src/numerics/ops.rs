//! Forward and backward rules for every tape primitive.

use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};

/// Zero padding applied by [`Primitive::Conv1d`] along the time axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `kernel - 1` zeros on the left; output at `t` only sees inputs `<= t`.
    Left,
    /// Centered; `(kernel - 1) / 2` zeros on the left, the rest on the right.
    Same,
}

impl Padding {
    fn left(self, kernel: usize) -> usize {
        match self {
            Padding::Left => kernel - 1,
            Padding::Same => (kernel - 1) / 2,
        }
    }
}

/// A differentiable primitive together with its attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar(f64),
    /// `[.., m, k] x [k, n]` or batched `[b.., m, k] x [b.., k, n]`.
    MatMul,
    /// Inputs `x [B, Cin, L]`, `w [Cout, Cin, K]` and optionally `bias [Cout]`.
    Conv1d { padding: Padding },
    Transpose(usize, usize),
    Reshape(Vec<usize>),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Exp,
    Log,
    Tanh,
    Softplus,
    Sqrt,
    Square,
    Silu,
    /// Softmax over the last axis.
    Softmax,
    /// `softmax(q kᵀ / sqrt(d)) v` for `q, k [B, L, d]`, `v [B, L, dv]`.
    ScaledDotAttention,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::MatMul => "matmul",
            Primitive::Conv1d { .. } => "conv1d",
            Primitive::Transpose(..) => "transpose",
            Primitive::Reshape(_) => "reshape",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Tanh => "tanh",
            Primitive::Softplus => "softplus",
            Primitive::Sqrt => "sqrt",
            Primitive::Square => "square",
            Primitive::Silu => "silu",
            Primitive::Softmax => "softmax",
            Primitive::ScaledDotAttention => "scaled_dot_attention",
        }
    }

    fn arity(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Div
            | Primitive::MatMul => 2..=2,
            Primitive::Conv1d { .. } => 2..=3,
            Primitive::Concat { .. } => 1..=usize::MAX,
            Primitive::ScaledDotAttention => 3..=3,
            _ => 1..=1,
        }
    }
}

/// Forward output plus an optional cached intermediate for the backward rule.
pub(crate) struct Forward<T> {
    pub value: Tensor<T>,
    pub aux: Option<Tensor<T>>,
}

pub(crate) fn forward<T: Float>(prim: &Primitive, xs: &[&Tensor<T>]) -> Result<Forward<T>> {
    if !prim.arity().contains(&xs.len()) {
        return Err(Error::shape(
            prim.name(),
            format!("expected {:?} inputs, got {}", prim.arity(), xs.len()),
        ));
    }
    let plain = |value| Ok(Forward { value, aux: None });
    match prim {
        Primitive::Add => plain(binary(prim, xs[0], xs[1], |a, b| a + b)?),
        Primitive::Sub => plain(binary(prim, xs[0], xs[1], |a, b| a - b)?),
        Primitive::Mul => plain(binary(prim, xs[0], xs[1], |a, b| a * b)?),
        Primitive::Div => plain(binary(prim, xs[0], xs[1], |a, b| a / b)?),
        Primitive::Scale(c) => {
            let c = T::from_f64(*c);
            plain(map(xs[0], |v| v * c))
        }
        Primitive::AddScalar(c) => {
            let c = T::from_f64(*c);
            plain(map(xs[0], |v| v + c))
        }
        Primitive::MatMul => plain(matmul_fwd(xs[0], xs[1])?),
        Primitive::Conv1d { padding } => plain(conv1d_fwd(xs[0], xs[1], xs.get(2).copied(), *padding)?),
        Primitive::Transpose(a, b) => plain(transpose(xs[0], *a, *b)?),
        Primitive::Reshape(shape) => {
            let n: usize = shape.iter().product();
            if n != xs[0].numel() || shape.contains(&0) {
                return Err(Error::shape(
                    "reshape",
                    format!("{:?} -> {:?}", xs[0].shape(), shape),
                ));
            }
            plain(Tensor::from_parts(shape.clone(), xs[0].data().to_vec()))
        }
        Primitive::Concat { axis } => plain(concat(xs, *axis)?),
        Primitive::Slice { axis, start, end } => plain(slice(xs[0], *axis, *start, *end)?),
        Primitive::Sum { axis } => plain(reduce(xs[0], *axis, false)?),
        Primitive::Mean { axis } => plain(reduce(xs[0], *axis, true)?),
        Primitive::Exp => plain(map(xs[0], |v| v.exp())),
        Primitive::Log => plain(map(xs[0], |v| v.ln())),
        Primitive::Tanh => plain(map(xs[0], |v| v.tanh())),
        Primitive::Softplus => plain(map(xs[0], softplus)),
        Primitive::Sqrt => plain(map(xs[0], |v| v.sqrt())),
        Primitive::Square => plain(map(xs[0], |v| v * v)),
        Primitive::Silu => plain(map(xs[0], |v| v * sigmoid(v))),
        Primitive::Softmax => plain(softmax(xs[0])?),
        Primitive::ScaledDotAttention => {
            let (value, probs) = attention_fwd(xs[0], xs[1], xs[2])?;
            Ok(Forward {
                value,
                aux: Some(probs),
            })
        }
    }
}

/// Gradients of every input given the output gradient `g`.
pub(crate) fn backward<T: Float>(
    prim: &Primitive,
    xs: &[&Tensor<T>],
    out: &Tensor<T>,
    aux: Option<&Tensor<T>>,
    g: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let one = T::one();
    Ok(match prim {
        Primitive::Add => vec![
            reduce_to(g, xs[0].shape()),
            reduce_to(g, xs[1].shape()),
        ],
        Primitive::Sub => vec![
            reduce_to(g, xs[0].shape()),
            reduce_to(&map(g, |v| -v), xs[1].shape()),
        ],
        Primitive::Mul => {
            let ga = binary(prim, g, xs[1], |g, b| g * b)?;
            let gb = binary(prim, g, xs[0], |g, a| g * a)?;
            vec![reduce_to(&ga, xs[0].shape()), reduce_to(&gb, xs[1].shape())]
        }
        Primitive::Div => {
            let ga = binary(prim, g, xs[1], |g, b| g / b)?;
            // d(a/b)/db = -out / b
            let gob = binary(prim, g, out, |g, o| g * o)?;
            let gb = binary(prim, &gob, xs[1], |go, b| -go / b)?;
            vec![reduce_to(&ga, xs[0].shape()), reduce_to(&gb, xs[1].shape())]
        }
        Primitive::Scale(c) => {
            let c = T::from_f64(*c);
            vec![map(g, |v| v * c)]
        }
        Primitive::AddScalar(_) => vec![g.clone()],
        Primitive::MatMul => {
            let (ga, gb) = matmul_bwd(xs[0], xs[1], g);
            vec![ga, gb]
        }
        Primitive::Conv1d { padding } => conv1d_bwd(xs[0], xs[1], xs.len() == 3, *padding, g),
        Primitive::Transpose(a, b) => vec![transpose(g, *a, *b)?],
        Primitive::Reshape(_) => vec![Tensor::from_parts(
            xs[0].shape().to_vec(),
            g.data().to_vec(),
        )],
        Primitive::Concat { axis } => split(g, xs, *axis),
        Primitive::Slice { axis, start, .. } => vec![unslice(g, xs[0].shape(), *axis, *start)],
        Primitive::Sum { axis } => vec![expand_reduced(g, xs[0].shape(), *axis, one)],
        Primitive::Mean { axis } => {
            let n = match axis {
                Some(a) => xs[0].shape()[*a],
                None => xs[0].numel(),
            };
            vec![expand_reduced(g, xs[0].shape(), *axis, one / T::from_f64(n as f64))]
        }
        Primitive::Exp => vec![zip(g, out, |g, y| g * y)],
        Primitive::Log => vec![zip(g, xs[0], |g, x| g / x)],
        Primitive::Tanh => vec![zip(g, out, |g, y| g * (one - y * y))],
        Primitive::Softplus => vec![zip(g, xs[0], |g, x| g * sigmoid(x))],
        Primitive::Sqrt => {
            let two = T::from_f64(2.0);
            vec![zip(g, out, |g, y| g / (two * y))]
        }
        Primitive::Square => {
            let two = T::from_f64(2.0);
            vec![zip(g, xs[0], |g, x| two * g * x)]
        }
        Primitive::Silu => vec![zip(g, xs[0], |g, x| {
            let s = sigmoid(x);
            g * s * (one + x * (one - s))
        })],
        Primitive::Softmax => vec![softmax_bwd(out, g)],
        Primitive::ScaledDotAttention => {
            let probs = aux.expect("attention caches its probabilities");
            attention_bwd(xs[0], xs[1], xs[2], probs, g)
        }
    })
}

fn softplus<T: Float>(x: T) -> T {
    // max(x, 0) + ln(1 + e^{-|x|})
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn map<T: Float>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Elementwise op with leading-dimension broadcast of the lower-rank operand.
fn binary<T: Float>(
    prim: &Primitive,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return Ok(zip(a, b, f));
    }
    if is_suffix(b.shape(), a.shape()) {
        let nb = b.numel();
        let bd = b.data();
        let data = a
            .data()
            .chunks(nb)
            .flat_map(|chunk| chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)))
            .collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    if is_suffix(a.shape(), b.shape()) {
        let na = a.numel();
        let ad = a.data();
        let data = b
            .data()
            .chunks(na)
            .flat_map(|chunk| ad.iter().zip(chunk).map(|(&x, &y)| f(x, y)))
            .collect();
        return Ok(Tensor::from_parts(b.shape().to_vec(), data));
    }
    Err(Error::shape(
        prim.name(),
        format!("cannot align {:?} with {:?}", a.shape(), b.shape()),
    ))
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<T: Float>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![T::zero(); n];
    for chunk in g.data().chunks(n) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

/// `out[m, n] += a[m, k] * b[k, n]`.
pub(crate) fn gemm<T: Float>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m, k] += g[m, n] * b[k, n]ᵀ`.
fn gemm_bt<T: Float>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k, n] += a[m, k]ᵀ * g[m, n]`.
fn gemm_at<T: Float>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

fn matmul_dims<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<MatDims> {
    let (ash, bsh) = (a.shape(), b.shape());
    let bad = || Error::shape("matmul", format!("{ash:?} x {bsh:?}"));
    if ash.len() < 2 || bsh.len() < 2 {
        return Err(bad());
    }
    let k = ash[ash.len() - 1];
    if bsh[bsh.len() - 2] != k {
        return Err(bad());
    }
    let n = bsh[bsh.len() - 1];
    if bsh.len() == 2 {
        let m = ash[..ash.len() - 1].iter().product();
        return Ok(MatDims {
            batch: 1,
            m,
            k,
            n,
            shared_rhs: true,
        });
    }
    if ash.len() != bsh.len() || ash[..ash.len() - 2] != bsh[..bsh.len() - 2] {
        return Err(bad());
    }
    Ok(MatDims {
        batch: ash[..ash.len() - 2].iter().product(),
        m: ash[ash.len() - 2],
        k,
        n,
        shared_rhs: false,
    })
}

fn matmul_fwd<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let d = matmul_dims(a, b)?;
    let mut out = vec![T::zero(); d.batch * d.m * d.n];
    for bi in 0..d.batch {
        let ad = &a.data()[bi * d.m * d.k..(bi + 1) * d.m * d.k];
        let bd = if d.shared_rhs {
            b.data()
        } else {
            &b.data()[bi * d.k * d.n..(bi + 1) * d.k * d.n]
        };
        gemm(ad, bd, &mut out[bi * d.m * d.n..(bi + 1) * d.m * d.n], d.m, d.k, d.n);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = d.n;
    Ok(Tensor::from_parts(shape, out))
}

fn matmul_bwd<T: Float>(a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let d = matmul_dims(a, b).expect("validated in forward");
    let mut ga = vec![T::zero(); a.numel()];
    let mut gb = vec![T::zero(); b.numel()];
    for bi in 0..d.batch {
        let (mk, kn, mn) = (d.m * d.k, d.k * d.n, d.m * d.n);
        let gd = &g.data()[bi * mn..(bi + 1) * mn];
        let ad = &a.data()[bi * mk..(bi + 1) * mk];
        let boff = if d.shared_rhs { 0 } else { bi * kn };
        let bd = &b.data()[boff..boff + kn];
        gemm_bt(gd, bd, &mut ga[bi * mk..(bi + 1) * mk], d.m, d.k, d.n);
        gemm_at(ad, gd, &mut gb[boff..boff + kn], d.m, d.k, d.n);
    }
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

fn conv1d_fwd<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
        return Err(Error::shape("conv1d", format!("x {xs:?}, w {ws:?}")));
    }
    let (batch, cin, len) = (xs[0], xs[1], xs[2]);
    let (cout, kernel) = (ws[0], ws[2]);
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape("conv1d", format!("bias {:?} for {cout} channels", b.shape())));
        }
    }
    let pad = padding.left(kernel) as isize;
    let mut out = vec![T::zero(); batch * cout * len];
    let (xd, wd) = (x.data(), w.data());
    for bi in 0..batch {
        for o in 0..cout {
            let orow = &mut out[(bi * cout + o) * len..(bi * cout + o + 1) * len];
            if let Some(b) = bias {
                orow.iter_mut().for_each(|v| *v = b.data()[o]);
            }
            for c in 0..cin {
                let xrow = &xd[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                for j in 0..kernel {
                    let wv = wd[(o * cin + c) * kernel + j];
                    let shift = j as isize - pad;
                    for (t, ov) in orow.iter_mut().enumerate() {
                        let src = t as isize + shift;
                        if src >= 0 && (src as usize) < len {
                            *ov += wv * xrow[src as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![batch, cout, len], out))
}

fn conv1d_bwd<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    padding: Padding,
    g: &Tensor<T>,
) -> Vec<Tensor<T>> {
    let (batch, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kernel) = (w.shape()[0], w.shape()[2]);
    let pad = padding.left(kernel) as isize;
    let mut gx = vec![T::zero(); x.numel()];
    let mut gw = vec![T::zero(); w.numel()];
    let mut gbias = vec![T::zero(); cout];
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    for bi in 0..batch {
        for o in 0..cout {
            let grow = &gd[(bi * cout + o) * len..(bi * cout + o + 1) * len];
            if has_bias {
                gbias[o] += grow.iter().copied().sum::<T>();
            }
            for c in 0..cin {
                let xoff = (bi * cin + c) * len;
                for j in 0..kernel {
                    let widx = (o * cin + c) * kernel + j;
                    let wv = wd[widx];
                    let shift = j as isize - pad;
                    let mut acc = T::zero();
                    for (t, &gv) in grow.iter().enumerate() {
                        let src = t as isize + shift;
                        if src >= 0 && (src as usize) < len {
                            acc += gv * xd[xoff + src as usize];
                            gx[xoff + src as usize] += gv * wv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    let mut grads = vec![
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(w.shape().to_vec(), gw),
    ];
    if has_bias {
        grads.push(Tensor::from_parts(vec![cout], gbias));
    }
    grads
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn transpose<T: Float>(x: &Tensor<T>, a: usize, b: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if a >= shape.len() || b >= shape.len() {
        return Err(Error::shape("transpose", format!("axes ({a}, {b}) for {shape:?}")));
    }
    if a == b {
        return Ok(x.clone());
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(a, b);
    let in_strides = strides(shape);
    let mut perm_strides = in_strides.clone();
    perm_strides.swap(a, b);
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let xd = x.data();
    for _ in 0..n {
        let src: usize = idx.iter().zip(&perm_strides).map(|(i, s)| i * s).sum();
        out.push(xd[src]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

fn concat<T: Float>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs[0].shape();
    if axis >= first.len() {
        return Err(Error::shape("concat", format!("axis {axis} for {first:?}")));
    }
    for x in &xs[1..] {
        let s = x.shape();
        let compatible = s.len() == first.len()
            && s.iter()
                .zip(first)
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", format!("{first:?} vs {s:?} on axis {axis}")));
        }
    }
    let (outer, inner) = outer_inner(first, axis);
    let total: usize = xs.iter().map(|x| x.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let chunk = x.shape()[axis] * inner;
            out.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, out))
}

fn split<T: Float>(g: &Tensor<T>, xs: &[&Tensor<T>], axis: usize) -> Vec<Tensor<T>> {
    let (outer, inner) = outer_inner(g.shape(), axis);
    let total = g.shape()[axis];
    let mut parts: Vec<Vec<T>> = xs.iter().map(|x| Vec::with_capacity(x.numel())).collect();
    for o in 0..outer {
        let mut offset = o * total * inner;
        for (x, part) in xs.iter().zip(parts.iter_mut()) {
            let chunk = x.shape()[axis] * inner;
            part.extend_from_slice(&g.data()[offset..offset + chunk]);
            offset += chunk;
        }
    }
    xs.iter()
        .zip(parts)
        .map(|(x, p)| Tensor::from_parts(x.shape().to_vec(), p))
        .collect()
}

fn slice<T: Float>(x: &Tensor<T>, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() || start >= end || end > shape[axis] {
        return Err(Error::shape(
            "slice",
            format!("[{start}..{end}) on axis {axis} of {shape:?}"),
        ));
    }
    let (outer, inner) = outer_inner(shape, axis);
    let width = (end - start) * inner;
    let mut out = Vec::with_capacity(outer * width);
    for o in 0..outer {
        let base = o * shape[axis] * inner + start * inner;
        out.extend_from_slice(&x.data()[base..base + width]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = end - start;
    Ok(Tensor::from_parts(out_shape, out))
}

fn unslice<T: Float>(g: &Tensor<T>, shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let (outer, inner) = outer_inner(shape, axis);
    let width = g.shape()[axis] * inner;
    let mut out = vec![T::zero(); shape.iter().product()];
    for o in 0..outer {
        let base = o * shape[axis] * inner + start * inner;
        out[base..base + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
    }
    Tensor::from_parts(shape.to_vec(), out)
}

fn reduce<T: Float>(x: &Tensor<T>, axis: Option<usize>, mean: bool) -> Result<Tensor<T>> {
    match axis {
        None => {
            let mut s: T = x.data().iter().copied().sum();
            if mean {
                s = s / T::from_f64(x.numel() as f64);
            }
            Ok(Tensor::scalar(s))
        }
        Some(a) => {
            let shape = x.shape();
            if a >= shape.len() {
                return Err(Error::shape("reduce", format!("axis {a} for {shape:?}")));
            }
            let (outer, inner) = outer_inner(shape, a);
            let len = shape[a];
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *dst += v;
                    }
                }
            }
            if mean {
                let n = T::from_f64(len as f64);
                out.iter_mut().for_each(|v| *v = *v / n);
            }
            let mut out_shape = shape.to_vec();
            out_shape.remove(a);
            Ok(Tensor::from_parts(out_shape, out))
        }
    }
}

fn expand_reduced<T: Float>(g: &Tensor<T>, shape: &[usize], axis: Option<usize>, factor: T) -> Tensor<T> {
    let n: usize = shape.iter().product();
    match axis {
        None => Tensor::from_parts(shape.to_vec(), vec![g.item() * factor; n]),
        Some(a) => {
            let (outer, inner) = outer_inner(shape, a);
            let len = shape[a];
            let mut out = Vec::with_capacity(n);
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for _ in 0..len {
                    out.extend(src.iter().map(|&v| v * factor));
                }
            }
            Tensor::from_parts(shape.to_vec(), out)
        }
    }
}

fn softmax_rows<T: Float>(data: &mut [T], width: usize) {
    for row in data.chunks_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

fn softmax<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let width = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax", "scalar input"))?;
    let mut data = x.data().to_vec();
    softmax_rows(&mut data, width);
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

fn softmax_rows_bwd<T: Float>(y: &[T], g: &[T], out: &mut [T], width: usize) {
    for ((yr, gr), or) in y.chunks(width).zip(g.chunks(width)).zip(out.chunks_mut(width)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
}

fn softmax_bwd<T: Float>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let width = *y.shape().last().unwrap();
    let mut out = vec![T::zero(); y.numel()];
    softmax_rows_bwd(y.data(), g.data(), &mut out, width);
    Tensor::from_parts(y.shape().to_vec(), out)
}

fn attention_fwd<T: Float>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 3 || qs != ks || vs.len() != 3 || vs[..2] != qs[..2] {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("q {qs:?}, k {ks:?}, v {vs:?}"),
        ));
    }
    let (batch, len, d, dv) = (qs[0], qs[1], qs[2], vs[2]);
    let scale = T::one() / T::from_f64(d as f64).sqrt();
    let mut probs = vec![T::zero(); batch * len * len];
    let mut out = vec![T::zero(); batch * len * dv];
    for b in 0..batch {
        let qb = &q.data()[b * len * d..(b + 1) * len * d];
        let kb = &k.data()[b * len * d..(b + 1) * len * d];
        let vb = &v.data()[b * len * dv..(b + 1) * len * dv];
        let pb = &mut probs[b * len * len..(b + 1) * len * len];
        for i in 0..len {
            for j in 0..len {
                let mut s = T::zero();
                for c in 0..d {
                    s += qb[i * d + c] * kb[j * d + c];
                }
                pb[i * len + j] = s * scale;
            }
        }
        softmax_rows(pb, len);
        gemm(pb, vb, &mut out[b * len * dv..(b + 1) * len * dv], len, len, dv);
    }
    Ok((
        Tensor::from_parts(vs.to_vec(), out),
        Tensor::from_parts(vec![batch, len, len], probs),
    ))
}

fn attention_bwd<T: Float>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &Tensor<T>,
    g: &Tensor<T>,
) -> Vec<Tensor<T>> {
    let (batch, len, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let dv = v.shape()[2];
    let scale = T::one() / T::from_f64(d as f64).sqrt();
    let mut gq = vec![T::zero(); q.numel()];
    let mut gk = vec![T::zero(); k.numel()];
    let mut gv = vec![T::zero(); v.numel()];
    let mut gp = vec![T::zero(); len * len];
    let mut gs = vec![T::zero(); len * len];
    for b in 0..batch {
        let (qd, kd) = (b * len * d, b * len * d);
        let vd = b * len * dv;
        let pb = &probs.data()[b * len * len..(b + 1) * len * len];
        let gb = &g.data()[vd..vd + len * dv];
        // gv = Pᵀ g
        gemm_at(pb, gb, &mut gv[vd..vd + len * dv], len, len, dv);
        // gP = g vᵀ
        gp.iter_mut().for_each(|x| *x = T::zero());
        gemm_bt(gb, &v.data()[vd..vd + len * dv], &mut gp, len, len, dv);
        softmax_rows_bwd(pb, &gp, &mut gs, len);
        gs.iter_mut().for_each(|x| *x = *x * scale);
        // gq = gS k, gk = gSᵀ q
        gemm(&gs, &k.data()[kd..kd + len * d], &mut gq[qd..qd + len * d], len, len, d);
        gemm_at(&gs, &q.data()[qd..qd + len * d], &mut gk[kd..kd + len * d], len, len, d);
    }
    vec![
        Tensor::from_parts(q.shape().to_vec(), gq),
        Tensor::from_parts(k.shape().to_vec(), gk),
        Tensor::from_parts(v.shape().to_vec(), gv),
    ]
}
