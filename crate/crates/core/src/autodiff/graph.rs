use crate::scalar::{real, Scalar};

use super::{AutodiffError, Tensor};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One recorded operation together with the references its backward rule
/// needs. Inputs always precede the output on the tape, so a single reverse
/// sweep visits every rule exactly once with its upstream gradient ready.
#[derive(Clone, Debug)]
pub enum Op<F: Scalar> {
    Leaf,
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: F },
    Relu { a: Var },
    Sigmoid { a: Var },
    Exp { a: Var },
    Log { a: Var },
    Reshape { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    Affine { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Var, stride: usize, pad: usize },
    Upsample2x { a: Var },
    RollBlocks { a: Var, block: usize, shifts: Vec<i64> },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize> },
    GaussianKl { mean: Var, logvar: Var },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Recorded computation: an append-only tape of operations in topological
/// order. Forward values are computed eagerly as operations are recorded.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor that is not differentiated through (data, targets,
    /// frozen weights, noise draws).
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf)
    }

    /// Records a trainable leaf; its gradient is available after `backward`.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf)
    }

    /// Copies an externally owned weight tensor onto the tape. The original
    /// stays untouched; recorded tensors are never mutated in place.
    pub fn param_from(&mut self, t: &Tensor<F>) -> Var {
        self.param(Tensor::from_vec(t.shape().to_vec(), t.data().to_vec()).expect("valid source"))
    }

    pub fn constant_from(&mut self, t: &Tensor<F>) -> Var {
        self.constant(Tensor::from_vec(t.shape().to_vec(), t.data().to_vec()).expect("valid source"))
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call with respect to `v`, if `v`
    /// participates in differentiation.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op });
        Var(id)
    }

    fn push_result(&mut self, shape: Vec<usize>, data: Vec<F>, inputs: &[Var], op: Op<F>) -> Var {
        let requires = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad());
        let t = Tensor::from_vec(shape, data)
            .expect("op produced consistent shape")
            .with_requires_grad(requires);
        self.push(t, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(AutodiffError::shape(
                op,
                format!("operand shapes differ: {:?} vs {:?}", sa, sb),
            ));
        }
        Ok(())
    }

    // ── Elementwise and shape operations ────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x + y);
        Ok(self.push_result(self.shape_of(a), data, &[a, b], Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x - y);
        Ok(self.push_result(self.shape_of(a), data, &[a, b], Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x * y);
        Ok(self.push_result(self.shape_of(a), data, &[a, b], Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Var {
        let data: Vec<F> = self.data(a).iter().map(|&x| x * factor).collect();
        self.push_result(self.shape_of(a), data, &[a], Op::Scale { a, factor })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<F> = self
            .data(a)
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        self.push_result(self.shape_of(a), data, &[a], Op::Relu { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = F::one();
        let data: Vec<F> = self.data(a).iter().map(|&x| one / (one + (-x).exp())).collect();
        self.push_result(self.shape_of(a), data, &[a], Op::Sigmoid { a })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data: Vec<F> = self.data(a).iter().map(|&x| x.exp()).collect();
        self.push_result(self.shape_of(a), data, &[a], Op::Exp { a })
    }

    pub fn log(&mut self, a: Var) -> Var {
        let data: Vec<F> = self.data(a).iter().map(|&x| x.ln()).collect();
        self.push_result(self.shape_of(a), data, &[a], Op::Log { a })
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].value.numel() {
            return Err(AutodiffError::shape(
                "reshape",
                format!(
                    "cannot view {:?} ({} elements) as {:?} ({} elements)",
                    self.shape_of(a),
                    self.nodes[a.0].value.numel(),
                    shape,
                    numel
                ),
            ));
        }
        let data = self.data(a).to_vec();
        Ok(self.push_result(shape, data, &[a], Op::Reshape { a }))
    }

    /// Full reduction to a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: F = self.data(a).iter().copied().sum();
        self.push_result(Vec::new(), vec![s], &[a], Op::Sum { a })
    }

    /// Full mean to a rank-0 scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = real::<F>(self.nodes[a.0].value.numel() as f64);
        let s: F = self.data(a).iter().copied().sum();
        self.push_result(Vec::new(), vec![s / n], &[a], Op::Mean { a })
    }

    // ── Network operations ──────────────────────────────────────────────

    /// Batched affine map: `out[b,e] = sum_d x[b,d] w[d,e] + bias[e]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape_of(x);
        let ws = self.shape_of(w);
        let bs = self.shape_of(b);
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(AutodiffError::shape(
                "affine",
                format!("expected ranks 2/2/1, got {:?}/{:?}/{:?}", xs, ws, bs),
            ));
        }
        let (batch, d) = (xs[0], xs[1]);
        let (wd, e) = (ws[0], ws[1]);
        if d != wd || bs[0] != e {
            return Err(AutodiffError::shape(
                "affine",
                format!(
                    "input [{},{}] incompatible with weight [{},{}] / bias [{}]",
                    batch, d, wd, e, bs[0]
                ),
            ));
        }
        let xd = self.data(x);
        let wdat = self.data(w);
        let bdat = self.data(b);
        let mut out = vec![F::zero(); batch * e];
        for bi in 0..batch {
            let xrow = &xd[bi * d..(bi + 1) * d];
            let orow = &mut out[bi * e..(bi + 1) * e];
            orow.copy_from_slice(bdat);
            for (di, &xv) in xrow.iter().enumerate() {
                let wrow = &wdat[di * e..(di + 1) * e];
                for (ov, &wv) in orow.iter_mut().zip(wrow) {
                    *ov += xv * wv;
                }
            }
        }
        Ok(self.push_result(vec![batch, e], out, &[x, w, b], Op::Affine { x, w, b }))
    }

    /// Strided 2-D cross-correlation with zero padding and per-channel bias.
    ///
    /// `out[b,co,y,x] = bias[co] + sum_{ci,i,j} in[b,ci,y*s+i-p,x*s+j-p] * k[co,ci,i,j]`
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let geom = ConvGeometry::resolve(self.shape_of(x), self.shape_of(k), self.shape_of(b), stride, pad)?;
        let xp = pad_input(self.data(x), &geom);
        let kd = self.data(k);
        let bd = self.data(b);
        let g = &geom;
        let plane = g.h_out * g.w_out;
        let patch = g.c_in * g.kh * g.kw;
        let mut out = vec![F::zero(); g.batch * g.c_out * plane];
        let mut cols = vec![F::zero(); patch * plane];
        for bi in 0..g.batch {
            im2col(&xp[bi * g.c_in * g.h_pad * g.w_pad..], g, &mut cols);
            for co in 0..g.c_out {
                let orow = &mut out[(bi * g.c_out + co) * plane..(bi * g.c_out + co + 1) * plane];
                orow.iter_mut().for_each(|v| *v = bd[co]);
                for d in 0..patch {
                    let kv = kd[co * patch + d];
                    if kv == F::zero() {
                        continue;
                    }
                    let crow = &cols[d * plane..(d + 1) * plane];
                    for (o, &c) in orow.iter_mut().zip(crow) {
                        *o += kv * c;
                    }
                }
            }
        }
        Ok(self.push_result(
            vec![g.batch, g.c_out, g.h_out, g.w_out],
            out,
            &[x, k, b],
            Op::Conv2d { x, k, b, stride, pad },
        ))
    }

    /// Nearest-neighbor 2x upsampling of a rank-4 tensor.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.shape_of(a);
        if s.len() != 4 {
            return Err(AutodiffError::shape(
                "upsample2x",
                format!("expected rank-4 input, got {:?}", s),
            ));
        }
        let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
        let ad = self.data(a);
        let mut out = vec![F::zero(); batch * c * 4 * h * w];
        let (h2, w2) = (2 * h, 2 * w);
        for bc in 0..batch * c {
            for y in 0..h2 {
                let src_row = &ad[(bc * h + y / 2) * w..(bc * h + y / 2 + 1) * w];
                let dst_row = &mut out[(bc * h2 + y) * w2..(bc * h2 + y + 1) * w2];
                for (xo, d) in dst_row.iter_mut().enumerate() {
                    *d = src_row[xo / 2];
                }
            }
        }
        Ok(self.push_result(vec![batch, c, h2, w2], out, &[a], Op::Upsample2x { a }))
    }

    /// Cyclic shift of each contiguous length-`block` segment of every row.
    ///
    /// The input is `[batch, m*block]`; row `b` is treated as `m` blocks and
    /// each block is rolled by `shifts[b]`: `out[(i + s) mod block] = in[i]`.
    pub fn roll_blocks(&mut self, a: Var, block: usize, shifts: &[i64]) -> Result<Var, AutodiffError> {
        let s = self.shape_of(a);
        if s.len() != 2 || block == 0 || s[1] % block != 0 {
            return Err(AutodiffError::shape(
                "roll_blocks",
                format!("expected [batch, m*{}], got {:?}", block, s),
            ));
        }
        if shifts.len() != s[0] {
            return Err(AutodiffError::shape(
                "roll_blocks",
                format!("{} shifts for batch of {}", shifts.len(), s[0]),
            ));
        }
        let (batch, width) = (s[0], s[1]);
        let ad = self.data(a);
        let mut out = vec![F::zero(); ad.len()];
        for bi in 0..batch {
            let s_mod = shifts[bi].rem_euclid(block as i64) as usize;
            for blk in (0..width).step_by(block) {
                let src = &ad[bi * width + blk..bi * width + blk + block];
                let dst = &mut out[bi * width + blk..bi * width + blk + block];
                for (i, &v) in src.iter().enumerate() {
                    dst[(i + s_mod) % block] = v;
                }
            }
        }
        Ok(self.push_result(
            vec![batch, width],
            out,
            &[a],
            Op::RollBlocks {
                a,
                block,
                shifts: shifts.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood of the labels under row-wise softmax.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape_of(logits);
        if s.len() != 2 {
            return Err(AutodiffError::shape(
                "softmax_cross_entropy",
                format!("expected rank-2 logits, got {:?}", s),
            ));
        }
        let (batch, classes) = (s[0], s[1]);
        if labels.len() != batch {
            return Err(AutodiffError::shape(
                "softmax_cross_entropy",
                format!("{} labels for batch of {}", labels.len(), batch),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(AutodiffError::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        let ld = self.data(logits);
        let mut total = F::zero();
        for (bi, &label) in labels.iter().enumerate() {
            let row = &ld[bi * classes..(bi + 1) * classes];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
            total = total + lse - row[label];
        }
        let loss = total / real::<F>(batch as f64);
        Ok(self.push_result(
            Vec::new(),
            vec![loss],
            &[logits],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// KL divergence of a diagonal Gaussian from the standard normal, summed
    /// over all coordinates: `0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)`.
    pub fn gaussian_kl(&mut self, mean: Var, logvar: Var) -> Result<Var, AutodiffError> {
        self.same_shape("gaussian_kl", mean, logvar)?;
        let half = real::<F>(0.5);
        let one = F::one();
        let kl = self
            .data(mean)
            .iter()
            .zip(self.data(logvar))
            .map(|(&m, &lv)| half * (m * m + lv.exp() - one - lv))
            .sum();
        Ok(self.push_result(Vec::new(), vec![kl], &[mean, logvar], Op::GaussianKl { mean, logvar }))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Every gradient-tracked tensor
    /// reachable from `loss` accumulates `d(loss)/d(tensor)`; fan-out adds
    /// path contributions.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: self.shape_of(loss),
            });
        }
        if !self.nodes[loss.0].value.requires_grad() {
            // Loss does not depend on any tracked tensor; nothing to do.
            return Ok(());
        }
        if let Some(g) = self.nodes[loss.0].value.grad_mut() {
            g[0] = F::one();
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            let g = match self.nodes[i].value.grad() {
                Some(g) => g.to_vec(),
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.apply_backward(i, &op, &g);
        }
        Ok(())
    }

    fn apply_backward(&mut self, out_id: usize, op: &Op<F>, g: &[F]) {
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.accumulate(*a, g.iter().copied());
                self.accumulate(*b, g.iter().copied());
            }
            Op::Sub { a, b } => {
                self.accumulate(*a, g.iter().copied());
                self.accumulate(*b, g.iter().map(|&v| -v));
            }
            Op::Mul { a, b } => {
                let da: Vec<F> = zip_map(g, self.data(*b), |gv, bv| gv * bv);
                let db: Vec<F> = zip_map(g, self.data(*a), |gv, av| gv * av);
                self.accumulate(*a, da.into_iter());
                self.accumulate(*b, db.into_iter());
            }
            Op::Scale { a, factor } => {
                let f = *factor;
                self.accumulate(*a, g.iter().map(move |&v| v * f));
            }
            Op::Relu { a } => {
                let da: Vec<F> = zip_map(g, self.data(*a), |gv, xv| {
                    if xv > F::zero() {
                        gv
                    } else {
                        F::zero()
                    }
                });
                self.accumulate(*a, da.into_iter());
            }
            Op::Sigmoid { a } => {
                let one = F::one();
                let da: Vec<F> = zip_map(g, self.nodes[out_id].value.data(), |gv, y| gv * y * (one - y));
                self.accumulate(*a, da.into_iter());
            }
            Op::Exp { a } => {
                let da: Vec<F> = zip_map(g, self.nodes[out_id].value.data(), |gv, y| gv * y);
                self.accumulate(*a, da.into_iter());
            }
            Op::Log { a } => {
                let da: Vec<F> = zip_map(g, self.data(*a), |gv, xv| gv / xv);
                self.accumulate(*a, da.into_iter());
            }
            Op::Reshape { a } => {
                self.accumulate(*a, g.iter().copied());
            }
            Op::Sum { a } => {
                let gv = g[0];
                let n = self.nodes[a.0].value.numel();
                self.accumulate(*a, std::iter::repeat(gv).take(n));
            }
            Op::Mean { a } => {
                let n = self.nodes[a.0].value.numel();
                let gv = g[0] / real::<F>(n as f64);
                self.accumulate(*a, std::iter::repeat(gv).take(n));
            }
            Op::Affine { x, w, b } => self.backward_affine(*x, *w, *b, g),
            Op::Conv2d { x, k, b, stride, pad } => self.backward_conv2d(*x, *k, *b, *stride, *pad, g),
            Op::Upsample2x { a } => {
                let s = self.shape_of(*a);
                let (batch_c, h, w) = (s[0] * s[1], s[2], s[3]);
                let (h2, w2) = (2 * h, 2 * w);
                let mut da = vec![F::zero(); batch_c * h * w];
                for bc in 0..batch_c {
                    for y in 0..h2 {
                        let grow = &g[(bc * h2 + y) * w2..(bc * h2 + y + 1) * w2];
                        let drow = &mut da[(bc * h + y / 2) * w..(bc * h + y / 2 + 1) * w];
                        for (xo, &gv) in grow.iter().enumerate() {
                            drow[xo / 2] += gv;
                        }
                    }
                }
                self.accumulate(*a, da.into_iter());
            }
            Op::RollBlocks { a, block, shifts } => {
                let s = self.shape_of(*a);
                let (batch, width) = (s[0], s[1]);
                let mut da = vec![F::zero(); batch * width];
                for bi in 0..batch {
                    let s_mod = shifts[bi].rem_euclid(*block as i64) as usize;
                    for blk in (0..width).step_by(*block) {
                        let grow = &g[bi * width + blk..bi * width + blk + *block];
                        let drow = &mut da[bi * width + blk..bi * width + blk + *block];
                        for (i, d) in drow.iter_mut().enumerate() {
                            *d = grow[(i + s_mod) % *block];
                        }
                    }
                }
                self.accumulate(*a, da.into_iter());
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let s = self.shape_of(*logits);
                let (batch, classes) = (s[0], s[1]);
                let ld = self.data(*logits);
                let scale = g[0] / real::<F>(batch as f64);
                let mut da = vec![F::zero(); batch * classes];
                for (bi, &label) in labels.iter().enumerate() {
                    let row = &ld[bi * classes..(bi + 1) * classes];
                    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                    let denom: F = row.iter().map(|&v| (v - max).exp()).sum();
                    for c in 0..classes {
                        let p = (row[c] - max).exp() / denom;
                        let target = if c == label { F::one() } else { F::zero() };
                        da[bi * classes + c] = scale * (p - target);
                    }
                }
                self.accumulate(*logits, da.into_iter());
            }
            Op::GaussianKl { mean, logvar } => {
                let gv = g[0];
                let half = real::<F>(0.5);
                let one = F::one();
                let dmean: Vec<F> = self.data(*mean).iter().map(|&m| gv * m).collect();
                let dlv: Vec<F> = self
                    .data(*logvar)
                    .iter()
                    .map(|&lv| gv * half * (lv.exp() - one))
                    .collect();
                self.accumulate(*mean, dmean.into_iter());
                self.accumulate(*logvar, dlv.into_iter());
            }
        }
    }

    fn backward_affine(&mut self, x: Var, w: Var, b: Var, g: &[F]) {
        let xs = self.shape_of(x);
        let ws = self.shape_of(w);
        let (batch, d, e) = (xs[0], xs[1], ws[1]);
        if self.nodes[x.0].value.requires_grad() {
            let wd = self.data(w);
            let mut dx = vec![F::zero(); batch * d];
            for bi in 0..batch {
                let grow = &g[bi * e..(bi + 1) * e];
                let dxrow = &mut dx[bi * d..(bi + 1) * d];
                for (di, dv) in dxrow.iter_mut().enumerate() {
                    let wrow = &wd[di * e..(di + 1) * e];
                    let mut acc = F::zero();
                    for (&gv, &wv) in grow.iter().zip(wrow) {
                        acc = acc + gv * wv;
                    }
                    *dv = acc;
                }
            }
            self.accumulate(x, dx.into_iter());
        }
        if self.nodes[w.0].value.requires_grad() {
            let xd = self.data(x);
            let mut dw = vec![F::zero(); d * e];
            for bi in 0..batch {
                let xrow = &xd[bi * d..(bi + 1) * d];
                let grow = &g[bi * e..(bi + 1) * e];
                for (di, &xv) in xrow.iter().enumerate() {
                    let dwrow = &mut dw[di * e..(di + 1) * e];
                    for (dv, &gv) in dwrow.iter_mut().zip(grow) {
                        *dv += xv * gv;
                    }
                }
            }
            self.accumulate(w, dw.into_iter());
        }
        if self.nodes[b.0].value.requires_grad() {
            let mut db = vec![F::zero(); e];
            for bi in 0..batch {
                for (dv, &gv) in db.iter_mut().zip(&g[bi * e..(bi + 1) * e]) {
                    *dv += gv;
                }
            }
            self.accumulate(b, db.into_iter());
        }
    }

    fn backward_conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize, g: &[F]) {
        let geom = ConvGeometry::resolve(
            self.shape_of(x),
            self.shape_of(k),
            self.shape_of(b),
            stride,
            pad,
        )
        .expect("geometry validated at record time");
        let gm = &geom;

        if self.nodes[b.0].value.requires_grad() {
            let mut db = vec![F::zero(); gm.c_out];
            let plane = gm.h_out * gm.w_out;
            for bi in 0..gm.batch {
                for (co, dv) in db.iter_mut().enumerate() {
                    let base = (bi * gm.c_out + co) * plane;
                    for &gv in &g[base..base + plane] {
                        *dv += gv;
                    }
                }
            }
            self.accumulate(b, db.into_iter());
        }

        let need_dx = self.nodes[x.0].value.requires_grad();
        let need_dk = self.nodes[k.0].value.requires_grad();
        if !need_dx && !need_dk {
            return;
        }

        let xp = pad_input(self.data(x), gm);
        let kd = self.data(k).to_vec();
        let plane = gm.h_out * gm.w_out;
        let patch = gm.c_in * gm.kh * gm.kw;
        let mut dxp = vec![F::zero(); xp.len()];
        let mut dk = vec![F::zero(); kd.len()];
        let mut cols = vec![F::zero(); patch * plane];
        let mut dcols = vec![F::zero(); patch * plane];
        for bi in 0..gm.batch {
            let plane_base = bi * gm.c_in * gm.h_pad * gm.w_pad;
            if need_dk {
                im2col(&xp[plane_base..], gm, &mut cols);
            }
            dcols.iter_mut().for_each(|v| *v = F::zero());
            for co in 0..gm.c_out {
                let grow = &g[(bi * gm.c_out + co) * plane..(bi * gm.c_out + co + 1) * plane];
                for d in 0..patch {
                    if need_dk {
                        let crow = &cols[d * plane..(d + 1) * plane];
                        let mut acc = F::zero();
                        for (&gv, &cv) in grow.iter().zip(crow) {
                            acc += gv * cv;
                        }
                        dk[co * patch + d] += acc;
                    }
                    if need_dx {
                        let kv = kd[co * patch + d];
                        if kv == F::zero() {
                            continue;
                        }
                        let drow = &mut dcols[d * plane..(d + 1) * plane];
                        for (dc, &gv) in drow.iter_mut().zip(grow) {
                            *dc += kv * gv;
                        }
                    }
                }
            }
            if need_dx {
                col2im(&dcols, gm, &mut dxp[plane_base..]);
            }
        }
        if need_dk {
            self.accumulate(k, dk.into_iter());
        }
        if need_dx {
            let dx = unpad_grad(&dxp, gm);
            self.accumulate(x, dx.into_iter());
        }
    }

    fn accumulate<I: Iterator<Item = F>>(&mut self, v: Var, contrib: I) {
        if let Some(grad) = self.nodes[v.0].value.grad_mut() {
            for (gslot, c) in grad.iter_mut().zip(contrib) {
                *gslot += c;
            }
        }
    }

    fn data(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    /// Test hook: overwrite a recorded node's backward rule while keeping its
    /// forward value. Used to prove the gradient checker flags a wrong rule.
    #[cfg(test)]
    pub(crate) fn corrupt_op(&mut self, v: Var, op: Op<F>) {
        self.nodes[v.0].op = op;
    }
}

struct ConvGeometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    h_pad: usize,
    w_pad: usize,
    h_out: usize,
    w_out: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn resolve(
        xs: Vec<usize>,
        ks: Vec<usize>,
        bs: Vec<usize>,
        stride: usize,
        pad: usize,
    ) -> Result<Self, AutodiffError> {
        if xs.len() != 4 || ks.len() != 4 || bs.len() != 1 {
            return Err(AutodiffError::shape(
                "conv2d",
                format!("expected ranks 4/4/1, got {:?}/{:?}/{:?}", xs, ks, bs),
            ));
        }
        if stride == 0 {
            return Err(AutodiffError::shape("conv2d", "stride must be positive"));
        }
        let (batch, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, kc_in, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if c_in != kc_in {
            return Err(AutodiffError::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", c_in, kc_in),
            ));
        }
        if bs[0] != c_out {
            return Err(AutodiffError::shape(
                "conv2d",
                format!("bias [{}] does not match {} output channels", bs[0], c_out),
            ));
        }
        let (h_pad, w_pad) = (h + 2 * pad, w + 2 * pad);
        if kh > h_pad || kw > w_pad {
            return Err(AutodiffError::shape(
                "conv2d",
                format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    kh, kw, h_pad, w_pad
                ),
            ));
        }
        Ok(ConvGeometry {
            batch,
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
            h_pad,
            w_pad,
            h_out: (h_pad - kh) / stride + 1,
            w_out: (w_pad - kw) / stride + 1,
            stride,
            pad,
        })
    }
}

/// Unfolds one padded image into patch rows: `cols[(ci,i,j)][oy*W'+ox] =
/// xp[ci, oy*s+i, ox*s+j]`. Long contiguous output rows make the kernel
/// accumulation loops vectorizable.
fn im2col<F: Scalar>(xp: &[F], g: &ConvGeometry, cols: &mut [F]) {
    let plane = g.h_out * g.w_out;
    let mut d = 0;
    for ci in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let crow = &mut cols[d * plane..(d + 1) * plane];
                for oy in 0..g.h_out {
                    let src_base = (ci * g.h_pad + oy * g.stride + i) * g.w_pad + j;
                    let dst = &mut crow[oy * g.w_out..(oy + 1) * g.w_out];
                    if g.stride == 1 {
                        dst.copy_from_slice(&xp[src_base..src_base + g.w_out]);
                    } else {
                        for (ox, v) in dst.iter_mut().enumerate() {
                            *v = xp[src_base + ox * g.stride];
                        }
                    }
                }
                d += 1;
            }
        }
    }
}

/// Scatter-adds patch-row gradients back onto the padded image, the adjoint
/// of [`im2col`].
fn col2im<F: Scalar>(dcols: &[F], g: &ConvGeometry, dxp: &mut [F]) {
    let plane = g.h_out * g.w_out;
    let mut d = 0;
    for ci in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let crow = &dcols[d * plane..(d + 1) * plane];
                for oy in 0..g.h_out {
                    let dst_base = (ci * g.h_pad + oy * g.stride + i) * g.w_pad + j;
                    let src = &crow[oy * g.w_out..(oy + 1) * g.w_out];
                    if g.stride == 1 {
                        for (ox, &v) in src.iter().enumerate() {
                            dxp[dst_base + ox] += v;
                        }
                    } else {
                        for (ox, &v) in src.iter().enumerate() {
                            dxp[dst_base + ox * g.stride] += v;
                        }
                    }
                }
                d += 1;
            }
        }
    }
}

fn pad_input<F: Scalar>(x: &[F], g: &ConvGeometry) -> Vec<F> {
    if g.pad == 0 {
        return x.to_vec();
    }
    let mut xp = vec![F::zero(); g.batch * g.c_in * g.h_pad * g.w_pad];
    for bc in 0..g.batch * g.c_in {
        for y in 0..g.h {
            let src = &x[(bc * g.h + y) * g.w..(bc * g.h + y + 1) * g.w];
            let dst_base = (bc * g.h_pad + y + g.pad) * g.w_pad + g.pad;
            xp[dst_base..dst_base + g.w].copy_from_slice(src);
        }
    }
    xp
}

fn unpad_grad<F: Scalar>(dxp: &[F], g: &ConvGeometry) -> Vec<F> {
    if g.pad == 0 {
        return dxp.to_vec();
    }
    let mut dx = vec![F::zero(); g.batch * g.c_in * g.h * g.w];
    for bc in 0..g.batch * g.c_in {
        for y in 0..g.h {
            let src_base = (bc * g.h_pad + y + g.pad) * g.w_pad + g.pad;
            let dst = &mut dx[(bc * g.h + y) * g.w..(bc * g.h + y + 1) * g.w];
            dst.copy_from_slice(&dxp[src_base..src_base + g.w]);
        }
    }
    dx
}

fn zip_map<F: Scalar>(a: &[F], b: &[F], f: impl Fn(F, F) -> F) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
