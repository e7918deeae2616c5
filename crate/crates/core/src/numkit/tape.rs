//! Reverse-mode gradient tape over the coarse primitives in [`super::ops`]
//! and [`super::gru`].

use super::gru::{bigru_layer_backward, bigru_layer_with_cache, BiGruCache, GruDirection};
use super::ops;
use super::{NumError, Tensor};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var },
    Glu { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    ToSequence { x: Var },
    BiGru { x: Var, fwd: [Var; 4], bwd: [Var; 4], params: Box<(GruDirection, GruDirection)>, cache: Box<BiGruCache> },
    Linear { x: Var, w: Var, b: Var },
    Sigmoid { x: Var },
    Mask { x: Var, mask: Vec<f64> },
    AttentionPool { logits: Var, probs: Var, weights: Tensor },
    BceSum { pred: Var, target: Tensor },
    SqErrSum { pred: Var, target: Tensor },
    WeightedSum { terms: Vec<(Var, f64)> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitive applications so that the gradient of a scalar with
/// respect to every trainable leaf can be recovered in one backward sweep.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient is produced for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf. Gradients are returned in registration order.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumError> {
        let y = ops::conv2d(self.value(x), self.value(w), Some(self.value(b)))?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Conv2d { x, w, b }, ng))
    }

    pub fn glu(&mut self, x: Var) -> Result<Var, NumError> {
        let y = ops::glu(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(y, Op::Glu { x }, ng))
    }

    pub fn max_pool2d(&mut self, x: Var, window: (usize, usize)) -> Result<Var, NumError> {
        let (y, argmax) = ops::max_pool2d_with_argmax(self.value(x), window)?;
        let ng = self.needs(x);
        Ok(self.push(y, Op::MaxPool { x, argmax }, ng))
    }

    pub fn to_sequence(&mut self, x: Var) -> Result<Var, NumError> {
        let y = ops::to_sequence(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(y, Op::ToSequence { x }, ng))
    }

    /// `fwd`/`bwd` are `[w_ih, w_hh, b_ih, b_hh]` for each direction.
    pub fn bigru(&mut self, x: Var, fwd: [Var; 4], bwd: [Var; 4]) -> Result<Var, NumError> {
        let dir = |vars: &[Var; 4]| GruDirection {
            w_ih: self.value(vars[0]).clone(),
            w_hh: self.value(vars[1]).clone(),
            b_ih: self.value(vars[2]).clone(),
            b_hh: self.value(vars[3]).clone(),
        };
        let params = Box::new((dir(&fwd), dir(&bwd)));
        let (y, cache) = bigru_layer_with_cache(self.value(x), &params.0, &params.1)?;
        let ng = self.needs(x) || fwd.iter().chain(&bwd).any(|&v| self.needs(v));
        Ok(self.push(y, Op::BiGru { x, fwd, bwd, params, cache: Box::new(cache) }, ng))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumError> {
        let y = ops::linear(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Linear { x, w, b }, ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        let ng = self.needs(x);
        self.push(y, Op::Sigmoid { x }, ng)
    }

    /// Element-wise multiplication by a fixed mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var, NumError> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(ops::shape_err("mask", format!("{} values vs {}", mask.len(), xv.len())));
        }
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let y = Tensor::new(xv.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(y, Op::Mask { x, mask }, ng))
    }

    pub fn attention_pool(&mut self, logits: Var, probs: Var) -> Result<Var, NumError> {
        let (y, weights) = ops::attention_pool_weights(self.value(logits), self.value(probs))?;
        let ng = self.needs(logits) || self.needs(probs);
        Ok(self.push(y, Op::AttentionPool { logits, probs, weights }, ng))
    }

    /// Summed binary cross-entropy against a constant target.
    pub fn bce_sum(&mut self, pred: Var, target: Tensor) -> Result<Var, NumError> {
        let s = ops::bce_sum(self.value(pred), &target)?;
        let ng = self.needs(pred);
        Ok(self.push(Tensor::scalar(s), Op::BceSum { pred, target }, ng))
    }

    /// Summed squared error against a constant target.
    pub fn sq_err_sum(&mut self, pred: Var, target: Tensor) -> Result<Var, NumError> {
        let s = ops::sq_err_sum(self.value(pred), &target)?;
        let ng = self.needs(pred);
        Ok(self.push(Tensor::scalar(s), Op::SqErrSum { pred, target }, ng))
    }

    /// `Σ kᵢ·xᵢ` over scalar nodes, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Result<Var, NumError> {
        let mut acc = 0.0;
        for &(v, k) in &terms {
            let val = self.value(v);
            if val.len() != 1 {
                return Err(ops::shape_err("weighted_sum", format!("term shape {:?}", val.shape())));
            }
            acc += k * val.item();
        }
        let ng = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSum { terms }, ng))
    }

    /// Replays the tape from the scalar `loss` and returns one gradient per
    /// trainable leaf, in registration order. Unreached leaves get zeros.
    pub fn backward(&self, loss: Var) -> Result<Vec<Tensor>, NumError> {
        if self.value(loss).len() != 1 {
            return Err(ops::shape_err("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let send = |v: Var, d: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.needs(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.axpy(1.0, &d).expect("gradient shape"),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d { x, w, b } => {
                    let (dx, dw, db) =
                        ops::conv2d_backward(self.value(*x), self.value(*w), &g, self.needs(*x))?;
                    if let Some(dx) = dx {
                        send(*x, dx, &mut grads);
                    }
                    send(*w, dw, &mut grads);
                    send(*b, db, &mut grads);
                }
                Op::Glu { x } => {
                    let dx = ops::glu_backward(self.value(*x), &g)?;
                    send(*x, dx, &mut grads);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = ops::max_pool2d_backward(self.value(*x).shape(), argmax, &g);
                    send(*x, dx, &mut grads);
                }
                Op::ToSequence { x } => {
                    let dx = ops::to_sequence_backward(self.value(*x).shape(), &g);
                    send(*x, dx, &mut grads);
                }
                Op::BiGru { x, fwd, bwd, params, cache } => {
                    let (dx, gf, gb) = bigru_layer_backward(
                        self.value(*x),
                        &params.0,
                        &params.1,
                        cache,
                        &g,
                        self.needs(*x),
                    );
                    if let Some(dx) = dx {
                        send(*x, dx, &mut grads);
                    }
                    for (vars, gd) in [(fwd, gf), (bwd, gb)] {
                        let GruDirection { w_ih, w_hh, b_ih, b_hh } = gd;
                        send(vars[0], w_ih, &mut grads);
                        send(vars[1], w_hh, &mut grads);
                        send(vars[2], b_ih, &mut grads);
                        send(vars[3], b_hh, &mut grads);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) =
                        ops::linear_backward(self.value(*x), self.value(*w), &g, self.needs(*x));
                    if let Some(dx) = dx {
                        send(*x, dx, &mut grads);
                    }
                    send(*w, dw, &mut grads);
                    send(*b, db, &mut grads);
                }
                Op::Sigmoid { x } => {
                    let dx = ops::sigmoid_backward(&node.value, &g);
                    send(*x, dx, &mut grads);
                }
                Op::Mask { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                    send(*x, Tensor::new(g.shape().to_vec(), data)?, &mut grads);
                }
                Op::AttentionPool { logits, probs, weights } => {
                    let (dl, dp) = ops::attention_pool_backward(
                        weights,
                        self.value(*probs),
                        &node.value,
                        &g,
                    );
                    send(*logits, dl, &mut grads);
                    send(*probs, dp, &mut grads);
                }
                Op::BceSum { pred, target } => {
                    let dx = ops::bce_sum_backward(self.value(*pred), target, g.item());
                    send(*pred, dx, &mut grads);
                }
                Op::SqErrSum { pred, target } => {
                    let dx = ops::sq_err_sum_backward(self.value(*pred), target, g.item());
                    send(*pred, dx, &mut grads);
                }
                Op::WeightedSum { terms } => {
                    for &(v, k) in terms {
                        send(v, Tensor::scalar(k * g.item()), &mut grads);
                    }
                }
            }
        }

        Ok(self
            .params
            .iter()
            .map(|p| {
                if p.0 <= loss.0 {
                    grads[p.0].take()
                } else {
                    None
                }
                .unwrap_or_else(|| Tensor::zeros(self.value(*p).shape()))
            })
            .collect())
    }
}
