//! Test-only oracles: a scalar reverse-mode tape and a head model written
//! directly against it, sharing nothing with the library's hand-derived
//! backward passes.

#![allow(dead_code)]

use std::cell::RefCell;
use std::ops::{Add, Mul, Sub};

use fusion_core::network::ParameterBundle;

#[derive(Default)]
pub struct Tape {
    // (parent, local derivative) pairs per node
    nodes: RefCell<Vec<Vec<(usize, f64)>>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    pub val: f64,
}

impl Tape {
    pub fn var(&self, val: f64) -> Var<'_> {
        self.push(val, vec![])
    }

    fn push(&self, val: f64, parents: Vec<(usize, f64)>) -> Var<'_> {
        let mut n = self.nodes.borrow_mut();
        n.push(parents);
        Var { tape: self, idx: n.len() - 1, val }
    }

    /// d out / d node for every node on the tape.
    pub fn grad(&self, out: Var<'_>) -> Vec<f64> {
        let n = self.nodes.borrow();
        let mut adj = vec![0.0; n.len()];
        adj[out.idx] = 1.0;
        for i in (0..=out.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, d) in &n[i] {
                adj[p] += a * d;
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn idx(&self) -> usize {
        self.idx
    }

    fn unary(self, val: f64, d: f64) -> Var<'t> {
        self.tape.push(val, vec![(self.idx, d)])
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.val.exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    pub fn relu(self) -> Var<'t> {
        if self.val > 0.0 {
            self.unary(self.val, 1.0)
        } else {
            self.unary(0.0, 0.0)
        }
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(1.0 / self.val, -1.0 / (self.val * self.val))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(self.val * c, c)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        self.tape.push(self.val + o.val, vec![(self.idx, 1.0), (o.idx, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        self.tape.push(self.val - o.val, vec![(self.idx, 1.0), (o.idx, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        self.tape.push(self.val * o.val, vec![(self.idx, o.val), (o.idx, self.val)])
    }
}

fn sum<'t>(tape: &'t Tape, xs: impl IntoIterator<Item = Var<'t>>) -> Var<'t> {
    xs.into_iter().fold(tape.var(0.0), |a, b| a + b)
}

/// `W x + b` with `W` stored row-major, `b.len()` rows.
fn affine<'t>(tape: &'t Tape, w: &[Var<'t>], b: &[Var<'t>], x: &[Var<'t>]) -> Vec<Var<'t>> {
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + sum(tape, (0..x.len()).map(|i| w[o * x.len() + i] * x[i])))
        .collect()
}

fn softmax<'t>(tape: &'t Tape, z: &[Var<'t>]) -> Vec<Var<'t>> {
    let m = z.iter().map(|v| v.val).fold(f64::NEG_INFINITY, f64::max);
    let shift = tape.var(m);
    let e: Vec<Var<'t>> = z.iter().map(|&v| (v - shift).exp()).collect();
    let inv = sum(tape, e.iter().copied()).recip();
    e.into_iter().map(|v| v * inv).collect()
}

pub const HEAD_TENSORS: [&str; 8] = [
    "attention.fc1.weight",
    "attention.fc1.bias",
    "attention.fc2.weight",
    "attention.fc2.bias",
    "cln.hidden.weight",
    "cln.hidden.bias",
    "cln.out.weight",
    "cln.out.bias",
];

/// Head parameters as plain vectors keyed by tensor name.
#[derive(Clone, Debug)]
pub struct Head {
    pub tensors: Vec<Vec<f64>>,
}

impl Head {
    pub fn of(p: &ParameterBundle) -> Head {
        Head {
            tensors: HEAD_TENSORS
                .iter()
                .map(|n| p.tensor(n).map(|t| t.to_vec()).unwrap_or_default())
                .collect(),
        }
    }

    fn leaves<'t>(&self, tape: &'t Tape) -> Vec<Vec<Var<'t>>> {
        self.tensors.iter().map(|t| t.iter().map(|&v| tape.var(v)).collect()).collect()
    }

    fn sgd(&self, leaves: &[Vec<Var<'_>>], grad: &[f64], lr: f64) -> Head {
        Head {
            tensors: self
                .tensors
                .iter()
                .zip(leaves)
                .map(|(t, l)| t.iter().zip(l).map(|(v, x)| v - lr * grad[x.idx()]).collect())
                .collect(),
        }
    }
}

fn classifier_loss<'t>(tape: &'t Tape, w: &[Vec<Var<'t>>], x: &[Var<'t>], label: usize) -> Var<'t> {
    let act = if w[5].is_empty() {
        x.to_vec()
    } else {
        affine(tape, &w[4], &w[5], x).into_iter().map(|v| v.relu()).collect()
    };
    let z = affine(tape, &w[6], &w[7], &act);
    softmax(tape, &z)[label].ln().scale(-1.0)
}

/// One SGD step on the cross-entropy of the attention-pooled rows.
pub fn meml_step(head: &Head, rows: &[Vec<f64>], label: usize, lr: f64) -> Head {
    let tape = Tape::default();
    let w = head.leaves(&tape);
    let r: Vec<Vec<Var<'_>>> = rows.iter().map(|x| x.iter().map(|&v| tape.var(v)).collect()).collect();
    let logits: Vec<Var<'_>> = r
        .iter()
        .map(|x| {
            let h: Vec<Var<'_>> = affine(&tape, &w[0], &w[1], x).into_iter().map(|v| v.tanh()).collect();
            affine(&tape, &w[2], &w[3], &h)[0]
        })
        .collect();
    let alpha = softmax(&tape, &logits);
    let me: Vec<Var<'_>> = (0..rows[0].len())
        .map(|j| sum(&tape, r.iter().zip(&alpha).map(|(x, &a)| a * x[j])))
        .collect();
    let loss = classifier_loss(&tape, &w, &me, label);
    head.sgd(&w, &tape.grad(loss), lr)
}

/// One SGD step per row, in order, each on that row alone.
pub fn sequential_steps(head: &Head, rows: &[Vec<f64>], labels: &[usize], lr: f64) -> Head {
    let mut cur = head.clone();
    for (x, &y) in rows.iter().zip(labels) {
        let tape = Tape::default();
        let w = cur.leaves(&tape);
        let xv: Vec<Var<'_>> = x.iter().map(|&v| tape.var(v)).collect();
        let loss = classifier_loss(&tape, &w, &xv, y);
        cur = cur.sgd(&w, &tape.grad(loss), lr);
    }
    cur
}

#[test]
fn tape_matches_closed_form() {
    let tape = Tape::default();
    let x = tape.var(0.7);
    let y = tape.var(-1.3);
    // f = tanh(x*y) + exp(x) - ln(x)
    let f = (x * y).tanh() + x.exp() - x.ln();
    let g = tape.grad(f);
    let t = (0.7f64 * -1.3).tanh();
    assert!((g[x.idx()] - ((1.0 - t * t) * -1.3 + 0.7f64.exp() - 1.0 / 0.7)).abs() < 1e-14);
    assert!((g[y.idx()] - (1.0 - t * t) * 0.7).abs() < 1e-14);
}
