use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::gemm;
use super::{mismatch, Adjacency, NeuralError, Params, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

/// `y = W x + b` for a single vector or each row of a batch.
pub fn forward_linear(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor, NeuralError> {
    let (out, inp) = match w.shape() {
        [o, i] => (*o, *i),
        other => return Err(mismatch("forward_linear weight", &[0, 0], other)),
    };
    if b.len() != out {
        return Err(mismatch("forward_linear bias", &[out], b.shape()));
    }
    let (batch, x_in) = x.dims()?;
    if x_in != inp {
        return Err(mismatch("forward_linear input", &[inp], &[x_in]));
    }
    let mut y: Vec<f64> = (0..batch).flat_map(|_| b.data().iter().copied()).collect();
    gemm(batch, inp, out, x.data(), (inp, 1), w.data(), (1, inp), 1.0, &mut y);
    match x.shape().len() {
        1 => Ok(Tensor::vector(y)),
        _ => Tensor::matrix(batch, out, y),
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

/// Registers `{name}.w` (Glorot-uniform, `out x inp`) and optionally a zero `{name}.b`.
pub fn init_linear(params: &mut Params, rng: &mut impl Rng, name: &str, inp: usize, out: usize, bias: bool) {
    let bound = (6.0 / (inp + out).max(1) as f64).sqrt();
    params.insert(format!("{name}.w"), uniform(rng, &[out, inp], bound));
    if bias {
        params.insert(format!("{name}.b"), Tensor::zeros(&[out]));
    }
}

pub fn linear_on_tape(tape: &mut Tape<'_>, name: &str, x: Var) -> Result<Var, NeuralError> {
    let w = tape.param(&format!("{name}.w"))?;
    let bias_name = format!("{name}.b");
    let b = if tape.params().contains(&bias_name) { Some(tape.param(&bias_name)?) } else { None };
    tape.linear(x, w, b)
}

/// Gated recurrent cell parameters under `prefix`: input maps `x{z,r,n}`
/// with bias and hidden maps `h{z,r,n}` without.
pub fn init_gru(params: &mut Params, rng: &mut impl Rng, prefix: &str, inp: usize, hidden: usize) {
    for gate in ["z", "r", "n"] {
        init_linear(params, rng, &format!("{prefix}.x{gate}"), inp, hidden, true);
        init_linear(params, rng, &format!("{prefix}.h{gate}"), hidden, hidden, false);
    }
}

/// `z = σ(..)`, `r = σ(..)`, `n = tanh(W_n x + b_n + U_n (r ⊙ h))`,
/// `h' = z ⊙ n + (1 - z) ⊙ h`.
pub fn gru_on_tape(tape: &mut Tape<'_>, prefix: &str, x: Var, h: Var) -> Result<Var, NeuralError> {
    let gate = |tape: &mut Tape<'_>, g: &str| -> Result<Var, NeuralError> {
        let a = linear_on_tape(tape, &format!("{prefix}.x{g}"), x)?;
        let b = linear_on_tape(tape, &format!("{prefix}.h{g}"), h)?;
        let s = tape.add(a, b)?;
        tape.sigmoid(s)
    };
    let z = gate(tape, "z")?;
    let r = gate(tape, "r")?;
    let rh = tape.mul(r, h)?;
    let a = linear_on_tape(tape, &format!("{prefix}.xn"), x)?;
    let b = linear_on_tape(tape, &format!("{prefix}.hn"), rh)?;
    let pre = tape.add(a, b)?;
    let n = tape.tanh(pre)?;
    let zn = tape.mul(z, n)?;
    let keep = tape.one_minus(z)?;
    let kh = tape.mul(keep, h)?;
    tape.add(zn, kh)
}

/// One cell update for a single vector or a batch of rows.
pub fn forward_gru(params: &Params, prefix: &str, h: &Tensor, x: &Tensor) -> Result<Tensor, NeuralError> {
    let (hidden, inp) = params.get(&format!("{prefix}.xz.w"))?.dims()?;
    let (hr, hc) = h.dims()?;
    let (xr, xc) = x.dims()?;
    if hc != hidden || xc != inp || hr != xr {
        return Err(mismatch("forward_gru", &[xr, inp, hidden], &[hr, xc, hc]));
    }
    let mut tape = Tape::new(params);
    let xv = tape.input(x.clone())?;
    let hv = tape.input(h.clone())?;
    let out = gru_on_tape(&mut tape, prefix, xv, hv)?;
    let t = tape.value(out)?.clone();
    match h.shape().len() {
        1 => t.reshaped(vec![hidden]),
        _ => Ok(t),
    }
}

/// Message layer under `prefix`: `{prefix}.self` with bias and `{prefix}.nbr` without.
pub fn init_message_layer(params: &mut Params, rng: &mut impl Rng, prefix: &str, inp: usize, out: usize) {
    init_linear(params, rng, &format!("{prefix}.self"), inp, out, true);
    init_linear(params, rng, &format!("{prefix}.nbr"), inp, out, false);
}

/// `act(S W_self^T + b + (A S) W_nbr^T)` where `A S` sums neighbor rows.
pub fn message_on_tape(
    tape: &mut Tape<'_>,
    prefix: &str,
    s: Var,
    adj: &Adjacency,
    act: Activation,
) -> Result<Var, NeuralError> {
    let own = linear_on_tape(tape, &format!("{prefix}.self"), s)?;
    let summed = tape.aggregate(s, adj)?;
    let nbr = linear_on_tape(tape, &format!("{prefix}.nbr"), summed)?;
    let pre = tape.add(own, nbr)?;
    match act {
        Activation::Tanh => tape.tanh(pre),
        Activation::Identity => Ok(pre),
    }
}
