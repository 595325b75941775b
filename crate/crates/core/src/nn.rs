//! Layers built from graph primitives: affine maps, feed-forward networks and
//! (bidirectional) LSTMs.

use rand::Rng;

use crate::autodiff::{init, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// `x·W + b` with `W` stored `[input × output]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    input: usize,
    output: usize,
}

impl Linear {
    /// Xavier-normal weight, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            ParamGroup::Other,
            init::xavier_normal(&[input, output], rng)?,
        )?;
        let bias = store.add(format!("{name}.bias"), ParamGroup::Other, Tensor::zeros(vec![output]))?;
        Ok(Linear {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        let b = g.param(store, self.bias);
        g.add_row(y, b)
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }
}

/// Feed-forward network: hidden layers with ReLU and dropout, then a linear
/// output layer producing logits.
#[derive(Clone, Debug)]
pub struct Ffnn {
    hidden: Vec<Linear>,
    output: Linear,
    dropout: f64,
}

impl Ffnn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        dropout: f64,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(store, rng, &format!("{name}.hidden{i}"), width, h)?);
            width = h;
        }
        let output = Linear::new(store, rng, &format!("{name}.output"), width, output)?;
        Ok(Ffnn {
            hidden: layers,
            output,
            dropout,
        })
    }

    /// Maps `[m × input]` to `[m × output]` logits.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let width = g.shape(x).last().copied().unwrap_or(0);
        if width != self.input_dim() {
            return Err(Error::dim("ffnn", g.shape(x), &[self.input_dim()]));
        }
        let mut h = x;
        for layer in &self.hidden {
            let z = layer.forward(g, store, h)?;
            let a = g.relu(z);
            h = g.dropout(a, self.dropout)?;
        }
        self.output.forward(g, store, h)
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.output).input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.hidden.iter().chain(std::iter::once(&self.output))
    }

    /// Every parameter owned by this network.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

/// Single-direction LSTM with gate blocks ordered input, forget, cell,
/// output and zero initial state.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    input: usize,
    hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add(
            format!("{name}.w_ih"),
            ParamGroup::Other,
            init::uniform(&[input, 4 * hidden], bound, rng)?,
        )?;
        let w_hh = store.add(
            format!("{name}.w_hh"),
            ParamGroup::Other,
            init::uniform(&[hidden, 4 * hidden], bound, rng)?,
        )?;
        let bias = store.add(
            format!("{name}.bias"),
            ParamGroup::Other,
            init::uniform(&[4 * hidden], bound, rng)?,
        )?;
        Ok(Lstm {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    /// Runs over the rows of `x` (`[n × input]`), right to left when
    /// `reverse`. Output row `t` is the hidden state at position `t`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, reverse: bool) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.input || shape[0] == 0 {
            return Err(Error::dim("lstm", &shape, &[self.input]));
        }
        let n = shape[0];
        let hd = self.hidden;
        let w_ih = g.param(store, self.w_ih);
        let w_hh = g.param(store, self.w_hh);
        let bias = g.param(store, self.bias);
        let projected = g.matmul(x, w_ih)?;
        let projected = g.add_row(projected, bias)?;

        let mut states: Vec<Option<Var>> = vec![None; n];
        let mut prev: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for t in order {
            let mut z = g.rows(projected, &[t])?;
            if let Some((h_prev, _)) = prev {
                let rec = g.matmul(h_prev, w_hh)?;
                z = g.add(z, rec)?;
            }
            let zi = g.slice_cols(z, 0, hd)?;
            let zf = g.slice_cols(z, hd, hd)?;
            let zg = g.slice_cols(z, 2 * hd, hd)?;
            let zo = g.slice_cols(z, 3 * hd, hd)?;
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let cand = g.tanh(zg);
            let o = g.sigmoid(zo);
            let mut c = g.mul(i, cand)?;
            if let Some((_, c_prev)) = prev {
                let keep = g.mul(f, c_prev)?;
                c = g.add(c, keep)?;
            }
            let tc = g.tanh(c);
            let h = g.mul(o, tc)?;
            states[t] = Some(h);
            prev = Some((h, c));
        }
        let rows: Vec<Var> = states.into_iter().map(|s| s.expect("every step visited")).collect();
        g.concat(&rows, 0)
    }
}

/// Forward and backward LSTMs whose states are concatenated per token.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(BiLstm {
            forward: Lstm::new(store, rng, &format!("{name}.fwd"), input, hidden)?,
            backward: Lstm::new(store, rng, &format!("{name}.bwd"), input, hidden)?,
        })
    }

    /// `[n × input]` to `[n × 2·hidden]`.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let f = self.forward.forward(g, store, x, false)?;
        let b = self.backward.forward(g, store, x, true)?;
        g.concat(&[f, b], 1)
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden_dim()
    }
}
