//! LSTM cells and the stacked bidirectional encoder.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Uniform Glorot initialization for a `fan_in x fan_out` matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive dims")
}

/// A standard LSTM cell.
///
/// The gate pre-activations are `x W_x + h W_h + b`, laid out column-wise
/// as `[input | forget | output | candidate]`, each `hidden` wide.
#[derive(Clone, Debug)]
pub struct RecurrentCell {
    pub input_size: usize,
    pub hidden: usize,
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
}

impl RecurrentCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_input = store.add(
            format!("{prefix}.w_input"),
            glorot_uniform(rng, input_size, 4 * hidden),
        );
        let w_hidden = store.add(
            format!("{prefix}.w_hidden"),
            glorot_uniform(rng, hidden, 4 * hidden),
        );
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        let bias = store.add(format!("{prefix}.bias"), Tensor::row(bias));
        RecurrentCell {
            input_size,
            hidden,
            w_input,
            w_hidden,
            bias,
        }
    }

    /// Run over the rows of `inputs` (`n x input_size`), right to left when
    /// `reverse`. Returns the hidden state at every position, in sequence
    /// order.
    pub fn run(&self, g: &mut Graph<'_>, inputs: Var, reverse: bool) -> Result<Vec<Var>> {
        let n = g.value(inputs).rows();
        let d = self.hidden;
        let w_x = g.param(self.w_input);
        let w_h = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let projected = g.matmul(inputs, w_x)?;
        let projected = g.add(projected, b)?;

        let mut h = g.constant(Tensor::zeros(&[1, d]));
        let mut c = g.constant(Tensor::zeros(&[1, d]));
        let mut states = vec![None; n];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..n).rev())
        } else {
            Box::new(0..n)
        };
        for t in order {
            let x_t = g.gather_rows(projected, &[t])?;
            let h_proj = g.matmul(h, w_h)?;
            let gates = g.add(x_t, h_proj)?;
            let i_pre = g.slice_cols(gates, 0, d)?;
            let f_pre = g.slice_cols(gates, d, 2 * d)?;
            let o_pre = g.slice_cols(gates, 2 * d, 3 * d)?;
            let c_pre = g.slice_cols(gates, 3 * d, 4 * d)?;
            let i = g.sigmoid(i_pre);
            let f = g.sigmoid(f_pre);
            let o = g.sigmoid(o_pre);
            let cand = g.tanh(c_pre);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let c_act = g.tanh(c);
            h = g.mul(o, c_act)?;
            states[t] = Some(h);
        }
        Ok(states.into_iter().map(|s| s.expect("every step visited")).collect())
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w_input, self.w_hidden, self.bias]
    }
}

/// `L` layers of forward/backward cell pairs. Layer `k > 1` consumes the
/// `2d`-wide output of layer `k - 1`.
#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub hidden: usize,
    pub layers: Vec<(RecurrentCell, RecurrentCell)>,
}

impl EncoderStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_size: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers.max(1))
            .map(|k| {
                let in_size = if k == 0 { input_size } else { 2 * hidden };
                (
                    RecurrentCell::new(store, &format!("encoder.{k}.fwd"), in_size, hidden, rng),
                    RecurrentCell::new(store, &format!("encoder.{k}.bwd"), in_size, hidden, rng),
                )
            })
            .collect();
        EncoderStack { hidden, layers }
    }

    pub fn output_size(&self) -> usize {
        2 * self.hidden
    }

    /// Encode `n` token vectors (each a `1 x input` row) into an `n x 2d`
    /// matrix whose row `i` is `[forward_i ; backward_i]` of the top layer.
    ///
    /// `layer_masks[k]`, when present, is applied to the output of layer `k`
    /// before it feeds layer `k + 1`.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        tokens: &[Var],
        layer_masks: &[Option<Tensor>],
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::InvalidTensor("cannot encode an empty sequence".into()));
        }
        let mut x = g.concat(tokens, 0)?;
        for (k, (fwd, bwd)) in self.layers.iter().enumerate() {
            let f_states = fwd.run(g, x, false)?;
            let b_states = bwd.run(g, x, true)?;
            let f_mat = g.concat(&f_states, 0)?;
            let b_mat = g.concat(&b_states, 0)?;
            x = g.concat(&[f_mat, b_mat], 1)?;
            if k + 1 < self.layers.len() {
                if let Some(Some(mask)) = layer_masks.get(k) {
                    x = g.dropout_mask_apply(x, mask)?;
                }
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|(f, b)| f.params().into_iter().chain(b.params()))
            .collect()
    }
}
