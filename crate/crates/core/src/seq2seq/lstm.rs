use crate::error::Result;
use crate::numerics::{Graph, ParamId, ParamKind, ParamStore, Real, Var};

/// One LSTM layer: the gates come from `[x, h] · W + b` split as input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, input: usize, hidden: usize) -> Self {
        LstmCell {
            weight: store.add(
                format!("{name}.weight"),
                ParamKind::Weight,
                &[input + hidden, 4 * hidden],
            ),
            bias: store.add(format!("{name}.bias"), ParamKind::Bias, &[1, 4 * hidden]),
            input,
            hidden,
        }
    }

    pub fn step<F: Real>(&self, g: &mut Graph<'_, F>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xh = g.concat(&[x, h])?;
        let z = g.matmul(xh, w)?;
        let z = g.add(z, b)?;
        let i = g.slice(z, 0, hd)?;
        let i = g.sigmoid(i);
        let f = g.slice(z, hd, hd)?;
        let f = g.sigmoid(f);
        let cand = g.slice(z, 2 * hd, hd)?;
        let cand = g.tanh(cand);
        let o = g.slice(z, 3 * hd, hd)?;
        let o = g.sigmoid(o);
        let fc = g.mul(f, c)?;
        let ic = g.mul(i, cand)?;
        let c_new = g.add(fc, ic)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}
