//! Central finite-difference checks of analytic gradients (64-bit only).

use super::params::{Gradients, ParamStore};
use crate::error::Result;

/// Anything that owns a parameter store.
pub trait HasParams<F> {
    fn params(&self) -> &ParamStore<F>;
    fn params_mut(&mut self) -> &mut ParamStore<F>;
}

impl<F> HasParams<F> for ParamStore<F> {
    fn params(&self) -> &ParamStore<F> {
        self
    }
    fn params_mut(&mut self) -> &mut ParamStore<F> {
        self
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor for the relative error, so entries whose true gradient is
    /// zero are judged on absolute error.
    pub floor: f64,
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-6,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl ParamCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `objective`'s analytic gradient against central differences for every
/// entry of every parameter. `objective(model, want_grad)` returns the loss value
/// and, when asked, its gradients.
pub fn check_gradients<M, O>(model: &mut M, opts: GradCheckOptions, objective: O) -> Result<Vec<ParamCheck>>
where
    M: HasParams<f64>,
    O: Fn(&M, bool) -> Result<(f64, Option<Gradients<f64>>)>,
{
    let (_, grads) = objective(model, true)?;
    let analytic = grads
        .expect("objective must return gradients when asked")
        .to_dense(model.params());
    let mut report = Vec::with_capacity(analytic.len());
    for (pi, ga) in analytic.iter().enumerate() {
        let name = model.params().iter().nth(pi).expect("index").name.clone();
        let mut check = ParamCheck {
            name,
            entries: ga.len(),
            max_rel_error: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for j in 0..ga.len() {
            let orig = value_at(model, pi, j);
            set_value(model, pi, j, orig + opts.step);
            let (fp, _) = objective(model, false)?;
            set_value(model, pi, j, orig - opts.step);
            let (fm, _) = objective(model, false)?;
            set_value(model, pi, j, orig);
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = ga.data()[j];
            let err = relative_error(a, numeric, opts.floor);
            if err > check.max_rel_error || j == 0 {
                check.max_rel_error = err.max(check.max_rel_error);
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(report)
}

fn value_at<M: HasParams<f64>>(model: &M, pi: usize, j: usize) -> f64 {
    model.params().iter().nth(pi).expect("index").value.data()[j]
}

fn set_value<M: HasParams<f64>>(model: &mut M, pi: usize, j: usize, v: f64) {
    model.params_mut().iter_mut().nth(pi).expect("index").value.data_mut()[j] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use crate::numerics::params::{ParamKind, ParamStore};
    use crate::numerics::tensor::Tensor;

    /// Every differentiable op on small random shapes.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", ParamKind::Weight, &[3, 4]);
        let x = store.add("x", ParamKind::Weight, &[2, 3]);
        let b = store.add("b", ParamKind::Bias, &[1, 4]);
        let e = store.add("e", ParamKind::Weight, &[5, 4]);
        let vals: [(crate::numerics::params::ParamId, &[f64]); 4] = [
            (w, &[0.3, -0.2, 0.5, 0.1, -0.4, 0.7, 0.2, -0.6, 0.05, 0.33, -0.12, 0.9]),
            (x, &[1.0, -0.5, 0.25, 0.8, 0.1, -0.9]),
            (b, &[0.1, -0.1, 0.2, 0.0]),
            (
                e,
                &[
                    0.5, 0.4, -0.3, 0.2, 0.1, -0.7, 0.6, 0.3, -0.2, 0.9, 0.15, -0.25, 0.45, 0.35, -0.55, 0.65, 0.75,
                    -0.85, 0.95, 0.05,
                ],
            ),
        ];
        for (id, v) in vals {
            store.get_mut(id).value.data_mut().copy_from_slice(v);
        }

        let objective = |s: &ParamStore<f64>, want: bool| -> Result<(f64, Option<Gradients<f64>>)> {
            let mut g = Graph::new(s);
            let (w, x, b, e) = (g.param(w), g.param(x), g.param(b), g.param(e));
            let h = g.matmul(x, w)?;
            let h = g.add(h, b)?;
            let th = g.tanh(h);
            let sg = g.sigmoid(h);
            let m = g.mul(th, sg)?;
            let rows = g.gather(e, &[1, 3])?;
            let m = g.sub(m, rows)?;
            let left = g.slice(m, 0, 2)?;
            let right = g.slice(m, 2, 2)?;
            let cat = g.concat(&[right, left, th])?;
            let sm = g.softmax(cat)?;
            let msm = g.masked_softmax(cat, &vec![vec![true, false, true, true, true, false, true, true]; 2])?;
            let ls = g.log_softmax(cat)?;
            let picked = g.pick(ls, &[2, 5])?;
            let col = g.slice(sm, 1, 1)?;
            let sr = g.scale_rows(rows, col)?;
            let bl = g.blend(sr, th, &[1.0, 0.0])?;
            let ex = g.exp(bl);
            let sc = g.scale(ex, 0.7);
            let lg = g.log(sc);
            let shifted = g.add(msm, sm)?;
            let lg2 = g.log(shifted);
            let s1 = g.sum(lg);
            let s2 = g.mean(picked);
            let s3 = g.weighted_sum(
                lg2,
                &[
                    0.1, -0.3, 0.2, 0.5, -0.1, 0.4, 0.3, -0.2, 0.6, 0.1, -0.5, 0.2, 0.3, 0.7, -0.4, 0.25,
                ],
            )?;
            let tot = g.concat(&[s1, s2, s3])?;
            let loss = g.sum(tot);
            let v = g.value(loss).item();
            let grads = if want { Some(g.backward(loss)?) } else { None };
            Ok((v, grads))
        };
        let report = check_gradients(&mut store, GradCheckOptions::default(), objective).unwrap();
        for c in &report {
            assert!(c.passed(1e-4), "{c:?}");
        }
    }

    #[test]
    fn matmul_sum_gradient() {
        // root = sum(W·x), W 2×2: dW[i][j] = x[j]
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", ParamKind::Weight, &[2, 2]);
        store.get_mut(w).value.data_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        let xv = Tensor::<f64>::from_f64(vec![2, 1], &[1.5, -2.0]).unwrap();
        let objective = |s: &ParamStore<f64>, want: bool| -> Result<(f64, Option<Gradients<f64>>)> {
            let mut g = Graph::new(s);
            let p = g.param(w);
            let x = g.constant(xv.clone())?;
            let y = g.matmul(p, x)?;
            let r = g.sum(y);
            let v = g.value(r).item();
            Ok((v, if want { Some(g.backward(r)?) } else { None }))
        };
        let (_, grads) = objective(&store, true).unwrap();
        assert_eq!(grads.unwrap().get(w).unwrap().data(), &[1.5, -2.0, 1.5, -2.0]);
        let report = check_gradients(&mut store, GradCheckOptions::default(), objective).unwrap();
        assert!(report[0].passed(1e-4));
    }

    #[test]
    fn linearity_of_backward() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", ParamKind::Weight, &[1, 3]);
        store.get_mut(p).value.data_mut().copy_from_slice(&[0.2, -0.4, 0.9]);
        let grad_of = |which: u8| {
            let mut g = Graph::new(&store);
            let v = g.param(p);
            let a = g.tanh(v);
            let a = g.sum(a);
            let b = g.exp(v);
            let b = g.mean(b);
            let root = match which {
                0 => a,
                1 => b,
                _ => {
                    let both = g.concat(&[a, b]).unwrap();
                    g.sum(both)
                }
            };
            g.backward(root).unwrap().get(p).unwrap().clone()
        };
        let (ga, gb, gs) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..3 {
            assert!((ga.data()[i] + gb.data()[i] - gs.data()[i]).abs() < 1e-14);
        }
    }
}
