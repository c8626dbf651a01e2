use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::numcore::{DenseNet, Mode, NetGrads, Tape};
use crate::sampling::SeededRng;

/// Affine coupling: the first `split` coordinates pass through and
/// parameterize a scale and shift of the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    pub split: usize,
    pub s_net: DenseNet,
    pub t_net: DenseNet,
    pub s_clamp: f64,
}

pub(crate) struct BlockTape {
    x2: Array2<f64>,
    /// `tanh(s_raw / clamp)`
    th: Array2<f64>,
    exp_s: Array2<f64>,
    s_tape: Tape,
    t_tape: Tape,
}

impl CouplingBlock {
    /// Subnets `[x1; c] → hidden → (M − split)`, last layers zeroed so the
    /// block starts as the identity.
    pub fn new(
        dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        dropout: f64,
        s_clamp: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::shape("coupling needs at least two coordinates"));
        }
        let split = dim / 2;
        let mut dims = vec![split + cond_dim];
        dims.extend_from_slice(hidden);
        dims.push(dim - split);
        let s_net = DenseNet::mlp(&dims, dropout, true, rng)?;
        let t_net = DenseNet::mlp(&dims, dropout, true, rng)?;
        CouplingBlock::from_parts(split, s_net, t_net, s_clamp)
    }

    pub fn from_parts(split: usize, s_net: DenseNet, t_net: DenseNet, s_clamp: f64) -> Result<Self> {
        if !(s_clamp > 0.0) {
            return Err(Error::config("s_clamp must be positive"));
        }
        if split == 0 {
            return Err(Error::shape("split index must be at least 1"));
        }
        if s_net.in_dim() != t_net.in_dim() || s_net.out_dim() != t_net.out_dim() {
            return Err(Error::shape("scale and shift nets disagree in shape"));
        }
        if s_net.in_dim() < split {
            return Err(Error::shape("subnet input smaller than split"));
        }
        Ok(CouplingBlock {
            split,
            s_net,
            t_net,
            s_clamp,
        })
    }

    pub fn dim(&self) -> usize {
        self.split + self.s_net.out_dim()
    }

    pub fn cond_dim(&self) -> usize {
        self.s_net.in_dim() - self.split
    }

    fn check(&self, x: &ArrayView2<f64>, c: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.dim() || c.ncols() != self.cond_dim() || x.nrows() != c.nrows() {
            return Err(Error::shape(format!(
                "coupling expects [n×{}] and [n×{}], got {:?} and {:?}",
                self.dim(),
                self.cond_dim(),
                x.dim(),
                c.dim()
            )));
        }
        Ok(())
    }

    fn subnet_input(&self, x1: ArrayView2<f64>, c: ArrayView2<f64>) -> Array2<f64> {
        concatenate(Axis(1), &[x1, c]).expect("row counts checked")
    }

    pub(crate) fn forward_taped(
        &self,
        x: ArrayView2<f64>,
        c: ArrayView2<f64>,
        mode: Mode,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<(Array2<f64>, Array1<f64>, BlockTape)> {
        self.check(&x, &c)?;
        let m = self.split;
        let h = self.subnet_input(x.slice(s![.., ..m]), c);
        let (s_raw, s_tape) = self.s_net.forward(h.view(), mode, rng.as_deref_mut())?;
        let (t, t_tape) = self.t_net.forward(h.view(), mode, rng)?;
        let k = self.s_clamp;
        let th = s_raw.mapv(|v| (v / k).tanh());
        let s_hat = th.mapv(|v| k * v);
        let exp_s = s_hat.mapv(f64::exp);
        let x2 = x.slice(s![.., m..]).to_owned();
        let z2 = &x2 * &exp_s + &t;
        let logdet = s_hat.sum_axis(Axis(1));
        let z = concatenate(Axis(1), &[x.slice(s![.., ..m]), z2.view()]).expect("same rows");
        if z.iter().any(|v| !v.is_finite()) || logdet.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite coupling output"));
        }
        Ok((
            z,
            logdet,
            BlockTape {
                x2,
                th,
                exp_s,
                s_tape,
                t_tape,
            },
        ))
    }

    /// Batched forward in inference mode: `(z, logdet)` per row.
    pub fn forward_batch(&self, x: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let (z, ld, _) = self.forward_taped(x, c, Mode::Infer, None)?;
        Ok((z, ld))
    }

    /// Gradients given `∂L/∂z` and `∂L/∂logdet` per row.
    /// Returns `(s grads, t grads, ∂L/∂x, ∂L/∂c)`.
    pub(crate) fn backward(
        &self,
        tape: &BlockTape,
        gz: ArrayView2<f64>,
        glogdet: ndarray::ArrayView1<f64>,
    ) -> Result<(NetGrads, NetGrads, Array2<f64>, Array2<f64>)> {
        let m = self.split;
        let gz2 = gz.slice(s![.., m..]);
        let gx2 = &gz2 * &tape.exp_s;
        // ∂L/∂ŝ = gz2 ⊙ x2 ⊙ exp(ŝ) + ∂L/∂logdet; then through the tanh clamp
        let mut gs = &gx2 * &tape.x2;
        Zip::from(gs.rows_mut()).and(&glogdet).for_each(|mut row, &g| row += g);
        Zip::from(&mut gs).and(&tape.th).for_each(|g, &t| *g *= 1.0 - t * t);
        let (ds, hs) = self.s_net.backward(&tape.s_tape, gs.view())?;
        let (dt, ht) = self.t_net.backward(&tape.t_tape, gz2)?;
        let gh = hs + ht;
        let gx1 = &gz.slice(s![.., ..m]) + &gh.slice(s![.., ..m]);
        let gx = concatenate(Axis(1), &[gx1.view(), gx2.view()]).expect("same rows");
        let gc = gh.slice(s![.., m..]).to_owned();
        Ok((ds, dt, gx, gc))
    }

    /// Exact inverse of [`CouplingBlock::forward_batch`].
    pub fn inverse_batch(&self, z: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&z, &c)?;
        let m = self.split;
        let h = self.subnet_input(z.slice(s![.., ..m]), c);
        let s_raw = self.s_net.predict(h.view())?;
        let t = self.t_net.predict(h.view())?;
        let k = self.s_clamp;
        let neg = s_raw.mapv(|v| (-k * (v / k).tanh()).exp());
        let x2 = (&z.slice(s![.., m..]) - &t) * &neg;
        let x = concatenate(Axis(1), &[z.slice(s![.., ..m]), x2.view()]).expect("same rows");
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite coupling inverse"));
        }
        Ok(x)
    }

    pub fn coupling_forward(&self, x: &[f64], c: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.forward_batch(row(x)?, row(c)?)?;
        Ok((z.into_raw_vec_and_offset().0, ld[0]))
    }

    pub fn coupling_inverse(&self, z: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inverse_batch(row(z)?, row(c)?)?.into_raw_vec_and_offset().0)
    }
}

pub(crate) fn row(v: &[f64]) -> Result<ArrayView2<'_, f64>> {
    ArrayView2::from_shape((1, v.len()), v).map_err(|e| Error::shape(e.to_string()))
}
