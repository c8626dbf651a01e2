use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{CinnArch, CinnGrads, CinnModel, CinnNorm};
use crate::error::{Error, Result};
use crate::numcore::{AdamConfig, LrSchedule, Mode, OptimState};
use crate::sampling::{self, SeededRng};

/// `mean(‖z‖²/2 − logdet) + τ‖θ‖²`.
pub fn cinn_loss(z: ArrayView2<f64>, logdet: ArrayView1<f64>, theta_sumsq: f64, tau: f64) -> Result<f64> {
    let n = z.nrows();
    if n == 0 || logdet.len() != n {
        return Err(Error::shape("loss needs a non-empty batch with one logdet per row"));
    }
    let nll: f64 = z
        .rows()
        .into_iter()
        .zip(logdet)
        .map(|(r, ld)| 0.5 * r.dot(&r) - ld)
        .sum::<f64>()
        / n as f64;
    Ok(nll + tau * theta_sumsq)
}

/// Loss of normalized pairs and its gradient, using `rng` for dropout.
pub fn loss_and_grad(
    model: &CinnModel,
    xn: ArrayView2<f64>,
    yn: ArrayView2<f64>,
    tau: f64,
    mode: Mode,
    rng: Option<&mut SeededRng>,
) -> Result<(f64, CinnGrads)> {
    let (z, ld, tape) = model.forward_taped(xn, yn, mode, rng)?;
    let theta = if tau > 0.0 { model.param_sumsq() } else { 0.0 };
    let loss = cinn_loss(z.view(), ld.view(), theta, tau)?;
    let n = z.nrows() as f64;
    let gz = &z / n;
    let gl = Array1::from_elem(z.nrows(), -1.0 / n);
    let mut g = model.backward(&tape, gz.view(), gl.view())?;
    if tau > 0.0 {
        let mut flat: Vec<&mut [f64]> = Vec::new();
        let CinnGrads { cond, blocks } = &mut g;
        for (w, b) in cond.layers.iter_mut() {
            flat.push(w.as_slice_mut().expect("contiguous"));
            flat.push(b.as_slice_mut().expect("contiguous"));
        }
        for (s, t) in blocks.iter_mut() {
            for (w, b) in s.layers.iter_mut().chain(t.layers.iter_mut()) {
                flat.push(w.as_slice_mut().expect("contiguous"));
                flat.push(b.as_slice_mut().expect("contiguous"));
            }
        }
        for (gs, ps) in flat.into_iter().zip(model.params()) {
            for (gv, pv) in gs.iter_mut().zip(ps) {
                *gv += 2.0 * tau * pv;
            }
        }
    }
    Ok((loss, g))
}

/// Where training pairs come from.
pub enum DataSource<'a> {
    /// Fixed raw pairs, reshuffled every epoch.
    Fixed { x: ArrayView2<'a, f64>, y: ArrayView2<'a, f64> },
    /// Fresh raw pairs for every minibatch: `sample(rng, n)`.
    Online {
        sample: Box<dyn FnMut(&mut SeededRng, usize) -> Result<(Array2<f64>, Array2<f64>)> + 'a>,
        m: usize,
        d_y: usize,
    },
}

impl DataSource<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            DataSource::Fixed { x, y } => (x.ncols(), y.ncols()),
            DataSource::Online { m, d_y, .. } => (*m, *d_y),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Online sources only: minibatches per epoch.
    #[serde(default = "default_steps_per_epoch")]
    pub steps_per_epoch: usize,
    pub schedule: LrSchedule,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Explicit `τ‖θ‖²` term; mutually exclusive with Adam weight decay.
    #[serde(default)]
    pub tau: f64,
    pub seed: u64,
    /// Gaussian noise added to raw observations of each minibatch.
    #[serde(default)]
    pub y_noise_std: f64,
    /// Rows used to fit normalization for online sources.
    #[serde(default = "default_pilot")]
    pub pilot_rows: usize,
    /// Rows of the fixed evaluation batch behind `eval_nll`.
    #[serde(default = "default_eval_rows")]
    pub eval_rows: usize,
    /// Where to write the last good model if training diverges.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

fn default_steps_per_epoch() -> usize {
    100
}

fn default_pilot() -> usize {
    10_000
}

fn default_eval_rows() -> usize {
    1024
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::config("batch size and steps per epoch must be positive"));
        }
        if self.tau < 0.0 || self.y_noise_std < 0.0 {
            return Err(Error::config("tau and y_noise_std must be non-negative"));
        }
        if self.tau > 0.0 && self.adam.weight_decay > 0.0 {
            return Err(Error::config("use either tau or weight decay, not both"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CinnConfig {
    pub arch: CinnArch,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    /// Mean minibatch loss per epoch (train mode).
    pub epoch_nll: Vec<f64>,
    /// Loss on a fixed batch in inference mode after each epoch.
    pub eval_nll: Vec<f64>,
    pub lr: Vec<f64>,
    /// Fixed-batch loss before any step.
    pub initial_eval_nll: f64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct TrainedCinn {
    pub model: CinnModel,
    pub curve: TrainingCurve,
}

fn add_noise(y: &mut Array2<f64>, std: f64, rng: &mut SeededRng) {
    if std > 0.0 {
        y.mapv_inplace(|v| v + std * sampling::normal(rng));
    }
}

/// Build a model with normalization taken from the data, then train it.
pub fn cinn_train(mut source: DataSource<'_>, cfg: &CinnConfig) -> Result<TrainedCinn> {
    cfg.train.validate()?;
    let (m, d_y) = source.dims();
    let norm = match &mut source {
        DataSource::Fixed { x, y } => CinnNorm::fit(*x, *y)?,
        DataSource::Online { sample, .. } => {
            let mut r = sampling::rng(sampling::derive_seed(cfg.train.seed, 1));
            let (x, y) = sample(&mut r, cfg.train.pilot_rows.max(2))?;
            CinnNorm::fit(x.view(), y.view())?
        }
    };
    let model = CinnModel::new(m, d_y, &cfg.arch, norm)?;
    train_model(model, source, &cfg.train)
}

/// Continue training an existing model.
pub fn train_model(mut model: CinnModel, mut source: DataSource<'_>, cfg: &TrainConfig) -> Result<TrainedCinn> {
    cfg.validate()?;
    let (m, d_y) = source.dims();
    if m != model.dim() || d_y != model.obs_dim() {
        return Err(Error::shape("data source does not match the model"));
    }
    if let DataSource::Fixed { x, y } = &source {
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(Error::shape("fixed data needs matching, non-empty rows"));
        }
    }
    let mut rng = sampling::rng(cfg.seed);
    let norm = model.normalization().clone();

    // fixed evaluation batch, normalized
    let (ex, ey) = match &mut source {
        DataSource::Fixed { x, y } => {
            let n = x.nrows().min(cfg.eval_rows.max(1));
            let mut idx: Vec<usize> = (0..x.nrows()).collect();
            idx.shuffle(&mut sampling::rng(sampling::derive_seed(cfg.seed, 2)));
            idx.truncate(n);
            idx.sort_unstable();
            (x.select(Axis(0), &idx), y.select(Axis(0), &idx))
        }
        DataSource::Online { sample, .. } => {
            let mut r = sampling::rng(sampling::derive_seed(cfg.seed, 2));
            sample(&mut r, cfg.eval_rows.max(1))?
        }
    };
    let (exn, eyn) = (norm.x_to(ex.view()), norm.y_to(ey.view()));
    let eval = |model: &CinnModel| -> Result<f64> {
        let (z, ld) = model.forward_norm(exn.view(), eyn.view())?;
        cinn_loss(z.view(), ld.view(), 0.0, 0.0)
    };

    let last_good = model.clone();
    let initial = match eval(&model) {
        Ok(v) => v,
        Err(e) if e.is_numeric() => return Err(diverged(&last_good, cfg, 0, e)),
        Err(e) => return Err(e),
    };
    let mut curve = TrainingCurve {
        initial_eval_nll: initial,
        ..TrainingCurve::default()
    };
    let lens: Vec<usize> = model.params().iter().map(|s| s.len()).collect();
    let mut opt = OptimState::new(&lens, cfg.adam);
    let mut last_good = last_good;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(step, &curve.epoch_nll);
        let batches: Vec<(Array2<f64>, Array2<f64>)> = match &mut source {
            DataSource::Fixed { x, y } => {
                let mut idx: Vec<usize> = (0..x.nrows()).collect();
                idx.shuffle(&mut rng);
                idx.chunks(cfg.batch_size)
                    .map(|c| (x.select(Axis(0), c), y.select(Axis(0), c)))
                    .collect()
            }
            DataSource::Online { sample, .. } => (0..cfg.steps_per_epoch)
                .map(|_| sample(&mut rng, cfg.batch_size))
                .collect::<Result<_>>()?,
        };
        let mut sum = 0.0;
        let mut count = 0usize;
        for (bx, mut by) in batches {
            add_noise(&mut by, cfg.y_noise_std, &mut rng);
            let (xn, yn) = (norm.x_to(bx.view()), norm.y_to(by.view()));
            let lr_step = match cfg.schedule {
                LrSchedule::PlateauDrop { .. } => lr,
                _ => cfg.schedule.lr_at(step, &curve.epoch_nll),
            };
            let outcome = loss_and_grad(&model, xn.view(), yn.view(), cfg.tau, Mode::Train, Some(&mut rng))
                .and_then(|(loss, g)| {
                    if !loss.is_finite() {
                        return Err(Error::numeric("non-finite loss"));
                    }
                    let grads = g.slices();
                    let mut params = model.params_mut();
                    opt.adam_step(&mut params, &grads, lr_step)?;
                    Ok(loss)
                });
            let loss = match outcome {
                Ok(l) => l,
                Err(e) if e.is_numeric() => return Err(diverged(&last_good, cfg, step, e)),
                Err(e) => return Err(e),
            };
            sum += loss * xn.nrows() as f64;
            count += xn.nrows();
            step += 1;
        }
        let mean = sum / count.max(1) as f64;
        let ev = match eval(&model) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => return Err(diverged(&last_good, cfg, step, Error::numeric("non-finite evaluation loss"))),
            Err(e) if e.is_numeric() => return Err(diverged(&last_good, cfg, step, e)),
            Err(e) => return Err(e),
        };
        curve.epoch_nll.push(mean);
        curve.eval_nll.push(ev);
        curve.lr.push(lr);
        log::debug!("epoch {epoch}: nll {mean:.5} eval {ev:.5} lr {lr:.2e}");
        last_good = model.clone();
    }
    curve.steps = step;
    Ok(TrainedCinn { model, curve })
}

fn diverged(last_good: &CinnModel, cfg: &TrainConfig, step: usize, e: Error) -> Error {
    let mut reason = e.to_string();
    if let Some(path) = &cfg.checkpoint {
        match serde_json::to_string(last_good).map(|s| std::fs::write(path, s)) {
            Ok(Ok(())) => reason.push_str(&format!("; last good model written to {}", path.display())),
            _ => reason.push_str("; checkpoint write failed"),
        }
    }
    Error::Diverged { step, reason }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn loss_examples() {
        let z = Array2::zeros((3, 2));
        let ld = Array1::zeros(3);
        assert_eq!(cinn_loss(z.view(), ld.view(), 0.0, 0.0).unwrap(), 0.0);
        let z = array![[2.0, 0.0]];
        let l = cinn_loss(z.view(), array![0.5].view(), 10.0, 0.01).unwrap();
        assert!((l - 1.6).abs() < 1e-15);
        let z2 = array![[1.0, 2.0], [0.5, -1.0]];
        let ld2 = array![0.3, -0.2];
        let zz = ndarray::concatenate(Axis(0), &[z2.view(), z2.view()]).unwrap();
        let ll = ndarray::concatenate(Axis(0), &[ld2.view(), ld2.view()]).unwrap();
        assert_eq!(
            cinn_loss(z2.view(), ld2.view(), 0.0, 0.0).unwrap(),
            cinn_loss(zz.view(), ll.view(), 0.0, 0.0).unwrap()
        );
        assert!(cinn_loss(Array2::zeros((0, 2)).view(), Array1::zeros(0).view(), 0.0, 0.0).is_err());
    }

    fn tiny_cfg(epochs: usize) -> CinnConfig {
        CinnConfig {
            arch: CinnArch {
                n_blocks: 2,
                hidden: vec![8],
                cond_hidden: vec![8],
                d_c: 3,
                s_clamp: 2.0,
                dropout: 0.0,
                seed: 1,
            },
            train: TrainConfig {
                batch_size: 16,
                epochs,
                steps_per_epoch: 10,
                schedule: LrSchedule::Constant { lr: 1e-3 },
                adam: AdamConfig::default(),
                tau: 0.0,
                seed: 2,
                y_noise_std: 0.0,
                pilot_rows: 100,
                eval_rows: 64,
                checkpoint: None,
            },
        }
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let x = sampling::normal_matrix(&mut sampling::rng(0), 40, 2);
        let y = x.column(0).to_owned().insert_axis(Axis(1));
        let cfg = tiny_cfg(0);
        let t = cinn_train(DataSource::Fixed { x: x.view(), y: y.view() }, &cfg).unwrap();
        let fresh = CinnModel::new(2, 1, &cfg.arch, t.model.normalization().clone()).unwrap();
        assert_eq!(t.model, fresh);
        assert_eq!(t.curve.steps, 0);
    }

    #[test]
    fn tau_and_decay_are_exclusive() {
        let mut cfg = tiny_cfg(1);
        cfg.train.tau = 0.1;
        cfg.train.adam.weight_decay = 1e-4;
        assert!(cfg.train.validate().is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let x = array![[0.0, 1.0], [1.0, f64::NAN], [0.5, 0.2]];
        let y = array![[0.0], [1.0], [0.5]];
        let mut cfg = tiny_cfg(1);
        cfg.train.batch_size = 3;
        let norm = CinnNorm::identity(2, 1);
        let model = CinnModel::new(2, 1, &cfg.arch, norm).unwrap();
        let r = train_model(model, DataSource::Fixed { x: x.view(), y: y.view() }, &cfg.train);
        assert!(matches!(r, Err(Error::Diverged { step: 0, .. })), "{r:?}");
    }
}
