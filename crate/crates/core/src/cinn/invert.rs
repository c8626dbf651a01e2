use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::model::CinnModel;
use crate::error::{Error, Result};
use crate::gp::{GpModel, PredictMode};
use crate::mfgp::MfSurrogate;
use crate::sampling;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseQuery {
    pub target: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl InverseQuery {
    pub fn validate(&self, d_y: usize) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("sample count must be at least 1"));
        }
        if self.target.len() != d_y {
            return Err(Error::shape(format!("target has {} entries, expected {}", self.target.len(), d_y)));
        }
        if self.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("target must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignCandidate {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    #[serde(default)]
    pub forward_mean: Option<Vec<f64>>,
    #[serde(default)]
    pub forward_std: Option<Vec<f64>>,
}

/// Rows per inverse batch; fixed so results do not depend on thread count.
const CHUNK: usize = 256;

/// Draw `S` latents (sample `j` from stream `j` of the query seed), compute
/// the condition once, and map every latent back to input units.
pub fn cinn_invert(model: &CinnModel, query: &InverseQuery) -> Result<Vec<DesignCandidate>> {
    query.validate(model.obs_dim())?;
    let m = model.dim();
    let s = query.samples;
    let yrow = ArrayView2::from_shape((1, query.target.len()), &query.target).map_err(|e| Error::shape(e.to_string()))?;
    let c1 = model.condition_norm(model.normalization().y_to(yrow).view())?;
    let zs: Vec<Vec<f64>> = crate::par::map_range(s, |j| {
        let mut r = sampling::stream_rng(query.seed, j as u64);
        (0..m).map(|_| sampling::normal(&mut r)).collect()
    });
    let n_chunks = s.div_ceil(CHUNK);
    let xs = crate::par::try_map_range(n_chunks, |k| {
        let lo = k * CHUNK;
        let hi = (lo + CHUNK).min(s);
        let flat: Vec<f64> = zs[lo..hi].iter().flatten().copied().collect();
        let z = Array2::from_shape_vec((hi - lo, m), flat).expect("latent rows");
        let c = c1.broadcast((hi - lo, c1.ncols())).expect("one row").to_owned();
        let xn = model.inverse_with_condition(z.view(), c.view()).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("samples {lo}..{hi}: {msg}")),
            other => other,
        })?;
        Ok::<_, Error>(model.normalization().x_from(xn.view()))
    })?;
    let mut out = Vec::with_capacity(s);
    for (k, chunk) in xs.into_iter().enumerate() {
        for (i, r) in chunk.rows().into_iter().enumerate() {
            out.push(DesignCandidate {
                x: r.to_vec(),
                z: zs[k * CHUNK + i].clone(),
                forward_mean: None,
                forward_std: None,
            });
        }
    }
    Ok(out)
}

/// Something that maps input rows to predicted outputs with uncertainty.
pub trait ForwardModel: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// `(mean, std)`, each `n × output_dim`.
    fn predict_rows(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)>;
}

impl ForwardModel for GpModel {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let p = self.predict_batch(x, PredictMode::Mixture)?;
        let n = p.len();
        Ok((
            Array2::from_shape_fn((n, 1), |(i, _)| p[i].0),
            Array2::from_shape_fn((n, 1), |(i, _)| p[i].1.sqrt()),
        ))
    }
}

impl ForwardModel for MfSurrogate {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn output_dim(&self) -> usize {
        self.n_outputs()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (m, v) = MfSurrogate::predict_rows(self, x, PredictMode::Mixture)?;
        Ok((m, v.mapv(f64::sqrt)))
    }
}

/// Deterministic function wrapped as a forward model with zero spread.
pub struct FnForward<F> {
    pub input_dim: usize,
    pub output_dim: usize,
    pub f: F,
}

impl<F> ForwardModel for FnForward<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let rows = crate::par::try_map_range(x.nrows(), |i| (self.f)(&x.row(i).to_vec()))?;
        let n = rows.len();
        let mut mean = Array2::zeros((n, self.output_dim));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != self.output_dim {
                return Err(Error::shape("forward function returned the wrong length"));
            }
            mean.row_mut(i).assign(&ndarray::ArrayView1::from(r));
        }
        Ok((mean, Array2::zeros((n, self.output_dim))))
    }
}

/// Push every candidate through the forward model.
pub fn postprocess(mut candidates: Vec<DesignCandidate>, forward: &dyn ForwardModel) -> Result<Vec<DesignCandidate>> {
    let Some(first) = candidates.first() else {
        return Ok(candidates);
    };
    let m = first.x.len();
    if forward.input_dim() != m {
        return Err(Error::shape(format!(
            "candidates have {m} inputs, forward model expects {}",
            forward.input_dim()
        )));
    }
    let flat: Vec<f64> = candidates.iter().flat_map(|c| c.x.iter().copied()).collect();
    let x = Array2::from_shape_vec((candidates.len(), m), flat).map_err(|e| Error::shape(e.to_string()))?;
    let (mean, std) = forward.predict_rows(x.view())?;
    for (i, c) in candidates.iter_mut().enumerate() {
        c.forward_mean = Some(mean.row(i).to_vec());
        c.forward_std = Some(std.row(i).to_vec());
    }
    Ok(candidates)
}

/// CSV: `x1..xM, z1..zM`, then `mean_k, std_k` pairs when populated.
/// An optional `# ...` metadata line comes first.
pub fn write_candidates_csv<W: Write>(mut w: W, candidates: &[DesignCandidate], meta: Option<&str>) -> Result<()> {
    if let Some(m) = meta {
        writeln!(w, "# {m}")?;
    }
    let mut wr = csv::Writer::from_writer(w);
    let Some(first) = candidates.first() else {
        wr.flush()?;
        return Ok(());
    };
    let m = first.x.len();
    let k = first.forward_mean.as_ref().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=m).map(|i| format!("x{i}")).collect();
    header.extend((1..=m).map(|i| format!("z{i}")));
    for i in 1..=k {
        header.push(format!("mean{i}"));
        header.push(format!("std{i}"));
    }
    wr.write_record(&header)?;
    for c in candidates {
        let mut rec: Vec<String> = c.x.iter().chain(&c.z).map(|v| format!("{v:?}")).collect();
        if let (Some(mu), Some(sd)) = (&c.forward_mean, &c.forward_std) {
            for (a, b) in mu.iter().zip(sd) {
                rec.push(format!("{a:?}"));
                rec.push(format!("{b:?}"));
            }
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}
