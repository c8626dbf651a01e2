//! Benchmark forward problems.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfgp::Fidelity;
use crate::sampling::{self, SeededRng};

const DOMAIN_TOL: f64 = 1e-12;

/// Quadratic `f(x) = ‖W x − μ‖²` on `[−L/2, L/2]^d` with additive Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyProblem {
    pub d_x: usize,
    pub l_x: f64,
    pub w: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub noise_std: f64,
}

/// Level set `{x : ‖x − center‖ = radius}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Default for ToyProblem {
    /// Two inputs on `[−2, 2]²`, `W = I`, `μ = 0`, noise std 0.5.
    fn default() -> Self {
        ToyProblem::isotropic(2, 4.0, 0.5)
    }
}

impl ToyProblem {
    pub fn isotropic(d_x: usize, l_x: f64, noise_std: f64) -> Self {
        let w = (0..d_x)
            .map(|i| (0..d_x).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        ToyProblem {
            d_x,
            l_x,
            w,
            mu: vec![0.0; d_x],
            noise_std,
        }
    }

    pub fn half_width(&self) -> f64 {
        self.l_x / 2.0
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.len() == self.d_x && x.iter().all(|v| v.abs() <= self.half_width() + DOMAIN_TOL)
    }

    fn is_isotropic(&self) -> bool {
        self.mu.iter().all(|&m| m == 0.0)
            && self
                .w
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 }))
    }

    /// Noiseless objective; no domain check.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.w
            .iter()
            .zip(&self.mu)
            .map(|(row, m)| {
                let r = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - m;
                r * r
            })
            .sum()
    }

    /// `‖W x − μ‖²`, plus a noise draw when `rng` is given.
    pub fn toy_forward(&self, x: &[f64], rng: Option<&mut SeededRng>) -> Result<f64> {
        if x.len() != self.d_x {
            return Err(Error::shape(format!("toy input has {} entries, expected {}", x.len(), self.d_x)));
        }
        if !self.in_domain(x) {
            return Err(Error::Domain(format!("{x:?} outside [-{0}, {0}]^{1}", self.half_width(), self.d_x)));
        }
        let f = self.objective(x);
        Ok(match rng {
            Some(r) => f + self.noise_std * sampling::normal(r),
            None => f,
        })
    }

    /// Uniform inputs on the domain with noisy outputs.
    pub fn sample_pairs(&self, rng: &mut SeededRng, n: usize) -> (Array2<f64>, Array1<f64>) {
        let h = self.half_width();
        let x = sampling::uniform_box(rng, n, &vec![-h; self.d_x], &vec![h; self.d_x]);
        let y = Array1::from_iter(
            x.rows()
                .into_iter()
                .map(|r| self.objective(r.as_slice().expect("row")) + self.noise_std * sampling::normal(rng)),
        );
        (x, y)
    }

    /// Circle of inputs whose noiseless output is `y` (isotropic case only).
    pub fn toy_inverse_oracle(&self, y: f64) -> Result<Ring> {
        if !self.is_isotropic() {
            return Err(Error::config("ring oracle requires W = I and mu = 0"));
        }
        if y < 0.0 {
            return Err(Error::Domain(format!("target {y} is negative")));
        }
        Ok(Ring {
            center: vec![0.0; self.d_x],
            radius: y.sqrt(),
        })
    }

    /// Exact draws from `p(x | y)` under the uniform prior and Gaussian noise,
    /// by rejection from the domain. Used to score learned inverses.
    pub fn posterior_samples(&self, y: f64, n: usize, rng: &mut SeededRng) -> Result<Array2<f64>> {
        if self.noise_std <= 0.0 {
            return Err(Error::config("rejection oracle needs positive noise"));
        }
        let h = self.half_width();
        // envelope: the likelihood peaks at f = y, clipped to the attainable range
        let f_star = if self.is_isotropic() {
            y.clamp(0.0, self.d_x as f64 * h * h)
        } else {
            y
        };
        let var2 = 2.0 * self.noise_std * self.noise_std;
        let peak = -(y - f_star).powi(2) / var2;
        let mut out = Vec::with_capacity(n * self.d_x);
        let mut got = 0usize;
        let mut tries = 0usize;
        while got < n {
            tries += 1;
            if tries > 200_000_000 {
                return Err(Error::numeric("rejection sampler acceptance too low"));
            }
            let x: Vec<f64> = (0..self.d_x).map(|_| rng.random_range(-h..=h)).collect();
            let f = self.objective(&x);
            let logw = -(y - f).powi(2) / var2 - peak;
            if rng.random::<f64>().ln() < logw {
                out.extend(x);
                got += 1;
            }
        }
        Ok(Array2::from_shape_vec((n, self.d_x), out).expect("shape"))
    }
}

/// Correlated 1-d fidelity pair on `[0, 1]`:
/// high `(6x − 2)² sin(12x − 4)`, low `0.5·high + 10(x − 0.5) − 5`.
pub fn synth_mf_pair(x: f64) -> (f64, f64) {
    let high = (6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin();
    let low = 0.5 * high + 10.0 * (x - 0.5) - 5.0;
    (low, high)
}

pub fn synth_mf_eval(x: f64, fidelity: Fidelity) -> f64 {
    let (lo, hi) = synth_mf_pair(x);
    match fidelity {
        Fidelity::Low => lo,
        Fidelity::High => hi,
    }
}

/// Sparse linear functional `Σ w_j u_{idx_j}` with `Σ|w_j| = l1`.
#[derive(Clone, Debug, PartialEq)]
struct SparseProj {
    idx: Vec<usize>,
    w: Vec<f64>,
}

impl SparseProj {
    fn random(rng: &mut SeededRng, d: usize, nnz: usize, l1: f64) -> Self {
        let idx = rand::seq::index::sample(rng, d, nnz).into_vec();
        let mut w: Vec<f64> = (0..nnz).map(|_| sampling::normal(rng)).collect();
        let s: f64 = w.iter().map(|v| v.abs()).sum();
        w.iter_mut().for_each(|v| *v *= l1 / s);
        SparseProj { idx, w }
    }

    fn eval(&self, u: &[f64]) -> f64 {
        self.idx.iter().zip(&self.w).map(|(&j, w)| w * u[j]).sum()
    }

    fn l1(&self) -> f64 {
        self.w.iter().map(|v| v.abs()).sum()
    }
}

/// One scalar response: `offset + gain·(p1 + a·sin(ω·p2) − b·p3² + c·p1·p2)`.
#[derive(Clone, Debug, PartialEq)]
struct ScalarSpec {
    offset: f64,
    gain: f64,
    a: f64,
    omega: f64,
    b: f64,
    c: f64,
    proj: [SparseProj; 3],
}

impl ScalarSpec {
    fn eval(&self, u: &[f64]) -> f64 {
        let p1 = self.proj[0].eval(u);
        let p2 = self.proj[1].eval(u);
        let p3 = self.proj[2].eval(u);
        self.offset
            + self.gain * (p1 + self.a * (self.omega * p2).sin() - self.b * p3 * p3 + self.c * p1 * p2)
    }

    fn bound(&self) -> f64 {
        let (r1, r2, r3) = (self.proj[0].l1(), self.proj[1].l1(), self.proj[2].l1());
        self.offset.abs() + self.gain.abs() * (r1 + self.a.abs() + self.b.abs() * r3 * r3 + self.c.abs() * r1 * r2)
    }
}

/// Seeded synthetic stand-in for an 85-parameter design with two scalar
/// objectives and two 100-point span-wise profiles.
///
/// Profiles are a fixed base curve plus six smooth modes whose amplitudes
/// are sparse linear functionals of the input, plus a weak nonlinear
/// higher-frequency term. Inputs live in the unit box.
#[derive(Clone, Debug, PartialEq)]
pub struct BladeLikeProblem {
    pub seed: u64,
    pub d_in: usize,
    pub n_span: usize,
    scalars: Vec<ScalarSpec>,
    mode_drivers: Vec<SparseProj>,
    mode_amps: Vec<f64>,
    /// `k × (2·n_span)`, unit-amplitude mode shapes, pressure then swirl.
    mode_shapes: Vec<Vec<f64>>,
    mode_freqs: Vec<f64>,
    base: Vec<f64>,
    channel_gain: [f64; 2],
    detail_proj: [SparseProj; 2],
    detail_amp: f64,
    detail_freq: f64,
    bias_proj: SparseProj,
    bias_amp: f64,
}

pub const BLADE_D_IN: usize = 85;
pub const BLADE_N_SPAN: usize = 100;
pub const BLADE_N_MODES: usize = 6;

impl BladeLikeProblem {
    pub fn new(seed: u64) -> Self {
        let d = BLADE_D_IN;
        let n = BLADE_N_SPAN;
        let mut rng = sampling::rng(sampling::derive_seed(seed, 0xB1ADE));
        let mk = |rng: &mut SeededRng, offset: f64, gain: f64| ScalarSpec {
            offset,
            gain,
            a: 0.5,
            omega: 2.0,
            b: 0.3,
            c: 0.2,
            proj: [
                SparseProj::random(rng, d, 4, 1.5),
                SparseProj::random(rng, d, 4, 1.5),
                SparseProj::random(rng, d, 4, 1.5),
            ],
        };
        let scalars = vec![mk(&mut rng, 0.90, 0.02), mk(&mut rng, 0.45, 0.05)];
        let mode_drivers = (0..BLADE_N_MODES)
            .map(|_| SparseProj::random(&mut rng, d, 5, 1.5))
            .collect();
        let mode_amps = vec![1.0, 0.75, 0.55, 0.4, 0.3, 0.22];
        let span: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let mut mode_shapes = Vec::new();
        let mut mode_freqs = Vec::new();
        for k in 0..BLADE_N_MODES {
            let w = (k + 1) as f64 * std::f64::consts::PI;
            let (ph_p, ph_s) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let mut shape = Vec::with_capacity(2 * n);
            shape.extend(span.iter().map(|s| (w * s + ph_p).sin()));
            shape.extend(span.iter().map(|s| (w * s + ph_s).cos()));
            mode_shapes.push(shape);
            mode_freqs.push(w);
        }
        let mut base = Vec::with_capacity(2 * n);
        base.extend(span.iter().map(|s| 1.0 - 0.2 * s + 0.05 * (std::f64::consts::PI * s).sin()));
        base.extend(span.iter().map(|s| 20.0 + 10.0 * s));
        BladeLikeProblem {
            seed,
            d_in: d,
            n_span: n,
            scalars,
            mode_drivers,
            mode_amps,
            mode_shapes,
            mode_freqs,
            base,
            channel_gain: [0.05, 3.0],
            detail_proj: [
                SparseProj::random(&mut rng, d, 3, 1.0),
                SparseProj::random(&mut rng, d, 3, 1.0),
            ],
            detail_amp: 0.05,
            detail_freq: 9.0 * std::f64::consts::PI,
            bias_proj: SparseProj::random(&mut rng, d, 4, 1.5),
            bias_amp: 0.15,
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.scalars.len()
    }

    pub fn profile_len(&self) -> usize {
        2 * self.n_span
    }

    pub fn n_outputs(&self) -> usize {
        self.n_scalars() + self.profile_len()
    }

    fn check(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::shape(format!("blade-like input has {} entries, expected {}", x.len(), self.d_in)));
        }
        if x.iter().any(|v| !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(v)) {
            return Err(Error::Domain("blade-like input outside the unit box".into()));
        }
        Ok(x.iter().map(|v| 2.0 * v - 1.0).collect())
    }

    /// High-fidelity response: `(scalars, profiles)`.
    pub fn blade_like_eval(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let u = self.check(x)?;
        Ok(self.eval_u(&u, 0.0))
    }

    /// Response at a fidelity; low fidelity adds a smooth input-dependent bias.
    pub fn eval_fidelity(&self, x: &[f64], fidelity: Fidelity) -> Result<(Vec<f64>, Vec<f64>)> {
        let u = self.check(x)?;
        let bias = match fidelity {
            Fidelity::High => 0.0,
            Fidelity::Low => self.bias_amp * (1.0 + (1.3 * self.bias_proj.eval(&u)).sin()),
        };
        Ok(self.eval_u(&u, bias))
    }

    /// Concatenated `[scalars, profiles]` row.
    pub fn eval_row(&self, x: &[f64], fidelity: Fidelity) -> Result<Vec<f64>> {
        let (mut s, p) = self.eval_fidelity(x, fidelity)?;
        s.extend(p);
        Ok(s)
    }

    fn eval_u(&self, u: &[f64], bias: f64) -> (Vec<f64>, Vec<f64>) {
        let scalars = self
            .scalars
            .iter()
            .map(|s| s.eval(u) + bias * s.gain)
            .collect();
        let n = self.n_span;
        let mut prof = self.base.clone();
        for k in 0..self.mode_drivers.len() {
            let mut c = self.mode_amps[k] * self.mode_drivers[k].eval(u);
            if k == 0 {
                c += bias;
            }
            for (i, v) in prof.iter_mut().enumerate() {
                let g = self.channel_gain[i / n];
                *v += g * c * self.mode_shapes[k][i];
            }
        }
        let dphase = 3.0 * self.detail_proj[0].eval(u) + self.detail_proj[1].eval(u);
        for (i, v) in prof.iter_mut().enumerate() {
            let s = (i % n) as f64 / (n - 1) as f64;
            let g = self.channel_gain[i / n];
            *v += g * self.detail_amp * (self.detail_freq * s + dphase).sin();
        }
        (scalars, prof)
    }

    /// Per-output bound on `|value|` over the unit box, both fidelities.
    pub fn output_bounds(&self) -> Vec<f64> {
        let bias_max = 2.0 * self.bias_amp;
        let mut out: Vec<f64> = self
            .scalars
            .iter()
            .map(|s| s.bound() + bias_max * s.gain.abs())
            .collect();
        let n = self.n_span;
        for i in 0..2 * n {
            let g = self.channel_gain[i / n];
            let mut b = self.base[i].abs() + g * self.detail_amp;
            for k in 0..self.mode_drivers.len() {
                let mut c = self.mode_amps[k] * self.mode_drivers[k].l1();
                if k == 0 {
                    c += bias_max;
                }
                b += g * c * self.mode_shapes[k][i].abs();
            }
            out.push(b);
        }
        out
    }

    /// Upper bound on `|Δ²|` of either profile channel, from
    /// `|Δ² sin(ωs + φ)| ≤ (ω h)²`.
    pub fn second_difference_bound(&self) -> [f64; 2] {
        let h = 1.0 / (self.n_span - 1) as f64;
        let base_dd = [
            0.05 * (std::f64::consts::PI * h).powi(2),
            0.0,
        ];
        let mut out = [0.0; 2];
        for (ch, o) in out.iter_mut().enumerate() {
            let g = self.channel_gain[ch];
            let mut b = base_dd[ch] + g * self.detail_amp * (self.detail_freq * h).powi(2);
            for k in 0..self.mode_drivers.len() {
                let mut c = self.mode_amps[k] * self.mode_drivers[k].l1();
                if k == 0 {
                    c += 2.0 * self.bias_amp;
                }
                b += g * c * (self.mode_freqs[k] * h).powi(2);
            }
            *o = b;
        }
        out
    }

    /// Evaluate many rows (parallel); each row is `[scalars, profiles]`.
    pub fn eval_rows(&self, x: &Array2<f64>, fidelity: Fidelity) -> Result<Array2<f64>> {
        let rows = crate::par::try_map_range(x.nrows(), |i| self.eval_row(&x.row(i).to_vec(), fidelity))?;
        let m = self.n_outputs();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Array2::from_shape_vec((x.nrows(), m), flat).expect("rows"))
    }
}
