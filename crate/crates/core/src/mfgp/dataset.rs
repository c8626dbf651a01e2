use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Low,
    High,
}

impl Fidelity {
    pub fn as_str(self) -> &'static str {
        match self {
            Fidelity::Low => "low",
            Fidelity::High => "high",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Fidelity::Low),
            "high" => Ok(Fidelity::High),
            other => Err(Error::config(format!("unknown fidelity '{other}'"))),
        }
    }
}

/// `N_high + N_low / cost_ratio`, in units of high-fidelity runs.
pub fn equivalent_cost(n_high: usize, n_low: usize, cost_ratio: f64) -> f64 {
    n_high as f64 + n_low as f64 / cost_ratio
}

pub const DEFAULT_COST_RATIO: f64 = 5.0;

/// Rows of inputs and outputs, each tagged with the fidelity that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub fidelity: Vec<Fidelity>,
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
    pub cost_ratio: f64,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>, fidelity: Vec<Fidelity>, cost_ratio: f64) -> Result<Self> {
        let x_names = (1..=x.ncols()).map(|i| format!("x{i}")).collect();
        let y_names = (1..=y.ncols()).map(|i| format!("y{i}")).collect();
        let ds = Dataset {
            x,
            y,
            fidelity,
            x_names,
            y_names,
            cost_ratio,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(d: usize, m: usize, cost_ratio: f64) -> Self {
        Dataset::new(Array2::zeros((0, d)), Array2::zeros((0, m)), vec![], cost_ratio).expect("empty dataset is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.y.nrows() != n || self.fidelity.len() != n {
            return Err(Error::shape(format!(
                "dataset rows disagree: X {}, Y {}, fidelity {}",
                n,
                self.y.nrows(),
                self.fidelity.len()
            )));
        }
        if self.x_names.len() != self.x.ncols() || self.y_names.len() != self.y.ncols() {
            return Err(Error::shape("column names do not match column counts"));
        }
        if !(self.cost_ratio > 1.0) {
            return Err(Error::config("cost_ratio must exceed 1"));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    pub fn count(&self, f: Fidelity) -> usize {
        self.fidelity.iter().filter(|&&g| g == f).count()
    }

    pub fn equivalent_cost(&self) -> f64 {
        equivalent_cost(self.count(Fidelity::High), self.count(Fidelity::Low), self.cost_ratio)
    }

    pub fn rows_of(&self, f: Fidelity) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.fidelity[i] == f).collect()
    }

    /// `(X, Y)` restricted to one fidelity.
    pub fn subset(&self, f: Fidelity) -> (Array2<f64>, Array2<f64>) {
        let idx = self.rows_of(f);
        (self.x.select(ndarray::Axis(0), &idx), self.y.select(ndarray::Axis(0), &idx))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(ndarray::Axis(0), idx),
            y: self.y.select(ndarray::Axis(0), idx),
            fidelity: idx.iter().map(|&i| self.fidelity[i]).collect(),
            x_names: self.x_names.clone(),
            y_names: self.y_names.clone(),
            cost_ratio: self.cost_ratio,
        }
    }

    pub fn push(&mut self, x: ArrayView1<f64>, y: ArrayView1<f64>, f: Fidelity) -> Result<()> {
        if x.len() != self.d() || y.len() != self.m() {
            return Err(Error::shape("row does not match dataset columns"));
        }
        self.x.push_row(x).map_err(|e| Error::shape(e.to_string()))?;
        self.y.push_row(y).map_err(|e| Error::shape(e.to_string()))?;
        self.fidelity.push(f);
        Ok(())
    }

    pub fn append(&mut self, other: &Dataset) -> Result<()> {
        for i in 0..other.n_rows() {
            self.push(other.x.row(i), other.y.row(i), other.fidelity[i])?;
        }
        Ok(())
    }

    /// Single output column with its fidelity tags.
    pub fn output(&self, j: usize) -> Array1<f64> {
        self.y.column(j).to_owned()
    }

    /// Write CSV: optional `# ...` metadata line, then
    /// `x1,..,xd,y1,..,ym,fidelity`.
    pub fn write_csv<W: Write>(&self, mut w: W, meta: Option<&str>) -> Result<()> {
        if let Some(m) = meta {
            writeln!(w, "# {m}")?;
        }
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.x_names.iter().map(String::as_str).collect();
        header.extend(self.y_names.iter().map(String::as_str));
        header.push("fidelity");
        wr.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.extend(self.y.row(i).iter().map(|v| format!("{v:?}")));
            rec.push(self.fidelity[i].as_str().to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, meta: Option<&str>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), meta)
    }

    /// Read the CSV format above. Input columns are those whose header
    /// starts with `x`; the last column must be `fidelity`.
    pub fn read_csv<R: BufRead>(r: R, cost_ratio: f64) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header.last().map(String::as_str) != Some("fidelity") {
            return Err(Error::config("dataset CSV must end with a 'fidelity' column"));
        }
        let cols = &header[..header.len() - 1];
        let d = cols.iter().take_while(|c| c.starts_with('x')).count();
        if cols[d..].iter().any(|c| c.starts_with('x')) || d == 0 {
            return Err(Error::config("input columns (x*) must come first"));
        }
        let m = cols.len() - d;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut fid = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::shape("ragged dataset CSV"));
            }
            for (k, field) in rec.iter().enumerate().take(d + m) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(format!("bad number '{field}'")))?;
                if k < d {
                    xs.push(v)
                } else {
                    ys.push(v)
                }
            }
            fid.push(Fidelity::parse(&rec[d + m])?);
        }
        let n = fid.len();
        let mut ds = Dataset::new(
            Array2::from_shape_vec((n, d), xs).expect("counted"),
            Array2::from_shape_vec((n, m), ys).expect("counted"),
            fid,
            cost_ratio,
        )?;
        ds.x_names = cols[..d].to_vec();
        ds.y_names = cols[d..].to_vec();
        Ok(ds)
    }

    pub fn load_csv(path: &Path, cost_ratio: f64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Dataset::read_csv(std::io::BufReader::new(f), cost_ratio)
    }
}
