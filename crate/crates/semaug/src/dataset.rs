//! Two-domain classification datasets.
//!
//! Covers the synthetic rotated two-moons task, CSV load/save, uniform batch
//! sampling, and stratified target subsampling. Datasets are immutable after
//! construction; target labels, when present, exist for evaluation only.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => write!(f, "source"),
            Domain::Target => write!(f, "target"),
        }
    }
}

impl FromStr for Domain {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            _ => Err(()),
        }
    }
}

/// A single-domain dataset; `labels[i] = None` marks an unlabeled row.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub inputs: Matrix,
    pub labels: Vec<Option<usize>>,
    pub domain: Domain,
    pub class_count: usize,
}

impl DomainDataset {
    pub fn new(inputs: Matrix, labels: Vec<Option<usize>>, domain: Domain) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != inputs.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                inputs.rows()
            )));
        }
        let class_count = labels.iter().flatten().map(|l| l + 1).max().unwrap_or(0);
        Ok(Self { inputs, labels, domain, class_count })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn fully_labeled(&self) -> bool {
        self.labels.iter().all(|l| l.is_some())
    }

    /// Copy of the addressed rows plus their labels, in index order.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<Option<usize>>) {
        let mut inputs = Matrix::zeros(indices.len(), self.input_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            inputs.set_row(row, self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        (inputs, labels)
    }

    pub fn centroid(&self) -> Vector {
        let sums = self.inputs.col_sums();
        sums.scale(1.0 / self.len() as f64)
    }
}

/// Standard two-moons: class 0 on the upper unit arc, class 1 on the lower
/// arc shifted to interleave, plus isotropic Gaussian noise.
pub fn make_moons<R: Rng + ?Sized>(n_per_class: usize, noise_sd: f64, rng: &mut R) -> DomainDataset {
    assert!(n_per_class >= 1, "make_moons needs at least one point per class");
    assert!(noise_sd >= 0.0, "noise standard deviation must be non-negative");
    let n = 2 * n_per_class;
    let mut inputs = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    let arc = |i: usize| {
        if n_per_class == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (n_per_class - 1) as f64
        }
    };
    for i in 0..n_per_class {
        let t = arc(i);
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        inputs.set_row(i, &[t.cos() + noise_sd * nx, t.sin() + noise_sd * ny]);
        labels.push(Some(0));
    }
    for i in 0..n_per_class {
        let t = arc(i);
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        inputs.set_row(
            n_per_class + i,
            &[1.0 - t.cos() + noise_sd * nx, 0.5 - t.sin() + noise_sd * ny],
        );
        labels.push(Some(1));
    }
    DomainDataset { inputs, labels, domain: Domain::Source, class_count: 2 }
}

/// Rigid rotation about the dataset centroid; the result is tagged as the
/// target domain with labels carried along for evaluation.
pub fn rotate(ds: &DomainDataset, degrees: f64) -> Result<DomainDataset> {
    if ds.input_dim() != 2 {
        return Err(Error::Dimension(format!(
            "rotation is defined for 2-dimensional inputs, got {}",
            ds.input_dim()
        )));
    }
    if degrees == 0.0 {
        return Ok(DomainDataset {
            inputs: ds.inputs.clone(),
            labels: ds.labels.clone(),
            domain: Domain::Target,
            class_count: ds.class_count,
        });
    }
    let pivot = ds.centroid();
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut inputs = Matrix::zeros(ds.len(), 2);
    for i in 0..ds.len() {
        let row = ds.inputs.row(i);
        let dx = row[0] - pivot[0];
        let dy = row[1] - pivot[1];
        inputs.set_row(i, &[pivot[0] + cos * dx - sin * dy, pivot[1] + sin * dx + cos * dy]);
    }
    Ok(DomainDataset {
        inputs,
        labels: ds.labels.clone(),
        domain: Domain::Target,
        class_count: ds.class_count,
    })
}

/// Parse a dataset from the CSV contract `domain,label,x1,...,xd`.
///
/// Labels `-1` or empty mark unlabeled rows. All rows must share one domain
/// tag and one input dimension; violations report the offending line.
pub fn load_csv(path: impl AsRef<Path>) -> Result<DomainDataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

fn parse_csv(text: &str) -> Result<DomainDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::EmptyDataset)?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 3 || fields[0] != "domain" || fields[1] != "label" {
        return Err(Error::Parse {
            line: 1,
            message: "header must be domain,label,x1,...,xd".to_string(),
        });
    }
    let dim = fields.len() - 2;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut domain = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} fields, got {}", dim + 2, fields.len()),
            });
        }
        let row_domain: Domain = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("unknown domain tag {:?}", fields[0]),
        })?;
        match domain {
            None => domain = Some(row_domain),
            Some(d) if d != row_domain => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "mixed domain tags in one file".to_string(),
                })
            }
            _ => {}
        }
        let label = match fields[1] {
            "" | "-1" => None,
            s => Some(s.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad label {s:?}"),
            })?),
        };
        let mut row = Vec::with_capacity(dim);
        for f in &fields[2..] {
            row.push(f.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad number {f:?}"),
            })?);
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs = Matrix::from_rows(&rows)?;
    DomainDataset::new(inputs, labels, domain.expect("non-empty file has a domain"))
}

/// Serialize to the same CSV contract `load_csv` reads; unlabeled rows get -1.
pub fn save_csv(ds: &DomainDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv(ds))?;
    Ok(())
}

fn to_csv(ds: &DomainDataset) -> String {
    let mut out = String::from("domain,label");
    for j in 0..ds.input_dim() {
        out.push_str(&format!(",x{}", j + 1));
    }
    out.push('\n');
    for i in 0..ds.len() {
        out.push_str(&ds.domain.to_string());
        match ds.labels[i] {
            Some(l) => out.push_str(&format!(",{l}")),
            None => out.push_str(",-1"),
        }
        for x in ds.inputs.row(i) {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

/// Uniform batch indices: without replacement when the batch fits, with
/// replacement otherwise.
pub fn sample_batch<R: Rng + ?Sized>(ds: &DomainDataset, batch_size: usize, rng: &mut R) -> Vec<usize> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let n = ds.len();
    if batch_size <= n {
        index::sample(rng, n, batch_size).into_vec()
    } else {
        (0..batch_size).map(|_| rng.gen_range(0..n)).collect()
    }
}

/// Keep a fraction rho of each label group (unlabeled rows form their own
/// group), drawn without replacement from a dedicated stream of `seed`.
/// `rho = 1` returns the dataset unchanged, row order included.
pub fn stratified_subsample(ds: &DomainDataset, rho: f64, seed: u64) -> Result<DomainDataset> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("subsample fraction must be in (0, 1], got {rho}")));
    }
    if rho == 1.0 {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SUBSAMPLE_STREAM);
    let mut groups: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    for c in 0..ds.class_count {
        groups.push((Some(c), Vec::new()));
    }
    groups.push((None, Vec::new()));
    for (i, l) in ds.labels.iter().enumerate() {
        let g = match l {
            Some(c) => *c,
            None => ds.class_count,
        };
        groups[g].1.push(i);
    }
    let mut selected = Vec::new();
    for (_, members) in &groups {
        if members.is_empty() {
            continue;
        }
        let keep = ((rho * members.len() as f64).round() as usize).clamp(1, members.len());
        let mut picks: Vec<usize> =
            index::sample(&mut rng, members.len(), keep).into_iter().map(|k| members[k]).collect();
        selected.append(&mut picks);
    }
    selected.sort_unstable();
    let (inputs, labels) = ds.gather(&selected);
    Ok(DomainDataset { inputs, labels, domain: ds.domain, class_count: ds.class_count })
}

const SUBSAMPLE_STREAM: u64 = 3;
const TASK_STREAM: u64 = 9;

/// Default synthetic adaptation task: 150 points per class per domain at
/// noise 0.1, with the target produced by rotating the source 30 degrees.
pub fn two_moons_task(seed: u64) -> (DomainDataset, DomainDataset) {
    two_moons_task_with(150, 0.1, 30.0, seed)
}

pub fn two_moons_task_with(
    n_per_class: usize,
    noise_sd: f64,
    rotation_degrees: f64,
    seed: u64,
) -> (DomainDataset, DomainDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TASK_STREAM);
    let source = make_moons(n_per_class, noise_sd, &mut rng);
    let target = rotate(&source, rotation_degrees).expect("two-moons data is 2-dimensional");
    (source, target)
}
