use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use super::ClassSource;
use crate::error::{Error, Result};
use crate::linalg::fmt_f64;

/// Labelled feature vectors grouped by class. Classes are ordered by label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    dim: usize,
    labels: Vec<i64>,
    points: Vec<Vec<Vec<f64>>>,
}

impl LabeledPool {
    pub fn from_rows(rows: Vec<(i64, Vec<f64>)>) -> Result<Self> {
        let dim = rows
            .first()
            .map(|(_, x)| x.len())
            .ok_or_else(|| Error::InvalidShape("empty dataset".into()))?;
        if dim == 0 {
            return Err(Error::InvalidShape("dataset without features".into()));
        }
        let mut labels: Vec<i64> = rows.iter().map(|(l, _)| *l).collect();
        labels.sort_unstable();
        labels.dedup();
        let mut points = vec![Vec::new(); labels.len()];
        for (label, x) in rows {
            if x.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "feature vector of length {} in a {dim}-dimensional pool",
                    x.len()
                )));
            }
            let c = labels.binary_search(&label).expect("label collected above");
            points[c].push(x);
        }
        Ok(Self {
            dim,
            labels,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn class_size(&self, class: usize) -> usize {
        self.points[class].len()
    }

    /// Writes `label,f1,…,fd` with full-precision values.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("f{i}")).collect();
        writeln!(w, "label,{}", header.join(","))?;
        for (label, pts) in self.labels.iter().zip(&self.points) {
            for x in pts {
                let vals: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
                writeln!(w, "{label},{}", vals.join(","))?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| bad(1, "empty file".into()))?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if columns.len() < 2 || columns[0] != "label" {
            return Err(bad(1, "expected header `label,f1,...,fd`".into()));
        }
        let width = columns.len();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != width {
                return Err(bad(
                    line_no,
                    format!("{} columns, header declares {width}", fields.len()),
                ));
            }
            let label: i64 = fields[0]
                .parse()
                .map_err(|e| bad(line_no, format!("label `{}`: {e}", fields[0])))?;
            let x = fields[1..]
                .iter()
                .map(|f| {
                    let v: f64 = f.parse().map_err(|e| bad(line_no, format!("`{f}`: {e}")))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(bad(line_no, format!("non-finite value `{f}`")))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push((label, x));
        }
        if rows.is_empty() {
            return Err(bad(2, "no data rows".into()));
        }
        Self::from_rows(rows)
    }
}

/// Reads a `label,f1,…,fd` CSV file into a class pool.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledPool> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let file = File::open(&path)?;
    LabeledPool::read_csv(BufReader::new(file), &path)
}

impl ClassSource for LabeledPool {
    fn class_count(&self) -> usize {
        self.labels.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn check_capacity(&self, pool: &[usize], per_class: usize) -> Result<()> {
        for &c in pool {
            if self.points[c].len() < per_class {
                return Err(Error::Capacity {
                    class: self.labels[c],
                    available: self.points[c].len(),
                    required: per_class,
                });
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        class: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let pts = &self.points[class];
        if pts.len() < count {
            return Err(Error::Capacity {
                class: self.labels[class],
                available: pts.len(),
                required: count,
            });
        }
        Ok(sample_indices(rng, pts.len(), count)
            .iter()
            .map(|i| pts[i].clone())
            .collect())
    }
}
