use serde::{Deserialize, Serialize};

use crate::data::{FieldSchema, Sample};
use crate::dlrm::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng::RngStream;
use crate::tensor::Matrix;

use super::{table_key, CandidateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One table per (field, candidate size).
    Independent,
    /// One max-size table per field; candidate `j` reads its first `d_j` columns.
    Shared,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Scheme::Independent),
            "shared" => Ok(Scheme::Shared),
            other => Err(Error::config(format!("unknown supernet scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Layout {
    Independent,
    Shared,
    /// A single table per field, of the assigned candidate's size.
    Fixed(Vec<usize>),
}

/// Candidate embedding storage.
#[derive(Debug, Clone)]
pub struct SupernetStore {
    pub candidates: CandidateSet,
    layout: Layout,
    tables: Vec<Vec<EmbeddingTable>>,
}

impl SupernetStore {
    pub fn new(schemas: &[FieldSchema], candidates: &CandidateSet, scheme: Scheme, rng: &RngStream) -> Self {
        let tables = schemas
            .iter()
            .enumerate()
            .map(|(i, s)| match scheme {
                Scheme::Independent => candidates
                    .sizes()
                    .iter()
                    .map(|&d| EmbeddingTable::new(i, s.cardinality, d, &mut rng.fork(table_key(i, d))))
                    .collect(),
                Scheme::Shared => {
                    let d = candidates.max_size();
                    vec![EmbeddingTable::new(i, s.cardinality, d, &mut rng.fork(table_key(i, d)))]
                }
            })
            .collect();
        let layout = match scheme {
            Scheme::Independent => Layout::Independent,
            Scheme::Shared => Layout::Shared,
        };
        Self { candidates: candidates.clone(), layout, tables }
    }

    /// Stand-alone storage holding only the assigned candidate of each field.
    pub fn fixed(
        schemas: &[FieldSchema],
        candidates: &CandidateSet,
        assignment: &[usize],
        rng: &RngStream,
    ) -> Result<Self> {
        if assignment.len() != schemas.len() {
            return Err(Error::config("assignment length differs from field count"));
        }
        let mut tables = Vec::with_capacity(schemas.len());
        for (i, (s, &j)) in schemas.iter().zip(assignment).enumerate() {
            let d = candidates.size(j)?;
            tables.push(vec![EmbeddingTable::new(i, s.cardinality, d, &mut rng.fork(table_key(i, d)))]);
        }
        Ok(Self { candidates: candidates.clone(), layout: Layout::Fixed(assignment.to_vec()), tables })
    }

    pub fn scheme(&self) -> Option<Scheme> {
        match self.layout {
            Layout::Independent => Some(Scheme::Independent),
            Layout::Shared => Some(Scheme::Shared),
            Layout::Fixed(_) => None,
        }
    }

    pub fn assignment(&self) -> Option<&[usize]> {
        match &self.layout {
            Layout::Fixed(a) => Some(a),
            _ => None,
        }
    }

    pub fn num_fields(&self) -> usize {
        self.tables.len()
    }

    fn slot(&self, field: usize, candidate: usize) -> Result<(usize, usize)> {
        if field >= self.tables.len() {
            return Err(Error::config(format!("field {field} out of range")));
        }
        let width = self.candidates.size(candidate)?;
        match &self.layout {
            Layout::Independent => Ok((candidate, width)),
            Layout::Shared => Ok((0, width)),
            Layout::Fixed(a) if a[field] == candidate => Ok((0, width)),
            Layout::Fixed(a) => Err(Error::config(format!(
                "field {field} holds only candidate {}, asked for {candidate}",
                a[field]
            ))),
        }
    }

    /// The table serving `(field, candidate)` and the column prefix it reads.
    pub fn view(&self, field: usize, candidate: usize) -> Result<(&EmbeddingTable, usize)> {
        let (k, w) = self.slot(field, candidate)?;
        Ok((&self.tables[field][k], w))
    }

    pub fn view_mut(&mut self, field: usize, candidate: usize) -> Result<(&mut EmbeddingTable, usize)> {
        let (k, w) = self.slot(field, candidate)?;
        Ok((&mut self.tables[field][k], w))
    }

    pub fn lookup(&self, field: usize, candidate: usize, batch: &[&Sample]) -> Result<Matrix> {
        let (t, w) = self.view(field, candidate)?;
        t.lookup_batch(batch, w)
    }

    pub fn accumulate_grad(&mut self, field: usize, candidate: usize, batch: &[&Sample], grad: &Matrix) -> Result<()> {
        let (t, w) = self.view_mut(field, candidate)?;
        if grad.cols() != w {
            return Err(Error::shape("store backward", (batch.len(), w), grad.shape()));
        }
        t.accumulate_grad(batch, grad)
    }

    /// Per-(field, candidate) variance of the candidate's embedding values.
    /// Fixed layouts report only their assigned candidate (others are 0).
    pub fn variances(&self) -> Matrix {
        let t = self.candidates.len();
        let mut v = Matrix::zeros(self.tables.len(), t);
        for i in 0..self.tables.len() {
            for j in 0..t {
                if let Ok((table, w)) = self.view(i, j) {
                    v.set(i, j, table.variance(w));
                }
            }
        }
        v
    }

    pub fn step(&mut self, adam: &Adam) {
        for t in self.tables.iter_mut().flatten() {
            t.step(adam);
        }
    }

    pub fn zero_grad(&mut self) {
        for t in self.tables.iter_mut().flatten() {
            t.zero_grad();
        }
    }

    pub fn tables(&self) -> impl Iterator<Item = (String, &EmbeddingTable)> {
        self.tables.iter().enumerate().flat_map(move |(i, row)| {
            row.iter().map(move |t| (format!("field{i}.d{}", t.dim()), t))
        })
    }

    pub fn tables_mut(&mut self) -> impl Iterator<Item = &mut EmbeddingTable> {
        self.tables.iter_mut().flatten()
    }

    /// Number of stored embedding values.
    pub fn param_count(&self) -> usize {
        self.tables.iter().flatten().map(|t| t.rows() * t.dim()).sum()
    }
}
