use super::Matrix;
use crate::error::{Error, Result};

/// Unweighted k-nearest-neighbour regression under Euclidean distance.
/// Equal distances are resolved in favour of the lower training row.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    x: Matrix,
    y: Matrix,
    k: usize,
}

impl KnnRegressor {
    pub fn fit(x: Matrix, y: Matrix, k: usize) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Empty("training set"));
        }
        if x.rows() != y.rows() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                got: y.rows(),
            });
        }
        if k == 0 || k > x.rows() {
            return Err(Error::InvalidParameter(format!(
                "k = {k} must lie in [1, {}]",
                x.rows()
            )));
        }
        Ok(KnnRegressor { x, y, k })
    }

    pub fn predict_row(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.x.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.x.cols(),
                got: query.len(),
            });
        }
        let mut dist: Vec<(f64, usize)> = self
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, by_dist);
            dist.truncate(self.k);
        }
        dist.sort_by(by_dist);
        let mut out = vec![0.0; self.y.cols()];
        for &(_, i) in &dist {
            for (o, v) in out.iter_mut().zip(self.y.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.k as f64);
        Ok(out)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let rows = x.iter_rows().map(|r| self.predict_row(r)).collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows, self.y.cols())
    }
}
