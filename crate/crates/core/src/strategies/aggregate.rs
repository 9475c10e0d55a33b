use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// The `N × K` local class distributions of one sample, rows in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMatrix<T> {
    rows: usize,
    classes: usize,
    data: Vec<T>,
}

impl<T: Real> ProbabilityMatrix<T> {
    pub fn new(rows: usize, classes: usize, data: Vec<T>) -> Result<Self> {
        if classes == 0 || data.len() != rows * classes {
            return Err(Error::dim(
                "probability matrix",
                format!("{} values for {rows} rows of {classes} classes", data.len()),
            ));
        }
        Ok(ProbabilityMatrix { rows, classes, data })
    }

    /// View a flattened `[N·K]` aggregator input as a matrix.
    pub fn from_flat(flat: &[T], classes: usize) -> Result<Self> {
        if classes == 0 || flat.len() % classes != 0 {
            return Err(Error::dim(
                "probability matrix",
                format!("{} values do not split into rows of {classes}", flat.len()),
            ));
        }
        Self::new(flat.len() / classes, classes, flat.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    /// Row-major over (cell, class): the aggregator's input layout.
    pub fn flattened(&self) -> &[T] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.rows, self.classes], self.data.clone()).expect("shape matches")
    }

    fn nonempty(&self, op: &str) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::dim(op, "probability matrix has no rows"));
        }
        Ok(())
    }
}

/// Mean distribution over rows and its argmax.
pub fn aggregate_average<T: Real>(pm: &ProbabilityMatrix<T>) -> Result<(usize, Vec<T>)> {
    pm.nonempty("aggregate_average")?;
    let mut mean = vec![T::zero(); pm.classes];
    for r in 0..pm.rows {
        for (m, &p) in mean.iter_mut().zip(pm.row(r)) {
            *m = *m + p;
        }
    }
    let n = T::from_usize(pm.rows).expect("row count fits");
    for m in &mut mean {
        *m = *m / n;
    }
    Ok((argmax(&mean), mean))
}

/// Plurality of per-row argmax votes.
///
/// Vote ties go to the tied class with the highest single probability assigned
/// by any row that voted for it; remaining ties go to the lowest class.
pub fn aggregate_majority<T: Real>(pm: &ProbabilityMatrix<T>) -> Result<usize> {
    pm.nonempty("aggregate_majority")?;
    let mut votes = vec![0usize; pm.classes];
    let mut strongest = vec![T::neg_infinity(); pm.classes];
    for r in 0..pm.rows {
        let row = pm.row(r);
        let c = argmax(row);
        votes[c] += 1;
        if row[c] > strongest[c] {
            strongest[c] = row[c];
        }
    }
    let top = *votes.iter().max().expect("at least one class");
    let mut best: Option<usize> = None;
    for c in (0..pm.classes).filter(|&c| votes[c] == top) {
        match best {
            Some(b) if strongest[c] <= strongest[b] => {}
            _ => best = Some(c),
        }
    }
    Ok(best.expect("some class has the top count"))
}
