//! Non-overlapping rectangular grid decomposition of images and volumes.
//!
//! Only spatial axes are subdivided; the channel axis is carried intact.
//! Cells are ordered row-major (height, then width) and, for volumes, with
//! depth as the slowest-varying axis. That order fixes which input slots of
//! the aggregator network belong to which cell.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::conv::pad3;
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

/// Per-axis subdivision counts, written `"2x2"` or `"4x4x2"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec(pub Vec<usize>);

impl GridSpec {
    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    pub fn cells(&self) -> usize {
        self.0.iter().product()
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let counts: Vec<usize> = s
            .split(['x', 'X', '×'])
            .map(|p| {
                p.trim().parse::<usize>().map_err(|_| {
                    Error::config("grid", format!("`{s}` is not of the form 2x2 or 4x4x2"))
                })
            })
            .collect::<Result<_>>()?;
        if !(2..=3).contains(&counts.len()) {
            return Err(Error::config("grid", format!("`{s}` must have 2 or 3 axis counts")));
        }
        if counts.contains(&0) {
            return Err(Error::config("grid", format!("`{s}` has a zero count")));
        }
        Ok(GridSpec(counts))
    }
}

impl TryFrom<String> for GridSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        g.to_string()
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// Partition of a spatial domain into `N = product(counts)` rectangular cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridDecomposition {
    extents: Vec<usize>,
    counts: Vec<usize>,
    /// `(start, length)` of each cell along each axis.
    axis_cells: Vec<Vec<(usize, usize)>>,
    /// Per-axis cell coordinate for each cell, in cell order.
    order: Vec<Vec<usize>>,
}

/// Builds the grid for spatial `extents` (H, W[, D]) and per-axis `counts`.
///
/// When an extent is not divisible by its count, the remainder `r` is given
/// one pixel each to the first `r` cells along that axis.
pub fn make_grid(extents: &[usize], counts: &[usize]) -> Result<GridDecomposition> {
    if extents.len() != counts.len() || !(2..=3).contains(&extents.len()) {
        return Err(Error::dim(
            "grid",
            format!("extents {extents:?} and counts {counts:?} need 2 or 3 matching axes"),
        ));
    }
    let mut axis_cells = Vec::with_capacity(extents.len());
    for (axis, (&e, &c)) in extents.iter().zip(counts).enumerate() {
        if c == 0 {
            return Err(Error::InfeasibleGrid(format!("axis {axis}: zero cells")));
        }
        if c > e {
            return Err(Error::InfeasibleGrid(format!(
                "axis {axis}: {c} cells do not fit in extent {e}"
            )));
        }
        let (base, rem) = (e / c, e % c);
        let mut start = 0;
        let mut cells = Vec::with_capacity(c);
        for i in 0..c {
            let len = base + usize::from(i < rem);
            cells.push((start, len));
            start += len;
        }
        axis_cells.push(cells);
    }
    // depth slowest, then height, then width
    let loop_axes: Vec<usize> = if extents.len() == 3 { vec![2, 0, 1] } else { vec![0, 1] };
    let mut order = Vec::new();
    let mut coord = vec![0; extents.len()];
    let total: usize = counts.iter().product();
    for mut flat in 0..total {
        for &axis in loop_axes.iter().rev() {
            coord[axis] = flat % counts[axis];
            flat /= counts[axis];
        }
        order.push(coord.clone());
    }
    Ok(GridDecomposition {
        extents: extents.to_vec(),
        counts: counts.to_vec(),
        axis_cells,
        order,
    })
}

impl GridDecomposition {
    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec(self.counts.clone())
    }

    pub fn spatial_rank(&self) -> usize {
        self.extents.len()
    }

    /// Number of cells `N`.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Overlap between neighbouring cells, in pixels. Always zero.
    pub fn overlap(&self) -> usize {
        0
    }

    /// `(start, length)` per axis for cell `i`.
    pub fn cell(&self, i: usize) -> Vec<(usize, usize)> {
        self.order[i]
            .iter()
            .enumerate()
            .map(|(axis, &c)| self.axis_cells[axis][c])
            .collect()
    }

    pub fn cell_extents(&self, i: usize) -> Vec<usize> {
        self.cell(i).into_iter().map(|(_, l)| l).collect()
    }

    /// Cell extents along each axis, in axis order.
    pub fn axis_cells(&self, axis: usize) -> &[(usize, usize)] {
        &self.axis_cells[axis]
    }

    fn check_spatial(&self, spatial: &[usize], what: &str) -> Result<()> {
        if spatial != self.extents.as_slice() {
            return Err(Error::dim(
                what,
                format!("spatial extents {spatial:?} do not match grid {:?}", self.extents),
            ));
        }
        Ok(())
    }

    /// Contiguous runs `(full_offset, part_offset, len)` covering cell `cell`
    /// of a block with `planes` leading planes.
    fn runs(&self, cell: usize, planes: usize) -> Vec<(usize, usize, usize)> {
        let [_, e1, e2] = pad3(&self.extents, 1);
        let e0 = self.extents[0];
        let mut c3 = [(0usize, 1usize); 3];
        let c = self.cell(cell);
        c3[..c.len()].copy_from_slice(&c);
        let [(s0, l0), (s1, l1), (s2, l2)] = c3;
        let mut out = Vec::with_capacity(planes * l0 * l1);
        let mut k = 0;
        for plane in 0..planes {
            for a in 0..l0 {
                for b in 0..l1 {
                    out.push((((plane * e0 + s0 + a) * e1 + s1 + b) * e2 + s2, k, l2));
                    k += l2;
                }
            }
        }
        out
    }

    /// Cells of a `[batch, channels, spatial...]` tensor, each `[batch, channels, cell...]`.
    pub fn extract_batch<T: Real>(&self, batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let shape = batch.shape();
        if shape.len() != self.extents.len() + 2 {
            return Err(Error::dim(
                "extract",
                format!("expected [batch, channels, {} spatial axes], got {shape:?}", self.extents.len()),
            ));
        }
        self.check_spatial(&shape[2..], "extract")?;
        self.split(batch, shape[0] * shape[1], &shape[..2])
    }

    fn split<T: Real>(&self, t: &Tensor<T>, planes: usize, lead: &[usize]) -> Result<Vec<Tensor<T>>> {
        let full = t.data();
        (0..self.len())
            .map(|i| {
                let ext = self.cell_extents(i);
                let n: usize = planes * ext.iter().product::<usize>();
                let mut part = vec![T::zero(); n];
                for (f, q, l) in self.runs(i, planes) {
                    part[q..q + l].copy_from_slice(&full[f..f + l]);
                }
                let mut s = lead.to_vec();
                s.extend(ext);
                Tensor::new(s, part)
            })
            .collect()
    }

    fn join<T: Real>(&self, parts: &[Tensor<T>], lead: &[usize]) -> Result<Tensor<T>> {
        if parts.len() != self.len() {
            return Err(Error::dim(
                "reassemble",
                format!("{} subimages for a grid of {} cells", parts.len(), self.len()),
            ));
        }
        let planes: usize = lead.iter().product();
        let mut full = vec![T::zero(); planes * self.extents.iter().product::<usize>()];
        for (i, p) in parts.iter().enumerate() {
            let mut want = lead.to_vec();
            want.extend(self.cell_extents(i));
            if p.shape() != want.as_slice() {
                return Err(Error::dim(
                    "reassemble",
                    format!("subimage {i} has shape {:?}, cell expects {want:?}", p.shape()),
                ));
            }
            let part = p.data();
            for (f, q, l) in self.runs(i, planes) {
                full[f..f + l].copy_from_slice(&part[q..q + l]);
            }
        }
        let mut s = lead.to_vec();
        s.extend_from_slice(&self.extents);
        Tensor::new(s, full)
    }

    /// Inverse of [`GridDecomposition::extract_batch`].
    pub fn reassemble_batch<T: Real>(&self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let lead = parts
            .first()
            .map(|p| p.shape()[..2.min(p.rank())].to_vec())
            .ok_or_else(|| Error::dim("reassemble", "no subimages"))?;
        self.join(parts, &lead)
    }
}

/// The `N` subimages of a `[channels, spatial...]` image in cell order.
pub fn extract_subimages<T: Real>(image: &Tensor<T>, grid: &GridDecomposition) -> Result<Vec<Tensor<T>>> {
    let shape = image.shape();
    if shape.len() != grid.extents.len() + 1 {
        return Err(Error::dim(
            "extract",
            format!(
                "expected [channels, {} spatial axes], got {shape:?}",
                grid.extents.len()
            ),
        ));
    }
    grid.check_spatial(&shape[1..], "extract")?;
    grid.split(image, shape[0], &shape[..1])
}

/// Reassembles subimages produced by [`extract_subimages`].
pub fn reassemble<T: Real>(subimages: &[Tensor<T>], grid: &GridDecomposition) -> Result<Tensor<T>> {
    let first = subimages
        .first()
        .ok_or_else(|| Error::dim("reassemble", "no subimages"))?;
    if first.rank() != grid.extents.len() + 1 {
        return Err(Error::dim(
            "reassemble",
            format!("subimage rank {} does not match grid", first.rank()),
        ));
    }
    grid.join(subimages, &first.shape()[..1])
}
