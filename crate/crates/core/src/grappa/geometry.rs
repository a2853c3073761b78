//! Kernel placements: which k-space points act as targets and which as
//! sources for one linear relation.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::tensor::SamplingMask;

/// Source window geometry: `k_rows` acquired rows bracketing the target row,
/// `k_cols` columns centered on the target column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelSpec {
    k_rows: usize,
    k_cols: usize,
}

impl KernelSpec {
    pub fn new(k_rows: usize, k_cols: usize) -> Result<Self> {
        if k_rows == 0 || k_cols == 0 {
            return Err(invalid("kernel dimensions must be positive"));
        }
        Ok(Self { k_rows, k_cols })
    }

    pub fn k_rows(&self) -> usize {
        self.k_rows
    }

    pub fn k_cols(&self) -> usize {
        self.k_cols
    }

    /// Source-vector length `n_C * k_rows * k_cols`.
    pub fn p(&self, n_coils: usize) -> usize {
        n_coils * self.k_rows * self.k_cols
    }

    fn rows_above(&self) -> usize {
        self.k_rows.div_ceil(2)
    }

    fn rows_below(&self) -> usize {
        self.k_rows / 2
    }

    fn col_range(&self, col: usize, n_x: usize) -> impl Iterator<Item = usize> {
        let half = (self.k_cols / 2) as isize;
        let last = n_x as isize - 1;
        (0..self.k_cols as isize).map(move |j| (col as isize + j - half).clamp(0, last) as usize)
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { k_rows: 2, k_cols: 1 }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.k_rows, self.k_cols)
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// Parses `"<rows>x<cols>"`, e.g. `"2x1"`.
    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| invalid(format!("kernel '{s}' is not of the form RxC")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| invalid(format!("kernel '{s}' is not of the form RxC")))
        };
        Self::new(parse(r)?, parse(c)?)
    }
}

/// Which side of the calibration relation each point plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Targets at unacquired points, sources at acquired points.
    Grappa,
    /// Targets at acquired points, sources at unacquired points.
    Bgrappa,
}

/// How kernel placements share one weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WeightSharing {
    /// Every placement gets its own weights, fit from the calibration frames alone.
    #[default]
    PerLocation,
    /// Placements with the same window shape in the same column are pooled.
    PerRowOffsetColumn,
    /// Placements with the same window shape are pooled across the whole array.
    PerRowOffset,
}

impl WeightSharing {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PerLocation => "location",
            Self::PerRowOffsetColumn => "offset-column",
            Self::PerRowOffset => "offset",
        }
    }
}

impl fmt::Display for WeightSharing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightSharing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "location" => Ok(Self::PerLocation),
            "offset-column" => Ok(Self::PerRowOffsetColumn),
            "offset" => Ok(Self::PerRowOffset),
            _ => Err(invalid(format!(
                "unknown weight sharing '{s}' (expected location, offset-column or offset)"
            ))),
        }
    }
}

/// One linear relation `targets ~ W * sources`. Source values are stacked
/// point by point, all coils of a point together: index `point * n_C + coil`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub targets: Vec<(usize, usize)>,
    pub sources: Vec<(usize, usize)>,
}

impl Placement {
    /// Point offsets relative to the first target; placements with equal
    /// shapes describe the same local geometry.
    pub fn shape(&self) -> Vec<(isize, isize)> {
        let (r0, c0) = self.targets[0];
        self.targets
            .iter()
            .chain(&self.sources)
            .map(|&(r, c)| (r as isize - r0 as isize, c as isize - c0 as isize))
            .collect()
    }

    pub fn swapped(&self) -> Self {
        Self {
            targets: self.sources.clone(),
            sources: self.targets.clone(),
        }
    }
}

/// Acquired source window for the unacquired point `(row, col)`.
///
/// Source rows sit at the acquired rows nearest the target, `ceil(k_rows/2)`
/// above and `floor(k_rows/2)` below; rows outside the acquired range are
/// replaced by the nearest acquired row and columns are clamped to the array.
pub fn grappa_placement(
    mask: &SamplingMask,
    kernel: &KernelSpec,
    row: usize,
    col: usize,
) -> Result<Placement> {
    if row >= mask.n_y() || col >= mask.n_x() {
        return Err(invalid(format!("point ({row}, {col}) outside the array")));
    }
    if mask.is_acquired(row) {
        return Err(invalid(format!("row {row} is acquired, not a target")));
    }
    let a = mask.accel() as isize;
    let first = mask.first_acquired_row() as isize;
    let last = mask.last_acquired_row() as isize;
    let base = row as isize - mask.row_offset(row) as isize;
    let above = kernel.rows_above() as isize;
    let rows = (0..kernel.k_rows() as isize)
        .map(|i| (base + (i - above + 1) * a).clamp(first, last) as usize);
    let mut sources = Vec::with_capacity(kernel.k_rows() * kernel.k_cols());
    for r in rows {
        sources.extend(kernel.col_range(col, mask.n_x()).map(|c| (r, c)));
    }
    Ok(Placement {
        targets: vec![(row, col)],
        sources,
    })
}

/// Every unacquired point's window, row-major over the missing points.
pub fn grappa_placements(mask: &SamplingMask, kernel: &KernelSpec) -> Vec<Placement> {
    let mut out = Vec::with_capacity(mask.missing_rows().len() * mask.n_x());
    for r in mask.missing_rows() {
        for c in 0..mask.n_x() {
            out.push(grappa_placement(mask, kernel, r, c).expect("missing row in bounds"));
        }
    }
    out
}

/// Disjoint tiling of the unacquired points into estimation groups.
///
/// Each group has one acquired anchor point (the target of the swapped
/// relation) and the unacquired points around it (the sources). Anchors are
/// taken in row order and keep the `k_rows` nearest unacquired rows, half
/// above and half below, when those rows exist and are still unclaimed.
/// Leftover rows become single-row groups anchored at the nearest acquired
/// row (the upper one on ties). Columns are cut into blocks of `k_cols` with
/// the anchor in the block center. Sources are listed row-major.
pub fn bgrappa_groups(mask: &SamplingMask, kernel: &KernelSpec) -> Vec<Placement> {
    let n_y = mask.n_y();
    let mut claimed = vec![false; n_y];
    let mut row_groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for a in mask.acquired_rows() {
        let above: Vec<usize> = (0..a)
            .rev()
            .filter(|&r| !mask.is_acquired(r))
            .take(kernel.rows_above())
            .collect();
        let below: Vec<usize> = (a + 1..n_y)
            .filter(|&r| !mask.is_acquired(r))
            .take(kernel.rows_below())
            .collect();
        if above.len() < kernel.rows_above() || below.len() < kernel.rows_below() {
            continue;
        }
        let mut rows: Vec<usize> = above.into_iter().chain(below).collect();
        rows.sort_unstable();
        if rows.iter().any(|&r| claimed[r]) {
            continue;
        }
        for &r in &rows {
            claimed[r] = true;
        }
        row_groups.push((a, rows));
    }
    let acquired = mask.acquired_rows();
    for r in mask.missing_rows() {
        if claimed[r] {
            continue;
        }
        let anchor = *acquired
            .iter()
            .min_by_key(|&&q| (q.abs_diff(r), q))
            .expect("mask has an acquired row");
        row_groups.push((anchor, vec![r]));
    }
    row_groups.sort_by_key(|(_, rows)| rows[0]);

    let n_x = mask.n_x();
    let mut groups = Vec::new();
    for (anchor, rows) in &row_groups {
        let mut start = 0;
        while start < n_x {
            let end = (start + kernel.k_cols()).min(n_x);
            let anchor_col = start + (end - start - 1) / 2;
            let sources = rows
                .iter()
                .flat_map(|&r| (start..end).map(move |c| (r, c)))
                .collect();
            groups.push(Placement {
                targets: vec![(*anchor, anchor_col)],
                sources,
            });
            start = end;
        }
    }
    groups
}

/// Window shape plus, when pooling per column, the target column.
type ClassKey = (Vec<(isize, isize)>, Option<usize>);

/// Assigns each placement a class index; placements in one class share a
/// weight matrix. Indices follow first appearance.
pub fn weight_classes(placements: &[Placement], sharing: WeightSharing) -> (Vec<usize>, usize) {
    let mut ids: HashMap<ClassKey, usize> = HashMap::new();
    let mut class_of = Vec::with_capacity(placements.len());
    if sharing == WeightSharing::PerLocation {
        return ((0..placements.len()).collect(), placements.len());
    }
    for p in placements {
        let key = match sharing {
            WeightSharing::PerRowOffsetColumn => (p.shape(), Some(p.targets[0].1)),
            _ => (p.shape(), None),
        };
        let next = ids.len();
        class_of.push(*ids.entry(key).or_insert(next));
    }
    let n = ids.len();
    (class_of, n)
}
