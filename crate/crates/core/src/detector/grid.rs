use crate::geometry::Point3;

/// Anchor lattice: anchor `(ix, iy)` sits at the center of cell `(ix, iy)`.
#[derive(Debug, Clone)]
pub(super) struct AnchorGrid {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: i64,
    ny: i64,
    pub cutoff: f64,
    /// Cells to scan on each side so every pair within `cutoff` is visited.
    reach: i64,
}

impl AnchorGrid {
    pub fn new(x_range: [f64; 2], y_range: [f64; 2], cell: f64, cutoff: f64) -> Self {
        let nx = (((x_range[1] - x_range[0]) / cell).round() as i64).max(1);
        let ny = (((y_range[1] - y_range[0]) / cell).round() as i64).max(1);
        Self {
            x0: x_range[0],
            y0: y_range[0],
            cell,
            nx,
            ny,
            cutoff,
            reach: (cutoff / cell).ceil() as i64,
        }
    }

    pub fn len(&self) -> usize {
        (self.nx * self.ny) as usize
    }

    pub fn center(&self, a: usize) -> [f64; 2] {
        let (ix, iy) = (a as i64 / self.ny, a as i64 % self.ny);
        [
            self.x0 + (ix as f64 + 0.5) * self.cell,
            self.y0 + (iy as f64 + 0.5) * self.cell,
        ]
    }

    fn cell_of(&self, p: &Point3) -> (i64, i64) {
        (
            ((p[0] - self.x0) / self.cell).floor() as i64,
            ((p[1] - self.y0) / self.cell).floor() as i64,
        )
    }

    /// Anchors whose window covers the cell of `p`, in lattice order.
    pub fn anchors_around(&self, p: Point3) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.cell_of(&p);
        let xs = (cx - self.reach).max(0)..=(cx + self.reach).min(self.nx - 1);
        let ys = (cy - self.reach).max(0)..=(cy + self.reach).min(self.ny - 1);
        let ny = self.ny;
        xs.flat_map(move |ix| ys.clone().map(move |iy| (ix * ny + iy) as usize))
    }
}

/// Active points bucketed into the anchor cells, padded by `reach` cells on
/// every side. Points outside the padded lattice cannot reach any anchor.
#[derive(Debug, Clone)]
pub(super) struct Buckets {
    width: i64,
    height: i64,
    reach: i64,
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Buckets {
    pub fn new(grid: &AnchorGrid, points: &[Point3], active: impl Fn(&Point3) -> bool) -> Self {
        let reach = grid.reach;
        let width = grid.nx + 2 * reach;
        let height = grid.ny + 2 * reach;
        let slot = |p: &Point3| -> Option<usize> {
            let (cx, cy) = grid.cell_of(p);
            let (bx, by) = (cx + reach, cy + reach);
            (bx >= 0 && by >= 0 && bx < width && by < height).then(|| (bx * height + by) as usize)
        };
        let mut counts = vec![0usize; (width * height) as usize + 1];
        let slots: Vec<Option<usize>> = points
            .iter()
            .map(|p| if active(p) { slot(p) } else { None })
            .collect();
        for s in slots.iter().flatten() {
            counts[s + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut indices = vec![0usize; *offsets.last().unwrap_or(&0)];
        for (i, s) in slots.iter().enumerate() {
            if let Some(s) = s {
                indices[fill[*s]] = i;
                fill[*s] += 1;
            }
        }
        Self {
            width,
            height,
            reach,
            offsets,
            indices,
        }
    }

    /// Point indices in the window of anchor `a`: cell order, then point order.
    pub fn around_anchor<'a>(
        &'a self,
        grid: &AnchorGrid,
        a: usize,
    ) -> impl Iterator<Item = usize> + 'a {
        let (ix, iy) = (a as i64 / grid.ny, a as i64 % grid.ny);
        // Padded coordinates of the anchor cell are (ix + reach, iy + reach).
        let xs = ix..=ix + 2 * self.reach;
        let height = self.height;
        let width = self.width;
        let ys = iy..=iy + 2 * self.reach;
        xs.filter(move |bx| *bx < width).flat_map(move |bx| {
            ys.clone().filter(move |by| *by < height).flat_map(move |by| {
                let s = (bx * height + by) as usize;
                self.indices[self.offsets[s]..self.offsets[s + 1]].iter().copied()
            })
        })
    }
}
