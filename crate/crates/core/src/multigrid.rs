//! Aggregation multigrid used to precondition the walker's CG solves.
//!
//! Unknowns live on pixel coordinates. Each coarser level merges 2x2 blocks
//! of the level below (piecewise-constant prolongation) and takes the
//! Galerkin product as its operator. One V-cycle with a forward Gauss-Seidel
//! sweep before and a backward sweep after the coarse correction is a
//! symmetric positive definite operator, so it is safe inside CG.

/// Symmetric M-matrix `D - W` with the off-diagonal weights `W` in CSR form.
#[derive(Debug, Clone)]
pub(crate) struct Laplacian {
    pub diag: Vec<f64>,
    pub offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Laplacian {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.diag[i] * x[i];
            for k in self.offsets[i]..self.offsets[i + 1] {
                acc -= self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    fn gauss_seidel_row(&self, i: usize, b: &[f64], x: &mut [f64]) {
        let mut acc = b[i];
        for k in self.offsets[i]..self.offsets[i + 1] {
            acc += self.vals[k] * x[self.cols[k]];
        }
        x[i] = acc / self.diag[i];
    }

    fn to_dense(&self) -> Vec<f64> {
        let n = self.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = self.diag[i];
            for k in self.offsets[i]..self.offsets[i + 1] {
                a[i * n + self.cols[k]] -= self.vals[k];
            }
        }
        a
    }
}

/// Direct solves at this size or below.
const COARSEST: usize = 400;

/// Piecewise-constant prolongation underestimates smooth error; stretching
/// the coarse correction makes up for part of it.
const OVERCORRECTION: f64 = 1.5;

struct Level {
    op: Laplacian,
    /// Row at the next coarser level for every row here.
    parent: Vec<usize>,
}

pub(crate) struct Multigrid {
    levels: Vec<Level>,
    coarsest: Laplacian,
    /// Row-major lower Cholesky factor of the coarsest operator.
    factor: Vec<f64>,
}

/// Per-solve scratch space so one hierarchy can serve parallel solves.
pub(crate) struct Workspace {
    x: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
}

impl Multigrid {
    /// `coords` gives the pixel `(x, y)` of each row of `fine`.
    pub fn build(fine: Laplacian, coords: Vec<(u32, u32)>) -> Self {
        let mut levels = Vec::new();
        let mut op = fine;
        let mut coords = coords;
        while op.len() > COARSEST {
            let (parent, next_coords) = aggregate(&coords);
            if next_coords.len() == op.len() {
                break;
            }
            let next = galerkin(&op, &parent, next_coords.len());
            levels.push(Level { op, parent });
            op = next;
            coords = next_coords;
        }
        let factor = cholesky(&op.to_dense(), op.len());
        Self {
            levels,
            coarsest: op,
            factor,
        }
    }

    pub fn workspace(&self) -> Workspace {
        let sizes: Vec<usize> = self
            .levels
            .iter()
            .map(|l| l.op.len())
            .chain(std::iter::once(self.coarsest.len()))
            .collect();
        let make = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Workspace {
            x: make(),
            b: make(),
            r: make(),
        }
    }

    /// `out = M^-1 r` for one V-cycle `M^-1`.
    pub fn precondition(&self, r: &[f64], out: &mut [f64], ws: &mut Workspace) {
        ws.b[0].copy_from_slice(r);
        self.cycle(0, ws);
        out.copy_from_slice(&ws.x[0]);
    }

    fn cycle(&self, depth: usize, ws: &mut Workspace) {
        if depth == self.levels.len() {
            let n = self.coarsest.len();
            cholesky_solve(&self.factor, n, &ws.b[depth], &mut ws.x[depth]);
            return;
        }
        let level = &self.levels[depth];
        let op = &level.op;
        let n = op.len();
        {
            let (b, x) = (&ws.b[depth], &mut ws.x[depth]);
            x.fill(0.0);
            for i in 0..n {
                op.gauss_seidel_row(i, b, x);
            }
        }
        {
            let r = &mut ws.r[depth];
            op.apply(&ws.x[depth], r);
            for (ri, bi) in r.iter_mut().zip(&ws.b[depth]) {
                *ri = bi - *ri;
            }
        }
        let coarse_b = &mut ws.b[depth + 1];
        coarse_b.fill(0.0);
        for (&p, &ri) in level.parent.iter().zip(&ws.r[depth]) {
            coarse_b[p] += ri;
        }
        self.cycle(depth + 1, ws);
        let (fine_x, coarse_x) = ws.x.split_at_mut(depth + 1);
        let x = &mut fine_x[depth];
        for (i, &p) in level.parent.iter().enumerate() {
            x[i] += OVERCORRECTION * coarse_x[0][p];
        }
        let b = &ws.b[depth];
        for i in (0..n).rev() {
            op.gauss_seidel_row(i, b, x);
        }
    }
}

/// Groups rows by 2x2 pixel block. Returns each row's aggregate and the
/// aggregate coordinates on the halved grid.
fn aggregate(coords: &[(u32, u32)]) -> (Vec<usize>, Vec<(u32, u32)>) {
    let mut index = std::collections::HashMap::with_capacity(coords.len() / 3);
    let mut next = Vec::new();
    let parent = coords
        .iter()
        .map(|&(x, y)| {
            let key = (x / 2, y / 2);
            *index.entry(key).or_insert_with(|| {
                next.push(key);
                next.len() - 1
            })
        })
        .collect();
    (parent, next)
}

/// `P^T A P` for piecewise-constant `P`.
fn galerkin(op: &Laplacian, parent: &[usize], coarse_len: usize) -> Laplacian {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); coarse_len];
    for (i, &p) in parent.iter().enumerate() {
        members[p].push(i);
    }
    let mut out = Laplacian {
        diag: Vec::with_capacity(coarse_len),
        offsets: Vec::with_capacity(coarse_len + 1),
        cols: Vec::new(),
        vals: Vec::new(),
    };
    out.offsets.push(0);
    let mut row: Vec<(usize, f64)> = Vec::new();
    for (c, rows) in members.iter().enumerate() {
        let mut diag = 0.0;
        row.clear();
        for &i in rows {
            diag += op.diag[i];
            for k in op.offsets[i]..op.offsets[i + 1] {
                let pc = parent[op.cols[k]];
                if pc == c {
                    diag -= op.vals[k];
                } else {
                    row.push((pc, op.vals[k]));
                }
            }
        }
        row.sort_unstable_by_key(|e| e.0);
        let mut k = 0;
        while k < row.len() {
            let (col, mut v) = row[k];
            k += 1;
            while k < row.len() && row[k].0 == col {
                v += row[k].1;
                k += 1;
            }
            out.cols.push(col);
            out.vals.push(v);
        }
        out.diag.push(diag);
        out.offsets.push(out.cols.len());
    }
    out
}

fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        // the operator is SPD; guard against roundoff on near-singular blocks
        let d = d.max(a[j * n + j] * 1e-14).max(f64::MIN_POSITIVE).sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    l
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64], x: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, pinned: &[usize]) -> (Laplacian, Vec<(u32, u32)>) {
        let free: Vec<usize> = (0..h * w).filter(|i| !pinned.contains(i)).collect();
        let mut row_of = vec![usize::MAX; h * w];
        for (r, &i) in free.iter().enumerate() {
            row_of[i] = r;
        }
        let mut lap = Laplacian {
            diag: Vec::new(),
            offsets: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        };
        for &i in &free {
            let (x, y) = (i % w, i / w);
            let mut nb = Vec::new();
            if x > 0 {
                nb.push(i - 1);
            }
            if x + 1 < w {
                nb.push(i + 1);
            }
            if y > 0 {
                nb.push(i - w);
            }
            if y + 1 < h {
                nb.push(i + w);
            }
            let wt = |key: usize| 1.0 + (key % 5) as f64 * 0.3;
            lap.diag.push(nb.iter().map(|&j| wt(i.min(j) * 31 + i.max(j))).sum());
            for j in nb {
                if row_of[j] != usize::MAX {
                    lap.cols.push(row_of[j]);
                    lap.vals.push(wt(i.min(j) * 31 + i.max(j)));
                }
            }
            lap.offsets.push(lap.cols.len());
        }
        let coords = free.iter().map(|&i| ((i % w) as u32, (i / w) as u32)).collect();
        (lap, coords)
    }

    #[test]
    fn galerkin_preserves_symmetry_and_row_sums() {
        let (lap, coords) = grid(9, 7, &[0, 30]);
        let (parent, next) = aggregate(&coords);
        let c = galerkin(&lap, &parent, next.len());
        let dense = c.to_dense();
        let n = c.len();
        for i in 0..n {
            for j in 0..n {
                assert!((dense[i * n + j] - dense[j * n + i]).abs() < 1e-12);
            }
        }
        let fine_total: f64 = lap.to_dense().iter().sum();
        assert!((dense.iter().sum::<f64>() - fine_total).abs() < 1e-9);
    }

    #[test]
    fn cycle_is_symmetric_and_positive() {
        let (lap, coords) = grid(40, 33, &[5, 600, 1200]);
        let n = lap.len();
        let mg = Multigrid::build(lap, coords);
        assert!(!mg.levels.is_empty());
        let mut ws = mg.workspace();
        let unit = |k: usize| {
            let mut v = vec![0.0; n];
            v[k] = 1.0;
            v
        };
        let mut mu = vec![0.0; n];
        let mut mv = vec![0.0; n];
        for (a, b) in [(3, 900), (17, 18), (400, 1000)] {
            mg.precondition(&unit(a), &mut mu, &mut ws);
            mg.precondition(&unit(b), &mut mv, &mut ws);
            assert!((mu[b] - mv[a]).abs() < 1e-10 * mu[b].abs().max(1.0));
            assert!(mu[a] > 0.0);
        }
    }
}
