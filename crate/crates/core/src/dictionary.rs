//! Off-grid delay-angle-Doppler transform.
//!
//! The zeroth-order transform is `W = B ⊗ C_v ⊗ C_h ⊗ D`. Its first-order (Taylor)
//! composition is `W(ω) = W + Σ_x Ẇ_x·diag(R_x x)`, where `Ẇ_x` differentiates one
//! factor. Every derivative factor is a row scaling of its zero-offset factor,
//! `Ḟ_x = diag(j·a_x)·F_x`, so `W(ω)_{rc} = W_{rc}·(1 + j·Σ_x a_x(r)·o_x(c))` with
//! `o_x = R_x x`. Operators are applied by mode products on the 4-way coefficient
//! tensor; dense matrices are kept as reference implementations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::config::{Axis, GridSpec, OffGridParams, SystemConfig};
use crate::error::{shape_err, Error, Result};
use crate::steering::cis;
use crate::{CMat, RMat, C64};

/// Row-major dense factor used by the mode-product kernels.
#[derive(Debug, Clone)]
struct Factor {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl Factor {
    fn from_mat(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn adjoint(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.data[i * self.cols + j].conj());
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// Multiplies `f` along tensor mode `mode` of `x` (row-major, last mode fastest).
fn mode_product(f: &Factor, x: &[C64], dims: [usize; 4], mode: usize) -> (Vec<C64>, [usize; 4]) {
    debug_assert_eq!(dims[mode], f.cols);
    let outer: usize = dims[..mode].iter().product();
    let inner: usize = dims[mode + 1..].iter().product();
    let d = f.cols;
    let p = f.rows;
    let mut out = vec![C64::new(0.0, 0.0); outer * p * inner];
    for o in 0..outer {
        let xo = &x[o * d * inner..(o + 1) * d * inner];
        for a in 0..p {
            let frow = &f.data[a * d..(a + 1) * d];
            let dst = &mut out[(o * p + a) * inner..(o * p + a + 1) * inner];
            if inner == 1 {
                let mut acc = C64::new(0.0, 0.0);
                for (fv, xv) in frow.iter().zip(xo.iter()) {
                    acc += fv * xv;
                }
                dst[0] = acc;
            } else {
                for (b, fv) in frow.iter().enumerate() {
                    let src = &xo[b * inner..(b + 1) * inner];
                    for (dv, sv) in dst.iter_mut().zip(src.iter()) {
                        *dv += fv * sv;
                    }
                }
            }
        }
    }
    let mut nd = dims;
    nd[mode] = p;
    (out, nd)
}

/// Kronecker product of four factors applied without forming the product.
#[derive(Debug, Clone)]
struct Kron4 {
    fwd: [Factor; 4],
    adj: [Factor; 4],
}

impl Kron4 {
    fn new(factors: [&CMat; 4]) -> Self {
        let fwd = factors.map(Factor::from_mat);
        let adj = [
            fwd[0].adjoint(),
            fwd[1].adjoint(),
            fwd[2].adjoint(),
            fwd[3].adjoint(),
        ];
        Self { fwd, adj }
    }

    fn run(factors: &[Factor; 4], x: &[C64]) -> Vec<C64> {
        let mut dims = [
            factors[0].cols,
            factors[1].cols,
            factors[2].cols,
            factors[3].cols,
        ];
        let mut cur: Vec<C64> = x.to_vec();
        for mode in (0..4).rev() {
            let (next, nd) = mode_product(&factors[mode], &cur, dims, mode);
            cur = next;
            dims = nd;
        }
        cur
    }

    fn apply_vec(&self, x: &[C64]) -> Vec<C64> {
        Self::run(&self.fwd, x)
    }

    fn adjoint_vec(&self, y: &[C64]) -> Vec<C64> {
        Self::run(&self.adj, y)
    }
}

/// Kronecker product of dense matrices (`a ⊗ b`).
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// A linear map between the delay-angle-Doppler grid (columns) and the
/// frequency-space-time observations (rows).
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A·X` for `X` of shape `ncols × L`.
    fn apply(&self, x: &CMat) -> Result<CMat>;
    /// `A^H·Y` for `Y` of shape `nrows × L`.
    fn apply_adjoint(&self, y: &CMat) -> Result<CMat>;
    /// `|A|^{∘2}·V`, where `V` holds one non-negative column weight per entry.
    fn abs2_apply(&self, v: &RMat) -> Result<RMat>;
    /// `(|A|^{∘2})^T·E`.
    fn abs2_apply_adjoint(&self, e: &RMat) -> Result<RMat>;
}

/// `Σ_c |a_{rc}|²·w_c` for a single weight vector.
pub fn abs2_row_sums<O: LinearOperator + ?Sized>(op: &O, weights: &[f64]) -> Result<Vec<f64>> {
    let v = RMat::from_column_slice(weights.len(), 1, weights);
    Ok(op.abs2_apply(&v)?.as_slice().to_vec())
}

/// `Σ_r |a_{rc}|²·w_r` for a single weight vector.
pub fn abs2_col_sums<O: LinearOperator + ?Sized>(op: &O, weights: &[f64]) -> Result<Vec<f64>> {
    let v = RMat::from_column_slice(weights.len(), 1, weights);
    Ok(op.abs2_apply_adjoint(&v)?.as_slice().to_vec())
}

fn check_rows(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(shape_err(
            format!("{what} with {want} rows"),
            format!("{got} rows"),
        ));
    }
    Ok(())
}

/// Zero-offset factors, their derivative row coefficients and the grid.
#[derive(Debug, Clone)]
pub struct DictionarySet {
    pub grid: GridSpec,
    /// Observation sizes `[N, M_v, M_h, K]`.
    pub obs_dims: [usize; 4],
    pub b: CMat,
    pub cv: CMat,
    pub ch: CMat,
    pub d: CMat,
    /// Derivative row coefficients `a_x`: `Ḟ_x = diag(j·a_x)·F_x`.
    pub row_coef: [Vec<f64>; 4],
    base: Kron4,
    dots: [Kron4; 4],
}

/// How a composed operator is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OperatorMode {
    /// Mode products on the factors with closed-form variance sums.
    #[default]
    Kron,
    /// Explicit dense matrix.
    Dense,
}

/// Factor matrix of `axis` at grid offsets `off` (exact steering, not a Taylor expansion).
fn axis_factor(grid: &GridSpec, axis: Axis, n_obs: usize, off: &[f64]) -> CMat {
    let len = grid.len(axis);
    CMat::from_fn(n_obs, len, |r, i| {
        let val = grid.value(axis, i) + off[i];
        cis(phase_rate(grid, axis, r) * val)
    })
}

/// Phase slope of observation index `r` on `axis`: entry = `exp(j·slope·value)`.
fn phase_rate(grid: &GridSpec, axis: Axis, r: usize) -> f64 {
    let r = r as f64;
    match axis {
        Axis::Delay => -2.0 * PI * r * grid.delta_f,
        Axis::Elevation | Axis::Azimuth => -PI * r,
        Axis::Doppler => 2.0 * PI * r * grid.delta_big_t,
    }
}

impl DictionarySet {
    /// Builds the zero-offset factors for `grid` observed with `cfg`'s sizes.
    pub fn new(grid: &GridSpec, cfg: &SystemConfig) -> Result<Self> {
        cfg.validate()?;
        grid.check_against(cfg)?;
        let obs_dims = [cfg.srs_len, cfg.m_v, cfg.m_h, cfg.n_soundings];
        let zeros = OffGridParams::zeros(grid);
        let f = |axis: Axis| axis_factor(grid, axis, obs_dims[axis.index()], zeros.axis(axis));
        let (b, cv, ch, d) = (
            f(Axis::Delay),
            f(Axis::Elevation),
            f(Axis::Azimuth),
            f(Axis::Doppler),
        );
        let row_coef = Axis::ALL.map(|axis| {
            (0..obs_dims[axis.index()])
                .map(|r| phase_rate(grid, axis, r))
                .collect::<Vec<_>>()
        });
        let base = Kron4::new([&b, &cv, &ch, &d]);
        let mut dict = Self {
            grid: grid.clone(),
            obs_dims,
            b,
            cv,
            ch,
            d,
            row_coef,
            dots: [base.clone(), base.clone(), base.clone(), base.clone()],
            base,
        };
        dict.dots = Axis::ALL.map(|axis| {
            let mut f = [dict.b.clone(), dict.cv.clone(), dict.ch.clone(), dict.d.clone()];
            f[axis.index()] = dict.factor_dot(axis);
            Kron4::new([&f[0], &f[1], &f[2], &f[3]])
        });
        Ok(dict)
    }

    pub fn nrows(&self) -> usize {
        self.obs_dims.iter().product()
    }

    pub fn ncols(&self) -> usize {
        self.grid.n_cols()
    }

    /// Zero-offset factor of `axis`.
    pub fn factor(&self, axis: Axis) -> &CMat {
        match axis {
            Axis::Delay => &self.b,
            Axis::Elevation => &self.cv,
            Axis::Azimuth => &self.ch,
            Axis::Doppler => &self.d,
        }
    }

    /// Derivative factor `Ḟ_x = diag(j·a_x)·F_x`.
    pub fn factor_dot(&self, axis: Axis) -> CMat {
        let f = self.factor(axis);
        let a = &self.row_coef[axis.index()];
        CMat::from_fn(f.nrows(), f.ncols(), |r, c| {
            f[(r, c)] * C64::new(0.0, a[r])
        })
    }

    /// Exact factor of `axis` at offsets `off`.
    pub fn factor_at(&self, axis: Axis, off: &[f64]) -> CMat {
        axis_factor(&self.grid, axis, self.obs_dims[axis.index()], off)
    }

    /// Column-to-axis-index map (the replication map `R_x` as an index array).
    pub fn r_map(&self, axis: Axis) -> Vec<usize> {
        (0..self.ncols())
            .map(|c| self.grid.col_coords(c)[axis.index()])
            .collect()
    }

    /// Row-to-observation-index map for `axis`.
    pub fn row_map(&self, axis: Axis) -> Vec<usize> {
        let [n, mv, mh, k] = self.obs_dims;
        (0..self.nrows())
            .map(|r| {
                let kk = r % k;
                let rest = r / k;
                let mhh = rest % mh;
                let rest = rest / mh;
                let mvv = rest % mv;
                let nn = rest / mv;
                debug_assert!(nn < n);
                [nn, mvv, mhh, kk][axis.index()]
            })
            .collect()
    }

    /// `R_x x`: the per-column expansion of an axis offset vector.
    pub fn replicate(&self, axis: Axis, x: &[f64]) -> Vec<f64> {
        self.r_map(axis).into_iter().map(|i| x[i]).collect()
    }

    /// `a_x(r)` expanded over all rows.
    pub fn row_coef_full(&self, axis: Axis) -> Vec<f64> {
        let a = &self.row_coef[axis.index()];
        self.row_map(axis).into_iter().map(|i| a[i]).collect()
    }

    /// Dense zeroth-order `W`.
    pub fn w_dense(&self) -> CMat {
        kron(&kron(&kron(&self.b, &self.cv), &self.ch), &self.d)
    }

    /// Dense derivative operator `Ẇ_x`.
    pub fn wdot_dense(&self, axis: Axis) -> CMat {
        let mut f = [self.b.clone(), self.cv.clone(), self.ch.clone(), self.d.clone()];
        f[axis.index()] = self.factor_dot(axis);
        kron(&kron(&kron(&f[0], &f[1]), &f[2]), &f[3])
    }

    /// Dense `W(ω) = W + Σ_x Ẇ_x·diag(R_x x)`.
    pub fn compose_dense(&self, omega: &OffGridParams) -> Result<CMat> {
        omega.check_shape(&self.grid)?;
        let mut w = self.w_dense();
        let rows: [Vec<f64>; 4] = Axis::ALL.map(|a| self.row_coef_full(a));
        let cols: [Vec<f64>; 4] = Axis::ALL.map(|a| self.replicate(a, omega.axis(a)));
        for c in 0..w.ncols() {
            for r in 0..w.nrows() {
                let s: f64 = (0..4).map(|x| rows[x][r] * cols[x][c]).sum();
                w[(r, c)] *= C64::new(1.0, s);
            }
        }
        Ok(w)
    }

    /// Composes `W(ω)` in the requested evaluation mode.
    pub fn compose(&self, omega: &OffGridParams, mode: OperatorMode) -> Result<ComposedOperator> {
        Ok(match mode {
            OperatorMode::Kron => ComposedOperator::Kron(TaylorOperator::new(self, omega)?),
            OperatorMode::Dense => {
                ComposedOperator::Dense(DenseOperator::new(self.compose_dense(omega)?))
            }
        })
    }

    /// Exact off-grid transform `W̃(ω) = B(α) ⊗ C_v(β) ⊗ C_h(γ) ⊗ D(η)`.
    pub fn exact(&self, omega: &OffGridParams) -> Result<ExactOperator> {
        omega.check_shape(&self.grid)?;
        let f = Axis::ALL.map(|a| self.factor_at(a, omega.axis(a)));
        Ok(ExactOperator {
            kron: Kron4::new([&f[0], &f[1], &f[2], &f[3]]),
            nrows: self.nrows(),
            ncols: self.ncols(),
        })
    }

    /// Applies the zero-offset `W` to one column vector.
    pub fn apply_w_vec(&self, x: &[C64]) -> Vec<C64> {
        self.base.apply_vec(x)
    }

    /// Applies `W^H` to one column vector.
    pub fn adjoint_w_vec(&self, y: &[C64]) -> Vec<C64> {
        self.base.adjoint_vec(y)
    }

    /// Applies the derivative operator `Ẇ_x` to one column vector.
    pub fn apply_wdot_vec(&self, axis: Axis, x: &[C64]) -> Vec<C64> {
        self.dots[axis.index()].apply_vec(x)
    }

    /// Applies `Ẇ_x^H` to one column vector.
    pub fn adjoint_wdot_vec(&self, axis: Axis, y: &[C64]) -> Vec<C64> {
        self.dots[axis.index()].adjoint_vec(y)
    }

    /// Σ_r a_x(r)·a_y(r) over all observation rows.
    pub fn row_coef_gram(&self) -> [[f64; 4]; 4] {
        let sums: [f64; 4] = Axis::ALL.map(|a| self.row_coef[a.index()].iter().sum());
        let sq: [f64; 4] = Axis::ALL.map(|a| self.row_coef[a.index()].iter().map(|v| v * v).sum());
        let n_rows = self.nrows() as f64;
        let mut g = [[0.0; 4]; 4];
        for x in 0..4 {
            for y in 0..4 {
                g[x][y] = if x == y {
                    sq[x] * n_rows / self.obs_dims[x] as f64
                } else {
                    sums[x] * sums[y] * n_rows
                        / (self.obs_dims[x] as f64 * self.obs_dims[y] as f64)
                };
            }
        }
        g
    }
}

fn check_in(op: &impl LinearOperator, x: &CMat) -> Result<()> {
    check_rows("input", x.nrows(), op.ncols())
}

fn check_out(op: &impl LinearOperator, y: &CMat) -> Result<()> {
    check_rows("input", y.nrows(), op.nrows())
}

/// `W(ω)` evaluated as a sum of Kronecker terms with closed-form variance sums.
#[derive(Debug, Clone)]
pub struct TaylorOperator {
    terms: Vec<Kron4>,
    nrows: usize,
    ncols: usize,
    /// `a_x(r)` over all rows, for axes with non-zero offsets.
    rows: Vec<Vec<f64>>,
    /// `o_x(c) = (R_x x)_c`, for the same axes.
    cols: Vec<Vec<f64>>,
}

impl TaylorOperator {
    pub fn new(dict: &DictionarySet, omega: &OffGridParams) -> Result<Self> {
        omega.check_shape(&dict.grid)?;
        let mut terms = Vec::new();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut merged = false;
        for axis in Axis::ALL {
            let off = omega.axis(axis);
            if off.iter().all(|&v| v == 0.0) {
                continue;
            }
            let fdot = dict.factor_dot(axis);
            let scaled = CMat::from_fn(fdot.nrows(), fdot.ncols(), |r, c| fdot[(r, c)] * off[c]);
            let mut f = [dict.b.clone(), dict.cv.clone(), dict.ch.clone(), dict.d.clone()];
            f[axis.index()] = if merged {
                scaled
            } else {
                merged = true;
                &f[axis.index()] + scaled
            };
            terms.push(Kron4::new([&f[0], &f[1], &f[2], &f[3]]));
            rows.push(dict.row_coef_full(axis));
            cols.push(dict.replicate(axis, off));
        }
        if !merged {
            terms.push(dict.base.clone());
        }
        Ok(Self {
            terms,
            nrows: dict.nrows(),
            ncols: dict.ncols(),
            rows,
            cols,
        })
    }

    fn accumulate(&self, x: &CMat, adjoint: bool) -> CMat {
        let (n_in, n_out) = if adjoint {
            (self.nrows, self.ncols)
        } else {
            (self.ncols, self.nrows)
        };
        let mut out = CMat::zeros(n_out, x.ncols());
        for l in 0..x.ncols() {
            let src = &x.as_slice()[l * n_in..(l + 1) * n_in];
            let dst = &mut out.as_mut_slice()[l * n_out..(l + 1) * n_out];
            for t in &self.terms {
                let v = if adjoint {
                    t.adjoint_vec(src)
                } else {
                    t.apply_vec(src)
                };
                for (d, s) in dst.iter_mut().zip(v) {
                    *d += s;
                }
            }
        }
        out
    }
}

/// Closed-form `|W(ω)|^{∘2}` products using `|W(ω)_{rc}|² = 1 + s_{rc}²`.
fn taylor_abs2(
    v: &RMat,
    n_out: usize,
    out_coef: &[Vec<f64>],
    in_coef: &[Vec<f64>],
) -> RMat {
    let n_in = v.nrows();
    let k = out_coef.len();
    let mut out = RMat::zeros(n_out, v.ncols());
    for l in 0..v.ncols() {
        let col = &v.as_slice()[l * n_in..(l + 1) * n_in];
        let total: f64 = col.iter().sum();
        let mut pair = vec![0.0; k * k];
        for x in 0..k {
            for y in x..k {
                let s: f64 = col
                    .iter()
                    .zip(in_coef[x].iter().zip(in_coef[y].iter()))
                    .map(|(w, (a, b))| w * a * b)
                    .sum();
                pair[x * k + y] = s;
            }
        }
        let dst = &mut out.as_mut_slice()[l * n_out..(l + 1) * n_out];
        for (r, d) in dst.iter_mut().enumerate() {
            let mut acc = total;
            for x in 0..k {
                let ax = out_coef[x][r];
                acc += ax * ax * pair[x * k + x];
                for y in x + 1..k {
                    acc += 2.0 * ax * out_coef[y][r] * pair[x * k + y];
                }
            }
            *d = acc;
        }
    }
    out
}

impl LinearOperator for TaylorOperator {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &CMat) -> Result<CMat> {
        check_in(self, x)?;
        Ok(self.accumulate(x, false))
    }
    fn apply_adjoint(&self, y: &CMat) -> Result<CMat> {
        check_out(self, y)?;
        Ok(self.accumulate(y, true))
    }
    fn abs2_apply(&self, v: &RMat) -> Result<RMat> {
        check_rows("weights", v.nrows(), self.ncols)?;
        Ok(taylor_abs2(v, self.nrows, &self.rows, &self.cols))
    }
    fn abs2_apply_adjoint(&self, e: &RMat) -> Result<RMat> {
        check_rows("weights", e.nrows(), self.nrows)?;
        Ok(taylor_abs2(e, self.ncols, &self.cols, &self.rows))
    }
}

/// Explicit dense operator with cached squared magnitudes.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub mat: CMat,
    abs2: RMat,
}

impl DenseOperator {
    pub fn new(mat: CMat) -> Self {
        let abs2 = mat.map(|z| z.norm_sqr());
        Self { mat, abs2 }
    }
}

impl LinearOperator for DenseOperator {
    fn nrows(&self) -> usize {
        self.mat.nrows()
    }
    fn ncols(&self) -> usize {
        self.mat.ncols()
    }
    fn apply(&self, x: &CMat) -> Result<CMat> {
        check_in(self, x)?;
        Ok(&self.mat * x)
    }
    fn apply_adjoint(&self, y: &CMat) -> Result<CMat> {
        check_out(self, y)?;
        Ok(self.mat.ad_mul(y))
    }
    fn abs2_apply(&self, v: &RMat) -> Result<RMat> {
        check_rows("weights", v.nrows(), self.ncols())?;
        Ok(&self.abs2 * v)
    }
    fn abs2_apply_adjoint(&self, e: &RMat) -> Result<RMat> {
        check_rows("weights", e.nrows(), self.nrows())?;
        Ok(self.abs2.tr_mul(e))
    }
}

/// Exact off-grid transform; all entries have unit modulus.
#[derive(Debug, Clone)]
pub struct ExactOperator {
    kron: Kron4,
    nrows: usize,
    ncols: usize,
}

impl ExactOperator {
    pub fn to_dense(&self) -> CMat {
        let f = &self.kron.fwd;
        let m = |k: &Factor| CMat::from_row_slice(k.rows, k.cols, &k.data);
        kron(&kron(&kron(&m(&f[0]), &m(&f[1])), &m(&f[2])), &m(&f[3]))
    }
}

fn unit_modulus_abs2(v: &RMat, n_out: usize) -> RMat {
    let mut out = RMat::zeros(n_out, v.ncols());
    for l in 0..v.ncols() {
        let s = v.column(l).sum();
        out.column_mut(l).fill(s);
    }
    out
}

impl LinearOperator for ExactOperator {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &CMat) -> Result<CMat> {
        check_in(self, x)?;
        let mut out = CMat::zeros(self.nrows, x.ncols());
        for l in 0..x.ncols() {
            let v = self.kron.apply_vec(&x.as_slice()[l * self.ncols..(l + 1) * self.ncols]);
            out.column_mut(l).copy_from_slice(&v);
        }
        Ok(out)
    }
    fn apply_adjoint(&self, y: &CMat) -> Result<CMat> {
        check_out(self, y)?;
        let mut out = CMat::zeros(self.ncols, y.ncols());
        for l in 0..y.ncols() {
            let v = self
                .kron
                .adjoint_vec(&y.as_slice()[l * self.nrows..(l + 1) * self.nrows]);
            out.column_mut(l).copy_from_slice(&v);
        }
        Ok(out)
    }
    fn abs2_apply(&self, v: &RMat) -> Result<RMat> {
        check_rows("weights", v.nrows(), self.ncols)?;
        Ok(unit_modulus_abs2(v, self.nrows))
    }
    fn abs2_apply_adjoint(&self, e: &RMat) -> Result<RMat> {
        check_rows("weights", e.nrows(), self.nrows)?;
        Ok(unit_modulus_abs2(e, self.ncols))
    }
}

/// A composed `W(ω)` in either evaluation mode.
#[derive(Debug, Clone)]
pub enum ComposedOperator {
    Kron(TaylorOperator),
    Dense(DenseOperator),
}

impl LinearOperator for ComposedOperator {
    fn nrows(&self) -> usize {
        match self {
            Self::Kron(o) => o.nrows(),
            Self::Dense(o) => o.nrows(),
        }
    }
    fn ncols(&self) -> usize {
        match self {
            Self::Kron(o) => o.ncols(),
            Self::Dense(o) => o.ncols(),
        }
    }
    fn apply(&self, x: &CMat) -> Result<CMat> {
        match self {
            Self::Kron(o) => o.apply(x),
            Self::Dense(o) => o.apply(x),
        }
    }
    fn apply_adjoint(&self, y: &CMat) -> Result<CMat> {
        match self {
            Self::Kron(o) => o.apply_adjoint(y),
            Self::Dense(o) => o.apply_adjoint(y),
        }
    }
    fn abs2_apply(&self, v: &RMat) -> Result<RMat> {
        match self {
            Self::Kron(o) => o.abs2_apply(v),
            Self::Dense(o) => o.abs2_apply(v),
        }
    }
    fn abs2_apply_adjoint(&self, e: &RMat) -> Result<RMat> {
        match self {
            Self::Kron(o) => o.abs2_apply_adjoint(e),
            Self::Dense(o) => o.abs2_apply_adjoint(e),
        }
    }
}

/// Column subset of an operator, with the map back to the full grid.
#[derive(Debug, Clone)]
pub struct PrunedOperator<O> {
    inner: O,
    cols: Vec<usize>,
}

/// Restricts `op` to the columns where `mask` is set.
pub fn prune<O: LinearOperator>(op: O, mask: &[bool]) -> Result<PrunedOperator<O>> {
    if mask.len() != op.ncols() {
        return Err(shape_err(
            format!("mask of length {}", op.ncols()),
            format!("{}", mask.len()),
        ));
    }
    let cols: Vec<usize> = (0..mask.len()).filter(|&c| mask[c]).collect();
    if cols.is_empty() {
        return Err(Error::InvalidArgument("pruning mask selects no columns".into()));
    }
    Ok(PrunedOperator { inner: op, cols })
}

impl<O: LinearOperator> PrunedOperator<O> {
    /// Full-grid column index of each retained column.
    pub fn columns(&self) -> &[usize] {
        &self.cols
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    /// Scatters a reduced `|active| × L` matrix into the full grid (zeros elsewhere).
    pub fn scatter(&self, x: &CMat) -> CMat {
        let mut full = CMat::zeros(self.inner.ncols(), x.ncols());
        for (i, &c) in self.cols.iter().enumerate() {
            for l in 0..x.ncols() {
                full[(c, l)] = x[(i, l)];
            }
        }
        full
    }

    fn scatter_real(&self, x: &RMat) -> RMat {
        let mut full = RMat::zeros(self.inner.ncols(), x.ncols());
        for (i, &c) in self.cols.iter().enumerate() {
            for l in 0..x.ncols() {
                full[(c, l)] = x[(i, l)];
            }
        }
        full
    }
}

impl<O: LinearOperator> LinearOperator for PrunedOperator<O> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.cols.len()
    }
    fn apply(&self, x: &CMat) -> Result<CMat> {
        check_in(self, x)?;
        self.inner.apply(&self.scatter(x))
    }
    fn apply_adjoint(&self, y: &CMat) -> Result<CMat> {
        let full = self.inner.apply_adjoint(y)?;
        Ok(full.select_rows(self.cols.iter()))
    }
    fn abs2_apply(&self, v: &RMat) -> Result<RMat> {
        check_rows("weights", v.nrows(), self.cols.len())?;
        self.inner.abs2_apply(&self.scatter_real(v))
    }
    fn abs2_apply_adjoint(&self, e: &RMat) -> Result<RMat> {
        let full = self.inner.abs2_apply_adjoint(e)?;
        Ok(full.select_rows(self.cols.iter()))
    }
}

impl<O: LinearOperator + ?Sized> LinearOperator for &O {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn apply(&self, x: &CMat) -> Result<CMat> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &CMat) -> Result<CMat> {
        (**self).apply_adjoint(y)
    }
    fn abs2_apply(&self, v: &RMat) -> Result<RMat> {
        (**self).abs2_apply(v)
    }
    fn abs2_apply_adjoint(&self, e: &RMat) -> Result<RMat> {
        (**self).abs2_apply_adjoint(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steering::{steering_delay, steering_doppler, steering_space};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg(k_over: usize) -> SystemConfig {
        let mut c = SystemConfig::desk();
        c.n_sc = 2 * 4 * 4;
        c.srs_len = 2;
        c.m_v = 2;
        c.m_h = 2;
        c.n_soundings = 2;
        c.doppler_oversample = k_over;
        c
    }

    fn setup(cfg: &SystemConfig) -> DictionarySet {
        DictionarySet::new(&GridSpec::from_config(cfg), cfg).unwrap()
    }

    fn rand_cmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn rand_omega(rng: &mut ChaCha8Rng, g: &GridSpec, scale: f64) -> OffGridParams {
        let mut w = OffGridParams::zeros(g);
        for axis in Axis::ALL {
            let h = 0.5 * g.spacing(axis) * scale;
            for v in w.axis_mut(axis).iter_mut() {
                *v = (2.0 * rng.random::<f64>() - 1.0) * h;
            }
        }
        w
    }

    /// Column built from the steering functions with explicit index loops.
    fn steering_column(cfg: &SystemConfig, g: &GridSpec, c: usize, w: &OffGridParams) -> Vec<C64> {
        let [n, mv, mh, k] = g.col_coords(c);
        let b = steering_delay(g.delay(n) + w.alpha[n], cfg.srs_len, cfg.delta_f());
        let cv = steering_space(g.elev_cos(mv) + w.beta[mv], cfg.m_v);
        let ch = steering_space(g.azim_cos(mh) + w.gamma[mh], cfg.m_h);
        let d = steering_doppler(g.doppler(k) + w.eta[k], cfg.n_soundings, cfg.delta_big_t);
        let mut out = Vec::new();
        for bn in &b {
            for cvm in &cv {
                for chm in &ch {
                    for dk in &d {
                        out.push(bn * cvm * chm * dk);
                    }
                }
            }
        }
        out
    }

    fn rel(a: &CMat, b: &CMat) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn tiny_dictionary_is_unit_modulus() {
        let mut cfg = tiny_cfg(1);
        cfg.n_soundings = 2;
        let d = setup(&cfg);
        let w = d.w_dense();
        assert_eq!(w.shape(), (16, 16));
        assert!(w.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn delay_derivative_at_zero_delay() {
        let cfg = SystemConfig::desk();
        let d = setup(&cfg);
        let bd = d.factor_dot(Axis::Delay);
        for n in 0..cfg.srs_len {
            let want = C64::new(0.0, -2.0 * PI * n as f64 * cfg.delta_f());
            assert!((bd[(n, 0)] - want).norm() < 1e-6);
        }
    }

    #[test]
    fn dense_w_matches_steering_columns() {
        let cfg = SystemConfig::desk();
        let d = setup(&cfg);
        let g = d.grid.clone();
        let w = d.w_dense();
        let zero = OffGridParams::zeros(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = rng.random_range(0..g.n_cols());
            let col = steering_column(&cfg, &g, c, &zero);
            let norm2: f64 = w.column(c).iter().map(|z| z.norm_sqr()).sum();
            assert!((norm2 - cfg.n_rows() as f64).abs() < 1e-9);
            for (r, z) in col.iter().enumerate() {
                assert!((w[(r, c)] - z).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn compose_zero_is_w_and_single_axis_is_local() {
        let cfg = tiny_cfg(2);
        let d = setup(&cfg);
        let g = d.grid.clone();
        let mut w = OffGridParams::zeros(&g);
        assert_eq!(d.compose_dense(&w).unwrap(), d.w_dense());
        w.alpha[0] = 0.3 * g.spacing(Axis::Delay);
        let wc = d.compose_dense(&w).unwrap();
        let w0 = d.w_dense();
        for c in 0..g.n_cols() {
            let same = (wc.column(c) - w0.column(c)).norm() == 0.0;
            assert_eq!(same, g.col_coords(c)[0] != 0);
        }
    }

    #[test]
    fn compose_matches_per_column_taylor_oracle() {
        let cfg = tiny_cfg(2);
        let d = setup(&cfg);
        let g = d.grid.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = rand_omega(&mut rng, &g, 0.5);
        let wc = d.compose_dense(&w).unwrap();
        let zero = OffGridParams::zeros(&g);
        for c in 0..g.n_cols() {
            let base = steering_column(&cfg, &g, c, &zero);
            let [n, mv, mh, k] = g.col_coords(c);
            for (r, z) in base.iter().enumerate() {
                let kk = r % cfg.n_soundings;
                let mhh = (r / cfg.n_soundings) % cfg.m_h;
                let mvv = (r / (cfg.n_soundings * cfg.m_h)) % cfg.m_v;
                let nn = r / (cfg.n_soundings * cfg.m_h * cfg.m_v);
                let deriv = -2.0 * PI * nn as f64 * cfg.delta_f() * w.alpha[n]
                    - PI * mvv as f64 * w.beta[mv]
                    - PI * mhh as f64 * w.gamma[mh]
                    + 2.0 * PI * kk as f64 * cfg.delta_big_t * w.eta[k];
                let want = z + z * C64::new(0.0, deriv);
                assert!((wc[(r, c)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_matches_steering_and_translates() {
        let cfg = tiny_cfg(2);
        let d = setup(&cfg);
        let g = d.grid.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = rand_omega(&mut rng, &g, 1.0);
        let ex = d.exact(&w).unwrap().to_dense();
        for c in 0..g.n_cols() {
            for (r, z) in steering_column(&cfg, &g, c, &w).iter().enumerate() {
                assert!((ex[(r, c)] - z).norm() < 1e-12);
            }
        }
        let zero = OffGridParams::zeros(&g);
        assert!(rel(&d.exact(&zero).unwrap().to_dense(), &d.w_dense()) < 1e-15);
        let mut shift = OffGridParams::zeros(&g);
        shift.alpha[0] = g.spacing(Axis::Delay);
        let ex = d.exact(&shift).unwrap().to_dense();
        let w0 = d.w_dense();
        for c in 0..g.n_cols() {
            let [n, mv, mh, k] = g.col_coords(c);
            if n == 0 {
                let c1 = g.col_index(1, mv, mh, k);
                assert!((ex.column(c) - w0.column(c1)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn kron_apply_matches_dense_all_modes() {
        let cfg = SystemConfig::desk();
        let d = setup(&cfg);
        let g = d.grid.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for scale in [0.0, 0.7] {
            let w = rand_omega(&mut rng, &g, scale);
            let fast = d.compose(&w, OperatorMode::Kron).unwrap();
            let dense = d.compose(&w, OperatorMode::Dense).unwrap();
            let x = rand_cmat(&mut rng, g.n_cols(), 3);
            let y = rand_cmat(&mut rng, cfg.n_rows(), 3);
            assert!(rel(&fast.apply(&x).unwrap(), &dense.apply(&x).unwrap()) < 1e-10);
            assert!(rel(&fast.apply_adjoint(&y).unwrap(), &dense.apply_adjoint(&y).unwrap()) < 1e-10);
            let v = RMat::from_fn(g.n_cols(), 2, |_, _| rng.random::<f64>());
            let e = RMat::from_fn(cfg.n_rows(), 2, |_, _| rng.random::<f64>());
            let a = fast.abs2_apply(&v).unwrap();
            let b = dense.abs2_apply(&v).unwrap();
            assert!((&a - &b).norm() / b.norm() < 1e-8);
            let a = fast.abs2_apply_adjoint(&e).unwrap();
            let b = dense.abs2_apply_adjoint(&e).unwrap();
            assert!((&a - &b).norm() / b.norm() < 1e-8);
        }
    }

    #[test]
    fn abs2_examples() {
        let cfg = SystemConfig::desk();
        let d = setup(&cfg);
        let op = d.compose(&OffGridParams::zeros(&d.grid), OperatorMode::Kron).unwrap();
        let ones = vec![1.0; d.ncols()];
        let rs = abs2_row_sums(&op, &ones).unwrap();
        assert!(rs.iter().all(|&v| (v - d.ncols() as f64).abs() < 1e-9));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = rand_omega(&mut rng, &d.grid, 1.0);
        let op = d.compose(&w, OperatorMode::Kron).unwrap();
        let dense = d.compose_dense(&w).unwrap();
        let mut one = vec![0.0; d.ncols()];
        one[77] = 1.0;
        let rs = abs2_row_sums(&op, &one).unwrap();
        for (r, v) in rs.iter().enumerate() {
            assert!((v - dense[(r, 77)].norm_sqr()).abs() < 1e-9 * v.max(1.0));
        }
        let cs = abs2_col_sums(&op, &vec![1.0; d.nrows()]).unwrap();
        assert!((cs[77] - dense.column(77).norm_squared()).abs() < 1e-8 * cs[77]);
    }

    #[test]
    fn apply_edges_and_shapes() {
        let cfg = SystemConfig::desk();
        let d = setup(&cfg);
        let op = d.compose(&OffGridParams::zeros(&d.grid), OperatorMode::Kron).unwrap();
        let z = CMat::zeros(d.ncols(), 2);
        assert_eq!(op.apply(&z).unwrap().norm(), 0.0);
        let mut e = CMat::zeros(d.ncols(), 1);
        e[(123, 0)] = C64::new(1.0, 0.0);
        let col = op.apply(&e).unwrap();
        assert!((col.column(0) - d.w_dense().column(123)).norm() < 1e-12);
        assert!(matches!(op.apply(&CMat::zeros(5, 1)), Err(Error::Shape { .. })));
        assert!(matches!(op.apply_adjoint(&CMat::zeros(5, 1)), Err(Error::Shape { .. })));
    }

    #[test]
    fn gram_is_scaled_identity_without_oversampling() {
        let mut cfg = SystemConfig::desk();
        cfg.doppler_oversample = 1;
        let d = setup(&cfg);
        let w = d.w_dense();
        let gram = w.ad_mul(&w);
        let nmk = cfg.n_rows() as f64;
        let target = CMat::identity(w.ncols(), w.ncols()) * C64::new(nmk, 0.0);
        assert!((gram - target).norm() / nmk < 1e-9);
        for (axis, m) in [
            (Axis::Delay, cfg.srs_len),
            (Axis::Elevation, cfg.m_v),
            (Axis::Azimuth, cfg.m_h),
        ] {
            let f = d.factor(axis);
            let gram = f.ad_mul(f);
            let id = CMat::identity(m, m) * C64::new(m as f64, 0.0);
            assert!((gram - id).norm() < 1e-9 * m as f64);
        }
    }

    /// Least-squares slope of log(gap) against log(t).
    fn loglog_slope(ts: &[f64], gaps: &[f64]) -> f64 {
        let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }

    #[test]
    fn taylor_remainder_is_second_order() {
        let cfg = SystemConfig::desk();
        let d = setup(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ts = [1.0, 0.5, 0.25, 0.125];
        for _ in 0..3 {
            let w = rand_omega(&mut rng, &d.grid, 1.0);
            let gaps: Vec<f64> = ts
                .iter()
                .map(|&t| {
                    let wt = w.scaled(t);
                    (d.exact(&wt).unwrap().to_dense() - d.compose_dense(&wt).unwrap()).norm()
                })
                .collect();
            let slope = loglog_slope(&ts, &gaps);
            assert!((slope - 2.0).abs() < 0.2, "slope {slope} gaps {gaps:?}");
        }
    }

    #[test]
    fn prune_restricts_columns() {
        let cfg = tiny_cfg(2);
        let d = setup(&cfg);
        let op = d.compose(&OffGridParams::zeros(&d.grid), OperatorMode::Dense).unwrap();
        let all = vec![true; d.ncols()];
        let p = prune(&op, &all).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_cmat(&mut rng, d.ncols(), 2);
        assert!(rel(&p.apply(&x).unwrap(), &op.apply(&x).unwrap()) < 1e-15);
        let mut mask = vec![false; d.ncols()];
        mask[3] = true;
        mask[10] = true;
        let p = prune(&op, &mask).unwrap();
        assert_eq!(p.ncols(), 2);
        assert_eq!(p.columns(), &[3, 10]);
        let y = rand_cmat(&mut rng, d.nrows(), 1);
        let a = p.apply_adjoint(&y).unwrap();
        let full = op.apply_adjoint(&y).unwrap();
        assert_eq!(a[(1, 0)], full[(10, 0)]);
        assert!(prune(&op, &vec![false; d.ncols()]).is_err());
    }

    #[test]
    fn row_coef_gram_matches_brute_force() {
        let cfg = SystemConfig::desk();
        let d = setup(&cfg);
        let g = d.row_coef_gram();
        let full: Vec<Vec<f64>> = Axis::ALL.iter().map(|&a| d.row_coef_full(a)).collect();
        for x in 0..4 {
            for y in 0..4 {
                let want: f64 = full[x].iter().zip(&full[y]).map(|(a, b)| a * b).sum();
                assert!((g[x][y] - want).abs() <= 1e-9 * want.abs().max(1e-300));
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn adjoint_identity(seed in 0u64..1000, scale in 0.0f64..1.0) {
            let cfg = SystemConfig::desk();
            let d = setup(&cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = rand_omega(&mut rng, &d.grid, scale);
            let op = d.compose(&w, OperatorMode::Kron).unwrap();
            let x = rand_cmat(&mut rng, d.ncols(), 1);
            let y = rand_cmat(&mut rng, d.nrows(), 1);
            let lhs = op.apply(&x).unwrap().dotc(&y);
            let rhs = x.dotc(&op.apply_adjoint(&y).unwrap());
            proptest::prop_assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
        }

        #[test]
        fn replication_is_constant_per_slice(seed in 0u64..1000) {
            let cfg = SystemConfig::desk();
            let d = setup(&cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = rand_omega(&mut rng, &d.grid, 1.0);
            for axis in Axis::ALL {
                let rep = d.replicate(axis, w.axis(axis));
                for (c, v) in rep.iter().enumerate() {
                    proptest::prop_assert_eq!(*v, w.axis(axis)[d.grid.col_coords(c)[axis.index()]]);
                }
            }
        }
    }
}
