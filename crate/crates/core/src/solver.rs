//! Crank–Nicolson integration of the reduced differential-algebraic system
//!
//! ```text
//! D P' + M P + Q Λ = S(t)
//!      Qᵀ P + N Λ = T(t)
//! ```
//!
//! Each step first solves the interface system for `Λ` by conjugate gradients,
//! then recovers `P` with independent subdomain solves.

use std::time::Instant;

use nalgebra::{DMatrixViewMut, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{assemble_rhs, assemble_system, initial_pressure, schur_blocks, PermeabilityField, RhsData, SchurBlocks};
use crate::error::{Result, SolverError};
use crate::mesh::HierMesh;
use crate::problems::ProblemSpec;
use crate::sparse::{diag, spmv};

/// Equidistant time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
    pub tau: f64,
}

impl TimeGrid {
    pub fn from_steps(t_final: f64, steps: usize) -> Result<Self, SolverError> {
        if steps == 0 || !(t_final > 0.0) {
            return Err(SolverError::TimeGrid(format!("need t_final > 0 and at least one step, got {t_final} and {steps}")));
        }
        Ok(TimeGrid {
            t_final,
            steps,
            tau: t_final / steps as f64,
        })
    }

    /// Grid with step `tau`; `t_final / tau` must be an integer.
    pub fn from_tau(t_final: f64, tau: f64) -> Result<Self, SolverError> {
        if !(tau > 0.0) {
            return Err(SolverError::TimeGrid(format!("time step must be positive, got {tau}")));
        }
        let ratio = t_final / tau;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * steps {
            return Err(SolverError::TimeGrid(format!(
                "final time {t_final} is not a multiple of the step {tau}"
            )));
        }
        Self::from_steps(t_final, steps as usize)
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            n as f64 * self.tau
        }
    }
}

/// Inner solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSettings {
    /// Relative residual tolerance of the interface solves.
    pub tol: f64,
    /// Iteration cap as a multiple of the number of multipliers.
    pub max_iter_factor: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-10,
            max_iter_factor: 10,
        }
    }
}

impl SolverSettings {
    fn max_iter(&self, n: usize) -> usize {
        (self.max_iter_factor * n).max(20)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub n: usize,
    pub t: f64,
    pub p: DVector<f64>,
    pub lambda: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradients for a symmetric positive definite operator.
///
/// Stops once `‖b − A x‖ ≤ tol · min(‖b‖, 1)`, so the result meets both the
/// relative and the absolute tolerance. `x` holds the initial guess.
pub fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    x: &mut DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome, SolverError> {
    let bnorm = b.norm();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgOutcome {
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = tol * bnorm.min(1.0);
    let mut r = b - apply(x);
    let mut rr = r.dot(&r);
    if rr.sqrt() <= target {
        return Ok(CgOutcome {
            iterations: 0,
            residual: rr.sqrt(),
        });
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= target {
            // confirm with the true residual
            let true_r = (b - apply(x)).norm();
            if true_r <= target {
                return Ok(CgOutcome {
                    iterations: it,
                    residual: true_r,
                });
            }
            r = b - apply(x);
            rr = r.dot(&r);
            p = r.clone();
            continue;
        }
        p.axpy(1.0, &r, rr_new / rr);
        rr = rr_new;
    }
    let residual = (b - apply(x)).norm();
    if residual <= target {
        return Ok(CgOutcome {
            iterations: max_iter,
            residual,
        });
    }
    Err(SolverError::NoConvergence {
        residual,
        iterations: max_iter,
        target,
    })
}

/// Factorized subdomain matrices `D + (τ/2) M` for one step size.
pub struct CnOperators {
    pub tau: f64,
    factors: Vec<CscCholesky<f64>>,
    block_size: usize,
    pub settings: SolverSettings,
}

impl std::fmt::Debug for CnOperators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CnOperators")
            .field("tau", &self.tau)
            .field("blocks", &self.factors.len())
            .field("block_size", &self.block_size)
            .finish()
    }
}

impl CnOperators {
    pub fn new(blocks: &SchurBlocks, tau: f64, settings: SolverSettings) -> Result<Self, SolverError> {
        let factors = blocks
            .blocks
            .par_iter()
            .enumerate()
            .map(|(k, b)| {
                let kmat = &(&b.m * (0.5 * tau)) + &diag(&b.d);
                CscCholesky::factor(&CscMatrix::from(&kmat)).map_err(|_| SolverError::Factorization { block: k })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CnOperators {
            tau,
            factors,
            block_size: blocks.block_size,
            settings,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.factors.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Solve `(D_k + (τ/2) M_k) x = rhs` in place.
    fn solve_block_in_place(&self, k: usize, x: &mut [f64]) {
        let n = x.len();
        self.factors[k].solve_mut(DMatrixViewMut::from_slice(x, n, 1));
    }

    /// Solve `M̂_k x = b`, i.e. `(D_k + (τ/2) M_k) x = D_k b`, for subdomain `k`.
    pub fn subdomain_solve(&self, blocks: &SchurBlocks, k: usize, b: &[f64]) -> DVector<f64> {
        let d = &blocks.blocks[k].d;
        let mut x: Vec<f64> = b.iter().zip(d.iter()).map(|(bi, di)| bi * di).collect();
        self.solve_block_in_place(k, &mut x);
        DVector::from_vec(x)
    }

    /// Solve `(D + (τ/2) M) x = rhs` block by block, in parallel.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let s = self.block_size;
        let mut x = rhs.clone();
        x.as_mut_slice()
            .par_chunks_mut(s)
            .enumerate()
            .for_each(|(k, chunk)| self.solve_block_in_place(k, chunk));
        x
    }

    /// `(N − (τ/2) Qᵀ (D + (τ/2) M)⁻¹ Q) x`.
    pub fn interface_apply(&self, blocks: &SchurBlocks, x: &DVector<f64>) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = blocks
            .blocks
            .par_iter()
            .enumerate()
            .map(|(k, b)| {
                let mut y = spmv(&b.q, x.as_slice());
                self.solve_block_in_place(k, y.as_mut_slice());
                spmv(&b.qt, y.as_slice())
            })
            .collect();
        let mut out = blocks.n_mul(x);
        for part in &parts {
            out.axpy(-0.5 * self.tau, part, 1.0);
        }
        out
    }
}

/// Constraint residual `‖T − Qᵀ P − N Λ‖₂`.
pub fn constraint_residual(blocks: &SchurBlocks, t_vec: &DVector<f64>, p: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    if blocks.n_l == 0 {
        return 0.0;
    }
    (t_vec - blocks.qt_mul(p) - blocks.n_mul(lambda)).norm()
}

/// Multipliers consistent with `P0`: `N Λ0 = T(0) − Qᵀ P0`.
pub fn consistent_lambda0(
    blocks: &SchurBlocks,
    t0: &DVector<f64>,
    p0: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<(DVector<f64>, CgOutcome), SolverError> {
    let mut lambda = DVector::zeros(blocks.n_l);
    if blocks.n_l == 0 {
        return Ok((
            lambda,
            CgOutcome {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let rhs = t0 - blocks.qt_mul(p0);
    let out = conjugate_gradient(
        |x| blocks.n_mul(x),
        &rhs,
        &mut lambda,
        settings.tol,
        settings.max_iter(blocks.n_l),
    )?;
    Ok((lambda, out))
}

/// Right-hand sides at one time level.
#[derive(Debug, Clone)]
pub struct LevelRhs {
    pub s: DVector<f64>,
    pub t: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub cg: CgOutcome,
    pub constraint_residual: f64,
}

/// Advance one Crank–Nicolson step.
pub fn cn_step(
    state: &SolverState,
    ops: &CnOperators,
    blocks: &SchurBlocks,
    now: &LevelRhs,
    next: &LevelRhs,
    t_next: f64,
) -> Result<(SolverState, StepStats), SolverError> {
    let h = 0.5 * ops.tau;
    // z = (D − τ/2 M) Pⁿ + τ/2 (Sⁿ + Sⁿ⁺¹) − τ/2 Q Λⁿ
    let mp = blocks.m_mul(&state.p);
    let d = blocks.d();
    let mut z = state.p.component_mul(&d);
    z.axpy(-h, &mp, 1.0);
    z.axpy(h, &now.s, 1.0);
    z.axpy(h, &next.s, 1.0);
    if blocks.n_l > 0 {
        z.axpy(-h, &blocks.q_mul(&state.lambda), 1.0);
    }

    let mut lambda = state.lambda.clone();
    let mut cg = CgOutcome {
        iterations: 0,
        residual: 0.0,
    };
    if blocks.n_l > 0 {
        let p_star = ops.solve(&z);
        let rhs = &next.t - blocks.qt_mul(&p_star);
        cg = conjugate_gradient(
            |x| ops.interface_apply(blocks, x),
            &rhs,
            &mut lambda,
            ops.settings.tol,
            ops.settings.max_iter(blocks.n_l),
        )?;
        z.axpy(-h, &blocks.q_mul(&lambda), 1.0);
    }
    let p = ops.solve(&z);
    let constraint_residual = constraint_residual(blocks, &next.t, &p, &lambda);
    Ok((
        SolverState {
            n: state.n + 1,
            t: t_next,
            p,
            lambda,
        },
        StepStats {
            cg,
            constraint_residual,
        },
    ))
}

/// Mesh, permeability and reduced operators of one problem at one level.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: HierMesh,
    pub perm: PermeabilityField,
    pub blocks: SchurBlocks,
}

impl Discretization {
    pub fn new(pb: &ProblemSpec, level: u32) -> Result<Self> {
        let mesh = HierMesh::refine(pb.coarse.clone(), level)?;
        let perm = PermeabilityField::new(&mesh, &pb.permeability)?;
        let blocks = schur_blocks(&assemble_system(&mesh, &perm));
        Ok(Discretization { mesh, perm, blocks })
    }

    pub fn level_rhs(&self, pb: &ProblemSpec, t: f64) -> (RhsData, LevelRhs) {
        let data = assemble_rhs(&self.mesh, pb, t);
        let (s, tv) = self.blocks.rhs(&data);
        (data, LevelRhs { s, t: tv })
    }
}

/// Summary of one integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub cg_iterations_total: usize,
    pub cg_iterations_max: usize,
    pub lambda0_iterations: usize,
    pub max_constraint_residual: f64,
    pub wall_seconds: f64,
}

/// Integrate from `t = 0` to `t_final`, calling `observer` at `n = 0` and after
/// every accepted step with the state and the data vectors at that time.
pub fn integrate(
    pb: &ProblemSpec,
    disc: &Discretization,
    grid: &TimeGrid,
    settings: &SolverSettings,
    mut observer: impl FnMut(&SolverState, &RhsData),
) -> Result<(SolverState, RunStats)> {
    let start = Instant::now();
    let blocks = &disc.blocks;
    let ops = CnOperators::new(blocks, grid.tau, *settings)?;
    let p0 = initial_pressure(&disc.mesh, |x| (pb.p0)(x));
    let (mut data, mut now) = disc.level_rhs(pb, 0.0);
    let (lambda0, out0) = consistent_lambda0(blocks, &now.t, &p0, settings)?;
    let mut state = SolverState {
        n: 0,
        t: 0.0,
        p: p0,
        lambda: lambda0,
    };
    let mut stats = RunStats {
        steps: grid.steps,
        cg_iterations_total: 0,
        cg_iterations_max: 0,
        lambda0_iterations: out0.iterations,
        max_constraint_residual: constraint_residual(blocks, &now.t, &state.p, &state.lambda),
        wall_seconds: 0.0,
    };
    observer(&state, &data);
    for n in 0..grid.steps {
        let t_next = grid.time(n + 1);
        let (data_next, next) = disc.level_rhs(pb, t_next);
        let (new_state, st) = cn_step(&state, &ops, blocks, &now, &next, t_next).map_err(|e| SolverError::Step {
            step: n + 1,
            source: Box::new(e),
        })?;
        stats.cg_iterations_total += st.cg.iterations;
        stats.cg_iterations_max = stats.cg_iterations_max.max(st.cg.iterations);
        stats.max_constraint_residual = stats.max_constraint_residual.max(st.constraint_residual);
        state = new_state;
        data = data_next;
        now = next;
        observer(&state, &data);
    }
    stats.wall_seconds = start.elapsed().as_secs_f64();
    Ok((state, stats))
}

/// `‖x‖` in the norm induced by `D + (τ/2) M`.
pub fn energy_norm(blocks: &SchurBlocks, tau: f64, p: &DVector<f64>) -> f64 {
    let mut y = p.component_mul(&blocks.d());
    y.axpy(0.5 * tau, &blocks.m_mul(p), 1.0);
    y.dot(p).sqrt()
}
