"""Static condensation: per-cell elimination onto the trace unknowns.

Hybridization makes A11 block diagonal over cells, so the trace Schur
complement S = A22 - A21 A11^-1 A21^T is assembled cell by cell, exactly,
and back-substitution is a local solve per cell.  The same elimination
applied to a preconditioner inner product produces the reduced
preconditioner S_P; positivity of its cell blocks is certified by
Cholesky.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import BlockSystem

__all__ = ["CondensedSystem", "condense", "condense_precond",
           "back_substitute", "local_solve"]


@dataclass
class CondensedSystem:
    """Trace system with the per-cell data needed for back-substitution."""

    system: BlockSystem
    S: sp.csr_matrix
    rhs: np.ndarray
    lu_factors: list
    null_vectors: tuple = ()

    @property
    def n_trace(self) -> int:
        return self.S.shape[0]

    def trace_values_local(self, cell: int, xbar: np.ndarray) -> np.ndarray:
        """Local trace coefficients of a cell: free entries from xbar,
        fixed entries from the Dirichlet data lifted at assembly (zero,
        because their effect already sits in rhs_cell)."""
        tids = self.system.tids[cell]
        vals = np.zeros(tids.shape[0])
        free = tids >= 0
        vals[free] = xbar[tids[free]]
        return vals


def _eliminate(system: BlockSystem, factor, solve, spd_error: str | None):
    nc = system.a11.shape[0]
    n = system.n_trace
    factors = []
    rows, cols, vals = [], [], []
    rhs = system.rhs_trace.copy()
    for c in range(nc):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                fac = factor(system.a11[c])
            if not isinstance(fac[1], (bool, np.bool_)):  # LU path: check pivots
                diag = np.abs(np.diag(fac[0]))
                if diag.size and (diag.min() == 0.0 or not np.isfinite(diag).all()):
                    raise np.linalg.LinAlgError("zero pivot")
        except (np.linalg.LinAlgError, ValueError) as exc:
            if spd_error:
                raise ValueError(f"{spd_error} (cell {c})") from exc
            raise ValueError(f"singular local block in cell {c}") from exc
        factors.append(fac)
        tids = system.tids[c]
        free = tids >= 0
        if not free.any():
            continue
        a21 = system.a21[c][free]
        X = solve(fac, a21.T)  # A11^-1 A21^T
        contrib = a21 @ X
        tfree = tids[free]
        r = np.repeat(tfree, tfree.size)
        rows.append(r)
        cols.append(np.tile(tfree, tfree.size))
        vals.append(-contrib.ravel())
        rhs[tfree] -= a21 @ solve(fac, system.rhs_cell[c])
    S = system.a22.copy().tocsr()
    if rows:
        S = (S + sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr())
    return S, rhs, factors


def _reduced_null(system: BlockSystem):
    out = []
    for z in system.null_vectors:
        _, zbar = system.layout.split(np.asarray(z))
        if np.linalg.norm(zbar) > 0:
            out.append(zbar / np.linalg.norm(zbar))
    return tuple(out)


def condense(system: BlockSystem) -> CondensedSystem:
    """Eliminate cell dofs of a scheme operator (LU with partial pivoting;
    local Darcy/Stokes blocks are indefinite but invertible)."""
    if system.coupling is not None and system.coupling.nnz and np.abs(system.a21).max() > 0:
        raise ValueError("cross-cell coupling with trace-coupled cells is not condensable")
    S, rhs, factors = _eliminate(system, sla.lu_factor, sla.lu_solve, None)
    return CondensedSystem(system, S, rhs, factors, null_vectors=_reduced_null(system))


def condense_precond(inner: BlockSystem) -> CondensedSystem:
    """Eliminate cell dofs of an inner product; every local block must be
    symmetric positive definite for the reduced operator to define an
    inner product."""
    if inner.coupling is not None and inner.coupling.nnz:
        if np.abs(inner.a21).max() > 0:
            raise ValueError("coupled P11 with nonzero P21 is not condensable")
        # P21 = 0: the reduced operator is exactly P22
        return CondensedSystem(inner, inner.a22.copy().tocsr(),
                               inner.rhs_trace.copy(), [],
                               null_vectors=_reduced_null(inner))
    S, rhs, factors = _eliminate(
        inner, sla.cho_factor, sla.cho_solve,
        "P11 cell block is not positive definite")
    return CondensedSystem(inner, S, rhs, factors, null_vectors=_reduced_null(inner))


def back_substitute(condensed: CondensedSystem, xbar: np.ndarray) -> np.ndarray:
    """Recover the monolithic solution from the trace solution.

    Per cell: cell dofs = A11^-1 (rhs_cell - A21^T xbar_local); returns the
    monolithic free vector [cells; trace]."""
    system = condensed.system
    nc = system.a11.shape[0]
    solve = sla.cho_solve if _is_chol(condensed) else sla.lu_solve
    cells = np.empty_like(system.rhs_cell)
    for c in range(nc):
        rhs = system.rhs_cell[c] - system.a21[c].T @ condensed.trace_values_local(c, xbar)
        cells[c] = solve(condensed.lu_factors[c], rhs)
    return np.concatenate([cells.ravel(), xbar])


def _is_chol(condensed: CondensedSystem) -> bool:
    if not condensed.lu_factors:
        return False
    fac = condensed.lu_factors[0]
    return isinstance(fac, tuple) and isinstance(fac[1], (bool, np.bool_))


def local_solve(condensed: CondensedSystem, cell: int, trace_values: np.ndarray,
                source: np.ndarray | None = None) -> np.ndarray:
    """Cell coefficients for given local trace data and local load vector
    (the local solvers l_.(xbar) + (.)^f; linear in both arguments)."""
    system = condensed.system
    rhs = np.zeros(system.a11.shape[1]) if source is None else np.asarray(source, dtype=float).copy()
    rhs -= system.a21[cell].T @ np.asarray(trace_values, dtype=float)
    solve = sla.cho_solve if _is_chol(condensed) else sla.lu_solve
    return solve(condensed.lu_factors[cell], rhs)
