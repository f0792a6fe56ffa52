"""Sparse direct factorizations, preconditioned CG/MINRES, and pencils.

Stopping rule for both Krylov drivers: relative preconditioned residual
sqrt(r' P^-1 r) / sqrt(r0' P^-1 r0) <= tol, zero initial guess.  Kernel
deflation projects the declared null vectors out of the right-hand side
and out of every operator application, keeping iterates orthogonal to
them.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "KrylovReport",
    "NotSymmetricPositiveDefinite",
    "factor_spd",
    "factor_sym_indef",
    "cg",
    "minres",
    "generalized_eigs",
    "as_operator",
]


class NotSymmetricPositiveDefinite(np.linalg.LinAlgError):
    pass


@dataclass
class KrylovReport:
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)
    final_relative: float = 0.0
    seconds: float = 0.0

    def write_csv(self, path) -> None:
        """Residual history as `iteration,residual` lines."""
        with open(path, "w") as fh:
            fh.write("iteration,residual\n")
            for i, r in enumerate(self.residuals, start=1):
                fh.write(f"{i},{r!r}\n")


def _as_csc(S):
    if sp.issparse(S):
        return S.tocsc()
    return sp.csc_matrix(np.asarray(S))


class Factor:
    def __init__(self, lu, spd: bool):
        self._lu = lu
        self.spd = spd

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float))

    __call__ = solve


def factor_spd(S) -> Factor:
    """Factor an SPD sparse matrix; doubles as the SPD certificate.

    SuperLU in symmetric mode with a zero diagonal-pivot threshold never
    pivots off the diagonal, so the factorization is Cholesky-like and a
    non-positive pivot certifies the matrix is not SPD.
    """
    A = _as_csc(S)
    try:
        lu = spla.splu(A, diag_pivot_thresh=0.0, permc_spec="MMD_AT_PLUS_A",
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:  # exactly singular
        raise NotSymmetricPositiveDefinite(str(exc)) from exc
    if lu.U.diagonal().min() <= 0.0:
        raise NotSymmetricPositiveDefinite("non-positive pivot: matrix is not SPD")
    return Factor(lu, spd=True)


def factor_sym_indef(S) -> Factor:
    """LU with partial pivoting for symmetric indefinite oracle solves."""
    A = _as_csc(S)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular matrix: {exc}") from exc
    return Factor(lu, spd=False)


def solve(factor: Factor, b: np.ndarray) -> np.ndarray:
    return factor.solve(b)


def as_operator(A):
    """Normalize a matrix / factor / callable into apply(x)."""
    if callable(A) and not sp.issparse(A):
        return A
    if sp.issparse(A):
        return lambda x, _A=A.tocsr(): _A @ x
    M = np.asarray(A)
    return lambda x: M @ x


class _Deflation:
    def __init__(self, kernel, n):
        basis = []
        for z in kernel:
            v = np.asarray(z, dtype=float).copy()
            for b in basis:
                v -= (b @ v) * b
            nrm = np.linalg.norm(v)
            if nrm > 0:
                basis.append(v / nrm)
        self.basis = basis

    def project(self, x):
        for b in self.basis:
            x = x - (b @ x) * b
        return x

    def wrap(self, apply_fn):
        if not self.basis:
            return apply_fn
        return lambda x: self.project(apply_fn(self.project(x)))


def cg(apply_A, apply_Pinv, b, tol: float = 1e-10, maxit: int = 999,
       deflate=()) -> tuple[np.ndarray, KrylovReport]:
    """Preconditioned conjugate gradients with breakdown detection."""
    t0 = time.perf_counter()
    A = as_operator(apply_A)
    P = as_operator(apply_Pinv) if apply_Pinv is not None else (lambda x: x)
    b = np.asarray(b, dtype=float)
    defl = _Deflation(deflate, b.size)
    A, P = defl.wrap(A), defl.wrap(P)
    b = defl.project(b)

    x = np.zeros_like(b)
    r = b.copy()
    z = P(r)
    rho = r @ z
    if rho < 0:
        raise NotSymmetricPositiveDefinite("preconditioner is not positive")
    res0 = np.sqrt(rho)
    history = []
    if res0 == 0.0:
        return x, KrylovReport(0, True, history, 0.0, time.perf_counter() - t0)
    p = z.copy()
    for it in range(1, maxit + 1):
        Ap = A(p)
        alpha_den = p @ Ap
        if alpha_den <= 0:
            raise NotSymmetricPositiveDefinite(
                "nonpositive curvature: operator not SPD on the working subspace")
        alpha = rho / alpha_den
        x += alpha * p
        r -= alpha * Ap
        z = P(r)
        rho_new = r @ z
        if rho_new < 0:
            raise NotSymmetricPositiveDefinite("preconditioner is not positive")
        rel = float(np.sqrt(rho_new) / res0)
        history.append(rel)
        if len(history) >= 2 and history[-1] > 1.1 * history[-2]:
            warnings.warn("CG preconditioned residual grew by more than 10%",
                          RuntimeWarning, stacklevel=2)
        if rel <= tol:
            return x, KrylovReport(it, True, history, float(rel), time.perf_counter() - t0)
        p = z + (rho_new / rho) * p
        rho = rho_new
    return x, KrylovReport(maxit, False, history, float(history[-1]), time.perf_counter() - t0)


def minres(apply_A, apply_Pinv, b, tol: float = 1e-8, maxit: int = 999,
           deflate=()) -> tuple[np.ndarray, KrylovReport]:
    """Preconditioned MINRES (Paige-Saunders); A symmetric, P SPD."""
    t0 = time.perf_counter()
    A = as_operator(apply_A)
    P = as_operator(apply_Pinv) if apply_Pinv is not None else (lambda x: x)
    b = np.asarray(b, dtype=float)
    defl = _Deflation(deflate, b.size)
    A, P = defl.wrap(A), defl.wrap(P)
    b = defl.project(b)

    x = np.zeros_like(b)
    r1 = b.copy()
    y = P(r1)
    beta1_sq = r1 @ y
    if beta1_sq < 0:
        raise NotSymmetricPositiveDefinite("preconditioner is not positive")
    beta1 = np.sqrt(beta1_sq)
    history = []
    if beta1 == 0.0:
        return x, KrylovReport(0, True, history, 0.0, time.perf_counter() - t0)

    oldb, beta = 0.0, beta1
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    r2 = r1.copy()
    for it in range(1, maxit + 1):
        v = y / beta
        y = A(v)
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = v @ y
        y -= (alfa / beta) * r2
        r1, r2 = r2, y
        y = P(r2)
        oldb, beta_sq = beta, r2 @ y
        if beta_sq < 0:
            raise NotSymmetricPositiveDefinite("preconditioner is not positive")
        beta = np.sqrt(beta_sq)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), np.finfo(float).eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x += phi * w
        rel = float(phibar / beta1)
        history.append(rel)
        if rel <= tol:
            return x, KrylovReport(it, True, history, float(rel), time.perf_counter() - t0)
    return x, KrylovReport(maxit, False, history, float(history[-1]), time.perf_counter() - t0)


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def generalized_eigs(A, B, mode: str = "full", n_drop: int = 0, k: int = 6):
    """Eigenvalues of the symmetric pencil A v = lambda B v with B SPD.

    mode="full": all eigenvalues (dense reduction, dimension <= a few
    thousand).  mode="extreme": (min, max) only; uses sparse iteration
    above the dense cutoff.  n_drop declared kernel eigenvalues (smallest
    in magnitude) are removed after checking they are negligible.
    """
    n = A.shape[0]
    if mode not in ("full", "extreme"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "full" or n <= 3200:
        Ad, Bd = _dense(A), _dense(B)
        try:
            vals = sla.eigh(Ad, Bd, eigvals_only=True)
        except sla.LinAlgError as exc:
            raise NotSymmetricPositiveDefinite(f"B side of the pencil: {exc}") from exc
        vals = _drop_kernel(vals, n_drop)
        if mode == "extreme":
            return float(vals.min()), float(vals.max())
        return vals
    Bop = factor_spd(B)
    Asp = A.tocsc() if sp.issparse(A) else sp.csc_matrix(A)
    kk = max(k, n_drop + 2)
    hi = spla.eigsh(Asp, k=1, M=_as_csc(B), which="LA",
                    Minv=spla.LinearOperator((n, n), matvec=Bop.solve))[0]
    lo = spla.eigsh(Asp, k=1, M=_as_csc(B), which="SA",
                    Minv=spla.LinearOperator((n, n), matvec=Bop.solve))[0]
    near0 = spla.eigsh(Asp, k=kk, M=_as_csc(B), sigma=0.0, which="LM",
                       return_eigenvectors=False)
    vals = np.unique(np.concatenate([lo, hi, near0]))
    vals = _drop_kernel(vals, n_drop)
    return float(vals.min()), float(vals.max())


def _drop_kernel(vals, n_drop):
    vals = np.sort(np.asarray(vals))
    if n_drop:
        order = np.argsort(np.abs(vals))
        scale = np.abs(vals).max()
        small = order[:n_drop]
        if np.abs(vals[small]).max() > 1e-7 * scale:
            raise ValueError("declared kernel eigenvalues are not negligible")
        keep = np.ones(vals.size, dtype=bool)
        keep[small] = False
        vals = vals[keep]
    return vals
