"""Dense linear-algebra kernel: eigenvalues with a residual gate, Stein
solves, spectral radii.

All matrices are numpy 2-D arrays; inputs are validated for shape and
finiteness and promoted to complex128.  Eigenvalues are always reported in a
canonical order (ascending modulus, ties broken by ascending phase angle) so
that downstream factorizations are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from . import config

__all__ = ["Spectrum", "eigenvalues", "solve_stein", "spectral_radius"]

#: Largest matrix order accepted by the dense Stein solver (the Kronecker
#: system has order n**2).
MAX_STEIN_ORDER = 64


def _as_matrix(M, name: str = "matrix", square: bool = False) -> np.ndarray:
    """Validate and promote ``M`` to a complex128 2-D array."""
    A = np.asarray(M, dtype=complex)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={A.ndim}")
    if square and A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if A.size and not np.isfinite(A).all():
        raise ValueError(f"{name} has non-finite entries")
    return A


def _canonical_order(w: np.ndarray) -> np.ndarray:
    """Indices sorting eigenvalues by (modulus, phase angle), both ascending.

    Moduli that agree to a relative 1e-9 are treated as tied so that the
    angle tiebreak actually fires for conjugate pairs (whose computed moduli
    differ in the last ulp).  Angles of numerically-real values are snapped
    to exactly 0 or pi first, eliminating the +/-pi branch noise of values
    like ``-1.5 - 1e-17j``.
    """
    if w.size == 0:
        return np.zeros(0, dtype=int)
    mods = np.abs(w)
    ang = np.angle(w)
    real_mask = np.abs(w.imag) <= 1e-12 * (mods + 1.0)
    ang = np.where(real_mask, np.where(w.real < 0.0, np.pi, 0.0), ang)
    tol = 1e-9 * max(1.0, float(mods.max()))
    idx = list(np.argsort(mods, kind="stable"))
    out: list[int] = []
    i = 0
    while i < len(idx):
        j = i + 1
        while j < len(idx) and mods[idx[j]] - mods[idx[j - 1]] <= tol:
            j += 1
        out.extend(sorted(idx[i:j], key=lambda k: (ang[k], mods[k])))
        i = j
    return np.asarray(out, dtype=int)


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a matrix in canonical order plus a quality figure.

    Attributes
    ----------
    values : ndarray
        Eigenvalues sorted by ascending modulus, ties by ascending angle.
    residual : float
        ``max_i ||A v_i - w_i v_i||_2`` over the unit right eigenvectors
        returned by the solver.
    """

    values: np.ndarray
    residual: float

    def __post_init__(self):
        self.values.setflags(write=False)


def eigenvalues(M, *, residual_tol: float = config.EIG_RESIDUAL_TOL) -> Spectrum:
    """Eigenvalues of a square matrix, canonically ordered and residual-checked.

    Parameters
    ----------
    M : array_like
        Square matrix with finite entries.
    residual_tol : float, optional
        Acceptance threshold on the eigenpair residual.

    Returns
    -------
    Spectrum

    Raises
    ------
    ValueError
        If the QR iteration fails to converge or the residual exceeds
        ``residual_tol``.
    """
    A = _as_matrix(M, "M", square=True)
    if A.shape[0] == 0:
        return Spectrum(values=np.zeros(0, dtype=complex), residual=0.0)
    try:
        w, V = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise ValueError(f"eigenvalue iteration failed: {exc}") from exc
    # numpy returns unit-norm eigenvector columns; the residual is then an
    # absolute backward-error figure.
    res = float(np.max(np.linalg.norm(A @ V - V * w, axis=0)))
    scale = max(1.0, float(np.linalg.norm(A, 2)))
    if res > residual_tol * scale:
        raise ValueError(
            f"eigenvalue residual {res:.3e} exceeds tolerance "
            f"{residual_tol * scale:.3e}"
        )
    order = _canonical_order(w)
    return Spectrum(values=w[order], residual=res)


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    A = _as_matrix(M, "M", square=True)
    if A.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def solve_stein(A, Q, *, residual_tol: float = config.STEIN_RESIDUAL_TOL) -> np.ndarray:
    """Solve the discrete-time Stein equation ``A* P A - P + Q = 0``.

    The equation is vectorized into the linear system
    ``(kron(A^T, A^*) - I) vec(P) = -vec(Q)`` and solved densely, which is
    exact up to conditioning for the moderate orders this package uses.

    Parameters
    ----------
    A : array_like
        Square matrix with spectral radius strictly below one.
    Q : array_like
        Right-hand side of the same order (typically ``C* C``).

    Returns
    -------
    ndarray
        The unique solution ``P``.

    Raises
    ------
    ValueError
        If ``rho(A) >= 1 - 1e-12``, the order exceeds the dense-solver cap,
        or the verified backward error (defect norm over the magnitudes
        entering its evaluation) exceeds ``residual_tol`` after iterative
        refinement.
    """
    A = _as_matrix(A, "A", square=True)
    Q = _as_matrix(Q, "Q", square=True)
    n = A.shape[0]
    if Q.shape[0] != n:
        raise ValueError(f"A and Q orders differ: {n} vs {Q.shape[0]}")
    if n == 0:
        return np.zeros((0, 0), dtype=complex)
    if n > MAX_STEIN_ORDER:
        raise ValueError(f"order {n} exceeds dense Stein solver cap {MAX_STEIN_ORDER}")
    rho = spectral_radius(A)
    if rho >= 1.0 - config.STEIN_RADIUS_MARGIN:
        raise ValueError(f"spectral radius {rho:.12f} is not strictly below one")
    # vec is column-major here: vec(A* P A) = (A^T kron A^*) vec(P).
    AH = A.conj().T
    op = np.kron(A.T, AH) - np.eye(n * n)
    lu = sla.lu_factor(op)

    def solve(rhs):
        return sla.lu_solve(lu, -rhs.reshape(n * n, order="F")).reshape((n, n), order="F")

    a_gain = 1.0 + np.linalg.norm(A, 2) ** 2
    qnorm = np.linalg.norm(Q)

    def backward_error(P, defect):
        # normalize by the magnitudes entering the defect evaluation; a
        # residual relative to Q alone misreports solves whose solution
        # norm dwarfs the right-hand side
        return np.linalg.norm(defect) / max(1.0, a_gain * np.linalg.norm(P) + qnorm)

    P = solve(Q)
    defect = AH @ P @ A - P + Q
    res = backward_error(P, defect)
    # iterative refinement: rounding error from the dense solve leaves a
    # defect the factored operator can be re-applied to; stop as soon as the
    # tolerance holds or the defect stagnates
    for _ in range(3):
        if res <= residual_tol:
            break
        P = P + solve(defect)
        defect = AH @ P @ A - P + Q
        new_res = backward_error(P, defect)
        if new_res >= 0.5 * res:
            res = min(res, new_res)
            break
        res = new_res
    if res > residual_tol:
        raise ValueError(f"Stein residual {res:.3e} exceeds {residual_tol:.1e}")
    return P
