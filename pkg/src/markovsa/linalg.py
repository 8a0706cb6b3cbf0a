"""Dense small-matrix kernels.

Everything here targets desk-scale dimensions (d up to a few dozen): a cyclic
Jacobi eigensolver for symmetric matrices, the induced 2-norm built on it, a
Kronecker-vectorized Lyapunov solver and the symmetric square root.
"""

from __future__ import annotations

from dataclasses import dataclass

import warnings

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .errors import NotPositiveDefinite, NotSymmetric

SYMMETRY_TOL = 1e-10
JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100
PD_TOL = 1e-12
# relative pivot size below which the vectorized system is declared singular
PIVOT_TOL = 1e-13


def _as_square(M) -> np.ndarray:
    M = np.array(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def _check_symmetric(M: np.ndarray) -> None:
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > SYMMETRY_TOL:
        raise NotSymmetric(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")


def jacobi_eigh(M, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as columns. Sweeps stop once the off-diagonal Frobenius mass
    drops below ``tol * ||M||_F``.
    """
    A = _as_square(M)
    _check_symmetric(A)
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if n == 1 or scale == 0.0:
        return np.diag(A).copy(), V

    threshold = tol * scale
    for _ in range(max_sweeps):
        # summing the off-diagonal squares directly; total minus diagonal cancels badly
        off = np.sqrt(np.sum(np.square(A - np.diag(np.diag(A)))))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(apq) < 1e-150 * max(abs(diff), 1e-300):
                    # rotation angle ~ apq / diff would underflow
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    if abs(theta) > 1e150:
                        t = 0.5 / theta
                    else:
                        t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0

                v_p = V[:, p].copy()
                v_q = V[:, q].copy()
                V[:, p] = c * v_p - s * v_q
                V[:, q] = s * v_p + c * v_q

    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def eig_extremes_symmetric(M) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    w, _ = jacobi_eigh(M)
    return float(w[0]), float(w[-1])


def induced_norm(M) -> float:
    """Induced 2-norm (largest singular value) via the eigenvalues of M^T M."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    gram = M.T @ M
    _, lam_max = eig_extremes_symmetric(0.5 * (gram + gram.T))
    return float(np.sqrt(max(lam_max, 0.0)))


def symmetric_sqrt(P) -> np.ndarray:
    """Symmetric positive-definite S with S @ S == P."""
    P = _as_square(P)
    w, V = jacobi_eigh(P)
    if w[0] <= PD_TOL * max(1.0, abs(w[-1])):
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3e} is not positive")
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class LyapunovCertificate:
    """Solution of ``A_bar^T P + P A_bar = -I`` and what it says about ``A_bar``.

    ``hurwitz`` is true exactly when the solve succeeded and ``P`` came out
    positive definite. A singular vectorized system leaves ``P`` as NaNs and
    explains itself in ``diagnostics``.
    """

    A_bar: np.ndarray
    P: np.ndarray
    gamma_min: float
    gamma_max: float
    hurwitz: bool
    residual: float
    diagnostics: str = ""

    @property
    def dim(self) -> int:
        return self.A_bar.shape[0]


def lyapunov_operator(A_bar) -> np.ndarray:
    """Matrix of ``P -> A^T P + P A`` acting on the row-major vectorization of P."""
    A = _as_square(A_bar)
    eye = np.eye(A.shape[0])
    return np.kron(A.T, eye) + np.kron(eye, A.T)


def solve_lyapunov(A_bar) -> LyapunovCertificate:
    A = _as_square(A_bar)
    d = A.shape[0]
    L = lyapunov_operator(A)
    with warnings.catch_warnings():
        # exact singularity is reported through the certificate below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(L, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= PIVOT_TOL * max(pivots.max(), 1e-300):
        nan = np.full((d, d), np.nan)
        return LyapunovCertificate(
            A_bar=A, P=nan, gamma_min=float("nan"), gamma_max=float("nan"),
            hurwitz=False, residual=float("inf"),
            diagnostics=(
                "singular Lyapunov operator: some eigenvalue pair of A_bar sums to "
                f"~0 (pivot ratio {pivots.min() / max(pivots.max(), 1e-300):.2e})"
            ),
        )
    rhs = -np.eye(d).reshape(-1)
    P = lu_solve((lu, piv), rhs).reshape(d, d)
    P = 0.5 * (P + P.T)
    gamma_min, gamma_max = eig_extremes_symmetric(P)
    residual = float(np.linalg.norm(A.T @ P + P @ A + np.eye(d)))
    hurwitz = gamma_min > PD_TOL
    diagnostics = "" if hurwitz else (
        f"P is not positive definite (smallest eigenvalue {gamma_min:.3e}); "
        "A_bar has an eigenvalue with non-negative real part"
    )
    return LyapunovCertificate(
        A_bar=A, P=P, gamma_min=gamma_min, gamma_max=gamma_max,
        hurwitz=hurwitz, residual=residual, diagnostics=diagnostics,
    )


def is_hurwitz(A_bar) -> bool:
    return solve_lyapunov(A_bar).hurwitz
