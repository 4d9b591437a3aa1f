"""Dense matrix utilities used throughout the package.

Matrices are plain complex or real numpy arrays. Everything here is backed by
eigen/singular-value decompositions, which is the right tool at the problem's
scale (Hilbert-space and phase-space dimensions of a few dozen at most).

Conventions fixed here and relied on elsewhere:

* ``pinv`` is the Moore-Penrose pseudoinverse with singular values below
  ``rtol`` times the largest treated as zero (default ``rtol = 1e-12``).
* ``factor_sigma`` returns the *symmetric* square root, i.e.
  ``sigma = principal_sqrt(2 * D2)``, so that ``pinv(sigma)`` is symmetric and
  ``pinv(sigma) = sigma.T @ pinv(sigma @ sigma.T)`` holds exactly in the
  generalised-inverse sense.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, HermiticityError, PositivityError

DEFAULT_TOL = 1e-10
PINV_RTOL = 1e-12


def require_finite(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m)
    if not np.all(np.isfinite(m.view(np.float64) if m.dtype.kind == "c" else m)):
        raise DimensionError(f"{name} contains NaN or Inf entries")
    return m


def hermitize(m: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian part, (M + M^dag) / 2."""
    m = np.asarray(m)
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


def herm_residual(m: np.ndarray) -> float:
    """Frobenius norm of the anti-Hermitian part."""
    m = np.asarray(m)
    return float(np.linalg.norm(m - np.conj(np.swapaxes(m, -1, -2))))


def _require_square(m: np.ndarray, name: str) -> np.ndarray:
    m = require_finite(m, name)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    return m


def is_psd(m: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``m`` is positive semi-definite within ``tol``.

    ``m`` must be square and Hermitian within ``tol`` (relative to its norm);
    the PSD test is ``min eigenvalue >= -tol * max(1, max |eigenvalue|)``.
    """
    m = _require_square(m, "is_psd input")
    scale = max(1.0, float(np.linalg.norm(m)))
    if herm_residual(m) > tol * scale:
        raise HermiticityError(
            f"is_psd input is not Hermitian (residual {herm_residual(m):.3e})"
        )
    w = np.linalg.eigvalsh(hermitize(m))
    floor = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    return bool(np.min(w) >= -tol * floor)


def pinv(m: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse with a relative rank cutoff.

    Singular values below ``rtol * s_max`` are treated as exactly zero. All
    models in this package have well-separated zero/nonzero singular values,
    so the cutoff is not delicate.
    """
    m = require_finite(m, "pinv input")
    return np.linalg.pinv(m, rcond=rtol)


def principal_sqrt(m: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Principal (Hermitian PSD) square root of a Hermitian PSD matrix.

    Eigenvalues in ``[-tol * scale, 0)`` are clipped to zero; anything more
    negative raises :class:`PositivityError`.
    """
    m = _require_square(m, "principal_sqrt input")
    scale = max(1.0, float(np.linalg.norm(m)))
    if herm_residual(m) > tol * scale:
        raise HermiticityError("principal_sqrt input is not Hermitian")
    w, v = np.linalg.eigh(hermitize(m))
    if w.size and np.min(w) < -tol * max(1.0, float(np.max(np.abs(w)))):
        raise PositivityError(
            f"principal_sqrt input has negative eigenvalue {np.min(w):.3e}"
        )
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ np.conj(v.T)
    s = hermitize(s)
    if m.dtype.kind != "c":
        s = s.real
    return s


def factor_sigma(d2: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Return the symmetric ``sigma`` with ``D2 = sigma @ sigma.T / 2``.

    Any factor with that property gives statistically equivalent trajectories;
    the symmetric convention is defined for singular ``D2`` as well and keeps
    ``pinv(sigma)`` symmetric.
    """
    d2 = _require_square(np.asarray(d2, dtype=float), "factor_sigma input")
    return principal_sqrt(2.0 * d2, tol=tol)


def min_eigval(m: np.ndarray) -> float:
    """Smallest eigenvalue of the Hermitian part of ``m``."""
    return float(np.min(np.linalg.eigvalsh(hermitize(m))))


def hermitian_basis(d: int) -> np.ndarray:
    """Orthonormal Hermitian basis of d x d matrices, shape (d*d, d, d).

    Tr[B_a B_b] = delta_ab; B_0 = I / sqrt(d); for d = 2 the rest are the
    Pauli matrices divided by sqrt(2). Used to vectorise matrix-valued grid
    fields with real components.
    """
    mats = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = m[k, j] = 1.0 / np.sqrt(2.0)
            mats.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = -1j / np.sqrt(2.0)
            m[k, j] = 1j / np.sqrt(2.0)
            mats.append(m)
    for l in range(1, d):
        m = np.zeros((d, d), dtype=complex)
        m[np.arange(l), np.arange(l)] = 1.0
        m[l, l] = -float(l)
        mats.append(m / np.sqrt(l * (l + 1)))
    return np.stack(mats)
