"""Hybrid classical-quantum model definitions, validation and builders.

A :class:`CQModel` packages the coefficient maps of a continuous hybrid
dynamics on an ``n``-dimensional classical phase space coupled to a
``d``-dimensional Hilbert space through ``p`` Lindblad operators:

* ``lindblad(z)`` -> ``(p, d, d)``   operators ``L_alpha(z)``
* ``d0(z)``       -> ``(p, p)``      Hermitian PSD decoherence matrix
* ``d1(z)``       -> ``(n, p)``      backreaction couplings, entries
  ``D1[i, alpha]``; the conjugate block is implied
* ``d1c(z)``      -> ``(n,)``        pure classical drift
* ``sigma(z)``    -> ``(n, n)``      real noise factor, ``D2 = sigma sigma^T / 2``
* ``h(z)``        -> ``(d, d)``      Hermitian quantum Hamiltonian

Complete positivity requires the decoherence-diffusion trade-off
``2 D0 >= D1^dag pinv(D2) D1`` together with the range condition that every
active backreaction column of ``D1`` lies in ``range(sigma)``; ``validate``
checks both pointwise in ``z``.

Batch convention: every coefficient map must accept ``z`` of shape ``(n,)`` or
``(N, n)`` and return correspondingly batched arrays; maps that do not depend
on ``z`` may return a constant unbatched array, which callers broadcast. This
is what lets ensembles of trajectories advance in single vectorised steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import numlin
from .errors import ContractError, DimensionError, PositivityError

Array = np.ndarray
CoeffMap = Callable[[Array], Array]


@dataclass(frozen=True)
class DiagonalHint:
    """Optional fast-path structure: H and every L_alpha diagonal in one basis.

    ``h_diag(z)`` -> ``(..., d)`` real diagonal of H; ``lindblad_diag(z)`` ->
    ``(p, d)`` or ``(..., p, d)`` diagonals of the Lindblad operators.
    """

    h_diag: CoeffMap
    lindblad_diag: CoeffMap


@dataclass(frozen=True)
class CQModel:
    n: int
    d: int
    p: int
    lindblad: CoeffMap
    d0: CoeffMap
    d1: CoeffMap
    d1c: CoeffMap
    sigma: CoeffMap
    h: CoeffMap
    sigma_inv: CoeffMap | None = None  # analytic pinv(sigma), else computed
    domain: Callable[[Array], Array] | None = None  # z -> bool, batch-capable
    diag: DiagonalHint | None = None
    saturated_hint: bool = False
    name: str = "cqmodel"

    def sigma_pinv(self, z: Array) -> Array:
        if self.sigma_inv is not None:
            return self.sigma_inv(z)
        return numlin.pinv(self.sigma(z))

    def in_domain(self, z: Array) -> Array:
        if self.domain is None:
            z = np.asarray(z)
            return np.ones(z.shape[:-1], dtype=bool) if z.ndim > 1 else np.True_
        return self.domain(z)

    def with_d0(self, d0: CoeffMap, saturated_hint: bool = False) -> "CQModel":
        """Same model with a replaced decoherence matrix map."""
        return replace(self, d0=d0, saturated_hint=saturated_hint)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Ingredients of a Hamiltonian ("healed semi-classical") hybrid model.

    Phase space is canonical with block layout (q_1..q_k, p_1..p_k); ``grad``
    maps are analytic. ``active`` lists the phase-space directions along which
    the Poisson bracket {Z_i, H_I} can be nonzero; only those directions carry
    Lindblad operators in the built model (for all the toy models this is the
    momentum block, since H_I depends on positions only). ``sigma_diag``, when
    given, asserts sigma(z) is diagonal with those entries and unlocks cheap
    pseudoinverses.
    """

    n: int
    d: int
    h_c: Callable[[Array], Array]
    h_i: CoeffMap
    grad_h_c: CoeffMap  # (..., n)
    grad_h_i: CoeffMap  # (..., n, d, d)
    sigma: CoeffMap
    sigma_diag: CoeffMap | None = None
    active: tuple[int, ...] | None = None
    domain: Callable[[Array], Array] | None = None
    h_i_diag: CoeffMap | None = None  # (..., d) when H_I is diagonal
    grad_h_i_diag: CoeffMap | None = None  # (..., n, d)
    name: str = "hamiltonian"


@dataclass
class ValidationReport:
    """Pointwise complete-positivity diagnostics at one phase-space point."""

    z: Array
    tradeoff_min_eig: float  # min eigenvalue of 2 D0 - D1^dag pinv(D2) D1
    range_residual: float  # Frobenius norm of (I - sigma pinv(sigma)) D1, active part
    herm_residual_h: float
    herm_residual_d0: float
    sym_residual_d2: float
    saturation_residual: float  # ||D0 - D1^dag pinv(sigma sigma^T) D1||
    saturated: bool
    tol: float

    @property
    def ok(self) -> bool:
        return (
            self.tradeoff_min_eig >= -self.tol
            and self.range_residual <= self.tol
            and self.herm_residual_h <= self.tol
            and self.herm_residual_d0 <= self.tol
            and self.sym_residual_d2 <= self.tol
        )

    def as_dict(self) -> dict:
        return {
            "z": np.asarray(self.z).tolist(),
            "tradeoff_min_eig": self.tradeoff_min_eig,
            "range_residual": self.range_residual,
            "herm_residual_h": self.herm_residual_h,
            "herm_residual_d0": self.herm_residual_d0,
            "sym_residual_d2": self.sym_residual_d2,
            "saturation_residual": self.saturation_residual,
            "saturated": self.saturated,
            "ok": self.ok,
            "tol": self.tol,
        }


def _check_shapes(model: CQModel, z: Array) -> tuple[Array, ...]:
    z = np.asarray(z, dtype=float)
    if z.shape != (model.n,):
        raise DimensionError(f"z has shape {z.shape}, expected ({model.n},)")
    ell = np.asarray(model.lindblad(z), dtype=complex)
    d0 = np.asarray(model.d0(z), dtype=complex)
    d1 = np.asarray(model.d1(z), dtype=complex)
    d1c = np.asarray(model.d1c(z), dtype=float)
    sig = np.asarray(model.sigma(z), dtype=float)
    h = np.asarray(model.h(z), dtype=complex)
    expected = {
        "lindblad": (ell.shape, (model.p, model.d, model.d)),
        "d0": (d0.shape, (model.p, model.p)),
        "d1": (d1.shape, (model.n, model.p)),
        "d1c": (d1c.shape, (model.n,)),
        "sigma": (sig.shape, (model.n, model.n)),
        "h": (h.shape, (model.d, model.d)),
    }
    for name, (got, want) in expected.items():
        if got != want:
            raise DimensionError(f"model field {name} has shape {got}, expected {want}")
    return ell, d0, d1, d1c, sig, h


def validate(model: CQModel, z: Array, tol: float = 1e-10) -> ValidationReport:
    """Check the complete-positivity conditions of the dynamics at ``z``.

    Reports the minimum eigenvalue of ``2 D0 - D1^dag pinv(D2) D1`` (the
    decoherence-diffusion trade-off), the range-condition residual, Hermiticity
    residuals, and whether the trade-off is saturated, i.e.
    ``D0 = D1^dag pinv(sigma sigma^T) D1`` within ``tol``. The range residual
    weights each D1 column by the norm of its Lindblad operator, so directions
    whose operator vanishes identically (pure drift directions) do not count.
    """
    ell, d0, d1, d1c, sig, h = _check_shapes(model, z)
    ssT = sig @ sig.T
    ssT_pinv = numlin.pinv(ssT)
    gram = np.conj(d1.T) @ ssT_pinv @ d1  # D1^dag pinv(sigma sigma^T) D1
    # pinv(D2) = 2 pinv(sigma sigma^T) since D2 = sigma sigma^T / 2
    tradeoff = 2.0 * d0 - 2.0 * np.conj(d1.T) @ ssT_pinv @ d1
    min_eig = numlin.min_eigval(tradeoff)

    proj = np.eye(model.n) - sig @ numlin.pinv(sig)
    l_norms = np.linalg.norm(ell.reshape(model.p, -1), axis=1)
    weights = l_norms / max(1.0, float(np.max(l_norms)) if l_norms.size else 1.0)
    range_residual = float(np.linalg.norm((proj @ d1) * weights[None, :]))

    sat_residual = float(np.linalg.norm(d0 - gram))
    scale = max(1.0, float(np.linalg.norm(d0)))
    return ValidationReport(
        z=np.asarray(z, dtype=float),
        tradeoff_min_eig=min_eig,
        range_residual=range_residual,
        herm_residual_h=numlin.herm_residual(h),
        herm_residual_d0=numlin.herm_residual(d0),
        sym_residual_d2=float(np.linalg.norm(ssT - ssT.T)),
        saturation_residual=sat_residual,
        saturated=sat_residual <= tol * scale,
        tol=tol,
    )


def probe_points(
    model_or_spec, z0: Array, num: int = 32, scale: float = 0.1, seed: int = 0
) -> list[Array]:
    """``z0`` plus ``num`` Gaussian perturbations, kept inside the domain."""
    z0 = np.asarray(z0, dtype=float)
    domain = getattr(model_or_spec, "in_domain", None)
    if domain is None:
        dom = getattr(model_or_spec, "domain", None)
        domain = (lambda z: np.True_) if dom is None else dom
    rng = np.random.default_rng(seed)
    pts = [z0]
    attempts = 0
    while len(pts) < num + 1 and attempts < 20 * (num + 1):
        attempts += 1
        cand = z0 + scale * np.maximum(1.0, np.abs(z0)) * rng.standard_normal(z0.shape)
        if bool(np.asarray(domain(cand))):
            pts.append(cand)
    return pts


def validate_probes(
    model: CQModel,
    z0: Array,
    tol: float = 1e-10,
    num: int = 32,
    scale: float = 0.1,
    seed: int = 0,
) -> list[ValidationReport]:
    """Validate at ``z0`` and a cloud of perturbations around it."""
    return [validate(model, z, tol=tol) for z in probe_points(model, z0, num, scale, seed)]


def symplectic_form(n: int) -> Array:
    """Canonical J with block layout (q, p): {q_i, H} = dH/dp_i."""
    if n % 2:
        raise DimensionError(f"canonical phase space needs even n, got {n}")
    k = n // 2
    j = np.zeros((n, n))
    j[:k, k:] = np.eye(k)
    j[k:, :k] = -np.eye(k)
    return j


def poisson_bracket(spec: HamiltonianSpec, z: Array) -> tuple[Array, Array]:
    """{Z_i, H_C} and {Z_i, H_I} at ``z`` (batch-capable).

    Returns ``(bracket_c, bracket_i)`` with shapes ``(..., n)`` and
    ``(..., n, d, d)``; ``{Z_i, H} = sum_j J_ij dH/dz_j`` with the canonical
    symplectic form.
    """
    j = symplectic_form(spec.n)
    gc = np.asarray(spec.grad_h_c(z))
    gi = np.asarray(spec.grad_h_i(z))
    bc = np.einsum("ij,...j->...i", j, gc)
    bi = np.einsum("ij,...jkl->...ikl", j, gi)
    return bc, bi


def fd_gradients(
    h_c: Callable[[Array], Array],
    h_i: CoeffMap,
    n: int,
    h: float = 1e-5,
) -> tuple[CoeffMap, CoeffMap]:
    """Central finite-difference gradient maps (convenience adapter).

    Step per coordinate is ``h * max(1, |z_i|)``. Single-point only; the
    builders and tests use analytic gradients.
    """

    def grad_c(z: Array) -> Array:
        z = np.asarray(z, dtype=float)
        out = np.zeros(n)
        for i in range(n):
            step = h * max(1.0, abs(z[i]))
            zp, zm = z.copy(), z.copy()
            zp[i] += step
            zm[i] -= step
            out[i] = (h_c(zp) - h_c(zm)) / (2 * step)
        return out

    def grad_i(z: Array) -> Array:
        z = np.asarray(z, dtype=float)
        probe = np.asarray(h_i(z))
        out = np.zeros((n,) + probe.shape, dtype=complex)
        for i in range(n):
            step = h * max(1.0, abs(z[i]))
            zp, zm = z.copy(), z.copy()
            zp[i] += step
            zm[i] -= step
            out[i] = (np.asarray(h_i(zp)) - np.asarray(h_i(zm))) / (2 * step)
        return out

    return grad_c, grad_i


def _diag_pinv(vals: Array) -> Array:
    out = np.zeros_like(vals)
    nz = np.abs(vals) > PINV_DIAG_CUTOFF * np.maximum(
        1.0, np.max(np.abs(vals), axis=-1, keepdims=True)
    )
    np.divide(1.0, vals, out=out, where=nz)
    return out


PINV_DIAG_CUTOFF = 1e-12


def build_hamiltonian_model(
    spec: HamiltonianSpec, z_probes: list[Array] | None = None, tol: float = 1e-9
) -> CQModel:
    """Construct the trade-off-saturating model of a Hamiltonian spec.

    Lindblad operators are ``L_alpha = {Z_alpha, H_I}`` on the active
    directions, ``D1 = I/2`` on those directions, ``D0 = pinv(sigma sigma^T)/4``
    restricted to them, classical drift ``{Z, H_C}``, and quantum Hamiltonian
    ``H_I``. The result saturates the decoherence-diffusion trade-off by
    construction.

    When ``z_probes`` is given, the range condition
    ``(I - sigma pinv(sigma)) {Z, H_I} = 0`` is checked there and a violation
    raises :class:`PositivityError` naming the offending direction.
    """
    active = spec.active if spec.active is not None else tuple(range(spec.n))
    act = np.asarray(active, dtype=int)
    p = len(act)
    n = spec.n

    if z_probes is not None:
        for z in z_probes:
            _, bi = poisson_bracket(spec, z)
            sig = np.asarray(spec.sigma(z), dtype=float)
            proj = np.eye(n) - sig @ numlin.pinv(sig)
            resid = np.einsum("ij,jkl->ikl", proj, bi)
            norms = np.linalg.norm(resid.reshape(n, -1), axis=1)
            bad = np.where(norms > tol * max(1.0, float(np.linalg.norm(bi))))[0]
            if bad.size:
                raise PositivityError(
                    "range condition violated: {Z_i, H_I} has a component outside "
                    f"range(sigma) along phase-space direction(s) {bad.tolist()} "
                    f"at z={np.asarray(z).tolist()}"
                )

    d1_const = np.zeros((n, p))
    d1_const[act, np.arange(p)] = 0.5

    def lindblad(z: Array) -> Array:
        _, bi = poisson_bracket(spec, z)
        return np.take(bi, act, axis=-3)

    def d1(z: Array) -> Array:
        return d1_const

    def d1c(z: Array) -> Array:
        bc, _ = poisson_bracket(spec, z)
        return bc

    if spec.sigma_diag is not None:
        sig_diag = spec.sigma_diag

        def d0(z: Array) -> Array:
            s = np.asarray(sig_diag(z))  # (..., n)
            inv2 = _diag_pinv(np.take(s, act, axis=-1) ** 2)
            return 0.25 * inv2[..., :, None] * np.eye(p)

        def sigma_inv(z: Array) -> Array:
            s = np.asarray(sig_diag(z))
            inv = _diag_pinv(s)
            return inv[..., :, None] * np.eye(n)

    else:

        def d0(z: Array) -> Array:
            sig = np.asarray(spec.sigma(z))
            ssT_pinv = numlin.pinv(sig @ np.swapaxes(sig, -1, -2))
            sub = ssT_pinv[..., act[:, None], act[None, :]]
            return 0.25 * sub

        def sigma_inv(z: Array) -> Array:
            return numlin.pinv(np.asarray(spec.sigma(z)))

    diag_hint = None
    if spec.h_i_diag is not None and spec.grad_h_i_diag is not None:
        j = symplectic_form(n)
        gdiag = spec.grad_h_i_diag
        h_i_diag = spec.h_i_diag

        def lindblad_diag(z: Array) -> Array:
            g = np.asarray(gdiag(z))  # (..., n, d)
            b = np.einsum("ij,...jd->...id", j, g)
            return np.take(b, act, axis=-2)

        diag_hint = DiagonalHint(h_diag=h_i_diag, lindblad_diag=lindblad_diag)

    return CQModel(
        n=n,
        d=spec.d,
        p=p,
        lindblad=lindblad,
        d0=d0,
        d1=d1,
        d1c=d1c,
        sigma=spec.sigma,
        h=spec.h_i,
        sigma_inv=sigma_inv,
        domain=spec.domain,
        diag=diag_hint,
        saturated_hint=True,
        name=spec.name,
    )


@dataclass(frozen=True)
class StandardSCModel:
    """Mean-field ("standard semi-classical") counterpart of a spec.

    Deterministic: ``dZ = {Z, H_C} dt + <{Z, H_I}> dt`` and
    ``d|psi> = -i H_I(Z) |psi> dt``. The density-matrix extension
    ``drho = -i [H_I, rho] dt`` with the drift expectation taken in ``rho``
    is what the linearity diagnostic evolves for mixed initial data.
    """

    spec: HamiltonianSpec
    n: int = field(init=False)
    d: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n", self.spec.n)
        object.__setattr__(self, "d", self.spec.d)

    @property
    def name(self) -> str:
        return self.spec.name + "-standard"

    def in_domain(self, z: Array) -> Array:
        if self.spec.domain is None:
            z = np.asarray(z)
            return np.ones(z.shape[:-1], dtype=bool) if z.ndim > 1 else np.True_
        return self.spec.domain(z)


def build_standard_semiclassical(spec: HamiltonianSpec) -> StandardSCModel:
    return StandardSCModel(spec=spec)


def saturated_at(model: CQModel, z: Array, tol: float = 1e-9) -> bool:
    """Quick saturation check used by the pure-state stepper contract."""
    if model.saturated_hint:
        return True
    return validate(model, z, tol=tol).saturated


def require_saturated(model: CQModel, z: Array, what: str, tol: float = 1e-9) -> None:
    if not saturated_at(model, z, tol=tol):
        raise ContractError(
            f"{what} requires a trade-off-saturating model; "
            f"D0 != D1^dag pinv(sigma sigma^T) D1 at z={np.asarray(z).tolist()}"
        )
