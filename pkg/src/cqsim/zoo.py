"""Builtin toy models: ready-made Hamiltonian specs with published defaults.

All constructors return a :class:`~cqsim.model.HamiltonianSpec` whose
coefficient maps are vectorised over a leading batch axis. ``bundle`` wraps a
spec (or the raw measurement-qubit model) together with its saturating hybrid
model, its mean-field counterpart and default initial conditions, which is the
form the CLI and the test-suite consume.

Models:

* ``diosi_linear``      -- 1D particle x qubit, Stern-Gerlach coupling
  H = p^2/2m + (2 lambda q + phi) sigma_z, constant noise on p.
* ``sqrt_well``         -- well/barrier superposition H = p^2/2m
  + lambda sqrt(q) sigma_z on q > 0, noise gamma/sqrt(q) on p.
* ``mass_superposition``-- 3D test mass in the Newtonian potential of a mass
  at +/- d (qubit encodes left/right), isotropic noise on momentum.
* ``ghz_lattice``       -- n_sites qubits each pushing a local classical field
  coordinate, H = sum pi^2/2m + lambda sum phi_i sigma_z^i, uncorrelated
  noise on the momenta.
* ``measurement_qubit`` -- minimal non-Hamiltonian model (one classical
  record coordinate, L = sigma_z, D1 = 1/2, sigma = 1) with adjustable excess
  decoherence epsilon; epsilon = 0 saturates the trade-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PositivityError, UsageError
from .model import (
    CQModel,
    DiagonalHint,
    HamiltonianSpec,
    StandardSCModel,
    build_hamiltonian_model,
    build_standard_semiclassical,
)

Array = np.ndarray

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1j], [1j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
PLUS = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)


def _batched(z: Array) -> tuple[Array, bool]:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return z[None, :], True
    return z, False


def _diag_to_matrix(diag: Array) -> Array:
    # (..., d) -> (..., d, d)
    d = diag.shape[-1]
    out = np.zeros(diag.shape + (d,), dtype=complex)
    idx = np.arange(d)
    out[..., idx, idx] = diag
    return out


def diosi_linear(
    m: float = 1.0, lam: float = 1.0, phi: float = 2.0, sigma: float = 1.0
) -> HamiltonianSpec:
    """Linear Stern-Gerlach model; defaults reproduce the published trajectory run."""
    if m <= 0:
        raise UsageError("diosi_linear requires m > 0")
    if sigma < 0:
        raise UsageError("diosi_linear requires sigma >= 0")
    if sigma == 0 and lam != 0:
        raise PositivityError(
            "diosi_linear with sigma = 0 and lambda != 0 violates the range "
            "condition: the backreaction on p has no supporting noise"
        )

    def h_c(z):
        z = np.asarray(z, dtype=float)
        return z[..., 1] ** 2 / (2 * m)

    def h_i(z):
        z = np.asarray(z, dtype=float)
        return (2 * lam * z[..., 0] + phi)[..., None, None] * SIGMA_Z

    def grad_h_c(z):
        z = np.asarray(z, dtype=float)
        g = np.zeros(z.shape)
        g[..., 1] = z[..., 1] / m
        return g

    grad_i_const = np.zeros((2, 2, 2), dtype=complex)
    grad_i_const[0] = 2 * lam * SIGMA_Z
    sig_const = np.diag([0.0, sigma])
    sig_diag_const = np.array([0.0, sigma])

    def grad_h_i(z):
        return grad_i_const

    def sigma_map(z):
        return sig_const

    def sigma_diag(z):
        return sig_diag_const

    def h_i_diag(z):
        z = np.asarray(z, dtype=float)
        pref = 2 * lam * z[..., 0] + phi
        return pref[..., None] * np.array([1.0, -1.0])

    grad_i_diag_const = np.zeros((2, 2))
    grad_i_diag_const[0] = 2 * lam * np.array([1.0, -1.0])

    def grad_h_i_diag(z):
        return grad_i_diag_const

    return HamiltonianSpec(
        n=2,
        d=2,
        h_c=h_c,
        h_i=h_i,
        grad_h_c=grad_h_c,
        grad_h_i=grad_h_i,
        sigma=sigma_map,
        sigma_diag=sigma_diag,
        active=(1,),
        h_i_diag=h_i_diag,
        grad_h_i_diag=grad_h_i_diag,
        name="diosi",
    )


Q_FLOOR = 1e-12  # guards sqrt evaluation; trajectories terminate at q <= 0 anyway


def sqrt_well(m: float = 1.0, lam: float = 1.0, gamma: float = 0.5) -> HamiltonianSpec:
    """Well/barrier superposition on q > 0 with q-dependent noise gamma/sqrt(q)."""
    if m <= 0 or gamma <= 0:
        raise UsageError("sqrt_well requires m > 0 and gamma > 0")

    def _q(z):
        return np.maximum(np.asarray(z, dtype=float)[..., 0], Q_FLOOR)

    def h_c(z):
        z = np.asarray(z, dtype=float)
        return z[..., 1] ** 2 / (2 * m)

    def h_i(z):
        return (lam * np.sqrt(_q(z)))[..., None, None] * SIGMA_Z

    def grad_h_c(z):
        z = np.asarray(z, dtype=float)
        g = np.zeros(z.shape)
        g[..., 1] = z[..., 1] / m
        return g

    def grad_h_i(z):
        z = np.asarray(z, dtype=float)
        g = np.zeros(z.shape[:-1] + (2, 2, 2), dtype=complex)
        g[..., 0, :, :] = (lam / (2 * np.sqrt(_q(z))))[..., None, None] * SIGMA_Z
        return g

    def sigma_map(z):
        z = np.asarray(z, dtype=float)
        s = np.zeros(z.shape[:-1] + (2, 2))
        s[..., 1, 1] = gamma / np.sqrt(_q(z))
        return s

    def sigma_diag(z):
        z = np.asarray(z, dtype=float)
        s = np.zeros(z.shape)
        s[..., 1] = gamma / np.sqrt(_q(z))
        return s

    def h_i_diag(z):
        return (lam * np.sqrt(_q(z)))[..., None] * np.array([1.0, -1.0])

    def grad_h_i_diag(z):
        z = np.asarray(z, dtype=float)
        g = np.zeros(z.shape[:-1] + (2, 2))
        g[..., 0, :] = (lam / (2 * np.sqrt(_q(z))))[..., None] * np.array([1.0, -1.0])
        return g

    def domain(z):
        z = np.asarray(z, dtype=float)
        return z[..., 0] > 0

    return HamiltonianSpec(
        n=2,
        d=2,
        h_c=h_c,
        h_i=h_i,
        grad_h_c=grad_h_c,
        grad_h_i=grad_h_i,
        sigma=sigma_map,
        sigma_diag=sigma_diag,
        active=(1,),
        domain=domain,
        h_i_diag=h_i_diag,
        grad_h_i_diag=grad_h_i_diag,
        name="sqrt_well",
    )


def mass_superposition(
    G: float = 1.0,
    M: float = 10.0,
    m: float = 0.01,
    sigma: float = 0.02,
    phi: float = 5.0,
    d: float = 1.0,
) -> HamiltonianSpec:
    """Test mass in the Newtonian potential of a mass at +/- d along x.

    The qubit encodes the heavy mass's position, sigma_z = |L><L| - |R><R|;
    sigma defaults to 2m as in the published figures. A ball of radius
    0.05 |d| around each possible mass location is excluded: a trajectory
    entering it terminates cleanly rather than blowing up.
    """
    if min(G, M, m, sigma, d) <= 0:
        raise UsageError("mass_superposition requires positive G, M, m, sigma, d")
    dvec = np.array([d, 0.0, 0.0])
    r_min = 0.05 * d
    gmm = G * M * m

    def _sep(z):
        z = np.asarray(z, dtype=float)
        r = z[..., :3]
        return r - dvec, r + dvec  # |L> branch sees the mass at +d

    def h_c(z):
        z = np.asarray(z, dtype=float)
        return np.sum(z[..., 3:] ** 2, axis=-1) / (2 * m)

    def h_i_diag(z):
        rl, rr = _sep(z)
        vl = -gmm / np.linalg.norm(rl, axis=-1)
        vr = -gmm / np.linalg.norm(rr, axis=-1)
        return np.stack([vl + phi, vr - phi], axis=-1)

    def h_i(z):
        return _diag_to_matrix(h_i_diag(z))

    def grad_h_c(z):
        z = np.asarray(z, dtype=float)
        g = np.zeros(z.shape)
        g[..., 3:] = z[..., 3:] / m
        return g

    def grad_h_i_diag(z):
        # d/dr_i (-GMm/|r -+ d|) = GMm (r -+ d)_i / |r -+ d|^3
        rl, rr = _sep(z)
        nl = np.linalg.norm(rl, axis=-1)[..., None]
        nr = np.linalg.norm(rr, axis=-1)[..., None]
        g = np.zeros(np.asarray(z).shape[:-1] + (6, 2))
        g[..., :3, 0] = gmm * rl / nl**3
        g[..., :3, 1] = gmm * rr / nr**3
        return g

    def grad_h_i(z):
        return _diag_to_matrix(grad_h_i_diag(z))

    sig_const = np.diag([0.0, 0.0, 0.0, sigma, sigma, sigma])
    sig_diag_const = np.array([0.0, 0.0, 0.0, sigma, sigma, sigma])

    def sigma_map(z):
        return sig_const

    def sigma_diag(z):
        return sig_diag_const

    def domain(z):
        rl, rr = _sep(z)
        return (np.linalg.norm(rl, axis=-1) > r_min) & (
            np.linalg.norm(rr, axis=-1) > r_min
        )

    return HamiltonianSpec(
        n=6,
        d=2,
        h_c=h_c,
        h_i=h_i,
        grad_h_c=grad_h_c,
        grad_h_i=grad_h_i,
        sigma=sigma_map,
        sigma_diag=sigma_diag,
        active=(3, 4, 5),
        domain=domain,
        h_i_diag=h_i_diag,
        grad_h_i_diag=grad_h_i_diag,
        name="mass_superposition",
    )


MAX_GHZ_SITES = 5  # d = 2^sites; keeps dense states at or below 32 dimensions


def ghz_lattice(
    n_sites: int = 5, m: float = 1.0, lam: float = 1.0, sigma: float = 1.0
) -> HamiltonianSpec:
    """Lattice of qubits locally coupled to classical field coordinates."""
    if n_sites < 1:
        raise UsageError("ghz_lattice requires n_sites >= 1")
    if n_sites > MAX_GHZ_SITES:
        raise UsageError(
            f"ghz_lattice with n_sites={n_sites} needs Hilbert dimension "
            f"2^{n_sites} > {2**MAX_GHZ_SITES}; at most {MAX_GHZ_SITES} sites supported"
        )
    if m <= 0 or sigma < 0:
        raise UsageError("ghz_lattice requires m > 0 and sigma >= 0")
    ns = n_sites
    n = 2 * ns
    dim = 2**ns
    # sz_diag[i, b] = +1 if bit i of basis state b is 0 else -1 (site 0 leftmost)
    bits = (np.arange(dim)[None, :] >> (ns - 1 - np.arange(ns))[:, None]) & 1
    sz_diag = 1.0 - 2.0 * bits

    def h_c(z):
        z = np.asarray(z, dtype=float)
        return np.sum(z[..., ns:] ** 2, axis=-1) / (2 * m)

    def h_i_diag(z):
        z = np.asarray(z, dtype=float)
        return lam * np.einsum("...i,id->...d", z[..., :ns], sz_diag)

    def h_i(z):
        return _diag_to_matrix(h_i_diag(z))

    grad_i_diag_const = np.zeros((n, dim))
    grad_i_diag_const[:ns] = lam * sz_diag

    def grad_h_c(z):
        z = np.asarray(z, dtype=float)
        g = np.zeros(z.shape)
        g[..., ns:] = z[..., ns:] / m
        return g

    def grad_h_i_diag(z):
        return grad_i_diag_const

    def grad_h_i(z):
        return _diag_to_matrix(grad_i_diag_const)

    sig_const = np.zeros((n, n))
    sig_diag_const = np.zeros(n)
    for i in range(ns, n):
        sig_const[i, i] = sigma
        sig_diag_const[i] = sigma

    return HamiltonianSpec(
        n=n,
        d=dim,
        h_c=h_c,
        h_i=h_i,
        grad_h_c=grad_h_c,
        grad_h_i=grad_h_i,
        sigma=lambda z: sig_const,
        sigma_diag=lambda z: sig_diag_const,
        active=tuple(range(ns, n)),
        h_i_diag=h_i_diag,
        grad_h_i_diag=grad_h_i_diag,
        name="ghz",
    )


def measurement_qubit(
    epsilon: float = 0.0, h_x: float = 0.0, name: str | None = None
) -> CQModel:
    """Continuously monitored qubit with a single classical record coordinate.

    L = sigma_z, D1 = 1/2, sigma = 1, D0 = 1/4 + epsilon, optional Hamiltonian
    (h_x / 2) sigma_x. epsilon = 0 saturates the decoherence-diffusion
    trade-off; epsilon > 0 adds excess decoherence (the starting point of the
    classical purification construction).
    """
    if epsilon < 0:
        raise UsageError("measurement_qubit requires epsilon >= 0")
    ell = SIGMA_Z[None, :, :]
    d0_const = np.array([[0.25 + epsilon]])
    d1_const = np.array([[0.5]])
    sig_const = np.array([[1.0]])
    h_const = 0.5 * h_x * SIGMA_X

    diag = None
    if h_x == 0.0:
        diag = DiagonalHint(
            h_diag=lambda z: np.zeros(2),
            lindblad_diag=lambda z: np.array([[1.0, -1.0]]),
        )

    return CQModel(
        n=1,
        d=2,
        p=1,
        lindblad=lambda z: ell,
        d0=lambda z: d0_const,
        d1=lambda z: d1_const,
        d1c=lambda z: np.zeros(np.asarray(z).shape),
        sigma=lambda z: sig_const,
        h=lambda z: h_const,
        sigma_inv=lambda z: sig_const,
        diag=diag,
        saturated_hint=(epsilon == 0.0),
        name=name or ("measurement_qubit" if epsilon == 0 else f"measurement_qubit_eps{epsilon:g}"),
    )


@dataclass(frozen=True)
class ModelBundle:
    """A builtin model with everything the CLI and tests need to run it."""

    name: str
    params: dict
    model: CQModel
    z0: Array
    psi0: Array
    spec: HamiltonianSpec | None = None
    standard: StandardSCModel | None = None
    observables: dict = field(default_factory=dict)  # name -> (d, d) matrix


def _ghz_state(dim: int) -> Array:
    psi = np.zeros(dim, dtype=complex)
    psi[0] = psi[-1] = 1.0 / np.sqrt(2.0)
    return psi


_SPEC_BUILDERS: dict[str, Callable[..., HamiltonianSpec]] = {
    "diosi": diosi_linear,
    "sqrt_well": sqrt_well,
    "mass_superposition": mass_superposition,
    "ghz": ghz_lattice,
}

_DEFAULT_INIT: dict[str, Callable[[HamiltonianSpec], tuple[Array, Array]]] = {
    "diosi": lambda spec: (np.zeros(2), PLUS.copy()),
    "sqrt_well": lambda spec: (np.array([1.0, -1.0]), PLUS.copy()),
    "mass_superposition": lambda spec: (
        np.array([0.0, -0.5, 0.0, 0.0, 0.0, 0.0]),
        PLUS.copy(),
    ),
    "ghz": lambda spec: (np.zeros(spec.n), _ghz_state(spec.d)),
}


def builtin_names() -> list[str]:
    return sorted(list(_SPEC_BUILDERS) + ["measurement_qubit"])


def bundle(name: str, **params) -> ModelBundle:
    """Build a builtin model by name with parameter overrides."""
    if name == "measurement_qubit":
        mdl = measurement_qubit(**params)
        return ModelBundle(
            name=name,
            params=dict(params),
            model=mdl,
            z0=np.zeros(1),
            psi0=PLUS.copy(),
            observables={"sigma_z": SIGMA_Z},
        )
    if name not in _SPEC_BUILDERS:
        raise UsageError(f"unknown model '{name}'; known: {builtin_names()}")
    spec = _SPEC_BUILDERS[name](**params)
    z0, psi0 = _DEFAULT_INIT[name](spec)
    mdl = build_hamiltonian_model(spec, z_probes=[z0])
    obs = {}
    if spec.d == 2:
        obs = {"sigma_x": SIGMA_X, "sigma_y": SIGMA_Y, "sigma_z": SIGMA_Z}
    return ModelBundle(
        name=name,
        params=dict(params),
        model=mdl,
        z0=z0,
        psi0=psi0,
        spec=spec,
        standard=build_standard_semiclassical(spec),
        observables=obs,
    )
