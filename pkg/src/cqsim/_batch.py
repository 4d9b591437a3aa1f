"""Vectorised ensemble stepping.

Advances all trajectories of a Monte Carlo ensemble in lock-step with numpy
array operations, reproducing the reference steppers in
:mod:`cqsim.integrator` (same arithmetic, same noise stream keyed by
``(seed, step, trajectory index)``) at a small fraction of the cost.

Model coefficient maps are evaluated on the whole ``(N, n)`` block of
classical states. Maps that do not depend on ``z`` return constant unbatched
arrays (the package-wide convention); the stepper detects those once per run,
pre-contracts every operator product that is built purely from them, and
broadcasts through a leading batch axis of size one for the rest. Models
whose Hamiltonian and Lindblad operators are simultaneously diagonal (the
lattice model, notably) take a fast path that never forms dense operators.

A trajectory that leaves the model domain is frozen at its last valid state
and its termination step recorded; the rest of the ensemble continues.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels, noise
from .errors import StepSizeError, UsageError
from .integrator import TRACE_FLOOR
from .model import CQModel, StandardSCModel, poisson_bracket

Array = np.ndarray


def _lead(x: Array, core_ndim: int) -> Array:
    x = np.asarray(x)
    return x if x.ndim == core_ndim + 1 else x[None]


def _mm(a: Array, b: Array) -> Array:
    """Batched matmul broadcasting a leading batch axis of size 1 or N."""
    return np.matmul(a, b)


def _dagger(m: Array) -> Array:
    return np.conj(np.swapaxes(m, -1, -2))


class _Ctx:
    """Per-run stepping context: caches everything independent of z.

    A coefficient map is static when it returns an unbatched array for a
    batched ``z``; derived contractions of static inputs are computed once.
    """

    def __init__(self, model: CQModel | StandardSCModel, mode: str):
        self.model = model
        self.mode = mode
        self.diag = getattr(model, "diag", None) is not None and mode != "standard"
        self._cache: dict[str, Array | None] = {}

    def _get(self, name: str, fn, z: Array, core_ndim: int, dtype) -> Array:
        cached = self._cache.get(name, False)
        if cached is not False:
            if cached is not None:
                return cached
        else:
            self._cache[name] = False
        raw = np.asarray(fn(z), dtype=dtype)
        if raw.ndim == core_ndim:  # z-independent: cache with batch axis of 1
            out = raw[None]
            self._cache[name] = out
            return out
        self._cache[name] = None  # z-dependent: never cache
        return raw

    def is_static(self, name: str) -> bool:
        return self._cache.get(name) is not None

    def coeffs(self, z: Array) -> dict:
        m = self.model
        c = {
            "d0": self._get("d0", m.d0, z, 2, complex),
            "d1": self._get("d1", m.d1, z, 2, complex),
            "d1c": self._get("d1c", m.d1c, z, 1, float),
            "sig": self._get("sig", m.sigma, z, 2, float),
        }
        if m.sigma_inv is not None:
            c["sig_inv"] = self._get("sig_inv", m.sigma_inv, z, 2, float)
        elif self.is_static("sig"):
            if "sig_inv" not in self._cache:
                self._cache["sig_inv"] = np.linalg.pinv(c["sig"], rcond=1e-12)
            c["sig_inv"] = self._cache["sig_inv"]
        else:
            c["sig_inv"] = np.linalg.pinv(c["sig"], rcond=1e-12)
        if self.diag:
            c["ld"] = self._get("ld", m.diag.lindblad_diag, z, 2, complex)
            c["hd"] = self._get("hd", m.diag.h_diag, z, 1, float)
        else:
            c["ell"] = self._get("ell", m.lindblad, z, 3, complex)
            c["h"] = self._get("h", m.h, z, 2, complex)
        return c

    def derived(self, name: str, builder, *dep_names: str):
        """Cache ``builder()`` when all named coefficients are static."""
        if all(self.is_static(d) for d in dep_names):
            if name not in self._cache:
                self._cache[name] = builder()
            return self._cache[name]
        return builder()


def _gram(c: dict) -> Array:
    b = _mm(c["sig_inv"], c["d1"])
    return _mm(_dagger(b), b)


def _noise_weights(c: dict, dw: Array) -> Array:
    u = _mm(np.swapaxes(c["sig_inv"], -1, -2), dw[..., None])[..., 0]
    return _mm(_dagger(c["d1"]), u[..., None])[..., 0]


def _z_update(c: dict, z: Array, exp_l: Array, dt: float, dw: Array) -> Array:
    br = 2.0 * np.real(_mm(np.conj(c["d1"]), exp_l[..., None])[..., 0])
    return z + (c["d1c"] + br) * dt + _mm(c["sig"], dw[..., None])[..., 0]


def _normalize_psi(psi: Array) -> Array:
    nrm = np.linalg.norm(psi, axis=-1, keepdims=True)
    if np.any(nrm < np.sqrt(TRACE_FLOOR)):
        raise StepSizeError("state norm collapsed in ensemble; reduce dt")
    return psi / nrm


def _finalize_rho(rho_bar: Array) -> Array:
    tr = rho_bar.diagonal(axis1=-2, axis2=-1).real.sum(-1)
    if np.any(tr < TRACE_FLOOR):
        raise StepSizeError("trace collapsed in ensemble; reduce dt")
    rho_bar += _dagger(rho_bar)
    rho_bar *= 0.5 / tr[..., None, None]
    return rho_bar


def _step_pure(ctx: _Ctx, z: Array, psi: Array, dt: float, dw: Array):
    c = ctx.coeffs(z)
    a = _noise_weights(c, dw)
    d0 = c["d0"]
    if ctx.diag:
        ld = c["ld"]
        exp_l = _mm(ld, (np.abs(psi) ** 2)[..., None])[..., 0]
        g = ld - exp_l[..., None]
        gpsi = g * psi[..., None, :]
        stoch = _mm(a[..., None, :], gpsi)[..., 0, :]
        quad_m = np.einsum("...ab,...bd,...ad->...d", d0, np.conj(g), g, optimize=True)
        s1 = _mm(d0, np.conj(exp_l)[..., None])[..., 0]
        s2 = _mm(np.swapaxes(d0, -1, -2), exp_l[..., None])[..., 0]
        anti_m = 0.5 * (
            _mm(s1[..., None, :], ld)[..., 0, :]
            - _mm(s2[..., None, :], np.conj(ld))[..., 0, :]
        )
        drift = (-1j * c["hd"] - 0.5 * quad_m + anti_m) * psi
        psi_new = psi + drift * dt + stoch
    else:
        ell = c["ell"]
        lpsi = np.einsum("...aij,...j->...ai", ell, psi, optimize=True)
        exp_l = np.einsum("...i,...ai->...a", np.conj(psi), lpsi, optimize=True)
        dlpsi = lpsi - exp_l[..., None] * psi[..., None, :]
        stoch = np.einsum("...a,...ai->...i", a, dlpsi, optimize=True)
        y = np.einsum("...bji,...aj->...bai", np.conj(ell), dlpsi, optimize=True)
        y -= np.conj(exp_l)[..., :, None, None] * dlpsi[..., None, :, :]
        quad = -0.5 * np.einsum("...ab,...bai->...i", d0, y, optimize=True)
        ldagpsi = np.einsum("...aji,...j->...ai", np.conj(ell), psi, optimize=True)
        s1 = _mm(d0, np.conj(exp_l)[..., None])[..., 0]
        s2 = _mm(np.swapaxes(d0, -1, -2), exp_l[..., None])[..., 0]
        anti = 0.5 * (
            np.einsum("...a,...ai->...i", s1, lpsi, optimize=True)
            - np.einsum("...b,...bi->...i", s2, ldagpsi, optimize=True)
        )
        hpsi = np.einsum("...ij,...j->...i", c["h"], psi, optimize=True)
        psi_new = psi + (-1j * hpsi + quad + anti) * dt + stoch
    return _z_update(c, z, exp_l, dt, dw), _normalize_psi(psi_new)


def _step_density(ctx: _Ctx, z: Array, rho: Array, dt: float, dw: Array):
    """Mirrors ``integrator.step_density``: second-order stochastic term with
    compensated mean, then re-Hermitisation and renormalisation."""
    c = ctx.coeffs(z)
    a = _noise_weights(c, dw)
    d0 = c["d0"]
    gram = ctx.derived("gram", lambda: _gram(c), "sig_inv", "d1")
    if ctx.diag:
        ld = c["ld"]
        diag_rho = rho.diagonal(axis1=-2, axis2=-1)
        exp_l = _mm(ld, diag_rho[..., None])[..., 0]
        g = ld - exp_l[..., None]
        u = _mm(a[..., None, :], g)[..., 0, :]

        def _static_f():
            p_mat = np.einsum("...ab,...ai,...bj->...ij", d0, ld, np.conj(ld), optimize=True)
            k_vec = np.einsum("...ab,...bd,...ad->...d", d0, np.conj(ld), ld, optimize=True)
            return p_mat - 0.5 * (k_vec[..., :, None] + np.conj(k_vec)[..., None, :])

        f_static = ctx.derived("diag_lindblad_coeff", _static_f, "d0", "ld")
        # multiplier grid: rho' = rho * (1 + C) with
        # C_ij = dt (comm + lindblad - ebar)_ij + u_i + conj(u_j) + u_i conj(u_j)
        hd = np.broadcast_to(c["hd"], (rho.shape[0], rho.shape[-1]))
        if _kernels.HAVE_NUMBA:
            gw = _mm(gram, np.conj(g))
            rho_new, traces = _kernels.diag_density_update(rho, hd, u, g, gw, f_static, dt)
            if np.any(traces < TRACE_FLOOR):
                raise StepSizeError("trace collapsed in ensemble; reduce dt")
            return _z_update(c, z, exp_l, dt, dw), rho_new
        coeff = _mm(np.swapaxes(g, -1, -2), _mm(gram, np.conj(g)))  # ebar grid
        coeff = coeff - f_static
        coeff *= -dt
        np.subtract(coeff, (1j * dt) * hd[..., :, None], out=coeff)
        np.add(coeff, (1j * dt) * hd[..., None, :], out=coeff)
        u_col = u[..., :, None]
        u_row = np.conj(u)[..., None, :]
        coeff += u_col
        coeff += u_row
        coeff += u_col * u_row
        coeff *= rho
        rho_bar = coeff
        rho_bar += rho
    else:
        ell = c["ell"]
        eye = np.eye(rho.shape[-1])
        exp_l = np.einsum("...aij,...ji->...a", ell, rho, optimize=True)
        dl = ell - exp_l[..., None, None] * eye
        a_op = np.einsum("...a,...aij->...ij", a, dl, optimize=True)
        lrho = _mm(ell, rho[..., None, :, :])
        term1 = np.einsum("...ab,...aik,...blk->...il", d0, lrho, np.conj(ell), optimize=True)

        def _k_op():
            return np.einsum("...ab,...bki,...akj->...ij", d0, np.conj(ell), ell, optimize=True)

        k_op = ctx.derived("k_op", _k_op, "d0", "ell")
        dl_rho = _mm(dl, rho[..., None, :, :])
        ebar = np.einsum("...ab,...aik,...blk->...il", gram, dl_rho, np.conj(dl), optimize=True)
        hrho = _mm(c["h"], rho)
        krho = _mm(k_op, rho)
        drift = (
            -1j * (hrho - _dagger(hrho))
            + term1
            - 0.5 * (krho + _dagger(krho))
            - ebar
        )
        a_rho = _mm(a_op, rho)
        rho_bar = rho + drift * dt + a_rho + _dagger(a_rho) + _mm(a_rho, _dagger(a_op))
    return _z_update(c, z, exp_l, dt, dw), _finalize_rho(rho_bar)


def _step_standard(model: StandardSCModel, z: Array, q: Array, dt: float):
    bc, bi = poisson_bracket(model.spec, z)
    bc = _lead(bc, 1)
    bi = _lead(bi, 3)
    h_i = _lead(np.asarray(model.spec.h_i(z), dtype=complex), 2)
    if q.ndim == 2:  # state vectors
        bpsi = np.einsum("...aij,...j->...ai", bi, q, optimize=True)
        exp_b = np.einsum("...i,...ai->...a", np.conj(q), bpsi, optimize=True).real
        q_new = _normalize_psi(q - 1j * np.einsum("...ij,...j->...i", h_i, q) * dt)
    else:  # density matrices
        exp_b = np.einsum("...aij,...ji->...a", bi, q, optimize=True).real
        hrho = _mm(h_i, q)
        q_new = _finalize_rho(q - 1j * (hrho - _dagger(hrho)) * dt)
    return z + (bc + exp_b) * dt, q_new


@dataclass
class EnsembleResult:
    """States of ``n_traj`` trajectories recorded at ``times``.

    ``z`` has shape (N, K, n); ``psi`` (N, K, d) or ``rho`` (N, K, d, d)
    depending on mode. ``term_step`` is -1 for trajectories that ran to the
    end, else the step index at which the trajectory left the domain (its
    state stays frozen at the last valid value from there on).
    """

    times: Array
    z: Array
    seed: int
    dt: float
    mode: str
    term_step: Array
    psi: Array | None = None
    rho: Array | None = None
    model_name: str = ""

    @property
    def n_traj(self) -> int:
        return self.z.shape[0]

    def quantum(self) -> Array:
        return self.psi if self.psi is not None else self.rho

    def rho_at(self, k: int) -> Array:
        """Density matrices of all trajectories at recorded index ``k``."""
        if self.rho is not None:
            return self.rho[:, k]
        psi = self.psi[:, k]
        return psi[:, :, None] * np.conj(psi[:, None, :])

    def index_of_time(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)) + 1e-12:
            raise UsageError(f"time {t} not among recorded times {self.times}")
        return k


def _sample_steps(n_steps: int, sample_times, dt: float) -> np.ndarray:
    if sample_times is None:
        stride = max(1, n_steps // 100)
        ks = np.arange(0, n_steps + 1, stride)
    else:
        ks = np.unique(np.round(np.asarray(sample_times, dtype=float) / dt).astype(int))
        ks = ks[(ks >= 0) & (ks <= n_steps)]
    if len(ks) == 0 or ks[-1] != n_steps:
        ks = np.append(ks, n_steps)
    if ks[0] != 0:
        ks = np.concatenate([[0], ks])
    return ks


def run_ensemble(
    model: CQModel | StandardSCModel,
    z0: Array,
    q0: Array,
    T: float,
    dt: float,
    seed: int,
    n_traj: int,
    mode: str = "pure",
    sample_times=None,
    init_std: Array | None = None,
    workers: int = 1,
    first_traj: int = 0,
) -> EnsembleResult:
    """Run ``n_traj`` independent trajectories, vectorised.

    ``z0`` may be a single point (n,) or per-trajectory (N, n); likewise the
    initial quantum state ``q0`` ((d,) / (N, d) for pure and standard modes,
    (d, d) / (N, d, d) for density). ``init_std``, if given, adds independent
    Gaussian spread per classical dimension, drawn from the auxiliary noise
    stream so the ensemble stays a pure function of the seed. Trajectory ``j``
    consumes exactly the noise ``wiener_single(seed, step, first_traj + j)``,
    so results are independent of chunking and worker count.
    """
    if mode not in ("pure", "density", "standard"):
        raise UsageError(f"ensemble mode '{mode}' not supported")
    pure_like = mode in ("pure", "standard")
    n, d = model.n, model.d

    z = np.array(np.broadcast_to(np.asarray(z0, dtype=float), (n_traj, n)))
    if init_std is not None:
        spread = noise.normal_block(seed, noise.AUX_STREAM, n_traj, n, first_traj=first_traj)
        z = z + np.asarray(init_std, dtype=float) * spread
    qshape = (n_traj, d) if pure_like else (n_traj, d, d)
    q = np.array(np.broadcast_to(np.asarray(q0, dtype=complex), qshape))

    n_steps = int(np.ceil(T / dt - 1e-12)) if T > 0 else 0
    record_ks = _sample_steps(n_steps, sample_times, dt)

    if workers > 1 and n_traj >= 2 * workers:
        bounds = np.linspace(0, n_traj, workers + 1, dtype=int)
        chunks = [(bounds[i], bounds[i + 1]) for i in range(workers) if bounds[i + 1] > bounds[i]]

        def run_chunk(lo_hi):
            lo, hi = lo_hi
            return _run_block(
                model, z[lo:hi], q[lo:hi], dt, seed, n_steps, record_ks,
                mode, first_traj + int(lo),
            )

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, chunks))
        z_rec = np.concatenate([p[0] for p in parts])
        q_rec = np.concatenate([p[1] for p in parts])
        term = np.concatenate([p[2] for p in parts])
    else:
        z_rec, q_rec, term = _run_block(
            model, z, q, dt, seed, n_steps, record_ks, mode, first_traj
        )

    res = EnsembleResult(
        times=record_ks * dt,
        z=z_rec,
        seed=seed,
        dt=dt,
        mode=mode,
        term_step=term,
        model_name=getattr(model, "name", ""),
    )
    if pure_like:
        res.psi = q_rec
    else:
        res.rho = q_rec
    return res


def _run_block(model, z, q, dt, seed, n_steps, record_ks, mode, first_traj):
    n_traj, n = z.shape
    record_at = {int(k): i for i, k in enumerate(record_ks)}
    z_rec = np.empty((n_traj, len(record_ks), n))
    q_rec = np.empty((n_traj, len(record_ks)) + q.shape[1:], dtype=complex)
    term = np.full(n_traj, -1, dtype=int)
    alive = np.ones(n_traj, dtype=bool)
    ctx = _Ctx(model, mode)

    def record(k):
        i = record_at.get(k)
        if i is not None:
            z_rec[:, i] = z
            q_rec[:, i] = q

    unbounded = getattr(model, "domain", None) is None and (
        not isinstance(model, StandardSCModel) or model.spec.domain is None
    )
    record(0)
    for k in range(n_steps):
        dw = noise.wiener_block(seed, k, n_traj, n, dt, first_traj=first_traj)
        if mode == "pure":
            z_new, q_new = _step_pure(ctx, z, q, dt, dw)
        elif mode == "density":
            z_new, q_new = _step_density(ctx, z, q, dt, dw)
        else:
            z_new, q_new = _step_standard(model, z, q, dt)
        if unbounded:
            z, q = z_new, q_new
        else:
            ok = np.asarray(model.in_domain(z_new), dtype=bool)
            exiting = alive & ~ok
            if np.any(exiting):
                term[exiting] = k
                alive = alive & ok
            mask = alive[:, None] if q.ndim == 2 else alive[:, None, None]
            z = np.where(alive[:, None], z_new, z)
            q = np.where(mask, q_new, q)
        record(k + 1)
    return z_rec, q_rec, term
