"""Fixed-step Ito (Euler-Maruyama) steppers and the trajectory driver.

Four evolution laws share the classical update
``dZ = D1C dt + <D1 L + conj terms> dt + sigma dW``:

* ``step_density``  -- the density-matrix unravelling (general models),
* ``step_pure``     -- the pure-state unravelling (saturating models only),
* ``step_standard`` -- the deterministic mean-field equations,
* ``step_joint``    -- the unnormalised joint-state cross-check, in which the
  state-proportional normalisation term is dropped and absorbed into a scalar
  weight.

Expectation values are always taken in the state carried along the trajectory,
never in an ensemble. Both the density matrix and the state vector are
explicitly renormalised each step (the continuum equations preserve norm
exactly; the Euler step only to first order), and the density matrix is
re-Hermitised to stop floating-point asymmetry from accumulating. Small
negative eigenvalues are tolerated, not clipped, so stepper bias stays visible
to the verification suite.

Noise enters every stepper only through the combination
``a_alpha = sum_ij dW_i sigma^-1_ij conj(D1[j, alpha])``; the conditioned-state
reconstruction in :mod:`cqsim.diagnostics` recovers exactly this object from a
classical record and replays the identical increment arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import noise
from .errors import DimensionError, StepSizeError, UsageError
from .model import CQModel, StandardSCModel, poisson_bracket, require_saturated
from .numlin import hermitize

Array = np.ndarray

TRACE_FLOOR = 1e-6
LOG_WEIGHT_FLOOR = -600.0
DEFAULT_MAX_STEPS = 20_000_000


@dataclass
class CQStateDensity:
    t: float
    z: Array
    rho: Array


@dataclass
class CQStatePure:
    t: float
    z: Array
    psi: Array


@dataclass
class Trajectory:
    """One realisation: sample times, classical path, quantum path, noise used.

    ``psis`` is set for pure/standard modes, ``rhos`` for density/joint;
    ``log_weights`` only for joint mode. Bit-exactly reproducible from
    (model, initial state, seed, dt, mode, traj_index).
    """

    times: Array
    zs: Array
    dws: Array
    seed: int
    dt: float
    mode: str
    psis: Array | None = None
    rhos: Array | None = None
    log_weights: Array | None = None
    terminated: str | None = None
    terminated_step: int | None = None
    traj_index: int = 0
    model_name: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def quantum_states(self) -> Array:
        return self.psis if self.psis is not None else self.rhos


class _Coeffs:
    """Coefficient evaluations of a model at one phase-space point."""

    __slots__ = ("ell", "d0", "d1", "d1c", "sig", "sig_inv", "h")

    def __init__(self, model: CQModel, z: Array):
        self.ell = np.asarray(model.lindblad(z), dtype=complex)
        self.d0 = np.asarray(model.d0(z), dtype=complex)
        self.d1 = np.asarray(model.d1(z), dtype=complex)
        self.d1c = np.asarray(model.d1c(z), dtype=float)
        self.sig = np.asarray(model.sigma(z), dtype=float)
        self.sig_inv = np.asarray(model.sigma_pinv(z), dtype=float)
        self.h = np.asarray(model.h(z), dtype=complex)


def _noise_weights(c: _Coeffs, dw: Array) -> Array:
    """a_alpha = (dW^T sigma^-1 D1^*)_alpha, the only way noise enters drho."""
    u = c.sig_inv.T @ dw
    return np.conj(c.d1).T @ u


def _expectations_psi(ell: Array, psi: Array) -> Array:
    return np.einsum("i,aij,j->a", np.conj(psi), ell, psi)


def _expectations_rho(ell: Array, rho: Array) -> Array:
    return np.einsum("aij,ji->a", ell, rho)


def _z_step(c: _Coeffs, z: Array, exp_l: Array, dt: float, dw: Array) -> Array:
    backreaction = 2.0 * np.real(np.conj(c.d1) @ exp_l)
    return z + (c.d1c + backreaction) * dt + c.sig @ dw


def _pure_increment(c: _Coeffs, psi: Array, a: Array, dt: float) -> Array:
    """Euler increment of the pure-state unravelling given noise weights a."""
    exp_l = _expectations_psi(c.ell, psi)
    lpsi = np.einsum("aij,j->ai", c.ell, psi)
    dl = lpsi - exp_l[:, None] * psi[None, :]
    stoch = a @ dl
    # (L_b^dag - <L_b^dag>)(L_a - <L_a>) psi, contracted with D0
    y = np.einsum("bji,aj->bai", np.conj(c.ell), dl)
    y -= np.conj(exp_l)[:, None, None] * dl[None, :, :]
    quad = -0.5 * np.einsum("ab,bai->i", c.d0, y)
    # (1/2) D0^{ab} (<L_b^dag> L_a - <L_a> L_b^dag) psi
    ldagpsi = np.einsum("aji,j->ai", np.conj(c.ell), psi)
    anti = 0.5 * ((c.d0 @ np.conj(exp_l)) @ lpsi - (exp_l @ c.d0) @ ldagpsi)
    return -1j * (c.h @ psi) * dt + stoch + (quad + anti) * dt


def _density_drift(c: _Coeffs, rho: Array) -> Array:
    term1 = np.einsum("ab,aij,bkj->ik", c.d0, np.einsum("aij,jk->aik", c.ell, rho), np.conj(c.ell))
    k = np.einsum("ab,bki,akj->ij", c.d0, np.conj(c.ell), c.ell)
    return (
        -1j * (c.h @ rho - rho @ c.h)
        + term1
        - 0.5 * (k @ rho + rho @ np.conj(k.T))
    )


def _saturated_gram(c: _Coeffs) -> Array:
    """G = D1^dag pinv(sigma sigma^T) D1, the saturated part of D0."""
    b = c.sig_inv @ c.d1
    return np.conj(b.T) @ b


def step_density(
    model: CQModel, s: CQStateDensity, dt: float, dw: Array
) -> CQStateDensity:
    """One step of the density-matrix unravelling.

    The increment carries the stochastic backreaction to both first and second
    order in the realised noise, with the second-order mean compensated:

        rho' ~ rho + [drift - Ebar] dt + A rho + rho A^dag + A rho A^dag

    where ``A = sum_alpha a_alpha (L_alpha - <L_alpha>)`` (the realised noise
    weights), ``drift`` is the Hamiltonian plus D0-Lindbladian of the master
    equation, and ``Ebar = sum G_ab (L_a - <L_a>) rho (L_b - <L_b>)^dag`` with
    G the saturated part of D0, so that ``E[rho'] = rho + drift dt`` exactly
    reproduces the master-equation mean. Keeping the realised second-order
    term is what the Ito square rule d rho = d psi psi^dag + ... demands: for
    saturating models from a pure state the step stays pure to O(dt^{3/2})
    per step, so the worst-case purity deficit shrinks linearly in dt. A plain
    first-order increment would instead let purity random-walk at O(sqrt(dt)).
    """
    c = _Coeffs(model, s.z)
    exp_l = _expectations_rho(c.ell, s.rho)
    a = _noise_weights(c, dw)
    dl = c.ell - exp_l[:, None, None] * np.eye(model.d)[None, :, :]
    a_op = np.einsum("a,aij->ij", a, dl)
    gram = _saturated_gram(c)
    ebar = np.einsum("ab,aij,jk,blk->il", gram, dl, s.rho, np.conj(dl))
    rho_new = (
        s.rho
        + (_density_drift(c, s.rho) - ebar) * dt
        + a_op @ s.rho
        + s.rho @ np.conj(a_op.T)
        + a_op @ s.rho @ np.conj(a_op.T)
    )
    tr = float(np.trace(rho_new).real)
    if tr < TRACE_FLOOR:
        raise StepSizeError(
            f"trace collapsed to {tr:.3e} in one step; reduce dt below {dt:.3e}",
            suggested_dt=dt / 4,
        )
    rho_new = hermitize(rho_new) / tr
    z_new = _z_step(c, s.z, exp_l, dt, dw)
    return CQStateDensity(t=s.t + dt, z=z_new, rho=rho_new)


def step_pure(model: CQModel, s: CQStatePure, dt: float, dw: Array) -> CQStatePure:
    """One Euler-Maruyama step of the pure-state unravelling.

    Defined only for models saturating the decoherence-diffusion trade-off;
    anything else raises a contract error.
    """
    require_saturated(model, s.z, "the pure-state unravelling")
    c = _Coeffs(model, s.z)
    a = _noise_weights(c, dw)
    psi_new = s.psi + _pure_increment(c, s.psi, a, dt)
    nrm = float(np.linalg.norm(psi_new))
    if nrm < np.sqrt(TRACE_FLOOR):
        raise StepSizeError(
            f"state norm collapsed to {nrm:.3e}; reduce dt below {dt:.3e}",
            suggested_dt=dt / 4,
        )
    exp_l = _expectations_psi(c.ell, s.psi)
    z_new = _z_step(c, s.z, exp_l, dt, dw)
    return CQStatePure(t=s.t + dt, z=z_new, psi=psi_new / nrm)


def step_standard(model: StandardSCModel, s: CQStatePure, dt: float) -> CQStatePure:
    """Deterministic Euler step of the mean-field equations."""
    bc, bi = poisson_bracket(model.spec, s.z)
    exp_b = np.einsum("i,aij,j->a", np.conj(s.psi), bi, s.psi).real
    z_new = s.z + (bc + exp_b) * dt
    h_i = np.asarray(model.spec.h_i(s.z), dtype=complex)
    psi_new = s.psi - 1j * (h_i @ s.psi) * dt
    psi_new = psi_new / np.linalg.norm(psi_new)
    return CQStatePure(t=s.t + dt, z=z_new, psi=psi_new)


def step_standard_density(
    model: StandardSCModel, s: CQStateDensity, dt: float
) -> CQStateDensity:
    """Mean-field step carrying a (possibly mixed) density matrix."""
    bc, bi = poisson_bracket(model.spec, s.z)
    exp_b = np.einsum("aij,ji->a", bi, s.rho).real
    z_new = s.z + (bc + exp_b) * dt
    h_i = np.asarray(model.spec.h_i(s.z), dtype=complex)
    rho_new = s.rho - 1j * (h_i @ s.rho - s.rho @ h_i) * dt
    rho_new = hermitize(rho_new) / float(np.trace(rho_new).real)
    return CQStateDensity(t=s.t + dt, z=z_new, rho=rho_new)


def step_joint(
    model: CQModel, weight: float, s: CQStateDensity, dt: float, dw: Array
) -> tuple[float, CQStateDensity]:
    """One step of the unnormalised joint-state unravelling.

    The quantum state is advanced with the linear part of the joint evolution
    (no expectation-value subtraction); the trace growth the nonlinear term
    would have removed is absorbed into ``weight`` and the stored state is
    renormalised. The classical coordinate follows the conditioned drift as in
    ``step_density``, keeping the two steppers comparable path by path.
    """
    if weight < 0:
        raise UsageError("joint-state weight must be nonnegative")
    c = _Coeffs(model, s.z)
    exp_l = _expectations_rho(c.ell, s.rho)
    a = _noise_weights(c, dw)
    a_op = np.einsum("a,aij->ij", a, c.ell)
    gram = _saturated_gram(c)
    ebar = np.einsum("ab,aij,jk,blk->il", gram, c.ell, s.rho, np.conj(c.ell))
    rho_bar = (
        s.rho
        + (_density_drift(c, s.rho) - ebar) * dt
        + a_op @ s.rho
        + s.rho @ np.conj(a_op.T)
        + a_op @ s.rho @ np.conj(a_op.T)
    )
    tau = float(np.trace(rho_bar).real)
    new_weight = weight * tau
    if tau < TRACE_FLOOR or (
        new_weight > 0 and np.log(new_weight) < LOG_WEIGHT_FLOOR
    ) or new_weight <= 0:
        raise StepSizeError(
            f"joint-state weight underflow (tau={tau:.3e}); reduce dt",
            suggested_dt=dt / 4,
        )
    rho_new = hermitize(rho_bar) / tau
    z_new = _z_step(c, s.z, exp_l, dt, dw)
    return new_weight, CQStateDensity(t=s.t + dt, z=z_new, rho=rho_new)


MODES = ("density", "pure", "standard", "joint")


def simulate(
    model: CQModel | StandardSCModel,
    initial: CQStateDensity | CQStatePure,
    T: float,
    dt: float,
    seed: int,
    mode: str = "pure",
    max_steps: int = DEFAULT_MAX_STEPS,
    traj_index: int = 0,
) -> Trajectory:
    """Integrate one trajectory to time ``T`` with fixed step ``dt``.

    The noise stream is a pure function of ``(seed, step index, traj_index)``,
    so identical inputs give bit-identical trajectories and ensembles may be
    generated in any order. A domain exit (square-root well leaving q > 0, or
    the mass model entering the exclusion ball) terminates the trajectory
    cleanly: the returned arrays stop at the last valid state and
    ``terminated``/``terminated_step`` say why and when.
    """
    if mode not in MODES:
        raise UsageError(f"unknown mode '{mode}'; expected one of {MODES}")
    if T < 0 or dt <= 0:
        raise UsageError("simulate requires T >= 0 and dt > 0")
    n_steps = int(np.ceil(T / dt - 1e-12)) if T > 0 else 0
    if n_steps > max_steps:
        raise UsageError(f"T/dt = {n_steps} exceeds max_steps = {max_steps}")

    is_pure = mode in ("pure", "standard")
    if is_pure and not isinstance(initial, CQStatePure):
        raise UsageError(f"mode '{mode}' needs a CQStatePure initial state")
    if not is_pure and not isinstance(initial, CQStateDensity):
        raise UsageError(f"mode '{mode}' needs a CQStateDensity initial state")
    if mode == "standard" and not isinstance(model, StandardSCModel):
        raise UsageError("mode 'standard' needs a StandardSCModel")
    if mode != "standard" and not isinstance(model, CQModel):
        raise UsageError(f"mode '{mode}' needs a CQModel")

    n = model.n
    zs = [np.asarray(initial.z, dtype=float)]
    if np.asarray(initial.z).shape != (n,):
        raise DimensionError(f"initial z has shape {np.asarray(initial.z).shape}, expected ({n},)")
    qs = [np.asarray(initial.psi if is_pure else initial.rho, dtype=complex)]
    dws = []
    log_w = [0.0]
    state = initial
    weight = 1.0
    terminated = None
    terminated_step = None

    in_domain = model.in_domain
    for k in range(n_steps):
        dw = noise.wiener_single(seed, k, traj_index, n, dt)
        try:
            if mode == "density":
                new = step_density(model, state, dt, dw)
            elif mode == "pure":
                new = step_pure(model, state, dt, dw)
            elif mode == "standard":
                new = step_standard(model, state, dt)
            else:
                weight, new = step_joint(model, weight, state, dt, dw)
        except StepSizeError as exc:
            raise StepSizeError(f"step {k}: {exc}", suggested_dt=exc.suggested_dt) from exc
        if not bool(np.asarray(in_domain(new.z))):
            terminated = "domain-exit"
            terminated_step = k
            break
        state = new
        zs.append(new.z)
        qs.append(new.psi if is_pure else new.rho)
        dws.append(dw)
        log_w.append(float(np.log(weight)) if mode == "joint" else 0.0)

    k_done = len(zs) - 1
    times = np.asarray(initial.t) + dt * np.arange(k_done + 1)
    traj = Trajectory(
        times=times,
        zs=np.stack(zs),
        dws=np.stack(dws) if dws else np.zeros((0, n)),
        seed=seed,
        dt=dt,
        mode=mode,
        terminated=terminated,
        terminated_step=terminated_step,
        traj_index=traj_index,
        model_name=getattr(model, "name", ""),
    )
    if is_pure:
        traj.psis = np.stack(qs)
    else:
        traj.rhos = np.stack(qs)
    if mode == "joint":
        traj.log_weights = np.asarray(log_w)
    return traj
