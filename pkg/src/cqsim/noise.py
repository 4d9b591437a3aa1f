"""Counter-based Wiener increments for reproducible, order-independent ensembles.

Every draw is a pure function of ``(seed, stream, trajectory index, component)``
built on the Philox counter-based generator: the Philox key is
``[seed, stream]`` where ``stream`` is the step index for dynamics noise (or a
reserved id above ``AUX_STREAM`` for auxiliary draws such as initial-condition
sampling), and the counter position encodes the trajectory index.

Normals are produced by inverse-CDF from raw 64-bit uniforms so that each
trajectory consumes a fixed, seekable slot of the stream. Each trajectory's
per-step slot is padded to a multiple of 4 raw outputs, which is the Philox
counter granularity, so a single trajectory can be regenerated without
producing the whole block (`Philox.advance(k)` skips 4k raw outputs).
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

#: Philox native 64-bit outputs per counter increment.
_PHILOX_OUTPUTS_PER_TICK = 4

#: Streams at or above this id are reserved for non-dynamics draws.
AUX_STREAM = 2**62


def _slot(n_dim: int) -> int:
    return _PHILOX_OUTPUTS_PER_TICK * (
        (n_dim + _PHILOX_OUTPUTS_PER_TICK - 1) // _PHILOX_OUTPUTS_PER_TICK
    )


def _raw_to_standard_normal(raw: np.ndarray) -> np.ndarray:
    # 53-bit uniform strictly inside (0, 1), then inverse normal CDF.
    u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54
    return ndtri(u)


def _raw_to_uniform(raw: np.ndarray) -> np.ndarray:
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _bitgen(seed: int, stream: int, skip_slots: int) -> np.random.Philox:
    bg = np.random.Philox(key=[np.uint64(seed), np.uint64(stream)])
    if skip_slots:
        bg.advance(int(skip_slots) // _PHILOX_OUTPUTS_PER_TICK)
    return bg


def normal_block(
    seed: int,
    stream: int,
    n_traj: int,
    n_dim: int,
    scale: float = 1.0,
    first_traj: int = 0,
) -> np.ndarray:
    """Standard normals times ``scale``, shape (n_traj, n_dim).

    Row ``j`` equals ``normal_single(seed, stream, first_traj + j, n_dim)``
    bit-for-bit, so ensembles may be chunked arbitrarily across workers.
    """
    slot = _slot(n_dim)
    bg = _bitgen(seed, stream, first_traj * slot)
    raw = bg.random_raw(n_traj * slot).reshape(n_traj, slot)[:, :n_dim]
    out = _raw_to_standard_normal(raw)
    if scale != 1.0:
        out *= scale
    return out


def normal_single(
    seed: int, stream: int, traj: int, n_dim: int, scale: float = 1.0
) -> np.ndarray:
    """The (traj)-th row of :func:`normal_block`, shape (n_dim,)."""
    return normal_block(seed, stream, 1, n_dim, scale=scale, first_traj=traj)[0]


def wiener_block(
    seed: int, step: int, n_traj: int, n_dim: int, dt: float, first_traj: int = 0
) -> np.ndarray:
    """Wiener increments N(0, dt) for one time step of an ensemble."""
    return normal_block(
        seed, step, n_traj, n_dim, scale=float(np.sqrt(dt)), first_traj=first_traj
    )


def wiener_single(seed: int, step: int, traj: int, n_dim: int, dt: float) -> np.ndarray:
    """Wiener increments N(0, dt) for one step of one trajectory."""
    return wiener_block(seed, step, 1, n_dim, dt, first_traj=traj)[0]


def uniform_block(
    seed: int, stream: int, n_traj: int, n_dim: int = 1, first_traj: int = 0
) -> np.ndarray:
    """Uniforms in [0, 1), shape (n_traj, n_dim); same slot layout as normals."""
    slot = _slot(n_dim)
    bg = _bitgen(seed, stream, first_traj * slot)
    raw = bg.random_raw(n_traj * slot).reshape(n_traj, slot)[:, :n_dim]
    return _raw_to_uniform(raw)
