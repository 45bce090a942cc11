"""Independent verification of closed-loop mean-square behavior.

Given a plant, a controller, and per-channel dropout probabilities, this
module builds the stochastic closed loop in state-space form and checks it
two ways that share no code with the synthesis path:

* exactly, by iterating (or taking the spectral radius of) the linear
  operator that maps the state covariance forward one step;
* empirically, by simulating packet drops with a seeded generator and
  averaging squared state norms over independent trials.

The multiplicative noise convention: channel j delivers ``alpha_j u_j``
with ``alpha_j`` Bernoulli(1 - p_j); centering and normalizing by the mean
gives ``alpha_j = mu_j (1 + w_j)`` with ``E w_j = 0`` and
``E w_j^2 = p_j / (1 - p_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .stabilizability import ChannelSpec
from .statespace import StateSpaceModel

__all__ = [
    "StochasticClosedLoop",
    "assemble",
    "exact_moment_trace",
    "monte_carlo_trace",
    "second_moment_radius",
]

MAX_EXACT_ORDER = 30
MAX_SIM_BYTES = 2 * 10 ** 8


def _real_matrix(M, name):
    M = np.asarray(M)
    out = np.real(M).astype(float)
    if np.max(np.abs(np.imag(M)), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(out), initial=0.0)):
        raise ValueError(f"{name} must be a real matrix")
    return out


@dataclass(frozen=True)
class StochasticClosedLoop:
    """Mean dynamics plus the rank-one noise injection of each channel."""

    A: np.ndarray                 # mean closed-loop state matrix
    noise_in: tuple               # per channel: column the noise enters through
    noise_out: tuple              # per channel: row mapping state to channel input
    channels: ChannelSpec
    nominal_radius: float
    plant_order: int

    @property
    def order(self) -> int:
        return self.A.shape[0]


def assemble(plant: StateSpaceModel, K: StateSpaceModel,
             channels: ChannelSpec) -> StochasticClosedLoop:
    """Close the loop ``u = K y`` through lossy input channels.

    The plant input is ``alpha .* u`` elementwise; splitting ``alpha`` into
    its mean and normalized fluctuation leaves a deterministic loop matrix
    plus one rank-one random perturbation per channel.  A nominally
    unstable loop is legal here (the caller sees it in
    ``nominal_radius``); a plant with direct feedthrough is not.

    Raises
    ------
    ValueError
        If the plant has a nonzero feedthrough term, dimensions do not
        line up, or the matrices are not real.
    """
    if np.max(np.abs(plant.D), initial=0.0) > 0.0:
        raise ValueError("plant feedthrough must be zero for the loop assembly")
    r = plant.n_inputs
    if channels.r != r:
        raise ValueError(f"plant has {r} input channels, spec has {channels.r}")
    if K.n_inputs != plant.n_outputs or K.n_outputs != r:
        raise ValueError("controller dimensions do not match the plant")
    A = _real_matrix(plant.A, "plant.A")
    B = _real_matrix(plant.B, "plant.B")
    C = _real_matrix(plant.C, "plant.C")
    AK = _real_matrix(K.A, "K.A")
    BK = _real_matrix(K.B, "K.B")
    CK = _real_matrix(K.C, "K.C")
    DK = _real_matrix(K.D, "K.D")
    mu = channels.mu
    n, nk = A.shape[0], AK.shape[0]
    Bmu = B * mu               # columns scaled by the success probabilities
    Acl = np.block([
        [A + Bmu @ DK @ C, Bmu @ CK],
        [BK @ C, AK],
    ])
    noise_in = []
    noise_out = []
    for j in range(r):
        col = np.concatenate([Bmu[:, j], np.zeros(nk)]).reshape(-1, 1)
        row = np.concatenate([DK[j, :] @ C, CK[j, :]]).reshape(1, -1)
        noise_in.append(col)
        noise_out.append(row)
    nominal = float(np.max(np.abs(np.linalg.eigvals(Acl)))) if Acl.size else 0.0
    return StochasticClosedLoop(
        A=Acl,
        noise_in=tuple(noise_in),
        noise_out=tuple(noise_out),
        channels=channels,
        nominal_radius=nominal,
        plant_order=n,
    )


def second_moment_radius(loop: StochasticClosedLoop) -> float:
    """Spectral radius of the one-step covariance propagation operator.

    The covariance recursion ``P -> Acl P Acl' + sum_j s_j^2 E_j P E_j'``
    is linear; in vectorized form its matrix is
    ``kron(Acl, Acl) + sum_j s_j^2 kron(E_j, E_j)`` and the loop is
    mean-square stable exactly when this matrix is Schur stable.
    """
    n = loop.order
    if n > MAX_EXACT_ORDER:
        raise ValueError(f"closed-loop order {n} exceeds the exact-analysis "
                         f"cap {MAX_EXACT_ORDER}")
    if n == 0:
        return 0.0
    T = np.kron(loop.A, loop.A)
    for j, s2 in enumerate(loop.channels.sigma_sq):
        E = loop.noise_in[j] @ loop.noise_out[j]
        T = T + s2 * np.kron(E, E)
    return float(np.max(np.abs(np.linalg.eigvals(T))))


def _default_x0(loop: StochasticClosedLoop) -> np.ndarray:
    x0 = np.zeros(loop.order)
    if loop.plant_order:
        x0[0] = 1.0
    return x0


def exact_moment_trace(loop: StochasticClosedLoop, steps: int,
                       x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Expected squared state norm at each step, computed exactly.

    Iterates the covariance recursion from the deterministic start
    ``P_0 = x0 x0'`` and returns ``trace(P_t)`` for t = 0..steps.
    """
    x0 = _default_x0(loop) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != loop.order:
        raise ValueError(f"x0 must have length {loop.order}")
    P = np.outer(x0, x0)
    Es = [loop.noise_in[j] @ loop.noise_out[j] for j in range(loop.channels.r)]
    out = np.empty(steps + 1)
    out[0] = np.trace(P)
    for t in range(1, steps + 1):
        nxt = loop.A @ P @ loop.A.T
        for E, s2 in zip(Es, loop.channels.sigma_sq):
            nxt += s2 * (E @ P @ E.T)
        P = nxt
        out[t] = np.trace(P)
    return out


def monte_carlo_trace(loop: StochasticClosedLoop, steps: int, trials: int,
                      seed: int = 0,
                      x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Average squared state norm over simulated packet-drop runs.

    Each trial t draws its Bernoulli schedule from an independent stream
    ``default_rng([seed, t])``, so results are reproducible and invariant
    to the number of trials run alongside.  Returns the per-step empirical
    mean of ``||x||^2`` (length ``steps + 1``).
    """
    if steps < 0 or trials <= 0:
        raise ValueError("need steps >= 0 and trials >= 1")
    r = loop.channels.r
    need = steps * r * trials * 8
    if need > MAX_SIM_BYTES:
        raise ValueError(f"simulation would need {need:.1e} bytes of drop "
                         f"schedule; reduce steps or trials")
    x0 = _default_x0(loop) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != loop.order:
        raise ValueError(f"x0 must have length {loop.order}")
    p = loop.channels.p
    mu = loop.channels.mu
    # per-trial schedules, assembled once, simulated in one vectorized sweep
    omega = np.empty((steps, r, trials))
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        alpha = (rng.random((steps, r)) >= p).astype(float)
        omega[:, :, t] = alpha / mu - 1.0
    X = np.tile(x0.reshape(-1, 1), (1, trials))
    rows = [loop.noise_out[j] for j in range(r)]
    cols = [loop.noise_in[j] for j in range(r)]
    out = np.empty(steps + 1)
    out[0] = float(np.sum(X * X) / trials)
    for k in range(steps):
        nxt = loop.A @ X
        for j in range(r):
            nxt += cols[j] @ (omega[k, j] * (rows[j] @ X))
        X = nxt
        out[k + 1] = float(np.sum(X * X) / trials)
    return out
