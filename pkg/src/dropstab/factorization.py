"""Structural factorizations for multi-channel plants.

Four related constructions live here:

* channel-ordered controllability decompositions (block upper-triangular
  form, one diagonal block per input channel) and their enumeration over
  channel orderings;
* diagonal all-pass models built from the unstable eigenvalues each channel
  is responsible for, as cascades of balanced first-order sections;
* right/left coprime factor families over a state-feedback / observer gain
  pair, with the full eight-factor identity set;
* inner-outer splitting of square stable models by sequential extraction of
  scalar Potapov sections, plus the model-assumption checker that feeds it.

Conventions: gains stabilize as ``A - B F`` and ``A - L C``; coprime factors
are normalized so that ``M(inf) = I``; all-pass sections carry a positive
real input coefficient.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import config
from .numkernel import eigenvalues, spectral_radius
from .statespace import (
    StateSpaceModel,
    TransferMatrix,
    blockdiag_systems,
    cascade,
    evaluate,
    inverse,
    minimal,
    place_single_input,
    realize,
    scale_io,
    transmission_zeros,
    _ctrb_staircase,
    _staircase_threshold,
)

__all__ = [
    "AssumptionViolation",
    "DiagonalInner",
    "DoublyCoprime",
    "InnerOuterPair",
    "PotapovFactor",
    "WonhamBlock",
    "WonhamForm",
    "bezout",
    "coprime_factorize",
    "diagonal_inner",
    "enumerate_wonham_forms",
    "gamma_scale",
    "inner_outer",
    "observer_gain",
    "validate_assumption",
    "wonham_decompose",
    "wonham_gain",
]

MAX_CHANNELS = 6


class AssumptionViolation(Exception):
    """The plant falls outside the admissible model class."""


# ---------------------------------------------------------------------------
# channel-ordered controllability decomposition


@dataclass(frozen=True)
class WonhamBlock:
    channel: int          # original channel index (0-based)
    dim: int
    lam: tuple            # unstable eigenvalues of the diagonal block


@dataclass(frozen=True)
class WonhamForm:
    """Block upper-triangular decomposition for one channel processing order.

    ``transform`` is unitary with ``transform* A transform = Aw`` block upper
    triangular; ``Bw = transform* B P`` where P permutes channel columns into
    processing order, so column k of Bw matches diagonal block k.  Gains and
    vertices derived from a form are always mapped back to original channel
    indices.
    """

    ordering: tuple
    blocks: tuple
    transform: np.ndarray
    Aw: np.ndarray
    Bw: np.ndarray

    def __post_init__(self):
        self.transform.setflags(write=False)
        self.Aw.setflags(write=False)
        self.Bw.setflags(write=False)

    @property
    def order(self) -> int:
        return self.Aw.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.ordering)

    def block_slices(self):
        off = 0
        for blk in self.blocks:
            yield blk, slice(off, off + blk.dim)
            off += blk.dim

    def lambda_by_channel(self) -> dict:
        return {blk.channel: blk.lam for blk in self.blocks}


def _unstable(values) -> tuple:
    return tuple(v for v in values if abs(v) > 1.0)


def wonham_decompose(plant: StateSpaceModel, ordering,
                     tol: float = config.STAIRCASE_RTOL) -> WonhamForm:
    """Stage-wise controllability extraction along a channel ordering.

    Channel ``ordering[0]`` claims the subspace it can reach on its own;
    each later channel claims what it adds to the span, working inside the
    quotient.  The result is the block upper-triangular pair with one
    single-input controllable diagonal block per channel.

    Raises
    ------
    ValueError
        If the blocks do not cover the state space (the pair (A, B) is not
        controllable) or the ordering is not a permutation of the channels.
    """
    A = plant.A
    B = plant.B
    n = plant.order
    r = plant.n_inputs
    if sorted(ordering) != list(range(r)):
        raise ValueError(f"ordering {ordering} is not a permutation of 0..{r - 1}")
    thr = _staircase_threshold([A, B], tol)
    T = np.eye(n, dtype=complex)
    Acur = A.astype(complex)
    Bcur = B.astype(complex)
    off = 0
    blocks = []
    for ch in ordering:
        b = Bcur[:, [ch]]
        U, nc = _ctrb_staircase(Acur, b, thr)
        T[:, off:] = T[:, off:] @ U
        Acur = U.conj().T @ Acur @ U
        Bcur = U.conj().T @ Bcur
        blk_eigs = eigenvalues(Acur[:nc, :nc]).values if nc else np.zeros(0, complex)
        blocks.append(WonhamBlock(channel=ch, dim=nc, lam=_unstable(blk_eigs)))
        off += nc
        Acur = Acur[nc:, nc:]
        Bcur = Bcur[nc:, :]
    if off != n:
        raise ValueError(
            f"blocks cover only {off} of {n} states: pair (A, B) is uncontrollable"
        )
    Aw = T.conj().T @ A @ T
    P = np.zeros((r, r))
    for k, ch in enumerate(ordering):
        P[ch, k] = 1.0
    Bw = T.conj().T @ B @ P
    return WonhamForm(ordering=tuple(ordering), blocks=tuple(blocks),
                      transform=T, Aw=Aw, Bw=Bw)


def enumerate_wonham_forms(plant: StateSpaceModel,
                           tol: float = config.STAIRCASE_RTOL) -> list:
    """All distinct decompositions over the r! channel orderings.

    Orderings are visited lexicographically and forms deduplicated by their
    per-channel unstable-eigenvalue allocation (clustered at 1e-6), keeping
    the lexicographically smallest ordering of each equivalence class.
    """
    r = plant.n_inputs
    if r > MAX_CHANNELS:
        raise ValueError(f"{r} channels exceeds enumeration cap {MAX_CHANNELS}")
    seen = set()
    forms = []
    for ordering in itertools.permutations(range(r)):
        form = wonham_decompose(plant, ordering, tol)
        lam = form.lambda_by_channel()
        key = tuple(
            tuple(sorted((round(v.real, 6), round(v.imag, 6)) for v in lam[j]))
            for j in range(r)
        )
        if key not in seen:
            seen.add(key)
            forms.append(form)
    return forms


def _reflect_targets(block_eigs) -> list:
    """Default placement targets: keep stable eigenvalues, reflect the rest."""
    return [v if abs(v) < 1.0 else 1.0 / np.conj(v) for v in block_eigs]


def wonham_gain(form: WonhamForm,
                place_targets: Optional[Callable] = None) -> np.ndarray:
    """Block-diagonal stabilizing gain F (original coordinates/channels).

    Each diagonal block is placed independently through its own channel;
    ``A - B F`` then inherits the placed spectra.  The default target map
    reflects unstable eigenvalues across the unit circle, which makes the
    coprime factor M's diagonal exactly the monic all-pass quotients.

    Parameters
    ----------
    form : WonhamForm
    place_targets : callable, optional
        Maps a block's eigenvalue array to the desired closed-loop targets.

    Returns
    -------
    ndarray, shape (r, n)
    """
    targets_of = place_targets or _reflect_targets
    r = form.n_channels
    n = form.order
    Fw = np.zeros((r, n), dtype=complex)
    for k, (blk, sl) in enumerate(form.block_slices()):
        if blk.dim == 0:
            continue
        Ak = form.Aw[sl, sl]
        bk = form.Bw[sl, k]
        goals = targets_of(eigenvalues(Ak).values)
        # placement convention is eig(A + b f); stabilizing A - b f needs -f
        Fw[k, sl] = -place_single_input(Ak, bk, goals)
    P = np.zeros((r, r))
    for k, ch in enumerate(form.ordering):
        P[ch, k] = 1.0
    F = P @ Fw @ form.transform.conj().T
    if np.max(np.abs(F.imag)) < 1e-9 * max(1.0, np.max(np.abs(F.real))):
        F = F.real
    return F


def observer_gain(plant: StateSpaceModel,
                  tol: float = config.STAIRCASE_RTOL) -> np.ndarray:
    """Output-injection gain L with ``A - L C`` stable, built on the dual.

    Mirrors :func:`wonham_gain`: the dual pair ``(A^T, C^T)`` is decomposed
    per observability block (identity ordering) and each block placed with the
    reflection targets.
    """
    n = plant.order
    p = plant.n_outputs
    dual = StateSpaceModel(plant.A.conj().T, plant.C.conj().T,
                           np.zeros((1, n)), np.zeros((1, p)))
    form = wonham_decompose(dual, tuple(range(p)), tol)
    Fd = wonham_gain(form)
    return Fd.conj().T


# ---------------------------------------------------------------------------
# balanced all-pass sections and diagonal inners


def _allpass_section(lam: complex) -> StateSpaceModel:
    """Balanced first-order all-pass ``(z - lam)/(conj(lam) z - 1)``.

    State matrix ``1/conj(lam)``; the input coefficient is chosen positive
    real, fixing the sign ambiguity of the balanced realization.
    """
    lam = complex(lam)
    if abs(abs(lam) - 1.0) < config.UNIT_CIRCLE_BAND:
        raise ValueError(f"eigenvalue {lam} is within 1e-9 of the unit circle")
    if abs(lam) < 1.0:
        raise ValueError(f"all-pass section needs |lam| > 1, got {lam}")
    beta = np.sqrt(1.0 - 1.0 / abs(lam) ** 2)
    a = 1.0 / np.conj(lam)
    c = -beta * lam / np.conj(lam)
    return StateSpaceModel([[a]], [[beta]], [[c]], [[a]])


@dataclass(frozen=True)
class DiagonalInner:
    """Per-channel scalar all-pass models, indexed by original channel."""

    lambdas: tuple   # tuple of per-channel unstable-eigenvalue tuples
    blocks: tuple    # tuple of scalar StateSpaceModel, one per channel

    def as_system(self) -> StateSpaceModel:
        return blockdiag_systems(list(self.blocks))


def _scalar_blaschke(lams) -> StateSpaceModel:
    """Cascade of balanced sections over an eigenvalue tuple (canonical order)."""
    if len(lams) == 0:
        return StateSpaceModel(np.zeros((0, 0)), np.zeros((0, 1)),
                               np.zeros((1, 0)), [[1.0]])
    vals = np.asarray(lams, dtype=complex)
    vals = vals[np.lexsort((np.angle(vals), np.abs(vals)))]
    sys = _allpass_section(vals[0])
    for v in vals[1:]:
        sys = cascade(_allpass_section(v), sys)
    return sys


def diagonal_inner(form: WonhamForm) -> DiagonalInner:
    """Channel-wise all-pass diagonal for one decomposition.

    Channel j's block is the Blaschke product over the unstable eigenvalues
    its diagonal block carries; channels with none get the static gain 1.
    """
    lam = form.lambda_by_channel()
    r = form.n_channels
    lams = tuple(lam[j] for j in range(r))
    blocks = tuple(_scalar_blaschke(lams[j]) for j in range(r))
    return DiagonalInner(lambdas=lams, blocks=blocks)


# ---------------------------------------------------------------------------
# coprime factor families


def coprime_factorize(plant: StateSpaceModel, F,
                      tol: float = config.STAIRCASE_RTOL):
    """Right coprime pair (M, N) with ``plant = N M^{-1}`` and ``M(inf) = I``.

    ``M = (A - B F, B, -F, I)`` and ``N = (A - B F, B, C, 0)``.

    Raises
    ------
    ValueError
        If F does not make ``A - B F`` stable.
    """
    F = np.asarray(F, dtype=float if np.isrealobj(F) else complex)
    AF = plant.A - plant.B @ F
    if spectral_radius(AF) >= 1.0:
        raise ValueError("gain does not stabilize: rho(A - B F) >= 1")
    M = StateSpaceModel(AF, plant.B, -F, np.eye(plant.n_inputs))
    N = StateSpaceModel(AF, plant.B, plant.C, np.zeros((plant.n_outputs, plant.n_inputs)))
    return M, N


@dataclass(frozen=True)
class DoublyCoprime:
    """Eight stable factors satisfying the double Bezout identity.

    ``plant = N M^{-1} = Mt^{-1} Nt`` and

        [[Xt, -Yt], [-Nt, Mt]] @ [[M, Y], [N, X]] = I.
    """

    M: StateSpaceModel
    N: StateSpaceModel
    X: StateSpaceModel
    Y: StateSpaceModel
    Mt: StateSpaceModel
    Nt: StateSpaceModel
    Xt: StateSpaceModel
    Yt: StateSpaceModel
    F: np.ndarray
    L: np.ndarray


def bezout(plant: StateSpaceModel, F, L) -> DoublyCoprime:
    """Doubly-coprime family over a state-feedback / observer gain pair.

    The right factors run over ``A - B F``, the left factors over
    ``A - L C``; all eight are stable by construction and the identities
    follow from ``L C - B F = (zI - A_L) - (zI - A_F)``.

    Raises
    ------
    ValueError
        If either gain fails to stabilize its loop.
    """
    F = np.asarray(F)
    L = np.asarray(L)
    A, B, C = plant.A, plant.B, plant.C
    n, r = plant.order, plant.n_inputs
    AF = A - B @ F
    AL = A - L @ C
    if spectral_radius(AF) >= 1.0:
        raise ValueError("state-feedback gain does not stabilize")
    if spectral_radius(AL) >= 1.0:
        raise ValueError("observer gain does not stabilize")
    Ir = np.eye(r)
    Zr = np.zeros((r, r))
    M = StateSpaceModel(AF, B, -F, Ir)
    N = StateSpaceModel(AF, B, C, Zr)
    Y = StateSpaceModel(AF, L, -F, Zr)
    X = StateSpaceModel(AF, L, C, Ir)
    Xt = StateSpaceModel(AL, B, F, Ir)
    Yt = StateSpaceModel(AL, L, -F, Zr)
    Mt = StateSpaceModel(AL, -L, C, Ir)
    Nt = StateSpaceModel(AL, B, C, Zr)
    return DoublyCoprime(M=M, N=N, X=X, Y=Y, Mt=Mt, Nt=Nt, Xt=Xt, Yt=Yt, F=F, L=L)


def gamma_scale(sys: StateSpaceModel, gamma) -> StateSpaceModel:
    """Diagonal conjugation ``diag(gamma) G diag(gamma)^{-1}``."""
    g = np.asarray(gamma, dtype=float)
    if g.ndim != 1 or g.size != sys.n_inputs or sys.n_inputs != sys.n_outputs:
        raise ValueError("gamma must match a square system's channel count")
    if np.any(g <= 0):
        raise ValueError("gamma entries must be positive")
    return scale_io(sys, np.diag(g), np.diag(1.0 / g))


# ---------------------------------------------------------------------------
# inner-outer factorization (Potapov sections)


@dataclass(frozen=True)
class PotapovFactor:
    zero: complex
    direction: np.ndarray

    def __post_init__(self):
        self.direction.setflags(write=False)


@dataclass(frozen=True)
class InnerOuterPair:
    inner: StateSpaceModel
    outer: StateSpaceModel
    factors: tuple


def _potapov_section(lam: complex, eta: np.ndarray) -> StateSpaceModel:
    """Balanced rank-one all-pass ``(I - eta eta*) + eta eta* b(z)``."""
    r = eta.size
    beta = np.sqrt(1.0 - 1.0 / abs(lam) ** 2)
    d = 1.0 / np.conj(lam)
    A = np.array([[d]])
    B = beta * eta.conj().reshape(1, r)
    C = (-beta * lam / np.conj(lam)) * eta.reshape(r, 1)
    D = np.eye(r) + (d - 1.0) * np.outer(eta, eta.conj())
    return StateSpaceModel(A, B, C, D)


def _section_eval_inv(lam: complex, eta: np.ndarray, z: complex) -> np.ndarray:
    """Closed-form inverse of a rank-one section at a point."""
    b = (z - lam) / (np.conj(lam) * z - 1.0)
    P = np.outer(eta, eta.conj())
    return (np.eye(eta.size) - P) + P / b


def inner_outer(sys: StateSpaceModel, tol: float = config.STAIRCASE_RTOL) -> InnerOuterPair:
    """Split a square model into an all-pass times a minimum-phase factor.

    Unstable transmission zeros (eigenvalues of the inverse's state matrix
    outside the unit circle) are peeled off one at a time in ascending
    modulus; each contributes a scalar Potapov section along the singular
    direction of the partially-deflated evaluation.  The outer factor is the
    preceding inverse cascade applied to the model, reduced to minimal order.

    Raises
    ------
    ValueError
        Singular feedthrough, a zero within 1e-9 of the unit circle, a
        repeated unstable zero (pairwise gap below 1e-6), or an outer factor
        left with unstable modes after reduction.
    """
    if sys.n_inputs != sys.n_outputs:
        raise ValueError("inner-outer factorization needs a square model")
    r = sys.n_inputs
    zinv = inverse(sys)  # also validates cond(D)
    zeros = eigenvalues(zinv.A).values if sys.order else np.zeros(0, complex)
    if zeros.size and np.any(np.abs(np.abs(zeros) - 1.0) < config.UNIT_CIRCLE_BAND):
        raise ValueError("transmission zero within 1e-9 of the unit circle")
    unstable = [z for z in zeros if abs(z) > 1.0]
    for i in range(len(unstable)):
        for k in range(i + 1, len(unstable)):
            if abs(unstable[i] - unstable[k]) <= config.ZERO_SEPARATION_TOL:
                raise ValueError(
                    f"repeated unstable zero near {unstable[i]}: not supported"
                )
    if not unstable:
        return InnerOuterPair(inner=StateSpaceModel(np.zeros((0, 0)), np.zeros((0, r)),
                                                    np.zeros((r, 0)), np.eye(r)),
                              outer=sys, factors=())
    factors = []
    for z in unstable:
        V = evaluate(sys, z)
        for fac in factors:
            V = _section_eval_inv(fac.zero, fac.direction, z) @ V
        U, _, _ = np.linalg.svd(V)
        eta = U[:, -1]
        # pin the phase so the factorization is deterministic
        k = int(np.argmax(np.abs(eta)))
        eta = eta * (np.conj(eta[k]) / abs(eta[k]))
        factors.append(PotapovFactor(zero=complex(z), direction=eta))
    sections = [_potapov_section(f.zero, f.direction) for f in factors]
    inner = sections[-1]
    for sec in sections[-2::-1]:
        inner = cascade(sec, inner)
    inv_chain = inverse(sections[0])
    for sec in sections[1:]:
        inv_chain = cascade(inverse(sec), inv_chain)
    outer = minimal(cascade(inv_chain, sys), tol)
    if outer.order and spectral_radius(outer.A) >= 1.0:
        raise ValueError("outer factor kept unstable modes: deflation failed")
    return InnerOuterPair(inner=inner, outer=outer, factors=tuple(factors))


# ---------------------------------------------------------------------------
# model-class assumption checker


def _cluster_roots(values, tol=config.ROOT_CLUSTER_TOL):
    """Greedy clustering of a root array into (representative, multiplicity)."""
    out = []
    for v in values:
        for i, (rep, mult) in enumerate(out):
            if abs(v - rep) <= tol * max(1.0, abs(rep)):
                out[i] = ((rep * mult + v) / (mult + 1), mult + 1)
                break
        else:
            out.append((v, 1))
    return out


def _multiset_roots(poly):
    p = np.asarray(poly, dtype=float)
    if p.size <= 1:
        return []
    return _cluster_roots(np.roots(p))


def _multiset_subtract(a, b, tol=config.ROOT_CLUSTER_TOL):
    """Multiset difference a - b by clustering."""
    out = [list(x) for x in a]
    for rep, mult in b:
        for item in out:
            if abs(item[0] - rep) <= tol * max(1.0, abs(rep)):
                item[1] -= mult
                break
    return [(rep, m) for rep, m in out if m > 0]


def _multiset_lcm(sets, tol=config.ROOT_CLUSTER_TOL):
    """Max-multiplicity union of root multisets."""
    out = []
    for s in sets:
        for rep, mult in s:
            for i, (r0, m0) in enumerate(out):
                if abs(rep - r0) <= tol * max(1.0, abs(r0)):
                    out[i] = (r0, max(m0, mult))
                    break
            else:
                out.append((rep, mult))
    return out


def _multiset_intersect(a, b, tol=config.ROOT_CLUSTER_TOL):
    out = []
    for rep, mult in a:
        for r0, m0 in b:
            if abs(rep - r0) <= tol * max(1.0, abs(r0)):
                out.append((rep, min(mult, m0)))
                break
    return out


def _column_common_unstable_root(nums, dens):
    """Unstable roots shared by a column's entries after denominator clearing.

    The common denominator is the root-multiset least common multiple: the
    naive product of denominators would gift every cleared numerator the
    other cells' poles as spurious shared roots.
    """
    den_sets = [_multiset_roots(d) for d in dens]
    lcm = _multiset_lcm(den_sets)
    cleared = []
    for num, dset in zip(nums, den_sets):
        if not any(x != 0.0 for x in num):
            continue  # identically-zero entry vanishes everywhere; no constraint
        extra = _multiset_subtract(lcm, dset)
        cleared.append(_multiset_roots(num) + extra)
    if not cleared:
        raise AssumptionViolation("a plant column is identically zero")
    common = cleared[0]
    for other in cleared[1:]:
        common = _multiset_intersect(common, other)
    return [(rep, mult) for rep, mult in common if abs(rep) > 1.0]


def validate_assumption(plant: TransferMatrix, tol: float = config.STAIRCASE_RTOL):
    """Check the admissible model class and return the per-channel zeros.

    Requirements enforced: square strictly-proper plant; per input column at
    most one *simple* zero outside the closed unit disc shared by the whole
    column; after pulling those zeros out (and restoring relative degree with
    a z factor), the remaining core has all transmission zeros strictly
    inside the disc and an invertible ``lim z G_0`` (relative degree one per
    channel).

    Returns
    -------
    tuple
        Per-channel unstable zero as float, or None for a clean channel.

    Raises
    ------
    AssumptionViolation
        With a message naming the first requirement that fails.
    """
    p, m = plant.shape
    if p != m:
        raise AssumptionViolation(f"plant must be square, got {p}x{m}")
    zeros: list = []
    for j in range(m):
        nums = [plant.num[i][j] for i in range(p)]
        dens = [plant.den[i][j] for i in range(p)]
        for num, den in zip(nums, dens):
            if len(num) >= len(den) and any(x != 0.0 for x in num):
                raise AssumptionViolation(
                    f"column {j + 1} has an entry that is not strictly proper"
                )
        common = _column_common_unstable_root(nums, dens)
        total = sum(mult for _, mult in common)
        if total == 0:
            zeros.append(None)
        elif total == 1 and common[0][1] == 1:
            z = common[0][0]
            if abs(z.imag) > config.ROOT_CLUSTER_TOL * max(1.0, abs(z)):
                raise AssumptionViolation(
                    f"column {j + 1} has a complex unstable zero {z}"
                )
            zeros.append(float(z.real))
        else:
            raise AssumptionViolation(
                f"column {j + 1} shares {total} unstable zeros (want at most one, simple)"
            )
    # core model: divide each flagged column by (z - z_j)/z
    num0 = [list(row) for row in plant.num]
    den0 = [list(row) for row in plant.den]
    for j, z in enumerate(zeros):
        if z is None:
            continue
        for i in range(p):
            num0[i][j] = tuple(np.convolve(num0[i][j], [1.0, 0.0]))
            den0[i][j] = tuple(np.convolve(den0[i][j], [1.0, -z]))
    core = realize(TransferMatrix(num=tuple(map(tuple, num0)),
                                  den=tuple(map(tuple, den0))), tol)
    if core.D.size and np.max(np.abs(core.D)) > 1e-9:
        raise AssumptionViolation("core model is not strictly proper")
    lead = core.C @ core.B
    if np.linalg.cond(lead) > config.INVERT_COND_MAX:
        raise AssumptionViolation(
            "relative degree is not one per channel: lim z G_0 is singular"
        )
    tz = transmission_zeros(core)
    if tz.size and np.max(np.abs(tz)) >= 1.0 - config.UNIT_CIRCLE_BAND:
        worst = tz[np.argmax(np.abs(tz))]
        raise AssumptionViolation(
            f"core model keeps a non-minimum-phase zero at {worst:.6g}"
        )
    return tuple(zeros)
