import numpy as np
import pytest
from numpy.testing import assert_allclose

from dropstab.factorization import (
    AssumptionViolation,
    _allpass_section,
    bezout,
    coprime_factorize,
    diagonal_inner,
    enumerate_wonham_forms,
    gamma_scale,
    inner_outer,
    observer_gain,
    validate_assumption,
    wonham_decompose,
    wonham_gain,
)
from dropstab.numkernel import spectral_radius
from dropstab.statespace import (
    StateSpaceModel,
    TransferMatrix,
    cascade,
    evaluate,
    is_balanced_inner,
    minimal,
    realize,
    subsystem,
)

from conftest import EXAMPLE_LAMBDA_12, EXAMPLE_LAMBDA_21


def _lam_sets(form):
    by_ch = form.lambda_by_channel()
    return tuple(tuple(sorted(np.real(by_ch[j]))) for j in range(form.n_channels))


def _assert_lam_equal(got, want):
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert_allclose(g, sorted(w), atol=1e-9)


def _blaschke_eval(lams, z):
    out = 1.0 + 0j
    for lam in lams:
        out *= (z - lam) / (np.conj(lam) * z - 1.0)
    return out


# --- decomposition ----------------------------------------------------------

def test_wonham_allocations(example_ss):
    f12 = wonham_decompose(example_ss, (0, 1))
    f21 = wonham_decompose(example_ss, (1, 0))
    _assert_lam_equal(_lam_sets(f12), EXAMPLE_LAMBDA_12)
    _assert_lam_equal(_lam_sets(f21), EXAMPLE_LAMBDA_21)
    assert [b.dim for b in f12.blocks] == [3, 3]
    assert [b.dim for b in f21.blocks] == [4, 2]


def test_wonham_invariants(example_ss):
    for ordering in [(0, 1), (1, 0)]:
        form = wonham_decompose(example_ss, ordering)
        T = form.transform
        n = form.order
        assert_allclose(T.conj().T @ T, np.eye(n), atol=1e-10)
        assert_allclose(T.conj().T @ example_ss.A @ T, form.Aw, atol=1e-10)
        # block upper-triangular: entries below the diagonal blocks vanish
        off = 0
        for blk in form.blocks:
            below_A = form.Aw[off + blk.dim:, off:off + blk.dim]
            below_B = form.Bw[off + blk.dim:, form.ordering.index(blk.channel)]
            if below_A.size:
                assert np.max(np.abs(below_A)) < 1e-8
            if below_B.size:
                assert np.max(np.abs(below_B)) < 1e-8
            off += blk.dim
        # the union of block allocations is the plant's unstable spectrum
        all_lam = sorted(x for blk in form.blocks for x in np.real(blk.lam))
        assert_allclose(all_lam, [-1.5, 2.0, 2.5], atol=1e-7)


def test_wonham_rejects_uncontrollable():
    sys = StateSpaceModel(np.diag([0.5, 2.0]), [[1.0], [0.0]],
                          [[1.0, 1.0]], [[0.0]])
    with pytest.raises(ValueError, match="uncontrollable"):
        wonham_decompose(sys, (0,))


def test_enumerate_forms(example_ss):
    forms = enumerate_wonham_forms(example_ss)
    assert [f.ordering for f in forms] == [(0, 1), (1, 0)]
    sys1 = realize(TransferMatrix(num=(((1.0,),),), den=(((1.0, -0.5),),)))
    assert len(enumerate_wonham_forms(sys1)) == 1


# --- gains ------------------------------------------------------------------

def test_wonham_gain_stabilizes(example_ss):
    for ordering in [(0, 1), (1, 0)]:
        form = wonham_decompose(example_ss, ordering)
        F = wonham_gain(form)
        assert F.shape == (2, 6)
        assert np.isrealobj(F)
        assert spectral_radius(example_ss.A - example_ss.B @ F) < 1.0
        # a second, different stabilizing choice (scaled reflections)
        alt = lambda eigs: [0.8 / np.conj(v) if abs(v) >= 1.0 else 0.8 * v
                            for v in eigs]
        F2 = wonham_gain(form, place_targets=alt)
        assert spectral_radius(example_ss.A - example_ss.B @ F2) < 0.8
        assert np.max(np.abs(F2 - F)) > 1e-3  # genuinely different gain


def test_observer_gain_stabilizes(example_ss):
    L = observer_gain(example_ss)
    assert L.shape == (6, 2)
    assert spectral_radius(example_ss.A - L @ example_ss.C) < 1.0


# --- diagonal inners --------------------------------------------------------

def test_allpass_section_guards():
    with pytest.raises(ValueError, match="unit circle"):
        _allpass_section(1.0 + 1e-12)
    with pytest.raises(ValueError, match=r"\|lam\| > 1"):
        _allpass_section(0.5)


def test_diagonal_inner_blocks(example_ss):
    form = wonham_decompose(example_ss, (1, 0))
    di = diagonal_inner(form)
    assert di.lambdas[0] == (2.0,) or abs(di.lambdas[0][0] - 2.0) < 1e-9
    b1, b2 = di.blocks
    assert b1.order == 1 and b2.order == 2
    for blk in (b1, b2):
        assert is_balanced_inner(blk, tol=1e-8)
    for z in (1.7 + 0.4j, -3.0, 0.2 + 0.9j):
        assert_allclose(evaluate(b1, z), [[_blaschke_eval([2.0], z)]], atol=1e-9)
        assert_allclose(evaluate(b2, z), [[_blaschke_eval([-1.5, 2.5], z)]], atol=1e-9)
    # feedthrough magnitudes are the inverse pole moduli products
    assert abs(b1.D[0, 0] - 0.5) < 1e-12
    assert abs(b2.D[0, 0] - (-1.0 / 3.75)) < 1e-12


def test_diagonal_inner_stable_channel(example_ss):
    # a channel with no unstable allocation gets the static gain 1
    sys = realize(TransferMatrix(
        num=(((1.0,), (0.0,)), ((0.0,), (1.0,))),
        den=(((1.0, -0.5), (1.0,)), ((1.0,), (1.0, -2.0))),
    ))
    form = wonham_decompose(sys, (0, 1))
    di = diagonal_inner(form)
    assert di.blocks[0].order == 0
    assert_allclose(di.blocks[0].D, [[1.0]])


# --- coprime factors --------------------------------------------------------

def test_coprime_scalar_normalization():
    sys = realize(TransferMatrix(num=(((1.0,),),), den=(((1.0, -2.0),),)))
    M, N = coprime_factorize(sys, np.array([[1.5]]))
    for z in (3.0, 1.0 + 2.0j, -4.0):
        assert_allclose(evaluate(M, z), [[(z - 2.0) / (z - 0.5)]], atol=1e-12)
        assert_allclose(evaluate(N, z) @ np.linalg.inv(evaluate(M, z)),
                        evaluate(sys, z), atol=1e-10)
    assert_allclose(M.D, [[1.0]])


def test_coprime_rejects_destabilizing_gain():
    sys = realize(TransferMatrix(num=(((1.0,),),), den=(((1.0, -2.0),),)))
    with pytest.raises(ValueError, match="stabilize"):
        coprime_factorize(sys, np.array([[0.0]]))


def test_coprime_diagonal_matches_monic_allpass(example_ss):
    # diag(M) for a block-ordered gain equals the all-pass diagonal up to the
    # constant prod(conj(lambda)) that makes each quotient monic at infinity
    form = wonham_decompose(example_ss, (0, 1))
    F = wonham_gain(form)
    M, _ = coprime_factorize(example_ss, F)
    lam = form.lambda_by_channel()
    for j in range(2):
        const = np.prod([np.conj(v) for v in lam[j]])
        for z in (2.2 + 0.5j, -1.8 + 1.1j, 4.0):
            got = evaluate(M, z)[j, j]
            want = const * _blaschke_eval(lam[j], z)
            assert abs(got - want) < 1e-7
    # the identity ordering also makes M upper triangular
    for z in (2.2 + 0.5j, 4.0):
        assert abs(evaluate(M, z)[1, 0]) < 1e-8


def test_bezout_identities(example_ss):
    form = wonham_decompose(example_ss, (0, 1))
    F = wonham_gain(form)
    L = observer_gain(example_ss)
    bz = bezout(example_ss, F, L)
    for sys in (bz.M, bz.N, bz.X, bz.Y, bz.Mt, bz.Nt, bz.Xt, bz.Yt):
        assert spectral_radius(sys.A) < 1.0
    rng = np.random.default_rng(2024)
    for _ in range(8):
        z = 1.6 * np.exp(2j * np.pi * rng.random())
        left = np.block([
            [evaluate(bz.Xt, z), -evaluate(bz.Yt, z)],
            [-evaluate(bz.Nt, z), evaluate(bz.Mt, z)],
        ])
        right = np.block([
            [evaluate(bz.M, z), evaluate(bz.Y, z)],
            [evaluate(bz.N, z), evaluate(bz.X, z)],
        ])
        assert np.max(np.abs(left @ right - np.eye(4))) < 1e-7
        G = evaluate(example_ss, z)
        assert_allclose(evaluate(bz.N, z) @ np.linalg.inv(evaluate(bz.M, z)), G, atol=1e-8)
        assert_allclose(np.linalg.inv(evaluate(bz.Mt, z)) @ evaluate(bz.Nt, z), G, atol=1e-8)


def test_gamma_scale():
    rng = np.random.default_rng(1)
    A = 0.5 * np.eye(2)
    sys = StateSpaceModel(A, rng.standard_normal((2, 2)),
                          rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
    g = np.array([1.0, 0.3])
    z = 1.9
    S = np.diag(g)
    assert_allclose(evaluate(gamma_scale(sys, g), z),
                    S @ evaluate(sys, z) @ np.linalg.inv(S), atol=1e-12)
    with pytest.raises(ValueError, match="positive"):
        gamma_scale(sys, np.array([1.0, -1.0]))


# --- inner-outer ------------------------------------------------------------

def test_inner_outer_scalar():
    sys = realize(TransferMatrix(num=(((1.0, -2.0),),), den=(((1.0, -0.5),),)))
    pair = inner_outer(sys)
    assert len(pair.factors) == 1
    assert pair.factors[0].zero == pytest.approx(2.0)
    assert is_balanced_inner(pair.inner, tol=1e-10)
    for z in (1.4 + 0.9j, -2.5, 5.0):
        assert_allclose(evaluate(pair.inner, z) @ evaluate(pair.outer, z),
                        evaluate(sys, z), atol=1e-9)
        assert_allclose(evaluate(pair.inner, z), [[_blaschke_eval([2.0], z)]], atol=1e-9)
    assert spectral_radius(pair.outer.A) < 1.0


def test_inner_outer_minimum_phase_passthrough():
    sys = realize(TransferMatrix(num=(((1.0, -0.3),),), den=(((1.0, -0.5),),)))
    pair = inner_outer(sys)
    assert pair.factors == ()
    assert pair.inner.order == 0
    assert_allclose(pair.inner.D, [[1.0]])


def test_inner_outer_rejects_repeated_zero():
    num = tuple(np.convolve([1.0, -2.0], [1.0, -2.0]))
    den = tuple(np.convolve([1.0, -0.5], [1.0, -0.4]))
    sys = realize(TransferMatrix(num=((num,),), den=((den,),)))
    with pytest.raises(ValueError, match="repeated"):
        inner_outer(sys)


def test_inner_outer_rejects_circle_zero():
    sys = realize(TransferMatrix(num=(((1.0, -1.0),),), den=(((1.0, -0.5),),)))
    with pytest.raises(ValueError, match="unit circle"):
        inner_outer(sys)


def test_inner_outer_coprime_factor(example_ss):
    # the M factor's unstable zeros are the plant's unstable poles
    form = wonham_decompose(example_ss, (0, 1))
    F = wonham_gain(form)
    M, _ = coprime_factorize(example_ss, F)
    for g in (np.array([1.0, 1.0]), np.array([1.0, 0.02])):
        pair = inner_outer(gamma_scale(M, g))
        zs = sorted(np.real([f.zero for f in pair.factors]))
        assert_allclose(zs, [-1.5, 2.0, 2.5], atol=1e-7)
        assert is_balanced_inner(pair.inner, tol=1e-8)
        assert abs(abs(np.linalg.det(pair.inner.D)) - 1.0 / 7.5) < 1e-9
        assert spectral_radius(pair.outer.A) < 1.0
        # outer is minimum phase: its inverse is stable too
        from dropstab.statespace import inverse
        assert spectral_radius(inverse(pair.outer).A) < 1.0
        Mg = gamma_scale(M, g)
        rng = np.random.default_rng(7)
        for _ in range(6):
            z = 1.8 * np.exp(2j * np.pi * rng.random())
            assert_allclose(evaluate(pair.inner, z) @ evaluate(pair.outer, z),
                            evaluate(Mg, z), atol=1e-8)
        # inner is genuinely all-pass on the circle
        u = evaluate(pair.inner, np.exp(0.7j))
        assert_allclose(u.conj().T @ u, np.eye(2), atol=1e-8)


# --- assumption checker -----------------------------------------------------

def test_validate_assumption_benchmark(example_tf):
    zeros = validate_assumption(example_tf)
    assert zeros == pytest.approx((-2.0, 1.5), abs=1e-8)


def test_validate_assumption_stable_mp_plant():
    tf = TransferMatrix(
        num=(((1.0,), (0.0,)), ((0.0,), (1.0,))),
        den=(((1.0, -0.5), (1.0,)), ((1.0,), (1.0, 0.3))),
    )
    assert validate_assumption(tf) == (None, None)


def test_validate_assumption_rejects_nonsquare():
    tf = TransferMatrix(num=(((1.0,), (1.0,)),), den=(((1.0, -0.5), (1.0, -0.5)),))
    with pytest.raises(AssumptionViolation, match="square"):
        validate_assumption(tf)


def test_validate_assumption_rejects_biproper():
    tf = TransferMatrix(num=(((1.0, 0.0),),), den=(((1.0, -0.5),),))
    with pytest.raises(AssumptionViolation, match="strictly proper"):
        validate_assumption(tf)


def test_validate_assumption_rejects_double_unstable_zero():
    num = tuple(np.convolve([1.0, -2.0], [1.0, -3.0]))
    den = (1.0, -0.5, 0.0, 0.0)
    tf = TransferMatrix(num=((num,),), den=((den,),))
    with pytest.raises(AssumptionViolation, match="unstable zeros"):
        validate_assumption(tf)


def test_validate_assumption_rejects_rank_deficient_lead():
    tf = TransferMatrix(
        num=(((1.0,), (1.0,)), ((1.0,), (1.0,))),
        den=(((1.0, 0.0), (1.0, -0.5)), ((1.0, 0.5), (1.0, 0.0))),
    )
    with pytest.raises(AssumptionViolation, match="relative degree"):
        validate_assumption(tf)


def test_validate_assumption_rejects_nmp_core():
    # no column-common zeros, but det G vanishes outside the disc
    tf = TransferMatrix(
        num=(((1.0,), (1.0,)), ((1.0,), (1.02,))),
        den=(((1.0, 0.0), (1.0, -0.5)), ((1.0, 0.5), (1.0, 0.0))),
    )
    with pytest.raises(AssumptionViolation, match="non-minimum-phase"):
        validate_assumption(tf)


def test_validate_assumption_unstable_shared_pole_cleared(example_tf):
    # clearing denominators by the root-multiset lcm must NOT invent common
    # zeros out of the other cells' poles; this plant's column-1 cells share
    # only z = -2 even though their pole sets overlap
    zeros = validate_assumption(example_tf)
    assert zeros[0] == pytest.approx(-2.0, abs=1e-8)
