import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w2s_rf import features as F
from w2s_rf import spectrum as S

from conftest import arccos_gram, sphere


def test_unit_stream_prefix_stable(relu8):
    a = F.sample(S.RELU, 5, 8, relu8, seed=11)
    b = F.sample(S.RELU, 9, 8, relu8, seed=11)
    np.testing.assert_array_equal(a.U, b.U[:5])


def test_roles_are_independent(relu8):
    a = F.sample(S.RELU, 4, 8, relu8, seed=11, role=F.TEACHER_ROLE)
    b = F.sample(S.RELU, 4, 8, relu8, seed=11, role=F.STUDENT_ROLE)
    assert not np.allclose(a.U, b.U)


def test_relu_units_on_sphere(relu8):
    U = F.sample(S.RELU, 50, 8, relu8, seed=0).U
    np.testing.assert_allclose(np.linalg.norm(U, axis=1), 1.0, atol=1e-14)


def test_linear_coefficient_scale():
    sp = S.linear_spectrum("custom", psi=[4.0, 1.0, 0.25])
    C = F.sample(S.LINEAR, 20000, 3, sp, seed=5).C
    np.testing.assert_allclose(C.var(axis=0), [4.0, 1.0, 0.25], rtol=0.05)


def test_sample_rejects_mismatch(relu8):
    with pytest.raises(ValueError):
        F.sample(S.RELU, 4, 9, relu8, seed=0)
    with pytest.raises(ValueError):
        F.sample(S.RELU, 0, 8, relu8, seed=0)


@pytest.mark.parametrize("d", [8, 32])
def test_relu_gram_matches_arccos_kernel(d):
    sp = S.relu_spectrum(d, 1e-8)
    ens = F.sample(S.RELU, 20, d, sp, seed=d)
    Phi = F.gram(ens, sp)
    exact = arccos_gram(ens.U, ens.U, d)
    # truncation leaves at most tol * 1/(2d) of mass on the diagonal
    np.testing.assert_allclose(Phi, exact, atol=1e-8 / (2 * d) * 1.01, rtol=0)


def test_relu_gram_monte_carlo(relu8):
    d = 8
    ens = F.sample(S.RELU, 3, d, relu8, seed=2)
    X = sphere(400000, d, np.random.default_rng(7))
    G = np.maximum(X @ ens.U.T, 0)
    prod = G[:, :, None] * G[:, None, :]
    se = prod.std(axis=0) / math.sqrt(len(X))
    assert np.all(np.abs(prod.mean(axis=0) - F.gram(ens, relu8)) < 5 * se)


def test_cross_gram_symmetric(relu8):
    a = F.sample(S.RELU, 4, 8, relu8, seed=1)
    b = F.sample(S.RELU, 6, 8, relu8, seed=1, role=F.STUDENT_ROLE)
    np.testing.assert_allclose(F.cross_gram(a, b, relu8), F.cross_gram(b, a, relu8).T, atol=1e-16)
    np.testing.assert_allclose(F.cross_gram(a, b, relu8), arccos_gram(a.U, b.U, 8), atol=1e-9)


def test_blocks_sum_to_gram(relu8, lin_thm32):
    for sp, tag, d in ((relu8, S.RELU, 8), (lin_thm32, S.LINEAR, 65)):
        ens = F.sample(tag, 7, d, sp, seed=4)
        tot = sum(F.order_gram(ens, sp, g) for g in range(sp.n_groups))
        np.testing.assert_allclose(tot, F.gram(ens, sp), atol=1e-14)
        A = F.top_grams(ens, sp, [0, sp.n_groups - 1])
        np.testing.assert_allclose(A[sp.n_groups - 1], F.gram(ens, sp), atol=1e-14)
        np.testing.assert_allclose(A[0], F.order_gram(ens, sp, 0), atol=1e-15)


def test_group_quadratic(relu8):
    ens = F.sample(S.RELU, 5, 8, relu8, seed=9)
    w = np.random.default_rng(0).standard_normal(5)
    q = F.group_quadratic(ens, relu8, w)
    assert np.all(q >= -1e-18)
    assert q.sum() == pytest.approx(w @ F.gram(ens, relu8) @ w, rel=1e-12)
    assert q[2] == pytest.approx(w @ F.order_gram(ens, relu8, 2) @ w, rel=1e-10)


def test_order_gram_bad_index(relu8):
    ens = F.sample(S.RELU, 2, 8, relu8, seed=0)
    with pytest.raises(IndexError):
        F.order_gram(ens, relu8, relu8.n_groups)


def test_relu_gram_needs_truncation():
    sp = S.KernelSpectrum(S.RELU, 8, (S.Group(S.relu_sigma(0, 8) ** 2, 1, 0),))
    ens = F.FeatureEnsemble(S.RELU, 8, 2, 0, U=np.eye(8)[:2])
    with pytest.raises(ValueError):
        F.gram(ens, sp)


# ---------------------------------------------------------------- targets

def test_target_normalization():
    t = F.linear_direction([3.0, 4.0])
    assert t.norm2 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        F.linear_direction([0.0, 0.0])


def test_harmonic_ridge_rejects_odd():
    with pytest.raises(ValueError):
        F.harmonic_ridge(3, [1.0, 0.0, 0.0])
    F.harmonic_ridge(1, [1.0, 0.0, 0.0])


def test_linear_direction_cross_monte_carlo(relu8):
    d = 8
    ens = F.sample(S.RELU, 3, d, relu8, seed=6)
    t = F.make_target("linear", relu8)
    X = sphere(10 ** 6, d, np.random.default_rng(1))
    fs = math.sqrt(d) * X @ t.vector
    mc = np.maximum(X @ ens.U.T, 0).T @ fs / len(X)
    np.testing.assert_allclose(F.target_cross(ens, relu8, t), mc, atol=2e-3)


def test_harmonic_cross_monte_carlo(relu8):
    d, k = 8, 2
    ens = F.sample(S.RELU, 4, d, relu8, seed=8)
    t = F.harmonic_ridge(k, np.eye(d)[1])
    X = sphere(10 ** 6, d, np.random.default_rng(2))
    fs = math.sqrt(S.harmonic_dim(k, d)) * S.gegenbauer(k, d, X @ t.vector)
    assert np.mean(fs ** 2) == pytest.approx(1.0, rel=0.02)
    mc = np.maximum(X @ ens.U.T, 0).T @ fs / len(X)
    np.testing.assert_allclose(F.target_cross(ens, relu8, t), mc, atol=3e-3)


def test_target_mass_and_support(relu8, lin_thm32):
    t = F.make_target("linear", relu8)
    mass = F.target_group_mass(relu8, t)
    assert mass[1] == pytest.approx(1.0) and mass.sum() == pytest.approx(1.0)
    assert F.target_support(relu8, t) == 1
    tl = F.coordinate_linear(np.r_[1.0, 1.0, np.zeros(63)])
    m = F.target_group_mass(lin_thm32, tl)
    np.testing.assert_allclose(m, [0.5, 0.5])
    assert F.target_support(lin_thm32, tl) == 1


def test_target_family_model_checks(relu8, lin_thm32):
    with pytest.raises(ValueError):
        F.target_group_mass(lin_thm32, F.harmonic_ridge(2, np.eye(65)[0]))
    with pytest.raises(ValueError):
        F.target_group_mass(relu8, F.coordinate_linear(np.eye(8)[0]))
    with pytest.raises(ValueError):
        F.target_group_mass(relu8, F.linear_direction(np.ones(5)))


def test_linear_cross_matches_definition(lin_thm32):
    ens = F.sample(S.LINEAR, 6, 65, lin_thm32, seed=1)
    t = F.coordinate_linear(np.random.default_rng(3).standard_normal(65))
    np.testing.assert_allclose(F.target_cross(ens, lin_thm32, t), ens.C @ t.vector, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 12))
def test_gram_psd(seed, m):
    sp = S.linear_spectrum("custom", psi=[1.0, 0.3, 0.3, 0.01])
    ens = F.sample(S.LINEAR, m, 4, sp, seed)
    assert np.linalg.eigvalsh(F.gram(ens, sp)).min() > -1e-12


# ---------------------------------------------------------------- io

def test_save_load_roundtrip(tmp_path, relu8, lin_thm32):
    for sp, tag, d in ((relu8, S.RELU, 8), (lin_thm32, S.LINEAR, 65)):
        ens = F.sample(tag, 5, d, sp, seed=21, role=F.STUDENT_ROLE)
        p = tmp_path / f"{tag}.npz"
        F.save_ensemble(p, ens, sp)
        back = F.load_ensemble(p, sp)
        np.testing.assert_array_equal(back.matrix, ens.matrix)
        assert (back.m, back.d, back.seed, back.role) == (5, d, 21, F.STUDENT_ROLE)
    with pytest.raises(ValueError):
        F.load_ensemble(tmp_path / f"{S.RELU}.npz", S.relu_spectrum(8, 1e-6))
