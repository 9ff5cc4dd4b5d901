import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w2s_rf import features as F
from w2s_rf import spectrum as S
from w2s_rf import teacher as TT

from conftest import arccos_gram


def lstsq_loss(C, beta):
    # independent: distance of beta to the row space of C
    coef, *_ = np.linalg.lstsq(C.T, beta, rcond=None)
    r = beta - C.T @ coef
    return float(r @ r)


@pytest.mark.parametrize("m", [1, 4, 30, 64, 80])
def test_linear_teacher_matches_lstsq(lin_thm32, m):
    ens = F.sample(S.LINEAR, m, 65, lin_thm32, seed=m)
    beta = np.random.default_rng(m).standard_normal(65)
    t = F.coordinate_linear(beta)
    te = TT.train(ens, lin_thm32, t)
    assert te.loss_te == pytest.approx(lstsq_loss(ens.C, t.vector), abs=1e-10)
    assert te.pythagoras_loss == pytest.approx(te.loss_te, abs=1e-10)


def test_full_width_linear_teacher_is_exact(lin_thm32):
    ens = F.sample(S.LINEAR, 70, 65, lin_thm32, seed=0)
    te = TT.train(ens, lin_thm32, F.make_target("linear", lin_thm32))
    assert abs(te.loss_te) < 1e-10
    assert te.rank == 65


def test_relu_teacher_against_arccos(relu8):
    ens = F.sample(S.RELU, 10, 8, relu8, seed=4)
    t = F.make_target("linear", relu8)
    te = TT.train(ens, relu8, t)
    Phi = arccos_gram(ens.U, ens.U, 8)
    v = F.target_cross(ens, relu8, t)
    ref = 1 - v @ np.linalg.solve(Phi, v)
    assert te.loss_te == pytest.approx(ref, rel=1e-6)
    assert 0 < te.loss_te < 1


def test_teacher_decomposition(relu8_teacher):
    te = relu8_teacher
    assert te.energies.sum() == pytest.approx(te.norm2, rel=1e-12)
    # least squares: <f, f*> = ||f||^2
    assert te.cross.sum() == pytest.approx(te.norm2, rel=1e-9)
    assert te.loss_te == pytest.approx(1 - te.norm2, abs=1e-12)
    assert te.K == 1
    np.testing.assert_array_equal(np.nonzero(te.cross)[0], [1])


def test_residual_energy_above(relu8_teacher):
    te = relu8_teacher
    assert TT.residual_energy_above(te, 1) == pytest.approx(te.energies[2:].sum())
    assert TT.residual_energy_above(te, te.energies.size - 1) == 0.0
    with pytest.raises(ValueError):
        TT.residual_energy_above(te, 0)


def test_pinv_solve_rank_deficient():
    Phi = np.diag([2.0, 1.0, 0.0])
    w, r = TT.psd_pinv_solve(Phi, np.array([2.0, 3.0, 5.0]))
    np.testing.assert_allclose(w, [1.0, 3.0, 0.0])
    assert r == 2
    with pytest.raises(ValueError):
        TT.psd_pinv_solve(np.zeros((2, 2)), np.ones(2))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 40))
def test_loss_in_unit_interval(seed, m):
    sp = S.linear_spectrum("thm33", alpha=1.0, d=21)
    te = TT.train(F.sample(S.LINEAR, m, 21, sp, seed), sp, F.make_target("linear", sp))
    assert -1e-10 <= te.loss_te <= 1 + 1e-10


def test_more_features_never_hurt(lin_thm32):
    t = F.make_target("linear", lin_thm32)
    big = F.sample(S.LINEAR, 40, 65, lin_thm32, seed=1)
    prev = 1.0
    for m in (5, 10, 20, 40):
        sub = F.FeatureEnsemble(S.LINEAR, 65, m, 1, C=big.C[:m])
        L = TT.train(sub, lin_thm32, t).loss_te
        assert L <= prev + 1e-12
        prev = L
