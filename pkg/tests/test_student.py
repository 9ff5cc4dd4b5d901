import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w2s_rf import features as F
from w2s_rf import spectrum as S
from w2s_rf import student as ST
from w2s_rf import teacher as TT
from w2s_rf.teacher import TeacherModel


@pytest.fixture
def scalar():
    # one group, lambda = 1: teacher f = 0.8 f* + orthogonal part with ||f||^2 = 1
    sp = S.spectrum_from_psi([1.0])
    te = TeacherModel(w=np.zeros(1), loss_te=0.4, energies=np.array([1.0]),
                      cross=np.array([0.8]), norm2=1.0, rank=1, K=0, target_mass=np.array([1.0]))
    return sp, te


def test_scalar_closed_form(scalar):
    sp, te = scalar
    T = math.log(5.0)           # gain 0.8
    lst, ltt = ST.losses(te, sp, np.array([T]))
    assert lst[0] == pytest.approx(0.36, abs=1e-14)
    assert ltt[0] == pytest.approx(0.04, abs=1e-14)
    tr = ST.trajectory(te, sp, 0.01, 50, 100)
    assert tr.t_opt == pytest.approx(T, rel=1e-4)
    assert tr.lst_opt == pytest.approx(0.36, abs=1e-12)


def test_time_limits(scalar):
    sp, te = scalar
    assert ST.loss_at(te, sp, 0.0) == (pytest.approx(1.0), pytest.approx(1.0))
    assert ST.loss_at(te, sp, math.inf) == (pytest.approx(0.4), 0.0)
    assert ST.loss_at(te, sp, 200.0)[0] == pytest.approx(0.4, abs=1e-12)
    with pytest.raises(ValueError):
        ST.loss_at(te, sp, -1.0)


def test_gain_small_t_no_cancellation():
    g = ST._gain(np.array([1e-3]), np.array([1e-14]))
    assert g[0, 0] == pytest.approx(1e-17, rel=1e-12)


def test_losses_vectorized_match_scalar(relu8_teacher, relu8):
    T = np.geomspace(1, 1e4, 9)
    lst, _ = ST.losses(relu8_teacher, relu8, T)
    for t, l in zip(T, lst):
        assert ST.loss_at(relu8_teacher, relu8, t)[0] == pytest.approx(l, rel=1e-14)


def test_shrink_gap_nonnegative(relu8_teacher, relu8):
    T = np.geomspace(1e-2, 1e6, 30)
    assert np.all(ST.shrink_gap(relu8_teacher, relu8, T) >= 0)
    # L_ST = ||f*||^2 - 2<f_T,f*> + ||f_T||^2 agrees with the norm identity
    n2 = ST.predictor_norm2(relu8_teacher, relu8, T)
    assert np.all(n2 <= relu8_teacher.norm2 * (1 + 1e-12))


def test_trajectory_endpoints_and_refine(relu8_teacher, relu8):
    tr = ST.trajectory(relu8_teacher, relu8, 1.0, 1e5, 50)
    assert tr.times[0] == 1.0 and tr.times[-1] == 1e5
    assert tr.lst_opt <= tr.loss_st.min() + 1e-16
    with pytest.raises(ValueError):
        ST.trajectory(relu8_teacher, relu8, 5.0, 1.0, 10)


def test_stopping_rule(lin_thm32):
    assert ST.stopping_rule(lin_thm32, 1, 0.01) == pytest.approx(math.log(100) / lin_thm32.groups[1].eigenvalue)
    with pytest.raises(ValueError):
        ST.stopping_rule(lin_thm32, 0, 0.0)


def test_pgr_lower():
    assert ST.pgr_lower(0.5, 0.25) == 0.5
    with pytest.raises(ValueError):
        ST.pgr_lower(0.0, 0.1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=5), st.floats(0.0, 1e3))
def test_losses_match_direct_sum(energies, T):
    psi = sorted(np.linspace(1, 0.1, len(energies)), reverse=True)
    sp = S.spectrum_from_psi(psi)
    E = np.array(energies)
    X = 0.5 * E
    te = TeacherModel(np.zeros(1), 0.0, E, X, E.sum(), 1, len(E) - 1, np.ones(len(E)) / len(E))
    lst, ltt = ST.losses(te, sp, np.array([T]))
    a = 1 - np.exp(-np.asarray(psi) * T)
    assert lst[0] == pytest.approx(1 + np.sum(a * a * E) - 2 * np.sum(a * X), abs=1e-12)
    assert ltt[0] == pytest.approx(np.sum((1 - a) ** 2 * E), abs=1e-12)


# ---------------------------------------------------------------- finite width

def test_gram_path_matches_svd_path(lin_thm32):
    t = F.make_target("linear", lin_thm32)
    te = TT.train(F.sample(S.LINEAR, 20, 65, lin_thm32, seed=1), lin_thm32, t)
    stu = F.sample(S.LINEAR, 30, 65, lin_thm32, seed=1, role=F.STUDENT_ROLE)
    times = np.array([0.5, 5.0, 50.0])
    a = ST.finite_width_oracle(stu, te, t, lin_thm32, times)
    h = te.ensemble.C.T @ te.w
    b = ST.gram_flow_losses(stu.C @ stu.C.T, stu.C @ h, stu.C @ t.vector, 1.0, 30, times)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_finite_width_converges_linear(lin_thm32):
    t = F.make_target("linear", lin_thm32)
    te = TT.train(F.sample(S.LINEAR, 20, 65, lin_thm32, seed=2), lin_thm32, t)
    T = 100.0
    inf = ST.loss_at(te, lin_thm32, T)[0]
    gaps = [abs(ST.finite_width_oracle(F.sample(S.LINEAR, M, 65, lin_thm32, seed=5,
                                                role=F.STUDENT_ROLE), te, t, lin_thm32, T) - inf)
            for M in (256, 4096)]
    assert gaps[1] < gaps[0]
    assert gaps[1] / inf < 0.05


def test_finite_width_relu_runs(relu8_teacher, relu8):
    t = F.make_target("linear", relu8)
    stu = F.sample(S.RELU, 64, 8, relu8, seed=0, role=F.STUDENT_ROLE)
    out = ST.finite_width_oracle(stu, relu8_teacher, t, relu8, np.array([0.0, 1e3]))
    assert out[0] == pytest.approx(1.0, abs=1e-12)
    assert 0 < out[1] < 1


def test_finite_width_rejects_mixed(relu8_teacher, relu8, lin_thm32):
    stu = F.sample(S.LINEAR, 4, 65, lin_thm32, seed=0, role=F.STUDENT_ROLE)
    with pytest.raises(ValueError):
        ST.finite_width_oracle(stu, relu8_teacher, F.make_target("linear", relu8), relu8, 1.0)
