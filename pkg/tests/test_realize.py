import numpy as np
import pytest

from slsid import (
    DeterministicModel,
    EMPTY_WORD,
    InnovationModel,
    MissingMarkovParameterError,
    NoSelectionFoundError,
    NonConvergenceError,
    NotFullRankError,
    Selection,
    SingularHankelError,
    Word,
    WordIndexedMatrixTable,
    associated_dlss,
    associated_slss,
    covariance_realization,
    enumerate_words,
    exact_covariances,
    find_isomorphism,
    ho_kalman,
    input_state_second_moment,
    iter_full_rank_selections,
    lambda_ydyd,
    markov_parameter,
    psi_uy,
    search_selection,
    state_second_moment,
)


def unit_innovation(a=0.5, k=1.0, c=1.0, b=0.0, d=0.0, q_v=1.0, q_u=1.0):
    return InnovationModel.from_parts(
        (np.array([[a]]),), (np.array([[b]]),), (np.array([[k]]),),
        np.array([[c]]), np.array([[d]]), (1.0,), np.array([[q_u]]),
        (np.array([[q_v]]),))


# ---------------------------------------------------------------- moments


def test_state_second_moment_scalar_closed_form():
    # P = a^2 P + k^2 Q_v  =>  P = 1 / (1 - 0.25) = 4/3
    P = state_second_moment(unit_innovation())
    assert P[0][0, 0] == pytest.approx(4.0 / 3.0, abs=1e-9)


def test_state_second_moment_satisfies_recursion(two_mode):
    m = two_mode.model
    P = state_second_moment(m)
    core = sum(m.A[s] @ P[s] @ m.A[s].T + m.K[s] @ m.Q_v[s] @ m.K[s].T
               for s in range(2))
    for s in range(2):
        assert np.max(np.abs(P[s] - m.p[s] * core)) < 1e-9


def test_input_state_second_moment_scalar_closed_form(scalar):
    m_d = DeterministicModel(A=(np.array([[scalar.a]]),),
                             B=(np.array([[scalar.b]]),),
                             C=np.array([[scalar.c]]),
                             Dmat=np.array([[scalar.d]]))
    P = input_state_second_moment(m_d, np.array([[scalar.q_u]]), (1.0,))
    want = scalar.b ** 2 * scalar.q_u / (1 - scalar.a ** 2)
    assert P[0][0, 0] == pytest.approx(want, abs=1e-9)


def test_input_moment_fails_fast_on_unstable_family():
    m_d = DeterministicModel(A=(np.array([[1.2]]),), B=(np.array([[1.0]]),),
                             C=np.array([[1.0]]), Dmat=np.array([[0.0]]))
    with pytest.raises(NonConvergenceError) as err:
        input_state_second_moment(m_d, np.array([[1.0]]), (1.0,))
    assert "spectral radius" in str(err.value)
    assert err.value.last_delta == np.inf


def test_associated_dlss_scalar_hand_values():
    # G = (a P c + k Q_v) / sqrt(p) with P = 4/3: G = 2/3 + 1 = 5/3
    d = associated_dlss(unit_innovation())
    assert d.B[0][0, 1] == pytest.approx(5.0 / 3.0, abs=1e-9)
    assert d.B[0][0, 0] == 0.0  # sqrt(p) B = 0
    assert np.array_equal(d.Dmat, [[0.0, 1.0]])


# ---------------------------------------------------------------- ho-kalman


def random_dlss(rng, n=2, n_modes=2):
    A = []
    for _ in range(n_modes):
        raw = rng.normal(size=(n, n))
        A.append(0.4 * raw / max(1.0, np.max(np.abs(np.linalg.eigvals(raw)))))
    B = [rng.normal(size=(n, 1)) for _ in range(n_modes)]
    return DeterministicModel(A=tuple(A), B=tuple(B),
                              C=rng.normal(size=(1, n)),
                              Dmat=rng.normal(size=(1, 1)))


def markov_table(d, max_len):
    t = WordIndexedMatrixTable((d.n_y, d.n_u))
    for w in enumerate_words(d.n_modes, max_len, min_len=1):
        t[w] = markov_parameter(d, w)
    return t


def test_ho_kalman_recovers_markov_parameters():
    rng = np.random.default_rng(17)
    d0 = random_dlss(rng)
    table = markov_table(d0, 5)
    sel = search_selection(table, 2, 1, 1, 2)
    d1 = ho_kalman(sel, table, markov_parameter(d0, EMPTY_WORD))
    for w in enumerate_words(2, 4):
        assert np.allclose(markov_parameter(d1, w), markov_parameter(d0, w),
                           atol=1e-8)


def test_ho_kalman_reports_rank_deficiency():
    # a = 0 kills every parameter of length > 1, so no 2x2 sub-Hankel works
    t = WordIndexedMatrixTable((1, 1))
    t[Word((1,))] = [[1.0]]
    for m in range(2, 5):
        t[Word((1,) * m)] = [[0.0]]
    sel = Selection(((EMPTY_WORD, 1), (Word((1,)), 1)),
                    ((1, EMPTY_WORD, 1), (1, Word((1,)), 1)),
                    n_modes=1, n_y=1, n_cols=1)
    with pytest.raises(SingularHankelError) as err:
        ho_kalman(sel, t, [[0.0]])
    assert err.value.rank == 1


# ---------------------------------------------------------------- conversions


def test_psi_uy_divides_by_q_u(two_mode_cov):
    words = [EMPTY_WORD, Word((1,)), Word((2, 1))]
    psi = psi_uy(two_mode_cov, words)
    for w in words:
        want = two_mode_cov.lambda_yu[w] / two_mode_cov.q_u[0, 0]
        assert np.allclose(psi[w], want, atol=1e-12)


def test_psi_uy_rejects_singular_q_u(two_mode_cov):
    from slsid import CovarianceTable

    broken = CovarianceTable(lambda_yu=two_mode_cov.lambda_yu,
                             lambda_yy=two_mode_cov.lambda_yy,
                             t_yy_sigma=two_mode_cov.t_yy_sigma,
                             q_u=[[0.0]], p=two_mode_cov.p)
    with pytest.raises(NotFullRankError):
        psi_uy(broken, [EMPTY_WORD])


def test_lambda_ydyd_scalar_closed_form(scalar):
    m_d = DeterministicModel(A=(np.array([[scalar.a]]),),
                             B=(np.array([[scalar.b]]),),
                             C=np.array([[scalar.c]]),
                             Dmat=np.array([[scalar.d]]))
    words = [EMPTY_WORD] + [Word((1,) * m) for m in range(1, 4)]
    table, t_dd = lambda_ydyd(m_d, np.array([[scalar.q_u]]), (1.0,), words, (1,))
    pi_d = scalar.b ** 2 * scalar.q_u / (1 - scalar.a ** 2)
    core = scalar.a * pi_d * scalar.c + scalar.b * scalar.q_u * scalar.d
    for m in range(1, 4):
        want = scalar.c * scalar.a ** (m - 1) * core
        assert table[Word((1,) * m)][0, 0] == pytest.approx(want, abs=1e-9)
    want_t = scalar.c ** 2 * pi_d + scalar.d ** 2 * scalar.q_u
    assert t_dd[1][0, 0] == pytest.approx(want_t, abs=1e-9)
    # one mode: the stationary output moment equals the per-mode one
    assert table[EMPTY_WORD][0, 0] == pytest.approx(want_t, abs=1e-9)


def test_associated_slss_round_trip(two_mode):
    m = two_mode.model
    P = state_second_moment(m)
    t_ys = {s + 1: (m.C @ P[s] @ m.C.T + m.Q_v[s]) / m.p[s] for s in range(2)}
    back, state = associated_slss(associated_dlss(m), m.p, t_ys,
                                  q_u=m.Q_u, return_state=True)
    assert state.last_delta < 1e-10
    assert state.iterations < 200
    find_isomorphism(back, m, tol=1e-8)
    for s in range(2):
        assert back.Q_v[s][0, 0] == pytest.approx(1.125, abs=1e-8)


# ---------------------------------------------------------------- search


def test_search_selection_first_hit_is_deterministic(two_mode):
    table = markov_table(associated_dlss(two_mode.model), 5)
    sel = search_selection(table, 3, 1, 2, 2)
    assert sel.to_jsonable() == {
        "alpha": [["e", 1], ["1", 1], ["2", 1]],
        "beta": [[1, "e", 1], [1, "e", 2], [2, "e", 1]],
    }
    assert search_selection(table, 3, 1, 2, 2) == sel


def test_search_selection_skip_advances(two_mode):
    table = markov_table(associated_dlss(two_mode.model), 5)
    first = search_selection(table, 3, 1, 2, 2, skip=0)
    second = search_selection(table, 3, 1, 2, 2, skip=1)
    assert first != second
    hits = iter_full_rank_selections(table, 3, 1, 2, 2)
    assert next(hits) == first
    assert next(hits) == second


def test_search_selection_callable_table(two_mode):
    d = associated_dlss(two_mode.model)
    table = markov_table(d, 5)
    via_fn = search_selection(lambda w: markov_parameter(d, w), 3, 1, 2, 2)
    assert via_fn == search_selection(table, 3, 1, 2, 2)


def test_search_selection_budget_exhaustion(two_mode):
    table = markov_table(associated_dlss(two_mode.model), 5)
    # the system has order 3; no rank-4 selection exists
    with pytest.raises(NoSelectionFoundError):
        search_selection(table, 4, 1, 2, 2, budget=2000)


def test_search_selection_skips_missing_words(two_mode):
    d = associated_dlss(two_mode.model)
    table = markov_table(d, 1)  # too short for any rank-2 candidate
    with pytest.raises(NoSelectionFoundError):
        search_selection(table, 2, 1, 2, 2)


# ---------------------------------------------------------------- pipeline


def test_covariance_realization_oracle_quality(two_mode, two_mode_cov):
    model, diag = covariance_realization(two_mode_cov, two_mode.sel,
                                         two_mode.sel_bar)
    model.validate()
    assert diag["n_x"] == 3
    assert diag["n_bar"] == 3
    assert diag["kq_last_delta"] < 1e-10
    assert {"selection", "selection_bar", "estimator", "kq_iterations"} <= set(diag)
    find_isomorphism(model, two_mode.model, tol=1e-8)


def test_covariance_realization_missing_words(two_mode):
    cov = exact_covariances(two_mode.model, 1)
    with pytest.raises(MissingMarkovParameterError):
        covariance_realization(cov, two_mode.sel, two_mode.sel_bar)


def test_covariance_realization_rejects_overambitious_order(scalar):
    cov = exact_covariances(scalar.model, 5)
    sel = Selection(((EMPTY_WORD, 1), (Word((1,)), 1)),
                    ((1, EMPTY_WORD, 1), (1, Word((1,)), 1)),
                    n_modes=1, n_y=1, n_cols=2)
    sel_bar = Selection(((EMPTY_WORD, 1), (Word((1,)), 1)),
                        ((1, EMPTY_WORD, 1), (1, Word((1,)), 1)),
                        n_modes=1, n_y=1, n_cols=1)
    with pytest.raises(SingularHankelError):
        covariance_realization(cov, sel, sel_bar)
