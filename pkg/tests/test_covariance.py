import numpy as np
import pytest

from slsid import (
    CovarianceTable,
    Dataset,
    DimensionError,
    EMPTY_WORD,
    IllConditionedRegressorError,
    InsufficientDataError,
    SimConfig,
    Word,
    empirical_covariances,
    enumerate_words,
    exact_covariances,
    least_squares_covariances,
    simulate,
    z_process,
)


# ---------------------------------------------------------------- z-process


def test_z_process_hand_values():
    b = np.array([[1.0], [2.0], [3.0]])
    q = np.array([1, 1, 2])
    p = (0.5, 0.5)
    # empty word: the current sample, no scaling
    assert z_process(b, q, p, EMPTY_WORD, 2)[0] == 3.0
    # w = (1): previous sample, scaled by 1/sqrt(p_1), indicator on q(t-1)
    assert z_process(b, q, p, Word((1,)), 1)[0] == pytest.approx(1.0 / np.sqrt(0.5))
    assert z_process(b, q, p, Word((1,)), 2)[0] == pytest.approx(2.0 / np.sqrt(0.5))
    # mode mismatch zeroes the value
    assert z_process(b, q, p, Word((2,)), 2)[0] == 0.0
    # w = (1, 1): needs q(t-2) = q(t-1) = 1
    assert z_process(b, q, p, Word((1, 1)), 2)[0] == pytest.approx(1.0 / 0.5)
    with pytest.raises(IndexError):
        z_process(b, q, p, Word((1,)), 0)


# ---------------------------------------------------------------- direct


def hand_dataset():
    y = np.array([[1.0], [2.0], [-1.0], [3.0], [0.5], [-2.0], [1.5], [4.0]])
    u = np.array([[0.3], [-0.7], [0.2], [0.9], [-0.4], [0.6], [-0.1], [0.8]])
    q = np.array([1, 2, 1, 1, 2, 1, 2, 2])
    return Dataset(y=y, u=u, q=q)


def test_empirical_matches_hand_sums():
    data = hand_dataset()
    p = (0.5, 0.5)
    words = [EMPTY_WORD, Word((1,)), Word((2, 1))]
    with pytest.warns(UserWarning):  # the probe word below never occurs
        cov = empirical_covariances(data, p, words + [Word((2, 2))])
    n0 = 3  # longest word has length 2, so averaging starts at t = 3
    n_eff = len(data) - n0
    assert cov.metadata["N_0"] == n0 and cov.metadata["n_eff"] == n_eff

    y, u, q = data.y[:, 0], data.u[:, 0], data.q
    want_eps = sum(y[t] * u[t] for t in range(n0, 8)) / n_eff
    assert cov.lambda_yu[EMPTY_WORD][0, 0] == pytest.approx(want_eps, abs=1e-12)

    want_1 = sum(y[t] * u[t - 1] * (q[t - 1] == 1) for t in range(n0, 8))
    want_1 /= n_eff * np.sqrt(0.5)
    assert cov.lambda_yu[Word((1,))][0, 0] == pytest.approx(want_1, abs=1e-12)

    want_21 = sum(y[t] * u[t - 2] * (q[t - 2] == 2 and q[t - 1] == 1)
                  for t in range(n0, 8))
    want_21 /= n_eff * np.sqrt(0.25)
    assert cov.lambda_yu[Word((2, 1))][0, 0] == pytest.approx(want_21, abs=1e-12)

    want_yy = sum(y[t] * y[t - 1] * (q[t - 1] == 1) for t in range(n0, 8))
    want_yy /= n_eff * np.sqrt(0.5)
    assert cov.lambda_yy[Word((1,))][0, 0] == pytest.approx(want_yy, abs=1e-12)

    # T^{y,y}_{1,1} is the second moment of z^y_(1)(t) = y(t-1) 1{q(t-1)=1} / sqrt(p_1)
    want_t1 = sum(y[t - 1] ** 2 * (q[t - 1] == 1) for t in range(n0, 8)) / (n_eff * 0.5)
    assert cov.t_yy_sigma[1][0, 0] == pytest.approx(want_t1, abs=1e-12)

    want_qu = sum(u[t] ** 2 for t in range(n0, 8)) / n_eff
    assert cov.q_u[0, 0] == pytest.approx(want_qu, abs=1e-12)

    assert EMPTY_WORD not in cov.lambda_yy
    assert cov.metadata["degenerate_words"] == ["22"]
    assert cov.lambda_yy[Word((2, 2))][0, 0] == 0.0


def test_empirical_requires_enough_samples():
    data = hand_dataset()
    with pytest.raises(InsufficientDataError):
        empirical_covariances(data.slice(0, 4), (0.5, 0.5),
                              [Word((1, 1, 1))])


# ---------------------------------------------------------------- regression


def test_least_squares_agrees_with_direct(two_mode):
    data = simulate(two_mode.model, SimConfig(seed=11, length=2000))
    words = list(enumerate_words(2, 3))
    cov_d = empirical_covariances(data, two_mode.p, words)
    cov_l = least_squares_covariances(data, two_mode.p, words)
    worst = 0.0
    for w in words:
        worst = max(worst, float(np.max(np.abs(cov_d.lambda_yu[w] - cov_l.lambda_yu[w]))))
        if len(w) > 0:
            worst = max(worst, float(np.max(np.abs(cov_d.lambda_yy[w] - cov_l.lambda_yy[w]))))
    for s in (1, 2):
        worst = max(worst, float(np.max(np.abs(cov_d.t_yy_sigma[s] - cov_l.t_yy_sigma[s]))))
    assert worst < 1e-10
    assert cov_d.metadata["estimator"] == "direct"
    assert cov_l.metadata["estimator"] == "ls"


def test_least_squares_rejects_rank_deficient_regressors():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(60, 1))
    data = Dataset(y=y, u=np.zeros((60, 1)), q=np.ones(60, dtype=int))
    with pytest.raises(IllConditionedRegressorError):
        least_squares_covariances(data, (1.0,), [EMPTY_WORD, Word((1,))])


def test_least_squares_rejects_more_columns_than_samples(two_mode):
    data = simulate(two_mode.model, SimConfig(seed=12, length=8))
    words = list(enumerate_words(2, 2))
    with pytest.raises(InsufficientDataError):
        least_squares_covariances(data, two_mode.p, words)


def test_least_squares_words_y_must_nest(two_mode):
    data = simulate(two_mode.model, SimConfig(seed=13, length=500))
    with pytest.raises(DimensionError):
        least_squares_covariances(data, two_mode.p,
                                  [EMPTY_WORD, Word((1,))],
                                  words_y=[Word((2,))])


# ---------------------------------------------------------------- exact


def test_exact_covariances_match_scalar_closed_form(scalar):
    a, b, k, c, d = scalar.a, scalar.b, scalar.k, scalar.c, scalar.d
    q_v, q_u = scalar.q_v, scalar.q_u
    pi_s = k * k * q_v / (1 - a * a)
    pi_d = b * b * q_u / (1 - a * a)
    got = exact_covariances(scalar.model, 4)
    assert got.lambda_yu[EMPTY_WORD][0, 0] == pytest.approx(d * q_u, abs=1e-12)
    for m in range(1, 5):
        w = Word((1,) * m)
        assert got.lambda_yu[w][0, 0] == pytest.approx(
            c * a ** (m - 1) * b * q_u, abs=1e-10)
        want = c * a ** (m - 1) * ((a * pi_s * c + k * q_v)
                                   + (a * pi_d * c + b * q_u * d))
        assert got.lambda_yy[w][0, 0] == pytest.approx(want, abs=1e-10)
    want_t = c * c * (pi_s + pi_d) + q_v + d * d * q_u
    assert got.t_yy_sigma[1][0, 0] == pytest.approx(want_t, abs=1e-10)


def test_empirical_converges_to_exact(two_mode, two_mode_cov):
    data = simulate(two_mode.model, SimConfig(seed=3, length=30000))
    words = list(enumerate_words(2, 2))
    cov = empirical_covariances(data, two_mode.p, words)
    worst = 0.0
    for w in words:
        worst = max(worst, float(np.max(np.abs(
            cov.lambda_yu[w] - two_mode_cov.lambda_yu[w]))))
        if len(w) > 0:
            worst = max(worst, float(np.max(np.abs(
                cov.lambda_yy[w] - two_mode_cov.lambda_yy[w]))))
    assert worst < 0.25
    for s in (1, 2):
        assert abs(cov.t_yy_sigma[s][0, 0]
                   - two_mode_cov.t_yy_sigma[s][0, 0]) < 0.5
    assert abs(cov.q_u[0, 0] - 1.0 / 3.0) < 0.01


# ---------------------------------------------------------------- table


def test_covariance_table_json_round_trip(two_mode_cov):
    obj = two_mode_cov.to_jsonable()
    back = CovarianceTable.from_jsonable(obj)
    for w, m in two_mode_cov.lambda_yu.items():
        assert np.array_equal(back.lambda_yu[w], m)
    for w, m in two_mode_cov.lambda_yy.items():
        assert np.array_equal(back.lambda_yy[w], m)
    assert np.array_equal(back.t_yy_sigma[2], two_mode_cov.t_yy_sigma[2])
    assert np.array_equal(back.p, two_mode_cov.p)


def test_covariance_table_validate():
    from slsid import WordIndexedMatrixTable

    lam_yu = WordIndexedMatrixTable((1, 1), {EMPTY_WORD: [[0.1]]})
    lam_yy = WordIndexedMatrixTable((1, 1), {Word((1,)): [[0.2]]})
    good = CovarianceTable(lambda_yu=lam_yu, lambda_yy=lam_yy,
                           t_yy_sigma={1: [[1.0]]}, q_u=[[0.3]], p=[1.0])
    good.validate()
    with pytest.raises(DimensionError):
        CovarianceTable(lambda_yu=lam_yu, lambda_yy=lam_yy,
                        t_yy_sigma={1: [[-1.0]]}, q_u=[[0.3]], p=[1.0]).validate()
    with pytest.raises(DimensionError):
        CovarianceTable(lambda_yu=lam_yu, lambda_yy=lam_yy,
                        t_yy_sigma={1: [[1.0]]}, q_u=[[0.3]], p=[0.5, 0.6]).validate()
