import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneaware.acoustics import Air, AirCatalog, SubbandT60, T60_COLUMNS, write_catalog_csv
from sceneaware.scene import (
    DEFAULT_EPSILON,
    ObservationError,
    SamplingError,
    SceneDistribution,
    SceneObservations,
    catalog_bounds,
    fit_gaussian,
    inflate,
    load_observations,
    sample_gaussian,
    sample_uniform,
)

I7 = np.eye(7)


def known_gaussian():
    mu = np.array([0.4, 0.5, 0.6, 0.7, 0.6, 0.5, 0.4])
    A = np.random.default_rng(3).normal(0, 0.015, (7, 7))
    return mu, A @ A.T + 0.002 * I7


# -- fitting ---------------------------------------------------------------

def test_identical_observations_have_zero_covariance():
    v = np.array([0.3, 0.4, 0.5, 0.6, 0.5, 0.4, 0.3])
    d = fit_gaussian(SceneObservations(np.tile(v, (6, 1))))
    np.testing.assert_allclose(d.mu, v, rtol=1e-15)
    np.testing.assert_allclose(d.sigma, 0.0, atol=1e-15)
    assert d.epsilon == DEFAULT_EPSILON and d.n_observations == 6


def test_two_observation_hand_covariance():
    d = fit_gaussian(SceneObservations(np.array([[0.4] * 7, [0.6] * 7])))
    np.testing.assert_allclose(d.mu, 0.5)
    # ((0.4-0.5)^2 + (0.6-0.5)^2) / (2-1)
    np.testing.assert_allclose(np.diag(d.sigma), 0.02, rtol=1e-12)
    biased = fit_gaussian(SceneObservations(np.array([[0.4] * 7, [0.6] * 7])), unbiased=False)
    np.testing.assert_allclose(np.diag(biased.sigma), 0.01, rtol=1e-12)


def test_single_observation_leaves_spread_to_inflation():
    d = fit_gaussian(SceneObservations(np.full((1, 7), 0.5)))
    assert np.all(d.sigma == 0.0)
    np.testing.assert_allclose(d.covariance, 0.23 * I7)


def test_fit_recovers_known_mean():
    mu, cov = known_gaussian()
    draws = np.random.default_rng(11).multivariate_normal(mu, cov, 1000)
    d = fit_gaussian(SceneObservations(draws))
    se = np.sqrt(np.diag(cov) / 1000)
    assert np.all(np.abs(d.mu - mu) <= 3 * se)


@pytest.mark.parametrize("bad", [[[0.5] * 6 + [0.0]], [[0.5] * 6 + [np.nan]], [[0.5] * 6]])
def test_observations_validate(bad):
    with pytest.raises(ObservationError):
        SceneObservations(np.array(bad))


# -- inflation -------------------------------------------------------------

def test_inflate_zero_is_identity():
    mu, cov = known_gaussian()
    d = SceneDistribution(mu, cov, epsilon=0.0)
    np.testing.assert_array_equal(inflate(d, 0.0).covariance, cov)


def test_inflate_zero_sigma():
    d = inflate(SceneDistribution(np.full(7, 0.5), np.zeros((7, 7)), 0.0), 0.23)
    np.testing.assert_allclose(d.covariance, 0.23 * I7, rtol=1e-15)


@settings(max_examples=50)
@given(st.floats(0, 2), st.integers(0, 1000))
def test_inflate_changes_only_the_diagonal(eps, seed):
    A = np.random.default_rng(seed).normal(0, 0.1, (7, 7))
    d = SceneDistribution(np.full(7, 0.5), A @ A.T, 0.0)
    e = inflate(d, eps)
    delta = e.covariance - d.covariance
    assert np.trace(delta) == pytest.approx(7 * eps, abs=1e-12)
    np.testing.assert_array_equal(delta - np.diag(np.diag(delta)), 0.0)
    np.testing.assert_array_equal(e.mu, d.mu)


def test_inflate_rejects_negative():
    d = SceneDistribution(np.full(7, 0.5), np.zeros((7, 7)))
    with pytest.raises(ValueError):
        inflate(d, -0.1)


def test_distribution_json_round_trip(tmp_path):
    mu, cov = known_gaussian()
    d = SceneDistribution(mu, cov, 0.1, "oracle-from-airs", 12)
    d.save(tmp_path / "s.json")
    assert set(json.loads((tmp_path / "s.json").read_text())) == {
        "mu", "sigma", "epsilon", "source", "n_observations"}
    back = SceneDistribution.load(tmp_path / "s.json")
    np.testing.assert_array_equal(back.mu, mu)
    np.testing.assert_array_equal(back.sigma, cov)
    assert (back.epsilon, back.source, back.n_observations) == (0.1, "oracle-from-airs", 12)


def test_distribution_validates():
    with pytest.raises(ValueError):
        SceneDistribution(np.full(7, -0.5), np.zeros((7, 7)))
    asym = np.zeros((7, 7))
    asym[0, 1] = 0.1
    with pytest.raises(ValueError):
        SceneDistribution(np.full(7, 0.5), asym)


# -- sampling --------------------------------------------------------------

def test_degenerate_sampling_without_jitter():
    mu = np.full(7, 0.5)
    t = sample_gaussian(SceneDistribution(mu, np.zeros((7, 7)), 0.0), 20, seed=1, jitter=False)
    assert t.M == 20 and not t.jittered
    np.testing.assert_array_equal(t.vectors, np.tile(mu, (20, 1)))


def test_degenerate_sampling_with_jitter_is_recorded():
    t = sample_gaussian(SceneDistribution(np.full(7, 0.5), np.zeros((7, 7)), 0.0), 5, seed=1)
    assert t.jittered
    np.testing.assert_allclose(t.vectors, 0.5, atol=1e-3)


def test_large_sample_moments():
    mu, cov = known_gaussian()
    d = SceneDistribution(mu, cov, 0.0)
    x = sample_gaussian(d, 10000, seed=5).vectors
    se = np.sqrt(np.diag(cov) / 10000)
    assert np.all(np.abs(x.mean(0) - mu) <= 3 * se)
    C = np.cov(x, rowvar=False)
    assert np.linalg.norm(C - cov) / np.linalg.norm(cov) <= 0.10


def test_single_observation_default_spread():
    # mean far from zero so the positivity rule does not truncate
    d = fit_gaussian(SceneObservations(np.full((1, 7), 5.0)))
    x = sample_gaussian(d, 10000, seed=2).vectors
    np.testing.assert_allclose(x.std(0, ddof=1), np.sqrt(0.23), rtol=0.02)


def test_sampling_is_deterministic_and_positive():
    d = SceneDistribution(np.full(7, 0.3), 0.01 * I7)
    a = sample_gaussian(d, 500, seed=9).vectors
    np.testing.assert_array_equal(a, sample_gaussian(d, 500, seed=9).vectors)
    assert not np.array_equal(a, sample_gaussian(d, 500, seed=10).vectors)
    assert np.all(a > 0)


def test_sampling_gives_up_on_infeasible_mass():
    d = SceneDistribution(np.full(7, 0.01), np.zeros((7, 7)), 1.0)
    with pytest.raises(SamplingError, match="acceptance"):
        sample_gaussian(d, 1000, seed=0)


def test_uniform_collapsing_interval():
    low = np.full(7, 0.4)
    t = sample_uniform(low, low + 1e-9, 100, seed=0)
    np.testing.assert_allclose(t.vectors, 0.4, atol=1e-9)


def test_uniform_moments_and_determinism():
    low, high = np.full(7, 0.1), np.full(7, 1.1)
    x = sample_uniform(low, high, 10000, seed=4).vectors
    se = np.sqrt(1.0 / 12.0 / 10000)
    assert np.all(np.abs(x.mean(0) - 0.6) <= 3 * se)
    assert np.all((x >= 0.1) & (x < 1.1))
    np.testing.assert_array_equal(x, sample_uniform(low, high, 10000, seed=4).vectors)


@pytest.mark.parametrize("low,high", [(0.0, 1.0), (0.5, 0.5), (0.6, 0.5)])
def test_uniform_rejects_bad_bounds(low, high):
    with pytest.raises(ValueError):
        sample_uniform(np.full(7, low), np.full(7, high), 3, seed=0)


def test_catalog_bounds():
    labels = np.array([[0.2] * 7, [0.9] * 7, [0.5] * 7])
    cat = AirCatalog(tuple(Air(f"a{k}", "x", SubbandT60(v)) for k, v in enumerate(labels)))
    lo, hi = catalog_bounds(cat)
    np.testing.assert_array_equal(lo, 0.2)
    np.testing.assert_array_equal(hi, 0.9)


# -- observation files ---------------------------------------------------------

def write_obs(path, rows):
    lines = [",".join(T60_COLUMNS)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def test_load_observations_counts_rows(tmp_path):
    rows = np.random.default_rng(0).uniform(0.2, 1.0, (5, 7))
    write_obs(tmp_path / "o.csv", rows)
    obs = load_observations(tmp_path / "o.csv")
    assert obs.N == 5
    np.testing.assert_allclose(obs.vectors, rows)


def test_load_observations_rejects_bad_rows(tmp_path, caplog):
    rows = [[0.5] * 7, [0.5] * 6 + [-0.1], [0.4] * 7, ["x"] + [0.4] * 6]
    write_obs(tmp_path / "o.csv", rows)
    with caplog.at_level(logging.WARNING):
        obs = load_observations(tmp_path / "o.csv")
    assert obs.N == 2
    assert "[2, 4]" in caplog.text


def test_load_observations_errors(tmp_path):
    (tmp_path / "a.csv").write_text("foo,bar\n1,2\n")
    with pytest.raises(ObservationError, match="missing"):
        load_observations(tmp_path / "a.csv")
    write_obs(tmp_path / "b.csv", [[0.0] * 7])
    with pytest.raises(ObservationError, match="zero valid"):
        load_observations(tmp_path / "b.csv")


def test_catalog_label_csv_loads_as_observations(tmp_path):
    labels = np.round(np.random.default_rng(1).uniform(0.2, 1.0, (4, 7)), 4)
    cat = AirCatalog(tuple(Air(f"a{k}", "x", SubbandT60(v)) for k, v in enumerate(labels)))
    write_catalog_csv(cat, tmp_path / "labels.csv")
    obs = load_observations(tmp_path / "labels.csv")
    np.testing.assert_array_equal(obs.vectors, labels)
