"""Desk-scale behavioral checks. Deselected by default; run with ``pytest -m slow``."""

import time

import numpy as np
import pytest
from scipy import stats

from bmdl.core.chain import run_chain
from bmdl.core.dist import RandomStream, sample_crt_approx, sample_crt_exact
from bmdl.core.experiment import pooled_standard_error, run_experiment, summarize_trend, synthetic_conditions
from bmdl.core.synth import generate
from bmdl.models.config import (
    ChainConfig,
    EvaluationConfig,
    ExtractionConfig,
    Hyperparameters,
    ModelVariant,
    SynthConfig,
)
from bmdl.utils.helpers import cosine_similarity

pytestmark = [pytest.mark.slow, pytest.mark.acceptance]

RELEVANCE = [0, 5, 10, 15, 20]


@pytest.fixture(scope="module")
def desk_synth():
    return SynthConfig(num_features=200, factors_per_domain=20, shared_factors=0, source_samples=100,
                       target_samples=20, test_samples=20)


@pytest.fixture(scope="module")
def desk_settings():
    return dict(
        hp=Hyperparameters(K=40),
        chain=ChainConfig(iterations=600, burn_in=300),
        extraction=ExtractionConfig(iterations=200, collect_last=100),
        evaluation=EvaluationConfig(C=1.0),
    )


@pytest.mark.parametrize("r", [1.0, 10.0, 100.0])
def test_approximate_crt_matches_exact(r):
    n, m, draws = 100_000, 1000, 10_000
    exact_rng, approx_rng = RandomStream(1), RandomStream(2)
    start = time.perf_counter()
    exact = [sample_crt_exact(n, r, exact_rng) for _ in range(draws)]
    exact_time = time.perf_counter() - start
    start = time.perf_counter()
    approx = [sample_crt_approx(n, r, m, approx_rng) for _ in range(draws)]
    approx_time = time.perf_counter() - start
    assert stats.ks_2samp(exact, approx).pvalue > 0.01
    assert exact_time / approx_time >= 20.0


def test_error_falls_with_shared_factors(desk_synth, desk_settings):
    conditions = synthetic_conditions(desk_synth, shared_factors=RELEVANCE)
    reports = run_experiment(conditions, [ModelVariant.BMDL, ModelVariant.TARGET_ONLY], runs=5, seed=0,
                             **desk_settings)
    bmdl = [r for r in reports if r.variant == "BMDL"]
    baseline = [r for r in reports if r.variant == "TARGET_ONLY"]
    errors = [1.0 - r.mean for r in bmdl]
    assert errors[0] - errors[-1] > pooled_standard_error([bmdl[0], bmdl[-1]])
    assert summarize_trend(bmdl)["BMDL"].spearman < 0
    for ours, theirs in zip(bmdl, baseline):
        assert 1.0 - ours.mean <= 1.0 - theirs.mean + pooled_standard_error([ours, theirs])


def test_gain_over_target_only_shrinks_with_target_size(desk_synth, desk_settings):
    base = desk_synth.model_copy(update={"shared_factors": 16})
    conditions = synthetic_conditions(base, target_samples=[10, 20, 40])
    reports = run_experiment(conditions, [ModelVariant.BMDL, ModelVariant.TARGET_ONLY], runs=5, seed=0,
                             **desk_settings)
    by_variant = {variant: [r for r in reports if r.variant == variant] for variant in ("BMDL", "TARGET_ONLY")}
    for series in by_variant.values():
        for smaller, larger in zip(series, series[1:]):
            assert 1.0 - larger.mean <= 1.0 - smaller.mean + pooled_standard_error([smaller, larger])
    # baseline error minus BMDL error, per target size
    gains = [ours.mean - theirs.mean for ours, theirs in zip(by_variant["BMDL"], by_variant["TARGET_ONLY"])]
    assert gains[-1] < gains[0]


@pytest.mark.parametrize("variant", [ModelVariant.HGNBP, ModelVariant.HDP_NBFA, ModelVariant.NB_HDP])
def test_variant_pins_hold_through_a_chain(desk_synth, variant):
    tensor = generate(desk_synth.model_copy(update={"shared_factors": 10})).tensor
    summary = run_chain(tensor, Hyperparameters(K=40), variant, ChainConfig(iterations=200, burn_in=100),
                        RandomStream(3))
    state = summary.final_state
    assert np.all(state.z == 1)
    if variant in (ModelVariant.HDP_NBFA, ModelVariant.NB_HDP):
        assert all(np.all(c == 1.0) for c in state.c_j)
    if variant is ModelVariant.NB_HDP:
        assert all(np.all(p == 0.5) for p in state.p)


def test_shared_data_activates_more_cross_domain_factors(desk_synth):
    activation = {}
    for shared in (0, 20):
        tensor = generate(desk_synth.model_copy(update={"shared_factors": shared})).tensor
        summary = run_chain(tensor, Hyperparameters(K=40), ModelVariant.BMDL,
                            ChainConfig(iterations=600, burn_in=300), RandomStream(4))
        activation[shared] = float(np.mean(summary.z_activation.min(axis=1)))
    assert activation[20] > activation[0]


def test_truncation_shrinks_unused_factors():
    hits = 0
    for seed in range(10):
        config = SynthConfig(num_features=200, factors_per_domain=10, shared_factors=0, source_samples=0,
                             target_samples=40, seed=seed)
        summary = run_chain(generate(config).tensor, Hyperparameters(K=40), ModelVariant.BMDL,
                            ChainConfig(iterations=400, burn_in=200), RandomStream(seed))
        r = summary.r_last[:, 0]
        hits += int(np.count_nonzero(r > 0.01 * r.max()) <= 20)
    assert hits >= 8


def greedy_match_similarity(truth: np.ndarray, fitted: np.ndarray) -> float:
    scores = np.array([[cosine_similarity(truth[:, i], fitted[:, k]) for k in range(fitted.shape[1])]
                       for i in range(truth.shape[1])])
    matched = []
    for _ in range(truth.shape[1]):
        i, k = np.unravel_index(np.argmax(scores), scores.shape)
        matched.append(scores[i, k])
        scores[i, :] = -np.inf
        scores[:, k] = -np.inf
    return float(np.mean(matched))


def test_posterior_recovers_generating_factors():
    similarities = []
    for seed in range(10):
        config = SynthConfig(num_features=500, factors_per_domain=10, shared_factors=0, source_samples=0,
                             target_samples=100, seed=seed)
        dataset = generate(config)
        summary = run_chain(dataset.tensor, Hyperparameters(K=20), ModelVariant.BMDL,
                            ChainConfig(iterations=400, burn_in=200), RandomStream(seed))
        similarities.append(greedy_match_similarity(dataset.true_phi[0], summary.phi_mean))
    assert np.mean(similarities) > 0.8
