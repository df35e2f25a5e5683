"""Tests for frame scoring, forward/Viterbi over state graphs and CTC prefix scores."""

import itertools
import math

import numpy as np
import pytest


def _inventory(size=3):
    from isca_decoder.schemas import UnitInventory

    return UnitInventory(labels=("<blank>", *"abcdefg"[: size - 1]), blank_index=0)


def _posteriors(rng, num_frames, num_units, utt="u"):
    from isca_decoder.schemas import PosteriorMatrix

    return PosteriorMatrix(utterance_id=utt, frames=rng.dirichlet(np.ones(num_units), size=num_frames))


def _frames(post):
    from isca_decoder.acoustic import score_frames
    from isca_decoder.schemas import ScoreWeights

    return score_frames(post, None, ScoreWeights(), prior_scale=0.0, blank_index=0)


def _collapse(path, blank=0):
    out, prev = [], None
    for u in path:
        if u != blank and u != prev:
            out.append(u)
        prev = u
    return tuple(out)


def _brute_force_ctc(frames, keep):
    """Σ over every frame labelling whose collapsed output satisfies *keep*."""
    num_frames, num_units = frames.shape
    total = 0.0
    for path in itertools.product(range(num_units), repeat=num_frames):
        if keep(_collapse(path)):
            total += math.prod(frames[t, u] for t, u in enumerate(path))
    return total


def test_score_frames_subtracts_scaled_priors_and_blank_penalty():
    from isca_decoder.acoustic import score_frames
    from isca_decoder.schemas import PosteriorMatrix, ScoreWeights, UnitPrior

    post = PosteriorMatrix(utterance_id="u", frames=[[0.5, 0.25, 0.25]])
    prior = UnitPrior(priors=[0.5, 0.25, 0.25], floor=1e-8)
    scored = score_frames(post, prior, ScoreWeights(blank_penalty=2.0), prior_scale=0.5, blank_index=0)
    expected = [
        math.log(0.5) - 0.5 * math.log(0.5) - 2.0,
        math.log(0.25) - 0.5 * math.log(0.25),
        math.log(0.25) - 0.5 * math.log(0.25),
    ]
    np.testing.assert_allclose(scored.scores[0], expected)


def test_score_frames_checks_dimensions():
    from isca_decoder.acoustic import score_frames
    from isca_decoder.errors import DimensionMismatch
    from isca_decoder.schemas import PosteriorMatrix, ScoreWeights, UnitPrior

    post = PosteriorMatrix(utterance_id="u", frames=[[0.5, 0.5]])
    with pytest.raises(DimensionMismatch, match="without priors"):
        score_frames(post, None, ScoreWeights(), prior_scale=1.0)
    prior = UnitPrior(priors=[0.5, 0.25, 0.25], floor=1e-8)
    with pytest.raises(DimensionMismatch, match="2 units vs 3 priors"):
        score_frames(post, prior, ScoreWeights(), prior_scale=1.0)


def test_estimate_priors_averages_every_frame():
    from isca_decoder.acoustic import estimate_priors
    from isca_decoder.schemas import PosteriorMatrix

    a = PosteriorMatrix(utterance_id="a", frames=[[1.0, 0.0], [0.5, 0.5]])
    b = PosteriorMatrix(utterance_id="b", frames=[[0.0, 1.0], [0.5, 0.5]])
    prior = estimate_priors([a, b], floor=1e-8)
    np.testing.assert_allclose(prior.priors, [0.5, 0.5])


def test_estimate_priors_rejects_mixed_unit_counts_and_empty_input():
    from isca_decoder.acoustic import estimate_priors
    from isca_decoder.errors import DimensionMismatch, InputFormatError
    from isca_decoder.schemas import PosteriorMatrix

    a = PosteriorMatrix(utterance_id="a", frames=[[0.5, 0.5]])
    b = PosteriorMatrix(utterance_id="b", frames=[[0.2, 0.3, 0.5]])
    with pytest.raises(DimensionMismatch, match="b: 3 units"):
        estimate_priors([a, b])
    with pytest.raises(InputFormatError):
        estimate_priors([])


@pytest.mark.parametrize("labels", [(), (1,), (1, 2), (1, 1), (2, 1, 2)])
def test_ctc_forward_matches_brute_force_enumeration(labels):
    from isca_decoder.acoustic import ctc_sequence_loglik, forward_loglik
    from isca_decoder.topology import build_ctc_sequence_graph

    rng = np.random.default_rng(len(labels))
    post = _posteriors(rng, 5, 3)
    expected = math.log(_brute_force_ctc(post.frames, lambda out: out == labels))
    graph = build_ctc_sequence_graph(labels, _inventory())
    assert forward_loglik(graph, _frames(post)) == pytest.approx(expected, rel=1e-9)
    assert ctc_sequence_loglik(post, labels, _inventory()) == pytest.approx(expected, rel=1e-9)


def _ctc_alpha(probs, labels, blank=0):
    """Blank-interleaved alpha recursion in the probability domain."""
    ext = [blank]
    for u in labels:
        ext += [u, blank]
    alpha = np.zeros(len(ext))
    alpha[0] = probs[0, blank]
    if labels:
        alpha[1] = probs[0, ext[1]]
    for t in range(1, probs.shape[0]):
        prev = alpha.copy()
        for s, u in enumerate(ext):
            total = prev[s] + (prev[s - 1] if s >= 1 else 0.0)
            if s >= 2 and u != blank and u != ext[s - 2]:
                total += prev[s - 2]
            alpha[s] = total * probs[t, u]
    return alpha[-1] + (alpha[-2] if labels else 0.0)


def _random_ctc_case(rng):
    num_frames = int(rng.integers(1, 7))
    num_units = int(rng.integers(2, 5))
    labels = tuple(int(u) for u in rng.integers(1, num_units, int(rng.integers(0, 4))))
    return _posteriors(rng, num_frames, num_units), labels


def test_ctc_forward_matches_alpha_recursion_and_brute_force_on_random_cases():
    from isca_decoder.acoustic import ctc_sequence_loglik, forward_loglik
    from isca_decoder.topology import build_ctc_sequence_graph

    rng = np.random.default_rng(2024)
    infeasible = 0
    for _ in range(200):
        post, labels = _random_ctc_case(rng)
        frames = _frames(post)
        probs = np.exp(frames.scores)
        total = _brute_force_ctc(probs, lambda out: out == labels)
        assert _ctc_alpha(probs, labels) == pytest.approx(total, rel=1e-9, abs=1e-300)
        expected = math.log(total) if total > 0 else -math.inf
        infeasible += total == 0
        inventory = _inventory(post.num_units)
        got = forward_loglik(build_ctc_sequence_graph(labels, inventory), frames)
        if expected == -math.inf:
            assert got == -math.inf
        else:
            assert got == pytest.approx(expected, rel=0, abs=1e-9)
            assert ctc_sequence_loglik(post, labels, inventory) == pytest.approx(expected, rel=0, abs=1e-9)
    assert 0 < infeasible < 200


@pytest.mark.parametrize("prefix", [(1,), (2,), (1, 2), (1, 1), (2, 2, 1)])
def test_ctc_prefix_score_matches_brute_force_enumeration(prefix):
    from isca_decoder.acoustic import ctc_prefix_score

    rng = np.random.default_rng(10 + len(prefix))
    post = _posteriors(rng, 5, 3)
    n = len(prefix)
    expected = math.log(_brute_force_ctc(post.frames, lambda out: out[:n] == prefix))
    assert ctc_prefix_score(post, prefix, _inventory()) == pytest.approx(expected, rel=1e-9)


def test_ctc_prefix_score_edges():
    from isca_decoder.acoustic import ctc_prefix_score
    from isca_decoder.errors import InventoryError

    post = _posteriors(np.random.default_rng(0), 2, 3)
    assert ctc_prefix_score(post, (), _inventory()) == 0.0
    assert ctc_prefix_score(post, (1, 2, 1), _inventory()) == -math.inf
    with pytest.raises(InventoryError, match="blank"):
        ctc_prefix_score(post, (0,), _inventory())


def test_hmm_forward_matches_brute_force_segmentation():
    from isca_decoder.acoustic import forward_loglik
    from isca_decoder.topology import build_hmm_sequence_graph

    rng = np.random.default_rng(7)
    post = _posteriors(rng, 5, 3)
    units = (1, 2, 1)
    # every split of 5 frames into 3 non-empty runs
    expected = 0.0
    for a, b in itertools.combinations(range(1, 5), 2):
        path = [units[0]] * a + [units[1]] * (b - a) + [units[2]] * (5 - b)
        expected += math.prod(post.frames[t, u] for t, u in enumerate(path))
    graph = build_hmm_sequence_graph(units)
    assert forward_loglik(graph, _frames(post)) == pytest.approx(math.log(expected), rel=1e-9)


def test_forward_is_minus_inf_without_a_feasible_path():
    from isca_decoder.acoustic import forward_loglik, viterbi_align
    from isca_decoder.errors import NoFeasiblePath
    from isca_decoder.topology import build_ctc_sequence_graph

    post = _posteriors(np.random.default_rng(1), 2, 3)
    graph = build_ctc_sequence_graph((1, 1), _inventory())  # needs 3 frames
    assert forward_loglik(graph, _frames(post)) == -math.inf
    with pytest.raises(NoFeasiblePath, match="no 2-frame path"):
        viterbi_align(graph, _frames(post))


def test_viterbi_score_is_the_best_single_path():
    from isca_decoder.acoustic import viterbi_align
    from isca_decoder.topology import build_ctc_sequence_graph

    rng = np.random.default_rng(3)
    post = _posteriors(rng, 5, 3)
    labels = (1, 2)
    graph = build_ctc_sequence_graph(labels, _inventory())
    path, score = viterbi_align(graph, _frames(post))

    best = max(
        sum(math.log(post.frames[t, u]) for t, u in enumerate(p))
        for p in itertools.product(range(3), repeat=5)
        if _collapse(p) == labels
    )
    assert score == pytest.approx(best, rel=1e-12)
    assert len(path) == 5
    emitted = tuple(graph.emissions[s] for s in path)
    assert _collapse(emitted) == labels
    assert sum(math.log(post.frames[t, u]) for t, u in enumerate(emitted)) == pytest.approx(score)


def test_viterbi_ties_prefer_label_frames_then_lower_state():
    from isca_decoder.acoustic import viterbi_align
    from isca_decoder.schemas import PosteriorMatrix
    from isca_decoder.topology import build_ctc_sequence_graph

    post = PosteriorMatrix(utterance_id="u", frames=np.full((2, 3), 1 / 3))
    graph = build_ctc_sequence_graph((1,), _inventory())
    path, score = viterbi_align(graph, _frames(post))
    assert path == (2, 2)
    assert score == pytest.approx(2 * math.log(1 / 3))


def test_forward_never_below_viterbi():
    from isca_decoder.acoustic import forward_loglik, viterbi_align
    from isca_decoder.topology import build_ctc_sequence_graph

    rng = np.random.default_rng(11)
    for _ in range(5):
        post = _posteriors(rng, 6, 4)
        graph = build_ctc_sequence_graph((1, 3, 2), _inventory(4))
        frames = _frames(post)
        assert forward_loglik(graph, frames) >= viterbi_align(graph, frames)[1] - 1e-9


def _penalised(post, gamma):
    from isca_decoder.acoustic import score_frames
    from isca_decoder.schemas import ScoreWeights

    return score_frames(post, None, ScoreWeights(blank_penalty=gamma), prior_scale=0.0, blank_index=0)


def test_blank_penalty_lowers_every_score_that_needs_a_blank():
    from isca_decoder.acoustic import forward_loglik
    from isca_decoder.topology import build_ctc_sequence_graph

    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(100):
        post, labels = _random_ctc_case(rng)
        repeats = any(a == b for a, b in zip(labels, labels[1:]))
        if labels and not repeats:
            continue
        graph = build_ctc_sequence_graph(labels, _inventory(post.num_units))
        base = forward_loglik(graph, _penalised(post, 0.0))
        if base == -math.inf:
            continue
        checked += 1
        previous = base
        for gamma in (0.5, 1.0, 3.0):
            score = forward_loglik(graph, _penalised(post, gamma))
            assert score < previous
            # every path pays at least one blank frame
            assert score <= base - gamma + 1e-9
            previous = score
    assert checked > 10


def test_blank_penalty_leaves_a_blank_free_best_path_alone():
    from isca_decoder.acoustic import viterbi_align
    from isca_decoder.errors import NoFeasiblePath
    from isca_decoder.topology import build_ctc_sequence_graph

    rng = np.random.default_rng(6)
    untouched = 0
    for _ in range(100):
        post, labels = _random_ctc_case(rng)
        graph = build_ctc_sequence_graph(labels, _inventory(post.num_units))
        try:
            path, score = viterbi_align(graph, _penalised(post, 0.0))
        except NoFeasiblePath:
            continue
        raised = viterbi_align(graph, _penalised(post, 2.0))[1]
        if all(graph.emissions[s] != 0 for s in path):
            assert raised == score
            untouched += 1
        else:
            assert raised < score
    assert untouched > 5

    # two frames for two different labels leave no room for a blank
    post = _posteriors(rng, 2, 3)
    graph = build_ctc_sequence_graph((1, 2), _inventory())
    assert viterbi_align(graph, _penalised(post, 5.0)) == viterbi_align(graph, _penalised(post, 0.0))
