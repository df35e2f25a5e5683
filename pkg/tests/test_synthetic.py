"""Tests for the seeded toy corpus generator and the fixture writer."""

import numpy as np
import pytest


def test_make_inventory_puts_the_blank_first():
    from isca_decoder.errors import ConfigError
    from isca_decoder.synthetic import make_inventory

    inv = make_inventory(3)
    assert inv.labels == ("<blank>", "a", "b", "c")
    assert inv.blank_index == 0
    with pytest.raises(ConfigError, match="num_letters"):
        make_inventory(1)


def test_make_vocabulary_draws_distinct_sorted_words():
    from isca_decoder.errors import ConfigError
    from isca_decoder.synthetic import make_vocabulary

    words = make_vocabulary(np.random.default_rng(0), 12, 4)
    assert len(words) == len(set(words)) == 12
    assert words == sorted(words)
    assert all(w.isupper() and 1 <= len(w) <= 3 for w in words)
    with pytest.raises(ConfigError, match="cannot draw 3 distinct words"):
        make_vocabulary(np.random.default_rng(0), 3, 2, max_length=1)


def test_render_posteriors_follows_the_alignment():
    from isca_decoder.synthetic import make_inventory, render_posteriors

    inv = make_inventory(3)
    post = render_posteriors("u", [1, 2, 1], inv, np.random.default_rng(0),
                             blank_frames=(1, 1), label_frames=(1, 1))
    assert post.frames.shape == (7, 4)
    np.testing.assert_allclose(post.frames.sum(axis=1), 1.0)
    assert list(post.frames.argmax(axis=1)) == [0, 1, 0, 2, 0, 1, 0]


def test_render_posteriors_with_noise_stays_stochastic():
    from isca_decoder.synthetic import make_inventory, render_posteriors

    post = render_posteriors("u", [3, 3], make_inventory(4), np.random.default_rng(1), noise=0.5)
    assert 5 <= post.num_frames <= 10
    np.testing.assert_allclose(post.frames.sum(axis=1), 1.0)
    assert np.all(post.frames > 0)


def test_render_posteriors_rejects_bad_settings():
    from isca_decoder.errors import ConfigError
    from isca_decoder.schemas import UnitInventory
    from isca_decoder.synthetic import make_inventory, render_posteriors

    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError, match="needs a blank"):
        render_posteriors("u", [0], UnitInventory(labels=("a", "b", "c")), rng)
    with pytest.raises(ConfigError, match="noise"):
        render_posteriors("u", [1], make_inventory(3), rng, noise=1.5)


def test_make_corpus_is_deterministic_per_seed():
    from isca_decoder.synthetic import make_corpus

    a = make_corpus(seed=4, num_utterances=5, lm_sentences=20, noise=0.1)
    b = make_corpus(seed=4, num_utterances=5, lm_sentences=20, noise=0.1)
    c = make_corpus(seed=5, num_utterances=5, lm_sentences=20, noise=0.1)
    assert a.references == b.references
    assert a.lm_sentences == b.lm_sentences
    for utt in a.posteriors:
        np.testing.assert_array_equal(a.posteriors[utt].frames, b.posteriors[utt].frames)
    assert not np.array_equal(a.posteriors["utt0"].frames, c.posteriors["utt0"].frames)


def test_make_corpus_only_uses_lexicon_words():
    from isca_decoder.synthetic import make_corpus

    corpus = make_corpus(seed=0, vocab_size=6, num_utterances=12)
    assert sorted(corpus.references) == [f"utt{k:02d}" for k in range(12)]
    assert len(corpus.lexicon) == 6
    for words in [*corpus.references.values(), *corpus.lm_sentences]:
        assert 1 <= len(words) <= 3
        assert all(w in corpus.lexicon for w in words)
    for utt, post in corpus.posteriors.items():
        assert post.utterance_id == utt
        assert post.num_units == corpus.inventory.size


def test_noisy_scorer_table_covers_every_pronunciation():
    from isca_decoder.schemas import Hypothesis, NBestList
    from isca_decoder.synthetic import make_corpus, noisy_scorer_table

    corpus = make_corpus(seed=2, vocab_size=5, num_utterances=3)
    words = corpus.lexicon.words
    nbests = {
        utt: NBestList(utterance_id=utt, hypotheses=(
            Hypothesis(words=ref, acoustic_logp=-1.0, lm_logp=-1.0),
            *(Hypothesis(words=(w,), acoustic_logp=-2.0, lm_logp=-2.0) for w in words if (w,) != ref),
        ))
        for utt, ref in corpus.references.items()
    }
    table = noisy_scorer_table(nbests, corpus.references, corpus.lexicon, np.random.default_rng(0), noise=0.0)
    inv = corpus.inventory
    for utt, ref in corpus.references.items():
        truth = tuple(inv.labels[u] for w in ref for u in corpus.lexicon.entries[w][0])
        assert table.score(utt, truth) == 0.0
        for w in words:
            if (w,) != ref:
                labels = tuple(inv.labels[u] for u in corpus.lexicon.entries[w][0])
                assert table.score(utt, labels) <= 0.0
                assert table.score(utt, labels) > -np.inf


def test_write_corpus_wires_a_runnable_fixture(tmp_path):
    from isca_decoder.cli import load_run_config
    from isca_decoder.formats import read_inventory, read_transcripts
    from isca_decoder.isca import FileScorerTable
    from isca_decoder.lexicon import load_lexicon
    from isca_decoder.lm import read_arpa
    from isca_decoder.synthetic import make_corpus, write_corpus

    corpus = make_corpus(seed=1, vocab_size=5, num_utterances=3, lm_sentences=30)
    scorer = FileScorerTable(scores={("utt0", ("a",)): -1.5})
    conf = write_corpus(corpus, tmp_path / "fx", scorer=scorer)
    assert conf == tmp_path / "fx" / "run.conf"

    config = load_run_config(conf)
    assert config.posteriors_dir == tmp_path / "fx" / "posteriors"
    assert sorted(p.stem for p in config.posteriors_dir.iterdir()) == ["utt0", "utt1", "utt2"]
    inv = read_inventory(config.inventory)
    assert inv == corpus.inventory
    assert load_lexicon(config.lexicon, inv).entries == corpus.lexicon.entries
    assert read_transcripts(config.references) == corpus.references
    assert read_arpa(config.lm).order == 2
    assert FileScorerTable.from_file(config.scorer_table).scores == scorer.scores


def test_tuning_on_a_synthetic_corpus_never_loses_to_the_init_weights():
    from isca_decoder.decoder import build_prefix_tree, decode_posteriors
    from isca_decoder.isca import rerank_wer, rescore_nbest, tune_weights
    from isca_decoder.lm import train_ngram
    from isca_decoder.schemas import DecodeConfig, ScoreWeights
    from isca_decoder.synthetic import make_corpus, noisy_scorer_table

    corpus = make_corpus(seed=3, vocab_size=8, num_utterances=6, lm_sentences=50, noise=0.3)
    lm = train_ngram(corpus.lm_sentences, order=2)
    tree = build_prefix_tree(corpus.lexicon)
    config = DecodeConfig(nbest=8)
    nbests = {
        utt: decode_posteriors(post, tree, lm, config, prior_scale=0.0)
        for utt, post in corpus.posteriors.items()
    }
    table = noisy_scorer_table(nbests, corpus.references, corpus.lexicon, np.random.default_rng(0), noise=0.5)
    init = ScoreWeights()
    dev = [
        (rescore_nbest(nbests[utt], table, corpus.lexicon, init), corpus.references[utt])
        for utt in sorted(nbests)
    ]
    tuned = tune_weights(dev, init, generations=8, seed=0, sigma0=0.5)
    assert rerank_wer(dev, tuned) <= rerank_wer(dev, init)


def _scorer_only_wer(dev):
    from isca_decoder.wer import corpus_wer

    picks = []
    for nb, ref in dev:
        # first maximum over lexicographically sorted hypotheses, as the tuner breaks ties
        ranked = sorted(nb.hypotheses, key=lambda h: h.words)
        picks.append((ref, max(ranked, key=lambda h: h.scorer_logp).words if ranked else ()))
    return corpus_wer(picks).wer


def test_tuned_combination_beats_each_component_on_its_own():
    from isca_decoder.decoder import build_prefix_tree, decode_posteriors
    from isca_decoder.isca import rerank_wer, rescore_nbest, tune_weights
    from isca_decoder.lm import train_ngram
    from isca_decoder.schemas import DecodeConfig, ScoreWeights
    from isca_decoder.synthetic import make_corpus, noisy_scorer_table
    from isca_decoder.wer import nbest_oracle_wer

    seeds = range(5)
    strict = 0
    for seed in seeds:
        # acoustic and scorer noise are drawn independently around the same transcripts
        corpus = make_corpus(seed=seed, vocab_size=10, num_utterances=50, noise=0.7)
        lm = train_ngram(corpus.lm_sentences, order=2)
        tree = build_prefix_tree(corpus.lexicon)
        config = DecodeConfig(nbest=10, beam_width=64)
        nbests = {
            utt: decode_posteriors(post, tree, lm, config, prior_scale=0.0)
            for utt, post in corpus.posteriors.items()
        }
        table = noisy_scorer_table(nbests, corpus.references, corpus.lexicon,
                                   np.random.default_rng(100 + seed), noise=2.0)
        init = ScoreWeights(lm_scale=1.0, scorer_scale=0.0)
        dev = [
            (rescore_nbest(nbests[utt], table, corpus.lexicon, init), corpus.references[utt])
            for utt in sorted(nbests)
        ]

        sc_only = rerank_wer(dev, init)
        tuned = rerank_wer(dev, tune_weights(dev, init, generations=30, seed=seed, sigma0=1.0))
        assert nbest_oracle_wer(dev).wer <= tuned
        assert tuned <= min(sc_only, _scorer_only_wer(dev))
        strict += tuned < sc_only
    assert strict >= 0.8 * len(seeds)
