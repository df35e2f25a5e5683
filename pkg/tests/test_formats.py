"""Tests for the text file formats: parsing, validation errors and writers."""

import math

import numpy as np
import pytest


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_posteriors_reads_matrix_and_uses_stem_as_id(tmp_path):
    from isca_decoder.formats import load_posteriors

    p = _write(tmp_path / "utt1.post", "2 3\n0.5 0.25 0.25\n0.1 0.1 0.8\n")
    post = load_posteriors(p)
    assert post.utterance_id == "utt1"
    assert post.frames.shape == (2, 3)
    assert post.frames[1, 2] == pytest.approx(0.8)


def test_load_posteriors_renormalises_rows_within_tolerance(tmp_path):
    from isca_decoder.formats import load_posteriors

    p = _write(tmp_path / "u.post", "1 2\n0.5000004 0.5\n")
    post = load_posteriors(p)
    assert post.frames.sum() == pytest.approx(1.0, abs=1e-12)


def test_load_posteriors_rejects_row_sum_with_line_number(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import load_posteriors

    p = _write(tmp_path / "u.post", "2 2\n0.5 0.5\n0.5 0.4\n")
    with pytest.raises(InputFormatError, match=r"u\.post:3: row sum"):
        load_posteriors(p)


@pytest.mark.parametrize("header", ["two 2", "\u00b2 2", "1 -2", "1_0 2", "1 2 3"])
def test_load_posteriors_rejects_bad_header(tmp_path, header):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import load_posteriors

    p = _write(tmp_path / "u.post", header + "\n0.5 0.5\n")
    with pytest.raises(InputFormatError, match=r"u\.post:1: malformed header"):
        load_posteriors(p)


def test_load_posteriors_rejects_frame_count_mismatch(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import load_posteriors

    p = _write(tmp_path / "u.post", "3 2\n0.5 0.5\n0.5 0.5\n")
    with pytest.raises(InputFormatError, match="declares 3 frames"):
        load_posteriors(p)


def test_load_posteriors_rejects_negative_and_short_rows(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import load_posteriors

    neg = _write(tmp_path / "neg.post", "1 3\n1.2 -0.2 0.0\n")
    with pytest.raises(InputFormatError, match="negative"):
        load_posteriors(neg)
    short = _write(tmp_path / "short.post", "1 3\n0.5 0.5\n")
    with pytest.raises(InputFormatError, match="expected 3"):
        load_posteriors(short)


def test_load_posteriors_rejects_reserved_binary_format(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import load_posteriors

    p = tmp_path / "u.post"
    p.write_bytes(b"ISCAPOST\x00\x01")
    with pytest.raises(InputFormatError, match="binary"):
        load_posteriors(p)


def test_write_posteriors_is_exact(tmp_path):
    from isca_decoder.formats import load_posteriors, write_posteriors
    from isca_decoder.schemas import PosteriorMatrix

    rng = np.random.default_rng(3)
    frames = rng.dirichlet(np.ones(4), size=5)
    post = PosteriorMatrix(utterance_id="x", frames=frames)
    write_posteriors(post, tmp_path / "x.post")
    again = load_posteriors(tmp_path / "x.post")
    np.testing.assert_allclose(again.frames, post.frames, rtol=0, atol=1e-15)


def test_read_inventory_marks_blank(tmp_path):
    from isca_decoder.formats import read_inventory

    p = _write(tmp_path / "units.txt", "<blank>\na\nb\n\n")
    inv = read_inventory(p)
    assert inv.labels == ("<blank>", "a", "b")
    assert inv.blank_index == 0
    assert inv.index_of("b") == 2
    assert inv.index_of("z") is None


def test_read_inventory_rejects_duplicates(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import read_inventory

    p = _write(tmp_path / "units.txt", "a\nb\na\n")
    with pytest.raises(InputFormatError, match="unique"):
        read_inventory(p)


def test_nbest_file_keeps_na_and_optional_column(tmp_path):
    from isca_decoder.formats import read_nbest, write_nbest
    from isca_decoder.schemas import Hypothesis, NBestList

    nbest = NBestList(utterance_id="u1", hypotheses=(
        Hypothesis(words=("A", "B"), acoustic_logp=-1.5, lm_logp=-2.25),
        Hypothesis(words=(), acoustic_logp=-3.0, lm_logp=-0.5, scorer_logp=-7.125, nnlm_logp=-1.0),
    ))
    write_nbest(nbest, tmp_path / "u1.nbest")
    lines = (tmp_path / "u1.nbest").read_text().splitlines()
    assert lines[0].split("\t") == ["u1", "1", "-1.5", "-2.25", "NA", "2", "A B"]
    assert len(lines[1].split("\t")) == 8

    again = read_nbest(tmp_path / "u1.nbest")
    assert again.hypotheses[0].scorer_logp is None
    assert again.hypotheses[1].words == ()
    assert again.hypotheses[1].scorer_logp == -7.125
    assert again.hypotheses[1].nnlm_logp == -1.0


def test_read_nbest_rejects_out_of_sequence_rank(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import read_nbest

    p = _write(tmp_path / "u.nbest", "u\t2\t-1.0\t-1.0\tNA\t1\tA\n")
    with pytest.raises(InputFormatError, match="rank"):
        read_nbest(p)


def test_read_nbest_rejects_word_count_mismatch(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import read_nbest

    p = _write(tmp_path / "u.nbest", "u\t1\t-1.0\t-1.0\tNA\t3\tA B\n")
    with pytest.raises(InputFormatError, match="word_count"):
        read_nbest(p)


def test_read_transcripts_uppercases_and_rejects_duplicates(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import read_transcripts

    p = _write(tmp_path / "refs.txt", "u1 hello World\nu2\n")
    refs = read_transcripts(p)
    assert refs == {"u1": ("HELLO", "WORLD"), "u2": ()}

    dup = _write(tmp_path / "dup.txt", "u1 a\nu1 b\n")
    with pytest.raises(InputFormatError, match="duplicate"):
        read_transcripts(dup)


def test_score_table_rejects_duplicates_and_non_finite(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import read_score_table

    ok = _write(tmp_path / "s.txt", "u1\t-1.25\ta b\nu1\t-2.0\ta\n")
    assert read_score_table(ok) == {("u1", ("a", "b")): -1.25, ("u1", ("a",)): -2.0}

    dup = _write(tmp_path / "dup.txt", "u1\t-1.0\ta\nu1\t-2.0\ta\n")
    with pytest.raises(InputFormatError, match="duplicate"):
        read_score_table(dup)

    inf = _write(tmp_path / "inf.txt", "u1\t-inf\ta\n")
    with pytest.raises(InputFormatError, match="finite"):
        read_score_table(inf)


def test_weights_file_round_trip(tmp_path):
    from isca_decoder.formats import read_weights, write_weights
    from isca_decoder.schemas import ScoreWeights

    w = ScoreWeights(lm_scale=0.7, scorer_scale=1.3, insertion_penalty=-0.5, blank_penalty=0.25)
    write_weights(w, tmp_path / "w.txt")
    text = (tmp_path / "w.txt").read_text()
    assert text.startswith("alpha=0.7\nbeta=1.3\ninsertion_penalty=-0.5\nblank_penalty=0.25\n")
    assert read_weights(tmp_path / "w.txt") == w


def test_read_weights_rejects_unknown_key(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import read_weights

    p = _write(tmp_path / "w.txt", "alpha=1\ngamma=2\n")
    with pytest.raises(InputFormatError, match="unknown"):
        read_weights(p)


def test_read_priors_applies_floor(tmp_path):
    from isca_decoder.formats import read_priors
    from isca_decoder.schemas import UnitInventory

    inv = UnitInventory(labels=("<blank>", "a", "b"), blank_index=0)
    p = _write(tmp_path / "priors.txt", "<blank> 0.9\na 0.1\nb 0.0\n")
    prior = read_priors(p, inv, floor=1e-3)
    assert prior.priors[2] == pytest.approx(1e-3)
    assert prior.priors.sum() == pytest.approx(1.0)
    assert prior.priors[0] / prior.priors[1] == pytest.approx(9.0)


def test_read_priors_requires_every_unit(tmp_path):
    from isca_decoder.errors import InputFormatError
    from isca_decoder.formats import read_priors
    from isca_decoder.schemas import UnitInventory

    inv = UnitInventory(labels=("<blank>", "a", "b"), blank_index=0)
    p = _write(tmp_path / "priors.txt", "<blank> 0.9\na 0.1\n")
    with pytest.raises(InputFormatError, match="no prior for unit"):
        read_priors(p, inv, floor=1e-8)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    from isca_decoder.formats import atomic_write_text, list_files

    atomic_write_text(tmp_path / "out" / "a.nbest", "x\n")
    atomic_write_text(tmp_path / "out" / "a.nbest", "y\n")
    assert (tmp_path / "out" / "a.nbest").read_text() == "y\n"
    assert [p.name for p in (tmp_path / "out").iterdir()] == ["a.nbest"]
    assert [p.name for p in list_files(tmp_path / "out", ".nbest")] == ["a.nbest"]


def test_fmt_float_round_trips_exactly():
    from isca_decoder.formats import fmt_float

    for value in (0.1, -1 / 3, 1e-300, -math.inf):
        assert float(fmt_float(value)) == value
