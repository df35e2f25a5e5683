"""
Command-line front end: decode → rescore → tune → wer, plus score / priors / synth.

Every run is described by a key=value config file; any key can be overridden
with a flag of the same name (dashes for underscores). Relative paths in the
config file are resolved against the file's directory.
"""

import argparse
import sys
from pathlib import Path
from typing import Annotated, Literal, Optional, Union, get_args, get_origin

from pydantic import ValidationError

from .acoustic import estimate_priors, forward_loglik, score_frames, viterbi_align
from .config import PRIOR_FLOOR, log, setup_logging
from .constants import EXIT_INPUT_ERROR, EXIT_OK
from .decoder import build_prefix_tree, decode_posteriors
from .errors import ConfigError, InputFormatError, NoFeasiblePath, cli_command
from .formats import (
    atomic_write_text,
    fmt_float,
    list_nbest_files,
    list_posterior_files,
    load_posteriors,
    read_inventory,
    read_nbest,
    read_priors,
    read_transcripts,
    read_weights,
    write_nbest,
    write_priors,
    write_transcripts,
    write_weights,
)
from .isca import (
    FileScorerTable,
    LengthNormalizedScorer,
    attach_nnlm_scores,
    ctc_prefix_label_scorer,
    rerank_wer,
    rescore_nbest,
    truncate_nbest,
    tune_weights,
)
from .jobs import map_utterances
from .lexicon import derive_graphemic_lexicon, load_lexicon
from .lm import NGramLM, read_arpa
from .schemas import Lexicon, NBestList, PosteriorMatrix, RunConfig, ScoreWeights, UnitInventory
from .topology import build_sequence_graph, concatenate_units, dump_graph
from .wer import format_report, score_transcripts

# ---------------------------------------------------------------------------
# Configuration loading
# ---------------------------------------------------------------------------

_ALIASES = {"alpha": "lm_scale", "beta": "scorer_scale"}


def _is_path_field(name: str) -> bool:
    return Path in get_args(RunConfig.model_fields[name].annotation)


def _parse_config_file(path: Path) -> dict[str, str]:
    path = Path(path)
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = _ALIASES.get(key.strip(), key.strip())
        if not sep:
            raise InputFormatError(f"expected key=value, got {raw.strip()!r}", path, lineno)
        if key not in RunConfig.model_fields:
            raise InputFormatError(f"unknown config key {key!r}", path, lineno)
        value = value.strip()
        if _is_path_field(key) and value:
            value = str((path.parent / value) if not Path(value).is_absolute() else Path(value))
        values[key] = value
    return values


def load_run_config(config_path: Optional[Path] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge the config file (if any) with flag overrides into a RunConfig."""
    values: dict = {}
    if config_path is not None:
        values.update(_parse_config_file(config_path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        err = exc.errors()[0]
        where = ".".join(str(p) for p in err["loc"]) or "config"
        raise ConfigError(f"invalid value for {where}: {err['msg']}") from None


def _require(config: RunConfig, *keys: str, directory: bool = False) -> None:
    """Every key must be set and point at an existing file (or directory)."""
    for key in keys:
        value = getattr(config, key)
        if value is None:
            raise ConfigError(f"missing required setting {key!r}")
        exists = Path(value).is_dir() if directory else Path(value).is_file()
        if not exists:
            raise FileNotFoundError(f"{key}: {'directory' if directory else 'file'} not found: {value}")


def _output_dir(config: RunConfig, key: str = "output_dir") -> Path:
    value = getattr(config, key)
    if value is None:
        raise ConfigError(f"missing required setting {key!r}")
    path = Path(value)
    if path.exists() and not path.is_dir():
        raise ConfigError(f"{key} is not a directory: {path}")
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Shared loaders
# ---------------------------------------------------------------------------


def _inventory(config: RunConfig, key: str = "inventory") -> UnitInventory:
    _require(config, key)
    return read_inventory(getattr(config, key), config.blank_label, config.unit_kind)


def _lexicon(config: RunConfig, inventory: UnitInventory, lm: Optional[NGramLM]) -> Lexicon:
    if config.lexicon is not None:
        _require(config, "lexicon")
        return load_lexicon(config.lexicon, inventory)
    if config.unit_kind != "graphemic" or lm is None:
        raise ConfigError("no lexicon configured (only graphemic units can derive one from the LM)")
    log.info("Deriving a graphemic lexicon from %d LM words", len(lm.vocabulary))
    return derive_graphemic_lexicon(lm.vocabulary, inventory)


def _load_posteriors(config: RunConfig) -> dict[str, PosteriorMatrix]:
    _require(config, "posteriors_dir", directory=True)
    files = list_posterior_files(config.posteriors_dir)
    if not files:
        raise InputFormatError("no .post files found", config.posteriors_dir)
    errors: dict[str, Exception] = {}
    loaded = map_utterances(load_posteriors, ((p.stem, p) for p in files), config.jobs, errors)
    if errors:
        raise next(iter(errors.values()))
    return loaded


def _load_nbests(config: RunConfig) -> dict[str, NBestList]:
    _require(config, "nbest_dir", directory=True)
    files = list_nbest_files(config.nbest_dir)
    if not files:
        raise InputFormatError("no .nbest files found", config.nbest_dir)
    nbests = {}
    for path in files:
        nb = read_nbest(path, path.stem)
        if config.nbest_limit is not None:
            nb = truncate_nbest(nb, config.nbest_limit)
        nbests[nb.utterance_id] = nb
    return nbests


def _weights(config: RunConfig) -> ScoreWeights:
    if config.weights_file is not None and Path(config.weights_file).is_file():
        log.info("Using weights from %s", config.weights_file)
        return read_weights(config.weights_file)
    return config.weights


def _best_transcripts(nbests: dict[str, NBestList]) -> dict[str, tuple[str, ...]]:
    return {utt: (nb.best.words if nb.best else ()) for utt, nb in nbests.items()}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_decode(config: RunConfig) -> int:
    """Decode every posterior file into an n-best file under nbest_dir."""
    inventory = _inventory(config)
    _require(config, "lm")
    lm = read_arpa(config.lm)
    lexicon = _lexicon(config, inventory, lm)
    posteriors = _load_posteriors(config)
    out_dir = _output_dir(config, "nbest_dir")

    priors = None
    if config.prior_scale > 0:
        if config.priors is not None:
            _require(config, "priors")
            priors = read_priors(config.priors, inventory, PRIOR_FLOOR)
        else:
            log.warning("No priors file configured; estimating priors from the decoded posteriors")
            priors = estimate_priors(posteriors[u] for u in sorted(posteriors))

    tree = build_prefix_tree(lexicon, inventory, config.topology, config.states_per_unit)
    decode_config = config.decode_config

    def decode_one(post: PosteriorMatrix) -> NBestList:
        return decode_posteriors(post, tree, lm, decode_config, priors, config.prior_scale)

    errors: dict[str, Exception] = {}
    results = map_utterances(decode_one, sorted(posteriors.items()), config.jobs, errors)
    for utt, nbest in results.items():
        write_nbest(nbest, out_dir / f"{utt}.nbest")
    if config.output_dir is not None:
        write_transcripts(_best_transcripts(results), _output_dir(config) / "best.txt")
    log.info("Decoded %d of %d utterances", len(results), len(posteriors))
    for utt, exc in errors.items():
        print(f"Error: {utt}: {exc}", file=sys.stderr)
    return EXIT_INPUT_ERROR if errors else EXIT_OK


def _scorer(config: RunConfig, lexicon: Lexicon):
    """Return (scorer, lexicon over the scorer's units)."""
    scorer_lexicon = lexicon
    scorer_inventory = lexicon.inventory
    if config.scorer_inventory is not None:
        scorer_inventory = _inventory(config, "scorer_inventory")
        if config.scorer_lexicon is not None:
            _require(config, "scorer_lexicon")
            scorer_lexicon = load_lexicon(config.scorer_lexicon, scorer_inventory)
        else:
            scorer_lexicon = derive_graphemic_lexicon(lexicon.words, scorer_inventory)

    if config.scorer == "ctc-prefix":
        scorer = ctc_prefix_label_scorer(_load_posteriors(config), scorer_inventory)
    else:
        _require(config, "scorer_table")
        scorer = FileScorerTable.from_file(config.scorer_table)
    if config.length_normalize:
        scorer = LengthNormalizedScorer(scorer)
    return scorer, scorer_lexicon


def cmd_rescore(config: RunConfig) -> int:
    """Attach scorer scores to every n-best list and re-rank into output_dir."""
    inventory = _inventory(config)
    lm = read_arpa(config.lm) if config.lexicon is None and config.lm is not None else None
    lexicon = _lexicon(config, inventory, lm)
    nbests = _load_nbests(config)
    out_dir = _output_dir(config)
    if out_dir.resolve() == Path(config.nbest_dir).resolve():
        raise ConfigError("output_dir must differ from nbest_dir")
    scorer, scorer_lexicon = _scorer(config, lexicon)
    nnlm = None
    if config.nnlm_table is not None:
        _require(config, "nnlm_table")
        nnlm = FileScorerTable.from_file(config.nnlm_table)
    weights = _weights(config)

    def rescore_one(nbest: NBestList) -> NBestList:
        if nnlm is not None:
            nbest = attach_nnlm_scores(nbest, nnlm)
        return rescore_nbest(nbest, scorer, scorer_lexicon, weights, config.pron_cap)

    errors: dict[str, Exception] = {}
    results = map_utterances(rescore_one, sorted(nbests.items()), config.jobs, errors)
    for utt, nbest in results.items():
        write_nbest(nbest, out_dir / f"{utt}.nbest")
    write_transcripts(_best_transcripts(results), out_dir / "best.txt")
    for utt, exc in errors.items():
        print(f"Error: {utt}: {exc}", file=sys.stderr)
    truncated = sum(1 for nb in results.values() if "pronunciation-sum-truncated" in nb.warnings)
    if truncated:
        log.warning("Pronunciation sums truncated at %d sequences in %d utterances", config.pron_cap, truncated)
    return EXIT_INPUT_ERROR if errors else EXIT_OK


def cmd_tune(config: RunConfig) -> int:
    """CMA-ES over the weights against the dev WER of the re-ranked 1-best."""
    nbests = _load_nbests(config)
    _require(config, "references")
    refs = read_transcripts(config.references)
    dev = []
    for utt in sorted(nbests):
        if utt not in refs:
            raise InputFormatError(f"no reference for utterance {utt!r}", config.references)
        dev.append((nbests[utt], refs[utt]))
    if not dev:
        raise ConfigError("empty development set")

    if config.weights_file is None:
        target = _output_dir(config) / "weights.txt"
    else:
        target = Path(config.weights_file)
    init = config.weights
    tune_nnlm = any(h.nnlm_logp is not None for nb in nbests.values() for h in nb.hypotheses)

    def report(gen: int, wer: float, weights: ScoreWeights) -> None:
        print(f"generation {gen} best_wer {fmt_float(wer)} alpha {fmt_float(weights.lm_scale)} "
              f"beta {fmt_float(weights.scorer_scale)}")

    print(f"generation 0 best_wer {fmt_float(rerank_wer(dev, init))}")
    best = tune_weights(
        dev, init,
        population=config.population,
        generations=config.generations,
        seed=config.seed,
        tune_insertion=config.tune_insertion,
        tune_nnlm=tune_nnlm,
        sigma0=config.sigma0,
        jobs=config.jobs,
        on_generation=report,
    )
    write_weights(best, target)
    print(f"final best_wer {fmt_float(rerank_wer(dev, best))} -> {target}")
    return EXIT_OK


def cmd_wer(config: RunConfig) -> int:
    """Score hypotheses (a transcript file, or the 1-best of nbest_dir) against references."""
    _require(config, "references")
    refs = read_transcripts(config.references)
    if config.hypotheses is not None:
        _require(config, "hypotheses")
        hyps = read_transcripts(config.hypotheses)
    elif config.nbest_dir is not None:
        hyps = _best_transcripts(_load_nbests(config))
    else:
        raise ConfigError("missing required setting 'hypotheses' (or 'nbest_dir')")
    report = format_report(score_transcripts(refs, hyps))
    sys.stdout.write(report)
    if config.output_dir is not None:
        atomic_write_text(_output_dir(config) / "wer.txt", report)
    return EXIT_OK


def cmd_score(config: RunConfig, posterior_file: Path, words: Optional[str], units: Optional[str],
              show_graph: bool = False) -> int:
    """Forward and Viterbi scores of one unit sequence against one posterior file."""
    inventory = _inventory(config)
    post = load_posteriors(posterior_file)
    if words is not None:
        lexicon = _lexicon(config, inventory, read_arpa(config.lm) if config.lm else None)
        seq = concatenate_units(lexicon, [w.upper() for w in words.split()])
    elif units is not None:
        seq = []
        for label in units.split():
            idx = inventory.index_of(label)
            if idx is None:
                raise InputFormatError(f"unknown unit label {label!r}")
            seq.append(idx)
    else:
        raise ConfigError("give --words or --units")

    priors = None
    if config.prior_scale > 0 and config.priors is not None:
        _require(config, "priors")
        priors = read_priors(config.priors, inventory, PRIOR_FLOOR)
    frames = score_frames(post, priors, config.weights, prior_scale=config.prior_scale if priors else 0.0,
                          blank_index=inventory.blank_index)
    graph = build_sequence_graph(seq, inventory, config.topology, config.states_per_unit)
    if show_graph:
        sys.stdout.write(dump_graph(graph, inventory))
    print(f"forward {fmt_float(forward_loglik(graph, frames))}")
    try:
        path, best = viterbi_align(graph, frames)
    except NoFeasiblePath:
        print("viterbi -inf")
        return EXIT_OK
    labels = " ".join(inventory.labels[graph.emissions[s]] for s in path)
    print(f"viterbi {fmt_float(best)}")
    print(f"alignment {labels}")
    return EXIT_OK


def cmd_priors(config: RunConfig) -> int:
    """Estimate unit priors from every posterior file and write them to `priors`."""
    inventory = _inventory(config)
    if config.priors is None:
        raise ConfigError("missing required setting 'priors' (output path)")
    posteriors = _load_posteriors(config)
    prior = estimate_priors(posteriors[u] for u in sorted(posteriors))
    write_priors(prior, inventory, config.priors)
    return EXIT_OK


def cmd_synth(directory: Path, seed: int, utterances: int, vocab_size: int, noise: float) -> int:
    """Write a seeded toy fixture (posteriors, lexicon, LM, references, run.conf)."""
    from .synthetic import make_corpus, write_corpus

    corpus = make_corpus(seed=seed, vocab_size=vocab_size, num_utterances=utterances, noise=noise)
    conf = write_corpus(corpus, directory)
    print(f"wrote {conf}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value run configuration file")
    group = parser.add_argument_group("configuration overrides")
    for name, field in RunConfig.model_fields.items():
        flag = "--" + name.replace("_", "-")
        ann = field.annotation
        args = [a for a in get_args(ann) if a is not type(None)] if get_origin(ann) is Union else [ann]
        base = args[0] if args else ann
        if get_origin(base) is Annotated:
            base = get_args(base)[0]
        if base is bool:
            group.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        elif get_origin(base) is Literal:
            group.add_argument(flag, dest=name, choices=get_args(base), default=None)
        elif base is Path:
            group.add_argument(flag, dest=name, type=str, default=None)
        else:
            group.add_argument(flag, dest=name, type=base, default=None)
    group.add_argument("--alpha", dest="lm_scale", type=float, default=None, help="alias of --lm-scale")
    group.add_argument("--beta", dest="scorer_scale", type=float, default=None, help="alias of --scorer-scale")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in RunConfig.model_fields}
    config = load_run_config(args.config, overrides)
    if config.verbose:
        setup_logging(True)
    return config


@cli_command
def _run_decode(args) -> int:
    return cmd_decode(_config_from_args(args))


@cli_command
def _run_rescore(args) -> int:
    return cmd_rescore(_config_from_args(args))


@cli_command
def _run_tune(args) -> int:
    return cmd_tune(_config_from_args(args))


@cli_command
def _run_wer(args) -> int:
    return cmd_wer(_config_from_args(args))


@cli_command
def _run_score(args) -> int:
    return cmd_score(_config_from_args(args), args.posterior, args.words, args.units, args.graph)


@cli_command
def _run_priors(args) -> int:
    return cmd_priors(_config_from_args(args))


@cli_command
def _run_synth(args) -> int:
    return cmd_synth(args.directory, args.seed, args.utterances, args.vocab_size, args.noise)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isca-decoder",
        description="Source-channel decoding with label-synchronous n-best rescoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, handler, help_text in (
        ("decode", _run_decode, "decode posteriors into n-best lists"),
        ("rescore", _run_rescore, "rescore and re-rank n-best lists"),
        ("tune", _run_tune, "tune the scaling factors with CMA-ES"),
        ("wer", _run_wer, "word error rate report"),
        ("priors", _run_priors, "estimate unit priors from posteriors"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.set_defaults(handler=handler)

    p = sub.add_parser("score", help="forward / Viterbi score of one sequence")
    _add_config_flags(p)
    p.add_argument("posterior", type=Path, help="posterior file")
    seq = p.add_mutually_exclusive_group(required=True)
    seq.add_argument("--words", help="word sequence (spelled with the lexicon)")
    seq.add_argument("--units", help="unit label sequence")
    p.add_argument("--graph", action="store_true", help="print the state graph")
    p.set_defaults(handler=_run_score)

    p = sub.add_parser("synth", help="write a synthetic toy fixture")
    p.add_argument("directory", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--utterances", type=int, default=10)
    p.add_argument("--vocab-size", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(handler=_run_synth)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(getattr(args, "verbose", None) or False)
    return args.handler(args)
