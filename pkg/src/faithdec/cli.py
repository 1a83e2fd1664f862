"""Operator surface: decode runs, comparisons, metric reports, augmentation.

Every subcommand is driven by an optional declarative JSON config
(``--config``) with flag overrides winning, and is deterministic: identical
inputs plus seed produce byte-identical primary outputs. Exit codes are 0
(success), 2 (configuration/validation), 3 (backend/service), 4 (partial
failure: some rows quarantined). ``FD_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .augmenter import (
    AugmentRecord,
    HttpLlmClient,
    MockLlmClient,
    PromptTemplates,
    RetryingLlmClient,
    augment_dataset,
    load_augment_dataset,
)
from .core import DecodeConfig, normalize_text, validate_config
from .decoder import detokenize, faithful_beam_search, standard_beam_search
from .embedding import BagOfWordsOracle, load_embedding_store
from .errors import (
    BackendUnavailableError,
    ConfigError,
    FaithdecError,
    FormatError,
    LlmServiceError,
    MissingEmbeddingError,
    PreconditionError,
    ProtocolError,
    TemplateError,
    TooFewTagsError,
    ZeroVectorError,
)
from .lm import load_tabular_lm
from .metrics import (
    EvalInstance,
    evaluate,
    format_report_table,
    split_report,
)
from .remote import RemoteModel

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_PARTIAL = 4


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _write_lines(path: str, lines: Sequence[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def _read_jsonl(path: str) -> list[tuple[int, dict]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"bad JSON: {exc}", path=path, line=line_no) from None
            if not isinstance(obj, dict):
                raise FormatError("row is not a JSON object", path=path, line=line_no)
            rows.append((line_no, obj))
    return rows


def _merge_config(args: argparse.Namespace, keys: Sequence[str]) -> dict:
    """Config file values overridden by any flag that was actually given."""
    merged: dict = {}
    if getattr(args, "config", None):
        path = args.config
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad config JSON: {exc}", path=path) from None
        if not isinstance(loaded, dict):
            raise FormatError("config must be a JSON object", path=path)
        unknown = sorted(set(loaded) - set(keys))
        if unknown:
            raise ConfigError("config", f"unknown keys {unknown}; known: {sorted(keys)}")
        merged.update(loaded)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _require(settings: dict, key: str) -> object:
    if settings.get(key) in (None, ""):
        raise ConfigError(key, "required setting is missing")
    return settings[key]


def _require_file(settings: dict, key: str) -> str:
    path = str(_require(settings, key))
    if not os.path.exists(path):
        raise ConfigError(key, f"file does not exist: {path}")
    return path


def _open_backend(spec: str):
    kind, _, rest = spec.partition(":")
    if kind == "tabular":
        if not rest or not os.path.exists(rest):
            raise ConfigError("backend", f"tabular LM file does not exist: {rest!r}")
        return load_tabular_lm(rest)
    if kind == "remote":
        return RemoteModel.from_spec(rest)
    raise ConfigError("backend", f"unknown backend spec {spec!r} (tabular:PATH | remote:HOST:PORT)")


def _open_provider(spec: str, backend=None):
    """Embedding provider from its spec.

    ``store:PATH`` loads a file store; ``bow:PATH`` builds a bag-of-words
    provider over the LM backend's vocabulary with audio vectors from the
    store file at PATH; ``remote:HOST:PORT`` connects to a model server.
    """
    kind, _, rest = spec.partition(":")
    if kind == "store":
        if not rest or not os.path.exists(rest):
            raise ConfigError("embeddings", f"store file does not exist: {rest!r}")
        return load_embedding_store(rest)
    if kind == "bow":
        if backend is None or not hasattr(backend, "vocab"):
            raise ConfigError(
                "embeddings", "bow:PATH needs a tabular backend to supply the vocabulary"
            )
        if not rest or not os.path.exists(rest):
            raise ConfigError("embeddings", f"audio store file does not exist: {rest!r}")
        store = load_embedding_store(rest)
        audio_map = {cid: store.embed_audio(cid) for cid in store.audio_ids()}
        return BagOfWordsOracle(backend.vocab, audio_map=audio_map)
    if kind == "remote":
        return RemoteModel.from_spec(rest)
    raise ConfigError(
        "embeddings",
        f"unknown embeddings spec {spec!r} (store:PATH | bow:PATH | remote:HOST:PORT)",
    )


def _corpus_bag_of_words(texts: Sequence[str]) -> BagOfWordsOracle:
    """Text-only bag-of-words provider over the corpus vocabulary.

    Cosine over count vectors only depends on shared words, so any
    vocabulary covering the corpus yields identical scores.
    """
    words = sorted({w for t in texts for w in normalize_text(t).split()})
    bos, eos = "\x00bos", "\x00eos"
    from .core import VocabInfo

    vocab = VocabInfo(
        vocab_size=len(words) + 2,
        bos_id=0,
        eos_id=1,
        token_strings=(bos, eos) + tuple(words),
    )
    return BagOfWordsOracle(vocab, audio_map={})


def _parse_alphas(value) -> list[float]:
    if isinstance(value, (list, tuple)):
        alphas = [float(a) for a in value]
    else:
        alphas = [float(a) for a in str(value).split(",") if a.strip() != ""]
    if not alphas:
        raise ConfigError("alpha", "alpha list must be non-empty")
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ConfigError("alpha", f"must lie in [0, 1], got {a}")
    return alphas


def _decode_config(settings: dict, alpha: float) -> DecodeConfig:
    max_len = int(settings.get("max_len", 20))
    cfg = DecodeConfig(
        beam_width=int(settings.get("beam_width", 4)),
        alpha=alpha,
        max_len=max_len,
        rollout_max_len=int(settings.get("rollout_max_len", max(max_len, 30))),
        expansions_per_beam=int(settings.get("expansions_per_beam", 8)),
        seed=int(settings.get("seed", 0)),
        n_best=int(settings.get("n_best", 1)),
    )
    return validate_config(cfg)


DECODE_KEYS = (
    "backend",
    "embeddings",
    "dataset",
    "out",
    "quarantine_out",
    "decoder",
    "alpha",
    "seed",
    "beam_width",
    "expansions_per_beam",
    "max_len",
    "rollout_max_len",
    "n_best",
)


def run_decode(args: argparse.Namespace) -> int:
    settings = _merge_config(args, DECODE_KEYS)
    backend = _open_backend(str(_require(settings, "backend")))
    decoder_name = str(settings.get("decoder", "faithful"))
    if decoder_name not in ("faithful", "beam"):
        raise ConfigError("decoder", f"must be 'faithful' or 'beam', got {decoder_name!r}")
    provider = None
    if decoder_name == "faithful":
        provider = _open_provider(str(_require(settings, "embeddings")), backend)
    alphas = _parse_alphas(settings.get("alpha", "0.8"))
    dataset_path = _require_file(settings, "dataset")
    out_path = str(_require(settings, "out"))
    rows = _read_jsonl(dataset_path)
    context_ids = []
    for line_no, obj in rows:
        if "context_id" not in obj:
            raise FormatError("row lacks context_id", path=dataset_path, line=line_no)
        context_ids.append(str(obj["context_id"]))

    out_lines: list[str] = []
    quarantined: list[str] = []
    for alpha in alphas:
        cfg = _decode_config(settings, alpha)
        for context_id in context_ids:
            try:
                session = backend.open_session(context_id)
                if decoder_name == "beam":
                    nbest = standard_beam_search(session, cfg)
                else:
                    nbest = faithful_beam_search(session, provider, cfg, context_id)
                best = nbest.best()
                out_lines.append(
                    _dumps(
                        {
                            "alpha": alpha,
                            "caption": detokenize(session.vocab, best.hypothesis.tokens),
                            "context_id": context_id,
                            "decoder": decoder_name,
                            "score": best.score,
                        }
                    )
                )
            except (MissingEmbeddingError, ZeroVectorError) as exc:
                logger.warning("quarantined %r at alpha=%s: %s", context_id, alpha, exc)
                quarantined.append(
                    _dumps({"alpha": alpha, "context_id": context_id, "reason": str(exc)})
                )
    _write_lines(out_path, out_lines)
    quarantine_path = str(settings.get("quarantine_out") or out_path + ".quarantine.jsonl")
    if quarantined:
        _write_lines(quarantine_path, quarantined)
        return EXIT_PARTIAL
    return EXIT_OK


EVAL_KEYS = ("candidates", "refs", "embeddings", "out", "format", "reduce", "skip_missing")


def _load_references(path: str) -> dict[str, list[str]]:
    refs: dict[str, list[str]] = {}
    for line_no, obj in _read_jsonl(path):
        try:
            refs[str(obj["context_id"])] = [str(c) for c in obj["captions"]]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"reference row malformed: {exc}", path=path, line=line_no) from None
    return refs


def _load_candidates(path: str) -> list[dict]:
    out = []
    for line_no, obj in _read_jsonl(path):
        if "context_id" not in obj or "caption" not in obj:
            raise FormatError(
                "candidate row needs context_id and caption", path=path, line=line_no
            )
        out.append(obj)
    if not out:
        raise ConfigError("candidates", f"no candidate rows in {path}")
    return out


def _instances_for(candidates: Sequence[dict], refs: dict[str, list[str]]):
    missing = sorted({str(c["context_id"]) for c in candidates} - set(refs))
    if missing:
        raise ConfigError("refs", f"no references for context ids {missing}")
    return [
        EvalInstance(
            context_id=str(c["context_id"]),
            candidate=str(c["caption"]),
            references=tuple(refs[str(c["context_id"])]),
        )
        for c in candidates
    ]


def _eval_provider(settings: dict, texts: Sequence[str]):
    spec = settings.get("embeddings")
    if spec in (None, "", "none"):
        return None
    if spec == "bow":
        return _corpus_bag_of_words(texts)
    return _open_provider(str(spec))


def run_eval(args: argparse.Namespace) -> int:
    settings = _merge_config(args, EVAL_KEYS)
    candidates = _load_candidates(_require_file(settings, "candidates"))
    refs = _load_references(_require_file(settings, "refs"))
    texts = [str(c["caption"]) for c in candidates]
    for captions in refs.values():
        texts.extend(captions)
    provider = _eval_provider(settings, texts)
    reduce = str(settings.get("reduce", "max"))
    skip_missing = bool(settings.get("skip_missing", False))

    by_split: dict[str, list[dict]] = {}
    for cand in candidates:
        by_split.setdefault(str(cand.get("split", "none")), []).append(cand)

    if set(by_split) >= {"hallucinated", "non_hallucinated"}:
        comparison = split_report(
            _instances_for(by_split["hallucinated"], refs),
            _instances_for(by_split["non_hallucinated"], refs),
            provider,
            reduce=reduce,
            skip_missing=skip_missing,
        )
        payload = comparison.to_dict()
        reports = [comparison.hallucinated, comparison.non_hallucinated]
    else:
        reports = [
            evaluate(
                _instances_for(rows, refs),
                provider,
                split=split,
                reduce=reduce,
                skip_missing=skip_missing,
            )
            for split, rows in sorted(by_split.items())
        ]
        payload = {"reports": [r.to_dict() for r in reports]}

    table = format_report_table(reports)
    out_path = settings.get("out")
    if out_path:
        _write_lines(str(out_path), [_dumps(payload)])
        _write_lines(str(out_path) + ".txt", table.splitlines())
    if str(settings.get("format", "table")) == "json":
        print(_dumps(payload))
    else:
        print(table, end="")
    return EXIT_OK


COMPARE_KEYS = ("run_a", "run_b", "refs", "embeddings", "out", "format", "reduce")


def run_compare(args: argparse.Namespace) -> int:
    settings = _merge_config(args, COMPARE_KEYS)
    refs = _load_references(_require_file(settings, "refs"))
    runs = {}
    for key in ("run_a", "run_b"):
        rows = _load_candidates(_require_file(settings, key))
        seen: dict[str, dict] = {}
        for row in rows:
            cid = str(row["context_id"])
            if cid in seen:
                raise ConfigError(key, f"duplicate context id {cid!r}; split sweeps first")
            seen[cid] = row
        runs[key] = seen
    ids_a, ids_b = set(runs["run_a"]), set(runs["run_b"])
    if ids_a != ids_b:
        raise ConfigError(
            "run_b",
            f"context id sets differ: only in run_a {sorted(ids_a - ids_b)}, "
            f"only in run_b {sorted(ids_b - ids_a)}",
        )
    texts = [str(r["caption"]) for run in runs.values() for r in run.values()]
    for captions in refs.values():
        texts.extend(captions)
    provider = _eval_provider(settings, texts)
    reduce = str(settings.get("reduce", "max"))
    reports = {}
    for key, rows in runs.items():
        ordered = [rows[cid] for cid in sorted(rows)]
        reports[key] = evaluate(
            _instances_for(ordered, refs), provider, split=key, reduce=reduce
        )
    deltas = {
        m: reports["run_b"].corpus[m] - reports["run_a"].corpus[m]
        for m in reports["run_a"].corpus
    }
    payload = {
        "run_a": reports["run_a"].to_dict(),
        "run_b": reports["run_b"].to_dict(),
        "deltas": deltas,
    }
    table = format_report_table([reports["run_a"], reports["run_b"]])
    table += "deltas (run_b - run_a): " + _dumps(deltas) + "\n"
    out_path = settings.get("out")
    if out_path:
        _write_lines(str(out_path), [_dumps(payload)])
        _write_lines(str(out_path) + ".txt", table.splitlines())
    if str(settings.get("format", "table")) == "json":
        print(_dumps(payload))
    else:
        print(table, end="")
    return EXIT_OK


AUGMENT_KEYS = (
    "dataset",
    "llm",
    "model",
    "out",
    "quarantine_out",
    "seed",
    "templates",
    "temperature",
    "max_tokens",
)


def _open_llm(settings: dict):
    spec = str(_require(settings, "llm"))
    if spec == "mock":
        return MockLlmClient()
    if spec.startswith("http://") or spec.startswith("https://"):
        client = HttpLlmClient(
            endpoint=spec,
            model=str(settings.get("model", "default")),
            temperature=float(settings.get("temperature", 0.7)),
            max_tokens=int(settings.get("max_tokens", 128)),
        )
        return RetryingLlmClient(client)
    raise ConfigError("llm", f"llm spec must be 'mock' or an http(s) URL, got {spec!r}")


def run_augment(args: argparse.Namespace) -> int:
    settings = _merge_config(args, AUGMENT_KEYS)
    rows = load_augment_dataset(_require_file(settings, "dataset"))
    llm = _open_llm(settings)
    seed = int(settings.get("seed", 0))
    templates = (
        PromptTemplates.load_dir(str(settings["templates"]))
        if settings.get("templates")
        else PromptTemplates.load_default()
    )
    out_path = str(_require(settings, "out"))
    record_lines: list[str] = []
    quarantine_lines: list[str] = []
    for outcome in augment_dataset(rows, llm, seed, templates):
        if isinstance(outcome, AugmentRecord):
            record_lines.append(_dumps(outcome.to_dict()))
        else:
            quarantine_lines.append(_dumps(outcome.to_dict()))
    _write_lines(out_path, record_lines)
    quarantine_path = str(settings.get("quarantine_out") or out_path + ".quarantine.jsonl")
    if quarantine_lines:
        _write_lines(quarantine_path, quarantine_lines)
        return EXIT_PARTIAL
    return EXIT_OK


def run_selftest(args: argparse.Namespace) -> int:
    from . import selftest

    return selftest.run()


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faithdec",
        description="Faithfulness-guided caption decoding, metrics, and augmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, help="top-level run seed")
        p.add_argument("--out", help="primary output path")
        p.add_argument("--format", choices=("json", "table"), help="stdout format")

    decode = sub.add_parser("decode", help="decode captions for each dataset row")
    common(decode)
    decode.add_argument("--backend", help="tabular:PATH | remote:HOST:PORT")
    decode.add_argument("--embeddings", help="store:PATH | bow:PATH | remote:HOST:PORT")
    decode.add_argument("--dataset", help="JSONL rows with context_id")
    decode.add_argument("--decoder", choices=("faithful", "beam"))
    decode.add_argument("--alpha", help="comma-separated alpha sweep, e.g. 0.0,0.8")
    decode.add_argument("--beam-width", dest="beam_width", type=int)
    decode.add_argument("--expansions", dest="expansions_per_beam", type=int)
    decode.add_argument("--max-len", dest="max_len", type=int)
    decode.add_argument("--rollout-max-len", dest="rollout_max_len", type=int)
    decode.add_argument("--n-best", dest="n_best", type=int)
    decode.add_argument("--quarantine-out", dest="quarantine_out")
    decode.set_defaults(handler=run_decode)

    ev = sub.add_parser("eval", help="score candidate captions against references")
    common(ev)
    ev.add_argument("--candidates", help="JSONL rows with context_id, caption[, split]")
    ev.add_argument("--refs", help="JSONL rows with context_id, captions")
    ev.add_argument("--embeddings", help="store:PATH | bow | remote:HOST:PORT | none")
    ev.add_argument("--reduce", choices=("max", "mean"))
    ev.add_argument("--skip-missing", dest="skip_missing", action="store_const", const=True)
    ev.set_defaults(handler=run_eval)

    cmp_ = sub.add_parser("compare", help="per-metric table for two decode runs plus deltas")
    common(cmp_)
    cmp_.add_argument("--run-a", dest="run_a", help="baseline decode output JSONL")
    cmp_.add_argument("--run-b", dest="run_b", help="comparison decode output JSONL")
    cmp_.add_argument("--refs", help="JSONL rows with context_id, captions")
    cmp_.add_argument("--embeddings", help="store:PATH | bow | remote:HOST:PORT | none")
    cmp_.add_argument("--reduce", choices=("max", "mean"))
    cmp_.set_defaults(handler=run_compare)

    aug = sub.add_parser("augment", help="generate hallucinated/non-hallucinated caption pairs")
    common(aug)
    aug.add_argument("--dataset", help="JSONL rows with context_id, captions, tags")
    aug.add_argument("--llm", help="'mock' or the completion service URL")
    aug.add_argument("--model", help="model name sent to the service")
    aug.add_argument("--templates", help="directory with paraphrase.txt, inject.txt, fewshots.json")
    aug.add_argument("--quarantine-out", dest="quarantine_out")
    aug.set_defaults(handler=run_augment)

    st = sub.add_parser("selftest", help="run the embedded toy-model acceptance fixtures")
    common(st)
    st.set_defaults(handler=run_selftest)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("FD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.handler(args))
    except (ConfigError, FormatError, PreconditionError, TemplateError, TooFewTagsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendUnavailableError, ProtocolError, LlmServiceError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except FaithdecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
