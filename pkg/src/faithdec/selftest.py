"""Embedded toy-model acceptance fixtures, runnable as ``faithdec selftest``.

Each check prints one ``ok``/``FAIL`` line; any failure makes the command
exit with the partial-failure code.
"""

from __future__ import annotations

import math
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from .augmenter import (
    DISSIMILAR_RANK_HI,
    DISSIMILAR_RANK_LO,
    AugmentRecord,
    MockLlmClient,
    augment_dataset,
    load_augment_dataset,
)
from .core import DecodeConfig
from .decoder import detokenize, faithful_beam_search, standard_beam_search, weighted_score
from .embedding import cosine_similarity, load_embedding_store
from .fixtures import random_config, random_instance, steering_instance
from .lm import load_tabular_lm
from .metrics import EvalInstance, bleu1, rouge_l

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


@check
def weighted_mix_arithmetic() -> None:
    assert weighted_score(0.37, 0.9, 0.0) == 0.37
    assert weighted_score(0.37, 0.9, 1.0) == 0.9
    assert abs(weighted_score(0.5, 0.6, 0.8) - 0.58) <= 1e-12


@check
def cosine_basics() -> None:
    assert cosine_similarity((0.3, -0.4, 1.2), (0.3, -0.4, 1.2)) == 1.0
    assert cosine_similarity((1.0, 0.0), (0.0, 1.0)) == 0.0
    assert abs(cosine_similarity((1.0, 1.0), (1.0, 0.0)) - 1 / math.sqrt(2)) <= 1e-8


@check
def steering_flips_the_branch() -> None:
    inst = steering_instance()
    session = inst.lm.open_session(inst.context_id)
    cfg = DecodeConfig(beam_width=1, alpha=0.8, max_len=4, rollout_max_len=4,
                       expansions_per_beam=2, n_best=1)
    high = faithful_beam_search(session, inst.provider, cfg)
    assert detokenize(session.vocab, high.best().hypothesis.tokens) == "wind"
    low = faithful_beam_search(session, inst.provider, cfg.with_alpha(0.1))
    assert detokenize(session.vocab, low.best().hypothesis.tokens) == "rain"


@check
def alpha_zero_reduces_to_beam_search() -> None:
    rng = np.random.default_rng(20240817)
    for _ in range(10):
        inst = random_instance(rng)
        cfg = random_config(rng)
        session = inst.lm.open_session(inst.context_id)
        base = standard_beam_search(session, cfg)
        guided = faithful_beam_search(session, inst.provider, cfg)
        assert guided.token_sequences() == base.token_sequences()


@check
def metric_hand_values() -> None:
    inst = EvalInstance("c", "a b c", ("a b d",))
    assert abs(bleu1([inst]) - 2 / 3) <= 1e-12
    same = EvalInstance("c", "a b c", ("a b c",))
    assert bleu1([same]) == 1.0 and rouge_l([same]) == 1.0
    lcs_inst = EvalInstance("c", "a b c d", ("a c d",))
    expected = (1 + 1.44) * 0.75 * 1.0 / (1.0 + 1.44 * 0.75)
    assert abs(rouge_l([lcs_inst]) - expected) <= 1e-12


@check
def packaged_fixtures_roundtrip() -> None:
    data = resources.files("faithdec").joinpath("data")
    with tempfile.TemporaryDirectory() as tmp:
        lm_path = Path(tmp) / "toy_lm.txt"
        store_path = Path(tmp) / "toy_store.txt"
        lm_path.write_text(data.joinpath("toy_lm.txt").read_text(encoding="utf-8"))
        store_path.write_text(data.joinpath("toy_store.txt").read_text(encoding="utf-8"))
        lm = load_tabular_lm(str(lm_path))
        store = load_embedding_store(str(store_path))
    session = lm.open_session("clip1")
    cfg = DecodeConfig(beam_width=2, alpha=0.8, max_len=4, rollout_max_len=6,
                       expansions_per_beam=3, n_best=1)
    nbest = faithful_beam_search(session, store, cfg)
    assert detokenize(session.vocab, nbest.best().hypothesis.tokens) == "wind"


@check
def augmentation_is_deterministic_and_rank_bound() -> None:
    data = resources.files("faithdec").joinpath("data")
    with tempfile.TemporaryDirectory() as tmp:
        dataset_path = Path(tmp) / "rows.jsonl"
        dataset_path.write_text(
            data.joinpath("augment_dataset.jsonl").read_text(encoding="utf-8")
        )
        rows = load_augment_dataset(str(dataset_path))
    runs = []
    for _ in range(2):
        records = [r for r in augment_dataset(rows, MockLlmClient(), seed=7)
                   if isinstance(r, AugmentRecord)]
        runs.append(records)
    assert runs[0] == runs[1] and len(runs[0]) == len(rows)
    for row, record in zip(rows, runs[0]):
        window = {t for t, _ in row.tags.tags[DISSIMILAR_RANK_LO - 1 : DISSIMILAR_RANK_HI]}
        assert set(record.injected_tags) <= window


def run() -> int:
    failures = 0
    for fn in CHECKS:
        name = fn.__name__
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"ok {name}")
    if failures:
        print(f"{failures} of {len(CHECKS)} checks failed")
        return 4
    print(f"all {len(CHECKS)} checks passed")
    return 0
