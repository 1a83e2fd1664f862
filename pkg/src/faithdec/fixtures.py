"""Desk-scale fixtures shared by the self-test, the demos, and the test suite.

Everything here is deterministic given its seed. The tabular models cover
every prefix (explicit rows down to the rollout horizon, a random fallback
beyond), so exhaustive oracles can enumerate all sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DecodeConfig, VocabInfo
from .embedding import BagOfWordsOracle
from .lm import TabularLM

__all__ = ["ToyInstance", "steering_instance", "random_instance", "toy_vocab"]


def toy_vocab(num_content: int) -> VocabInfo:
    """``<s> </s> w0 w1 ...`` with ``num_content`` content words."""
    strings = ("<s>", "</s>") + tuple(f"w{i}" for i in range(num_content))
    return VocabInfo(vocab_size=2 + num_content, bos_id=0, eos_id=1, token_strings=strings)


@dataclass(frozen=True)
class ToyInstance:
    """A tabular model, a matching bag-of-words provider, and a context id."""

    lm: TabularLM
    provider: BagOfWordsOracle
    context_id: str


def steering_instance() -> ToyInstance:
    """The two-branch instance where guidance flips the chosen caption.

    From BOS the model offers "rain" with probability 0.6 and "wind" with
    0.4; either word ends the caption. The clip's audio embedding is the
    "wind" basis vector, so the rollouts score faithfulness 0.0 and 1.0.
    """
    vocab = VocabInfo(
        vocab_size=4, bos_id=0, eos_id=1, token_strings=("<s>", "</s>", "rain", "wind")
    )
    rain, wind = 2, 3
    table = {
        ("clip1", (0,)): (0.0, 0.0, 0.6, 0.4),
        ("clip1", (0, rain)): (0.0, 1.0, 0.0, 0.0),
        ("clip1", (0, wind)): (0.0, 1.0, 0.0, 0.0),
    }
    lm = TabularLM(vocab=vocab, table=table, fallback=(0.0, 1.0, 0.0, 0.0))
    provider = BagOfWordsOracle(vocab, audio_map={"clip1": (0.0, 0.0, 0.0, 1.0)})
    return ToyInstance(lm=lm, provider=provider, context_id="clip1")


def random_instance(
    rng: np.random.Generator,
    *,
    vocab_size: int | None = None,
    max_rows_depth: int = 3,
) -> ToyInstance:
    """A random tabular model with a random audio direction.

    Explicit Dirichlet rows cover all prefixes up to ``max_rows_depth``
    content tokens; deeper prefixes use a random (non-uniform) fallback.
    """
    if vocab_size is None:
        vocab_size = int(rng.integers(3, 6))
    vocab = toy_vocab(vocab_size - 2)
    context_id = "clip"

    def random_row() -> np.ndarray:
        row = rng.dirichlet(np.full(vocab.vocab_size, 0.8))
        # exact sum-to-1 for the loader tolerance
        row = np.maximum(row, 0.0)
        row[-1] = max(0.0, 1.0 - float(row[:-1].sum()))
        return row

    table: dict[tuple[str, tuple[int, ...]], np.ndarray] = {}
    non_eos = [t for t in range(vocab.vocab_size) if t != vocab.eos_id]

    def fill(prefix: tuple[int, ...], depth: int) -> None:
        table[(context_id, prefix)] = random_row()
        if depth < max_rows_depth:
            for t in non_eos:
                if t == vocab.bos_id:
                    continue
                fill(prefix + (t,), depth + 1)

    fill((vocab.bos_id,), 0)
    lm = TabularLM(vocab=vocab, table=table, fallback=random_row())
    audio = rng.uniform(0.05, 1.0, size=vocab.vocab_size)
    provider = BagOfWordsOracle(vocab, audio_map={context_id: audio})
    return ToyInstance(lm=lm, provider=provider, context_id=context_id)


def random_config(rng: np.random.Generator, *, max_len_hi: int = 6) -> DecodeConfig:
    """A random valid config with expansions >= beam width (the range where
    alpha = 0 provably reduces to standard beam search)."""
    beam_width = int(rng.integers(1, 5))
    max_len = int(rng.integers(3, max_len_hi + 1))
    return DecodeConfig(
        beam_width=beam_width,
        alpha=0.0,
        max_len=max_len,
        rollout_max_len=max_len + int(rng.integers(0, 3)),
        expansions_per_beam=beam_width + int(rng.integers(0, 3)),
        seed=int(rng.integers(0, 2**32)),
        n_best=int(rng.integers(1, beam_width + 1)),
    )
