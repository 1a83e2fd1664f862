"""Hallucinated-caption data augmentation via an external completion service.

Per dataset row: pick one ground-truth caption (seeded), paraphrase it for
the non-hallucinated datapoint, pick three acoustically dissimilar tags
from the clip's ranked tag list (1-indexed ranks 30..40 of the
classifier's descending scores), and ask the LLM to rewrite the caption
with those events injected, yielding the hallucinated datapoint. Prompt
text lives in versioned template files, never in code, so it stays
diffable; the service is plain HTTP POST with retries.

All randomness flows from one run seed, fanned out per row by stable
hashing, so output bytes are reproducible regardless of parallelism.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol, Sequence

import numpy as np
import requests

from .errors import (
    EmptyResponseError,
    FormatError,
    LlmServiceError,
    PreconditionError,
    TemplateError,
    TooFewTagsError,
)

__all__ = [
    "RankedTagList",
    "LlmClient",
    "HttpLlmClient",
    "RetryingLlmClient",
    "MockLlmClient",
    "FewshotExample",
    "PromptTemplates",
    "DatasetRow",
    "AugmentRecord",
    "QuarantinedRow",
    "select_dissimilar_tags",
    "paraphrase",
    "inject_tags",
    "augment_dataset",
    "load_augment_dataset",
    "render_template",
    "stable_row_seed",
    "DISSIMILAR_RANK_LO",
    "DISSIMILAR_RANK_HI",
]

logger = logging.getLogger(__name__)

# 1-indexed inclusive rank window of "dissimilar" tags.
DISSIMILAR_RANK_LO = 30
DISSIMILAR_RANK_HI = 40
INJECTED_TAG_COUNT = 3


@dataclass(frozen=True)
class RankedTagList:
    """Audio tags ranked by classification score, best first.

    Ordering is score descending with ties broken by tag string ascending;
    duplicate tag strings are rejected.
    """

    context_id: str
    tags: tuple[tuple[str, float], ...]

    def __post_init__(self):
        tags = tuple((str(t), float(s)) for t, s in self.tags)
        object.__setattr__(self, "tags", tags)
        seen = set()
        for tag, _ in tags:
            if tag in seen:
                raise FormatError(f"duplicate tag {tag!r} for {self.context_id!r}")
            seen.add(tag)
        ordered = sorted(tags, key=lambda ts: (-ts[1], ts[0]))
        if ordered != list(tags):
            raise FormatError(
                f"tags for {self.context_id!r} are not sorted by descending score"
            )

    def __len__(self) -> int:
        return len(self.tags)


def select_dissimilar_tags(tags: RankedTagList, seed: int) -> list[str]:
    """Sample three distinct tags uniformly from ranks 30..40 (1-indexed).

    Deterministic per seed. Raises :class:`TooFewTagsError` when the list
    is shorter than the window.
    """
    if len(tags) < DISSIMILAR_RANK_HI:
        raise TooFewTagsError(
            f"{tags.context_id!r} has {len(tags)} tags; "
            f"dissimilar selection needs at least {DISSIMILAR_RANK_HI}"
        )
    window = tags.tags[DISSIMILAR_RANK_LO - 1 : DISSIMILAR_RANK_HI]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(window), size=INJECTED_TAG_COUNT, replace=False)
    return [window[i][0] for i in picks]


class LlmClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class HttpLlmClient:
    """Minimal HTTP POST contract to a completion service.

    Request body: {"model", "prompt", "temperature", "max_tokens"}; the
    response must be 200 with a JSON object carrying "text". Anything else
    raises :class:`LlmServiceError`. ``min_interval_s`` rate-caps requests.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        temperature: float = 0.7,
        max_tokens: int = 128,
        timeout_s: float = 60.0,
        min_interval_s: float = 0.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout_s = timeout_s
        self.min_interval_s = min_interval_s
        self._last_request = 0.0

    def complete(self, prompt: str) -> str:
        if self.min_interval_s > 0.0:
            wait = self._last_request + self.min_interval_s - time.monotonic()
            if wait > 0:
                time.sleep(wait)
        self._last_request = time.monotonic()
        payload = {
            "model": self.model,
            "prompt": prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        try:
            response = requests.post(self.endpoint, json=payload, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise LlmServiceError(f"completion request failed: {exc}") from exc
        if response.status_code != 200:
            raise LlmServiceError(
                f"completion service returned HTTP {response.status_code}"
            )
        try:
            body = response.json()
        except ValueError as exc:
            raise LlmServiceError("completion response is not JSON") from exc
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise LlmServiceError('completion response lacks a "text" field')
        return body["text"]


class RetryingLlmClient:
    """Retries a client on :class:`LlmServiceError` with exponential backoff."""

    def __init__(
        self,
        inner: LlmClient,
        *,
        attempts: int = 3,
        backoff_s: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if attempts < 1:
            raise PreconditionError(f"attempts must be positive, got {attempts}")
        self.inner = inner
        self.attempts = attempts
        self.backoff_s = backoff_s
        self._sleep = sleep

    def complete(self, prompt: str) -> str:
        last: LlmServiceError | None = None
        for attempt in range(self.attempts):
            try:
                result = self.inner.complete(prompt)
            except LlmServiceError as exc:
                last = exc
                if attempt + 1 < self.attempts:
                    delay = self.backoff_s * (2**attempt)
                    logger.warning(
                        "llm call failed (attempt %d/%d): %s; retrying in %.2fs",
                        attempt + 1,
                        self.attempts,
                        exc,
                        delay,
                    )
                    self._sleep(delay)
                continue
            if attempt > 0:
                logger.info("llm call succeeded after %d retries", attempt)
            return result
        raise LlmServiceError(f"llm call failed after {self.attempts} attempts: {last}")


class MockLlmClient:
    """Deterministic offline stand-in for the completion service.

    Answers from the rendered prompt alone: the last "Caption:" line names
    the query caption; if an "Extra events:" line follows, the reply is the
    caption with the events appended, otherwise a marked echo. Useful for
    demos, self-tests, and byte-reproducible augmentation runs.
    """

    def complete(self, prompt: str) -> str:
        caption = None
        tags = None
        for line in prompt.splitlines():
            stripped = line.strip()
            if stripped.startswith("Caption:"):
                caption = stripped[len("Caption:") :].strip()
                tags = None
            elif stripped.startswith("Extra events:"):
                tags = stripped[len("Extra events:") :].strip()
        if caption is None:
            raise LlmServiceError("mock llm found no 'Caption:' line in the prompt")
        if tags is not None:
            return f"{caption} | {tags}"
        return f"[PARA] {caption}"


@dataclass(frozen=True)
class FewshotExample:
    caption: str
    tags: tuple[str, ...]
    rewritten: str


@dataclass(frozen=True)
class PromptTemplates:
    """Paraphrase/injection templates plus the few-shot exemplars.

    Placeholders are ``{{caption}}``, ``{{tags}}`` and ``{{fewshots}}``; an
    unresolved placeholder is a render error.
    """

    paraphrase: str
    inject: str
    fewshots: tuple[FewshotExample, ...]

    @classmethod
    def load_default(cls) -> "PromptTemplates":
        root = resources.files("faithdec").joinpath("data/prompts")
        return cls._load(
            root.joinpath("paraphrase.txt").read_text(encoding="utf-8"),
            root.joinpath("inject.txt").read_text(encoding="utf-8"),
            root.joinpath("fewshots.json").read_text(encoding="utf-8"),
            source="<packaged>",
        )

    @classmethod
    def load_dir(cls, directory: str | Path) -> "PromptTemplates":
        directory = Path(directory)
        return cls._load(
            (directory / "paraphrase.txt").read_text(encoding="utf-8"),
            (directory / "inject.txt").read_text(encoding="utf-8"),
            (directory / "fewshots.json").read_text(encoding="utf-8"),
            source=str(directory),
        )

    @classmethod
    def _load(cls, paraphrase: str, inject: str, fewshots_json: str, source: str) -> "PromptTemplates":
        try:
            raw = json.loads(fewshots_json)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad fewshots JSON: {exc}", path=source) from None
        fewshots = []
        for i, item in enumerate(raw):
            try:
                fewshots.append(
                    FewshotExample(
                        caption=str(item["caption"]),
                        tags=tuple(str(t) for t in item["tags"]),
                        rewritten=str(item["rewritten"]),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise FormatError(f"fewshot {i} malformed: {exc}", path=source) from None
        return cls(paraphrase=paraphrase, inject=inject, fewshots=tuple(fewshots))


def render_template(template: str, **slots: str) -> str:
    """Substitute ``{{name}}`` placeholders; leftovers raise TemplateError."""
    text = template
    for name, value in slots.items():
        text = text.replace("{{" + name + "}}", value)
    if "{{" in text and "}}" in text:
        start = text.index("{{")
        end = text.index("}}", start)
        raise TemplateError(f"unresolved placeholder {text[start : end + 2]!r}")
    return text


def _render_fewshots(fewshots: Sequence[FewshotExample]) -> str:
    blocks = []
    for shot in fewshots:
        blocks.append(
            f"Caption: {shot.caption}\n"
            f"Extra events: {', '.join(shot.tags)}\n"
            f"Rewrite: {shot.rewritten}"
        )
    return "\n\n".join(blocks)


def build_paraphrase_prompt(caption: str, templates: PromptTemplates) -> str:
    return render_template(templates.paraphrase, caption=caption)


def build_inject_prompt(
    caption: str, tags: Sequence[str], templates: PromptTemplates
) -> str:
    return render_template(
        templates.inject,
        caption=caption,
        tags=", ".join(tags),
        fewshots=_render_fewshots(templates.fewshots),
    )


def _single_line(response: str, what: str) -> str:
    for line in response.splitlines():
        line = line.strip()
        if line:
            return line
    raise EmptyResponseError(f"{what} returned no usable text")


def paraphrase(llm: LlmClient, caption: str, templates: PromptTemplates | None = None) -> str:
    """One-line paraphrase of a caption (the non-hallucinated datapoint)."""
    if not caption.strip():
        raise PreconditionError("caption must be non-empty")
    templates = templates or PromptTemplates.load_default()
    prompt = build_paraphrase_prompt(caption, templates)
    return _single_line(llm.complete(prompt), "paraphrase")


def inject_tags(
    llm: LlmClient,
    caption: str,
    tags: Sequence[str],
    fewshots: Sequence[FewshotExample] | None = None,
    templates: PromptTemplates | None = None,
) -> str:
    """Rewrite a caption so it also mentions the three injected sound events."""
    if not caption.strip():
        raise PreconditionError("caption must be non-empty")
    tags = list(tags)
    if len(tags) != INJECTED_TAG_COUNT:
        raise PreconditionError(f"exactly {INJECTED_TAG_COUNT} tags required, got {len(tags)}")
    templates = templates or PromptTemplates.load_default()
    if fewshots is not None:
        templates = PromptTemplates(
            paraphrase=templates.paraphrase,
            inject=templates.inject,
            fewshots=tuple(fewshots),
        )
    if not templates.fewshots:
        raise PreconditionError("tag injection needs at least one fewshot exemplar")
    prompt = build_inject_prompt(caption, tags, templates)
    return _single_line(llm.complete(prompt), "tag injection")


@dataclass(frozen=True)
class DatasetRow:
    context_id: str
    captions: tuple[str, ...]
    tags: RankedTagList


@dataclass(frozen=True)
class AugmentRecord:
    """One augmented dataset row.

    ``paraphrase`` is the non-hallucinated datapoint, ``hallucinated_caption``
    the tag-injected one; ``prompt_fingerprint`` hashes both rendered prompts
    so template changes are auditable; ``seed`` is the per-row seed derived
    from the run seed.
    """

    context_id: str
    original_caption: str
    paraphrase: str
    injected_tags: tuple[str, ...]
    hallucinated_caption: str
    prompt_fingerprint: str
    seed: int

    def to_dict(self) -> dict:
        return {
            "context_id": self.context_id,
            "original_caption": self.original_caption,
            "paraphrase": self.paraphrase,
            "injected_tags": list(self.injected_tags),
            "hallucinated_caption": self.hallucinated_caption,
            "prompt_fingerprint": self.prompt_fingerprint,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class QuarantinedRow:
    context_id: str
    reason: str

    def to_dict(self) -> dict:
        return {"context_id": self.context_id, "reason": self.reason}


def stable_row_seed(seed: int, context_id: str, purpose: str = "") -> int:
    """Stable 64-bit per-row seed derived from the run seed by hashing."""
    digest = hashlib.sha256(f"{seed}|{context_id}|{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def load_augment_dataset(path: str) -> list[DatasetRow]:
    """Parse the augmentation dataset: one JSON object per line.

    Row schema: {"context_id": str, "captions": [str, ...],
    "tags": [{"tag": str, "score": float}, ...]} with tags pre-sorted by
    descending score (validated).
    """
    rows: list[DatasetRow] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"bad JSON: {exc}", path=path, line=line_no) from None
            try:
                context_id = str(obj["context_id"])
                captions = tuple(str(c) for c in obj["captions"])
                tag_pairs = tuple((str(t["tag"]), float(t["score"])) for t in obj["tags"])
            except (KeyError, TypeError) as exc:
                raise FormatError(f"row malformed: {exc}", path=path, line=line_no) from None
            if not captions:
                raise FormatError("row has no captions", path=path, line=line_no)
            scores = [s for _, s in tag_pairs]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise FormatError(
                    "tags are not sorted by descending score", path=path, line=line_no
                )
            canonical = tuple(sorted(tag_pairs, key=lambda ts: (-ts[1], ts[0])))
            try:
                tags = RankedTagList(context_id=context_id, tags=canonical)
            except FormatError as exc:
                raise FormatError(str(exc), path=path, line=line_no) from None
            rows.append(DatasetRow(context_id=context_id, captions=captions, tags=tags))
    return rows


def augment_dataset(
    rows: Iterable[DatasetRow],
    llm: LlmClient,
    seed: int,
    templates: PromptTemplates | None = None,
) -> Iterator[AugmentRecord | QuarantinedRow]:
    """Stream augmented records in input order; per-row failures quarantine.

    Per row the LLM is called twice, paraphrase first; byte-identical
    outputs are guaranteed for identical (rows, seed, client behavior).
    """
    templates = templates or PromptTemplates.load_default()
    for row in rows:
        try:
            caption_rng = np.random.default_rng(stable_row_seed(seed, row.context_id, "caption"))
            original = row.captions[int(caption_rng.integers(len(row.captions)))]
            tags = select_dissimilar_tags(
                row.tags, stable_row_seed(seed, row.context_id, "tags")
            )
            para = paraphrase(llm, original, templates)
            hallucinated = inject_tags(llm, original, tags, templates=templates)
            fingerprint = hashlib.sha256(
                build_paraphrase_prompt(original, templates).encode("utf-8")
                + b"\x00"
                + build_inject_prompt(original, tags, templates).encode("utf-8")
            ).hexdigest()
            yield AugmentRecord(
                context_id=row.context_id,
                original_caption=original,
                paraphrase=para,
                injected_tags=tuple(tags),
                hallucinated_caption=hallucinated,
                prompt_fingerprint=fingerprint,
                seed=stable_row_seed(seed, row.context_id),
            )
        except (TooFewTagsError, LlmServiceError, PreconditionError) as exc:
            logger.warning("quarantined row %r: %s", row.context_id, exc)
            yield QuarantinedRow(context_id=row.context_id, reason=str(exc))
