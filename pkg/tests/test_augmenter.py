"""Augmentation pipeline: tag selection, prompting, retries, determinism."""

import json
import logging
from pathlib import Path

import numpy as np
import pytest

from faithdec.augmenter import (
    DISSIMILAR_RANK_HI,
    DISSIMILAR_RANK_LO,
    AugmentRecord,
    DatasetRow,
    FewshotExample,
    MockLlmClient,
    PromptTemplates,
    QuarantinedRow,
    RankedTagList,
    RetryingLlmClient,
    augment_dataset,
    build_inject_prompt,
    build_paraphrase_prompt,
    inject_tags,
    load_augment_dataset,
    paraphrase,
    render_template,
    select_dissimilar_tags,
)
from faithdec.errors import (
    EmptyResponseError,
    FormatError,
    LlmServiceError,
    PreconditionError,
    TemplateError,
    TooFewTagsError,
)

DATA = Path(__file__).parent / "data"
FIXTURE_DATASET = Path(__file__).parents[1] / "src/faithdec/data/augment_dataset.jsonl"


def ranked_tags(n: int, context_id: str = "clip") -> RankedTagList:
    pairs = tuple((f"tag{i:02d}", round(1.0 - 0.01 * i, 4)) for i in range(n))
    return RankedTagList(context_id=context_id, tags=pairs)


class TestRankedTagList:
    def test_rejects_unsorted(self):
        with pytest.raises(FormatError):
            RankedTagList("c", (("a", 0.1), ("b", 0.9)))

    def test_rejects_duplicate_tags(self):
        with pytest.raises(FormatError):
            RankedTagList("c", (("a", 0.9), ("a", 0.8)))

    def test_equal_scores_tie_break_by_tag(self):
        RankedTagList("c", (("a", 0.5), ("b", 0.5)))
        with pytest.raises(FormatError):
            RankedTagList("c", (("b", 0.5), ("a", 0.5)))


class TestSelectDissimilarTags:
    def test_three_tags_from_the_rank_window(self):
        tags = ranked_tags(45)
        window = {t for t, _ in tags.tags[DISSIMILAR_RANK_LO - 1 : DISSIMILAR_RANK_HI]}
        picks = select_dissimilar_tags(tags, seed=7)
        assert len(picks) == 3 and len(set(picks)) == 3
        assert set(picks) <= window

    def test_too_few_tags(self):
        with pytest.raises(TooFewTagsError):
            select_dissimilar_tags(ranked_tags(29), seed=7)

    def test_window_boundary_is_forty(self):
        select_dissimilar_tags(ranked_tags(40), seed=0)
        with pytest.raises(TooFewTagsError):
            select_dissimilar_tags(ranked_tags(39), seed=0)

    def test_deterministic_per_seed(self):
        tags = ranked_tags(45)
        assert select_dissimilar_tags(tags, seed=3) == select_dissimilar_tags(tags, seed=3)

    def test_seed_changes_selection_somewhere(self):
        tags = ranked_tags(45)
        picks = {tuple(select_dissimilar_tags(tags, seed=s)) for s in range(20)}
        assert len(picks) > 1

    def test_all_window_ranks_reachable(self):
        tags = ranked_tags(45)
        seen = set()
        for seed in range(200):
            seen.update(select_dissimilar_tags(tags, seed=seed))
        window = {t for t, _ in tags.tags[DISSIMILAR_RANK_LO - 1 : DISSIMILAR_RANK_HI]}
        assert seen == window


class TestTemplates:
    def test_render_replaces_placeholders(self):
        assert render_template("x {{a}} y {{b}}", a="1", b="2") == "x 1 y 2"

    def test_unresolved_placeholder_is_an_error(self):
        with pytest.raises(TemplateError):
            render_template("x {{a}} {{missing}}", a="1")

    def test_default_templates_load(self):
        templates = PromptTemplates.load_default()
        assert "{{caption}}" in templates.paraphrase
        assert "{{tags}}" in templates.inject and "{{fewshots}}" in templates.inject
        assert len(templates.fewshots) >= 1
        for shot in templates.fewshots:
            assert len(shot.tags) == 3

    def test_load_dir_roundtrip(self, tmp_path):
        (tmp_path / "paraphrase.txt").write_text("P {{caption}}", encoding="utf-8")
        (tmp_path / "inject.txt").write_text(
            "{{fewshots}} C {{caption}} T {{tags}}", encoding="utf-8"
        )
        (tmp_path / "fewshots.json").write_text(
            json.dumps([{"caption": "c", "tags": ["a", "b", "c"], "rewritten": "r"}]),
            encoding="utf-8",
        )
        templates = PromptTemplates.load_dir(tmp_path)
        assert templates.paraphrase == "P {{caption}}"
        assert templates.fewshots[0].rewritten == "r"


class ScriptedLlm:
    """Responds from a list; entries that are exceptions get raised."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


class TestParaphrase:
    def test_mock_echoes_with_marker(self):
        assert paraphrase(MockLlmClient(), "Rain falls hard.") == "[PARA] Rain falls hard."

    def test_empty_caption_rejected(self):
        with pytest.raises(PreconditionError):
            paraphrase(MockLlmClient(), "   ")

    def test_response_stripped_to_one_line(self):
        llm = ScriptedLlm(["\n  first line  \nsecond line\n"])
        assert paraphrase(llm, "x") == "first line"

    def test_empty_response_is_an_error(self):
        llm = ScriptedLlm(["\n \n"])
        with pytest.raises(EmptyResponseError):
            paraphrase(llm, "x")

    def test_two_failures_then_success_with_retry_logged(self, caplog):
        scripted = ScriptedLlm(
            [LlmServiceError("timeout"), LlmServiceError("timeout"), "recovered"]
        )
        sleeps = []
        llm = RetryingLlmClient(scripted, attempts=3, backoff_s=0.25, sleep=sleeps.append)
        with caplog.at_level(logging.INFO, logger="faithdec.augmenter"):
            assert paraphrase(llm, "x") == "recovered"
        assert sleeps == [0.25, 0.5]
        assert any("after 2 retries" in r.message for r in caplog.records)

    def test_exhausted_retries_raise(self):
        scripted = ScriptedLlm([LlmServiceError("boom")] * 3)
        llm = RetryingLlmClient(scripted, attempts=3, sleep=lambda _: None)
        with pytest.raises(LlmServiceError):
            paraphrase(llm, "x")


class TestInjectTags:
    def test_mock_appends_tags(self):
        got = inject_tags(MockLlmClient(), "Rain falls.", ["Dog", "Bell", "Saw"])
        assert got == "Rain falls. | Dog, Bell, Saw"

    def test_requires_exactly_three_tags(self):
        with pytest.raises(PreconditionError):
            inject_tags(MockLlmClient(), "Rain falls.", ["Dog", "Bell"])

    def test_requires_fewshots(self):
        templates = PromptTemplates(paraphrase="{{caption}}", inject="{{fewshots}}{{caption}}{{tags}}", fewshots=())
        with pytest.raises(PreconditionError):
            inject_tags(MockLlmClient(), "Rain.", ["a", "b", "c"], templates=templates)

    def test_prompt_carries_fewshots_caption_and_tags(self):
        llm = ScriptedLlm(["ok"])
        inject_tags(llm, "Rain falls.", ["Dog", "Bell", "Saw"])
        prompt = llm.prompts[0]
        assert "Rain falls." in prompt and "Dog, Bell, Saw" in prompt
        assert "campfire" in prompt  # fewshot exemplar text


class TestLoadDataset:
    def test_fixture_roundtrip(self):
        rows = load_augment_dataset(str(FIXTURE_DATASET))
        assert len(rows) == 3
        assert all(len(r.tags) == 45 for r in rows)
        assert all(len(r.captions) == 5 for r in rows)

    def test_bad_json_names_the_line(self, tmp_path):
        p = tmp_path / "rows.jsonl"
        p.write_text('{"context_id": "a", "captions": ["x"], "tags": []}\nnot json\n')
        with pytest.raises(FormatError) as err:
            load_augment_dataset(str(p))
        assert err.value.line == 2

    def test_unsorted_tags_rejected(self, tmp_path):
        p = tmp_path / "rows.jsonl"
        row = {
            "context_id": "a",
            "captions": ["x"],
            "tags": [{"tag": "t1", "score": 0.1}, {"tag": "t2", "score": 0.9}],
        }
        p.write_text(json.dumps(row) + "\n")
        with pytest.raises(FormatError):
            load_augment_dataset(str(p))


def small_row(context_id: str, n_tags: int = 45) -> DatasetRow:
    return DatasetRow(
        context_id=context_id,
        captions=(f"{context_id} one", f"{context_id} two"),
        tags=ranked_tags(n_tags, context_id),
    )


class TestAugmentDataset:
    def test_golden_three_row_run(self):
        rows = load_augment_dataset(str(FIXTURE_DATASET))
        got = [
            json.dumps(r.to_dict(), sort_keys=True)
            for r in augment_dataset(rows, MockLlmClient(), seed=1)
        ]
        golden = (DATA / "augment_golden.jsonl").read_text(encoding="utf-8").splitlines()
        assert got == golden

    def test_rank_window_respected_for_random_fixtures(self):
        rng = np.random.default_rng(11)
        for case in range(20):
            n = int(rng.integers(40, 60))
            row = small_row(f"r{case}", n)
            outcomes = list(augment_dataset([row], MockLlmClient(), seed=int(rng.integers(1 << 30))))
            (record,) = outcomes
            assert isinstance(record, AugmentRecord)
            window = {
                t for t, _ in row.tags.tags[DISSIMILAR_RANK_LO - 1 : DISSIMILAR_RANK_HI]
            }
            assert set(record.injected_tags) <= window

    def test_short_tag_row_quarantined_and_run_continues(self):
        rows = [small_row("ok"), small_row("short", n_tags=29), small_row("ok2")]
        outcomes = list(augment_dataset(rows, MockLlmClient(), seed=2))
        assert isinstance(outcomes[0], AugmentRecord)
        assert isinstance(outcomes[1], QuarantinedRow)
        assert "29 tags" in outcomes[1].reason
        assert isinstance(outcomes[2], AugmentRecord)

    def test_service_failure_quarantines_row(self):
        failing = ScriptedLlm([LlmServiceError("down")] + ["x | y"] * 4)
        rows = [small_row("a"), small_row("b")]
        outcomes = list(augment_dataset(rows, failing, seed=3))
        assert isinstance(outcomes[0], QuarantinedRow)
        assert isinstance(outcomes[1], AugmentRecord)

    def test_seed_changes_caption_sampling_not_schema(self):
        row = DatasetRow(
            context_id="many",
            captions=tuple(f"cap {i}" for i in range(5)),
            tags=ranked_tags(45, "many"),
        )
        originals = set()
        for seed in range(30):
            (record,) = augment_dataset([row], MockLlmClient(), seed=seed)
            assert isinstance(record, AugmentRecord)
            originals.add(record.original_caption)
        assert len(originals) > 1

    def test_identical_runs_identical_records(self):
        rows = load_augment_dataset(str(FIXTURE_DATASET))
        a = list(augment_dataset(rows, MockLlmClient(), seed=9))
        b = list(augment_dataset(rows, MockLlmClient(), seed=9))
        assert a == b

    def test_fingerprint_tracks_the_rendered_prompts(self):
        row = small_row("fp")
        (rec1,) = augment_dataset([row], MockLlmClient(), seed=5)
        templates = PromptTemplates.load_default()
        changed = PromptTemplates(
            paraphrase=templates.paraphrase + "\nextra instruction",
            inject=templates.inject,
            fewshots=templates.fewshots,
        )
        (rec2,) = augment_dataset([row], MockLlmClient(), seed=5, templates=changed)
        assert rec1.prompt_fingerprint != rec2.prompt_fingerprint
        (rec3,) = augment_dataset([row], MockLlmClient(), seed=5)
        assert rec1.prompt_fingerprint == rec3.prompt_fingerprint

    def test_prompts_match_the_builders(self):
        row = small_row("pb")
        llm = ScriptedLlm(["p", "h | t"])
        (record,) = augment_dataset([row], llm, seed=6)
        templates = PromptTemplates.load_default()
        assert llm.prompts[0] == build_paraphrase_prompt(record.original_caption, templates)
        assert llm.prompts[1] == build_inject_prompt(
            record.original_caption, list(record.injected_tags), templates
        )
