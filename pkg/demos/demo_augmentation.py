"""Run the caption-augmentation pipeline offline with the mock LLM.

Per clip: one ground-truth caption is sampled (seeded), paraphrased for the
clean datapoint, and rewritten with three low-ranked audio tags injected
for the hallucinated one. With the deterministic mock client the whole run
is byte-reproducible; point ``HttpLlmClient`` at a real completion service
for actual rewrites.

Run:  python demos/demo_augmentation.py
"""

from importlib import resources
from pathlib import Path
from tempfile import TemporaryDirectory

from faithdec import AugmentRecord, MockLlmClient, augment_dataset, load_augment_dataset


def main() -> None:
    data = resources.files("faithdec").joinpath("data/augment_dataset.jsonl")
    with TemporaryDirectory() as tmp:
        path = Path(tmp) / "rows.jsonl"
        path.write_text(data.read_text(encoding="utf-8"))
        rows = load_augment_dataset(str(path))

    print(f"{len(rows)} clips, {len(rows[0].tags)} ranked tags each\n")
    for outcome in augment_dataset(rows, MockLlmClient(), seed=1):
        if not isinstance(outcome, AugmentRecord):
            print(f"quarantined {outcome.context_id}: {outcome.reason}")
            continue
        print(f"clip {outcome.context_id} (row seed {outcome.seed})")
        print(f"  original:     {outcome.original_caption}")
        print(f"  paraphrase:   {outcome.paraphrase}")
        print(f"  injected:     {', '.join(outcome.injected_tags)}")
        print(f"  hallucinated: {outcome.hallucinated_caption}")
        print(f"  prompt hash:  {outcome.prompt_fingerprint[:16]}…")
        print()


if __name__ == "__main__":
    main()
