"""Why embedding similarity works as a hallucination signal.

Two candidate sets against the same references:

* clean paraphrases describe the same sounds with entirely different words,
  so the n-gram metrics score them near zero;
* hallucinated captions copy the reference wording and then add events that
  are not in the clip, so the n-gram metrics score them highly.

A shared-space similarity sees through both: paraphrases stay close to the
references, added events push captions away. The hand-placed store vectors
below play the role of real text projections (axes: rain, wind, dog,
train).

Run:  python demos/demo_hallucination_metrics.py
"""

from faithdec import EvalInstance, FileEmbeddingStore, format_report_table, split_report

TEXT_VECTORS = {
    # references
    "heavy rain falls": (1.0, 0.2, 0.0, 0.0),
    "wind howls through the trees": (0.1, 1.0, 0.0, 0.0),
    # clean paraphrases: same events, disjoint wording
    "a steady downpour soaks the street": (0.95, 0.25, 0.0, 0.0),
    "a strong gale whistles past": (0.15, 0.97, 0.0, 0.0),
    # hallucinated: reference wording plus an event that is not there
    "heavy rain falls while a dog barks": (0.70, 0.15, 0.65, 0.0),
    "wind howls through the trees as a train passes": (0.08, 0.70, 0.0, 0.70),
}


def main() -> None:
    store = FileEmbeddingStore(dim=4, text_map=TEXT_VECTORS, audio_map={})
    refs = {
        "clip1": ("heavy rain falls",),
        "clip2": ("wind howls through the trees",),
    }
    clean = [
        EvalInstance("clip1", "a steady downpour soaks the street", refs["clip1"]),
        EvalInstance("clip2", "a strong gale whistles past", refs["clip2"]),
    ]
    hallucinated = [
        EvalInstance("clip1", "heavy rain falls while a dog barks", refs["clip1"]),
        EvalInstance("clip2", "wind howls through the trees as a train passes", refs["clip2"]),
    ]

    comparison = split_report(hallucinated, clean, store)
    print(format_report_table([comparison.hallucinated, comparison.non_hallucinated]))
    print("deltas (clean - hallucinated):")
    for metric, delta in comparison.deltas.items():
        print(f"  {metric:14s} {delta:+.4f}")
    print()
    print("The n-gram columns rank the hallucinated captions above the clean")
    print("paraphrases; only the embedding similarity ranks the splits the")
    print("way a listener would.")


if __name__ == "__main__":
    main()
