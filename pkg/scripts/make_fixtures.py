"""Regenerate the shipped synthetic fixture under data/fixture/."""

import argparse
from pathlib import Path

from strudel.corpus import write_annotations, write_dialogues, write_examples
from strudel.synthetic import make_fixture


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=Path(__file__).parents[1] / "data" / "fixture", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    dialogues, annotations, examples = make_fixture(args.seed)
    write_dialogues(args.out / "dialogues.jsonl", dialogues)
    write_annotations(args.out / "annotations.jsonl", annotations)
    write_examples(args.out / "examples.jsonl", examples)
    print(f"wrote {len(dialogues)} dialogues, {len(annotations)} annotations, "
          f"{len(examples)} examples to {args.out}")


if __name__ == "__main__":
    main()
