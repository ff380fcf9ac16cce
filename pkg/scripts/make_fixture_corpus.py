#!/usr/bin/env python3
"""Build the offline synthetic fixture corpus (pages + stub models +
caption sidecar + pipeline config) used by tests and demos.

    python3 scripts/make_fixture_corpus.py --out /tmp/corpus
    codexforge all --config /tmp/corpus/pipeline.json
"""

import argparse
from pathlib import Path

from codexforge.fixtures import build_fixture_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--pages-per-volume", type=int, default=12)
    parser.add_argument("--volumes", type=int, default=2)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    corpus = build_fixture_corpus(
        Path(args.out),
        pages_per_volume=args.pages_per_volume,
        volumes=args.volumes,
        seed=args.seed,
    )
    print(f"corpus data root: {corpus.config.data_root}")
    print(f"pipeline config:  {corpus.config_path}")
    print(f"art pages:        {len(corpus.art_pages)}")
    print(f"expected records: {len(corpus.expected_record_ids)}")
    print(f"\nnext: codexforge all --config {corpus.config_path}")


if __name__ == "__main__":
    main()
