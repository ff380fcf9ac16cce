#!/usr/bin/env python3
"""Generate a synthetic bench corpus (1,000 pages at 1500x2000 by default)
and measure per-page pipeline overhead with stub inference backends.

Real exported models can be benchmarked instead by passing --classifier /
--detector pointing at .onnx files (needs onnxruntime installed).
"""

import argparse
import json
from pathlib import Path

from codexforge.fixtures import build_bench_pages
from codexforge.pipeline import PipelineConfig, bench


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pages-dir", required=True,
                        help="directory for (or with) the bench pages")
    parser.add_argument("--n-pages", type=int, default=1000)
    parser.add_argument("--width", type=int, default=1500)
    parser.add_argument("--height", type=int, default=2000)
    parser.add_argument("--classifier", help="model file (defaults to generated stub)")
    parser.add_argument("--detector", help="model file (defaults to generated stub)")
    parser.add_argument("--target", type=float, default=0.06,
                        help="seconds-per-page comparison target")
    parser.add_argument("--full-decode", action="store_true",
                        help="disable reduced JPEG decode")
    args = parser.parse_args()

    pages_dir = Path(args.pages_dir)
    if not any(pages_dir.glob("*.jpg")):
        print(f"generating {args.n_pages} pages under {pages_dir} ...")
        classifier, detector = build_bench_pages(
            pages_dir, n_pages=args.n_pages, width=args.width, height=args.height
        )
    else:
        classifier = pages_dir / "classifier.json"
        detector = pages_dir / "detector.json"
        print(f"reusing pages under {pages_dir}")

    config = PipelineConfig(
        data_root=str(pages_dir),
        classifier_model=args.classifier or str(classifier),
        detector_model=args.detector or str(detector),
        reduced_decode=not args.full_decode,
        bench_target_s_per_page=args.target,
    )
    result = bench(pages_dir, config)
    print(json.dumps(result, indent=2))
    median_total = result["total_ms"]["median"]
    print(
        f"\nmedian {median_total:.2f} ms/page "
        f"(overhead {result['overhead_ms']['median']:.2f} ms) vs "
        f"target {args.target * 1000:.0f} ms/page"
    )


if __name__ == "__main__":
    main()
