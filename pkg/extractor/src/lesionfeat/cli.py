"""Command-line entry point.

Exit codes: 0 all rows extracted, 1 validation problem or some images
skipped, 2 I/O problem (e.g. missing manifest).
"""

import argparse
import sys

from lesionfeat.backbones import BACKBONES, BackboneError, build_backbone
from lesionfeat.extract import extract_embeddings, write_cohort_csv, write_cohort_jsonl
from lesionfeat.manifest import ManifestError, load_manifest


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lesionfeat",
        description="Extract global-average-pooled CNN embeddings for lesion images "
                    "and write them in the duckling cohort format.",
    )
    parser.add_argument("--manifest", required=True,
                        help="CSV with header path,patient_id,region,lesion_id,label")
    parser.add_argument("--backbone", default="efficientnet_b6",
                        help="feature backbone: " + ", ".join(sorted(BACKBONES)))
    parser.add_argument("--weights", default="pretrained", choices=["pretrained", "random"],
                        help="'random' is seeded and works offline")
    parser.add_argument("--seed", type=int, default=0, help="seed for --weights random")
    parser.add_argument("--image-size", type=int, default=512)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--output", required=True)
    parser.add_argument("--format", choices=["csv", "jsonl"], default=None,
                        help="default: guessed from the output extension")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    fmt = args.format or ("jsonl" if args.output.lower().endswith((".jsonl", ".ndjson")) else "csv")
    try:
        rows = load_manifest(args.manifest)
        trunk, width, nonneg = build_backbone(args.backbone, args.weights, args.seed)
    except (ManifestError, BackboneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    kept, embeddings, skipped = extract_embeddings(
        rows, trunk, image_size=args.image_size, batch_size=args.batch_size
    )
    if embeddings and len(embeddings[0]) != width:
        print(f"error: backbone produced width {len(embeddings[0])}, expected {width}",
              file=sys.stderr)
        return 1
    try:
        if fmt == "csv":
            write_cohort_csv(kept, embeddings, args.output)
        else:
            write_cohort_jsonl(kept, embeddings, args.output)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    note = "" if nonneg else " (validate with --signed: pooled features may be negative)"
    print(f"extracted {len(kept)}/{len(rows)} rows with {args.backbone} "
          f"(D={width}) into {args.output}{note}")
    return 1 if skipped else 0


if __name__ == "__main__":
    sys.exit(main())
