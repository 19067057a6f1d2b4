"""Command line mirroring ExtractorConfig."""

import argparse
import sys

from .extract import DEFAULT_PROPOSAL_CAP, ExtractorConfig, extract_dataset
from .network import INPUT_SIDE


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pfv-extract",
        description="Extract conv5 feature maps of object proposals into a PFV1 file",
    )
    parser.add_argument("--manifest", required=True, help="JSON-lines dataset manifest")
    parser.add_argument("--out", required=True, help="output PFV1 path")
    parser.add_argument("--model", default="vgg-m-random",
                        help="'vgg-m-random' or a torch state-dict path")
    parser.add_argument("--input-side", type=int, default=INPUT_SIDE)
    parser.add_argument("--cap", type=int, default=DEFAULT_PROPOSAL_CAP,
                        help="max proposals per image")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    config = ExtractorConfig(
        manifest=args.manifest,
        output=args.out,
        model=args.model,
        input_side=args.input_side,
        proposal_cap=args.cap,
        seed=args.seed,
    )
    print(extract_dataset(config))
    return 0


if __name__ == "__main__":
    sys.exit(main())
