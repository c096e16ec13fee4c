"""Write a synthetic labelled manifest (JSON Lines) for trying the pipeline end to end."""

import argparse
import sys

from fluencyassess.core import Dataset, serialize_manifest
from fluencyassess.synthetic import synthetic_records


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=50, help="number of utterances")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("-o", "--output", default="-")
    args = ap.parse_args()
    data = serialize_manifest(Dataset(synthetic_records(args.n, args.seed)))
    if args.output == "-":
        sys.stdout.buffer.write(data)
    else:
        with open(args.output, "wb") as fh:
            fh.write(data)


if __name__ == "__main__":
    main()
