"""Run the whole pipeline on synthetic data and print both report tables.

manifest -> extract -> train forest / boosted on a train split -> score the
test split with both models and the stub evaluator -> evaluate -> ablate.
Everything is written under --out.
"""

import argparse
import sys
from pathlib import Path

from fluencyassess.cli import main as cli
from fluencyassess.core import Dataset, read_metrics, serialize_manifest
from fluencyassess.evaluation import make_split
from fluencyassess.synthetic import synthetic_records


def run(*argv):
    code = cli([str(a) for a in argv])
    if code:
        sys.exit(f"step failed ({code}): {' '.join(map(str, argv))}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-n", type=int, default=300)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="runs/synthetic")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    manifest = out / "manifest.jsonl"
    manifest.write_bytes(serialize_manifest(Dataset(synthetic_records(args.n, args.seed))))
    run("extract", manifest, "-o", out / "metrics.csv")

    text = (out / "metrics.csv").read_text().splitlines()
    split = make_split([r.id for r in read_metrics((out / "metrics.csv").read_bytes())], 0.3, args.seed)
    test_ids = set(split.test_ids)
    header, body = text[0], text[1:]
    (out / "train.csv").write_text("\n".join([header] + [l for l in body if l.split(",")[0] not in test_ids]) + "\n")
    (out / "test.csv").write_text("\n".join([header] + [l for l in body if l.split(",")[0] in test_ids]) + "\n")

    preds = []
    for kind in ("forest", "boosted"):
        run("train", out / "train.csv", "--kind", kind, "-o", out / f"{kind}.json", "--seed", args.seed)
        run("score", out / "test.csv", "--model-file", out / f"{kind}.json", "-o", out / f"pred_{kind}.csv")
        preds.append(f"{kind}={out / f'pred_{kind}.csv'}")
    run("score", out / "test.csv", "--stub", "--prototypes", out / "train.csv", "-o", out / "pred_stub.csv", "--seed", args.seed)
    preds.append(f"llm-stub={out / 'pred_stub.csv'}")

    run("evaluate", *preds, "--truth", manifest, "-o", out / "results.json", "--text-output", out / "results.txt",
        "--audio-baseline-row", "--seed", args.seed)
    print()
    run("ablate", out / "metrics.csv", "--scorer", "llm-stub", "-o", out / "ablation.json",
        "--text-output", out / "ablation.txt", "--seed", args.seed)


if __name__ == "__main__":
    main()
