"""Offline end-to-end run over the bundled fixture corpus with mock providers.

Runs ingest, index, BCA and PCA runs, judging and the combined report, writing
everything under WORKDIR (default: a fresh temporary directory).

    python3 scripts/run_fixture_pipeline.py [--workdir DIR] [--chunk-size N]
"""
import argparse
import json
import tempfile
from pathlib import Path

from compliance_rag.cli import fixture_dir, main as cli


def step(*argv):
    code = cli(list(argv))
    if code != 0:
        raise SystemExit(f"step failed ({code}): {' '.join(argv)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir")
    ap.add_argument("--chunk-size", type=int, default=1024)
    args = ap.parse_args()
    work = Path(args.workdir or tempfile.mkdtemp(prefix="crag-"))
    fx = fixture_dir()
    runs = work / "runs"
    common = ["--mock", "--runs-dir", str(runs)]

    step("ingest", *common, "--manifest", str(fx / "manifest.json"), "--out", str(work / "store"),
         "--chunk-size", str(args.chunk_size))
    step("index", *common, "--chunks", str(work / "store"), "--out", str(work / "indices"))
    for arch in ("bca", "pca"):
        step("run", *common, "--queries", str(fx / "queries.jsonl"), "--indices", str(work / "indices"),
             "--arch", arch, "--run-id", arch)
        step("judge", *common, "--run-id", arch)
    step("report", *common, "--run-id", "bca", "--run-id", "pca")

    reads = json.loads((runs / "bca" / "manifest.json").read_text())["index_reads"]
    print(f"\nBCA index reads: {reads}")
    print(f"artifacts in {work}")


if __name__ == "__main__":
    main()
