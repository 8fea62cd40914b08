"""End-to-end synthetic run: synth -> train-cnn -> extract -> train-rnn -> eval, twice, then the verdicts."""
import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
repo_root = Path(__file__).resolve().parents[1]
if str(repo_root) not in sys.path:
    sys.path.insert(0, str(repo_root))

from src.cli import main as cli_main
from src.pipeline import AcceptanceDefaults

COMPARED = ("cnn.afen", "rnn.afen", "eval_report.csv", "eval_cnn_report.csv")


def parse_args():
    p = argparse.ArgumentParser()
    p.add_argument("--workdir", default="runs/acceptance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--once", action="store_true", help="Skip the determinism rerun")
    return p.parse_args()


def run_once(root: Path, seed: int, defaults: AcceptanceDefaults) -> dict:
    data, out = root / "data", root / "out"
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "acceptance.json"
    cfg.write_text(json.dumps(defaults.sections(), indent=2))
    manifest = str(data / "manifest.csv")
    common = ["--seed", str(seed), "--config", str(cfg), "--out", str(out)]
    steps = [
        ["--seed", str(seed), "--out", str(data), "synth"],
        common + ["train-cnn", "--manifest", manifest],
        common + ["extract", "--model", str(out / "cnn.afen"), "--manifest", manifest],
        common + ["train-rnn", "--features", str(out / "features")],
        common + ["eval", "--cnn", str(out / "cnn.afen"), "--rnn", str(out / "rnn.afen"), "--manifest", manifest],
    ]
    for argv in steps:
        print(f"[STEP] {' '.join(argv[argv.index('--out') + 2:])}")
        rc = cli_main(argv)
        if rc:
            raise SystemExit(rc)
    return json.loads((out / "eval_summary.json").read_text())


def digests(out: Path) -> dict:
    return {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in COMPARED}


def run_acceptance(workdir: str, seed: int = 0, once: bool = False) -> bool:
    defaults = AcceptanceDefaults()
    root = Path(workdir)
    t0 = time.perf_counter()
    summary = run_once(root / "run1", seed, defaults)
    cnn, both = summary["cnn"], summary["cnn_rnn"]
    verdicts = {
        f"CNN dev CCC {cnn['ccc']:.3f} >= {defaults.min_cnn_ccc}": cnn["ccc"] >= defaults.min_cnn_ccc,
        f"CNN+RNN gain {both['ccc'] - cnn['ccc']:+.3f} >= {defaults.min_ccc_gain}": both["ccc"] - cnn["ccc"] >= defaults.min_ccc_gain,
        f"first-diff variance {both['first_diff_var']:.4g} <= {cnn['first_diff_var']:.4g}": both["first_diff_var"] <= cnn["first_diff_var"],
    }
    if not once:
        run_once(root / "run2", seed, defaults)
        same = digests(root / "run1" / "out") == digests(root / "run2" / "out")
        verdicts["identical model files and metric CSVs across reruns"] = same
    for text, ok in verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'}  {text}")
    print(f"Acceptance finished in {time.perf_counter() - t0:.0f}s")
    return all(verdicts.values())


if __name__ == "__main__":
    args = parse_args()
    sys.exit(0 if run_acceptance(args.workdir, args.seed, args.once) else 1)
