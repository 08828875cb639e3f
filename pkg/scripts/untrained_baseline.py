"""Held-out pair accuracy of untrained elc encoders across init seeds.

Shows the spread of the chance-level baseline a single random init draws
from. Writes results/untrained_baseline.json.

    python3 scripts/untrained_baseline.py [--seeds 20] [--num-layers 6]
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from elcbert.encoder import init_encoder
from elcbert.evaluation import minimal_pair_eval
from elcbert.experiment import ToyConfig, toy_data

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--num-layers", type=int, nargs="+", default=[4, 6])
    ap.add_argument("--out", default=str(ROOT / "results" / "untrained_baseline.json"))
    args = ap.parse_args()
    report = {}
    for n in args.num_layers:
        cfg = replace(ToyConfig(), num_layers=n)
        data = toy_data(cfg)
        accs = [minimal_pair_eval(init_encoder(cfg.encoder_config("elc", len(data.vocab)), s),
                                  data.vocab, data.task.test_pairs).accuracy
                for s in range(args.seeds)]
        report[f"num_layers={n}"] = {"accuracy_by_seed": accs, "mean": float(np.mean(accs)),
                                     "std": float(np.std(accs)),
                                     "within_0.03": int(sum(abs(a - 0.5) <= 0.03 for a in accs))}
        print(n, report[f"num_layers={n}"]["mean"], report[f"num_layers={n}"]["std"])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(report, indent=2) + "\n")


if __name__ == "__main__":
    main()
