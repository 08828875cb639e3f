"""Train every preset on the synthetic agreement corpus and record the outcome.

Writes results/toy_experiment.json and results/toy_experiment.md.

    python3 scripts/run_toy_experiment.py [--presets elc elc-zero] [--steps 2000]
"""

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from elcbert.experiment import ToyConfig, run_preset, toy_data
from elcbert.mixing import PRESETS

ROOT = Path(__file__).resolve().parent.parent


def markdown(cfg, runs):
    lines = [
        "# Toy agreement experiment",
        "",
        f"Model: N={cfg.num_layers}, hidden {cfg.hidden_size}, {cfg.num_heads} heads, ff {cfg.ff_size}. "
        f"Training: {cfg.train.steps} steps, batch {cfg.train.batch_size}, seq_len {cfg.train.seq_len}, "
        f"seed {cfg.train.seed}.",
        "",
        "| preset | step-0 loss | ln V | smoothed final loss | ratio | seconds |",
        "|---|---|---|---|---|---|",
    ]
    for r in runs:
        lines.append(f"| {r.preset} | {r.initial_loss:.4f} | {r.uniform_loss:.4f} | "
                     f"{r.final_smoothed_loss:.4f} | {r.initial_loss / r.final_smoothed_loss:.2f} | "
                     f"{r.seconds:.0f} |")
    for r in runs:
        if r.accuracy is not None:
            lines += ["", f"Held-out agreement accuracy ({r.preset}): {r.accuracy:.3f} trained, "
                          f"{r.untrained_accuracy:.3f} untrained. By phenomenon: "
                      + ", ".join(f"{k} {v:.3f}" for k, v in sorted(r.phenomena.items())) + "."]
        if r.alpha is not None:
            lines += ["", f"Mixing weights after training ({r.preset}):", "",
                      "| dest | alpha | entropy | initial entropy | TV from init |", "|---|---|---|---|---|"]
            for n, (a, h, h0, tv) in enumerate(zip(r.alpha, r.entropy, r.initial_entropy,
                                                   r.tv_from_init), start=1):
                row = " ".join(f"{x:.3f}" for x in a)
                lines.append(f"| {n} | {row} | {h:.3f} | {h0:.3f} | {tv:.3f} |")
    return "\n".join(lines) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--presets", nargs="+", default=list(PRESETS), choices=list(PRESETS))
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--out", default=str(ROOT / "results"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = ToyConfig()
    cfg = replace(base, train=replace(base.train, steps=args.steps))
    data = toy_data(cfg)
    runs = []
    for name in args.presets:
        run = run_preset(name, data, cfg, evaluate=PRESETS[name].is_elc)
        logging.info("%s: loss %.4f -> %.4f in %.0f s", name, run.initial_loss,
                     run.final_smoothed_loss, run.seconds)
        runs.append(run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "toy_experiment.json").write_text(
        json.dumps({"config": {k: v for k, v in vars(cfg).items() if k != "train"}
                    | {"train": cfg.train.to_dict()},
                    "runs": [r.summary() for r in runs]}, indent=2) + "\n")
    (out / "toy_experiment.md").write_text(markdown(cfg, runs))


if __name__ == "__main__":
    main()
