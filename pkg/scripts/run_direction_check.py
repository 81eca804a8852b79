"""Held-out accuracy of the full model vs. the context-only ablation.

    python3 scripts/run_direction_check.py --seeds 0 1 2 3 4
"""

import argparse
import json
import logging

import torch

from strudel.experiments import DirectionConfig, direction_check


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--n-train", type=int, default=768)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--implicit", action="store_true",
                   help="deciding turn says 'the other one' instead of naming the option")
    p.add_argument("--posttrain-steps", type=int, default=900)
    p.add_argument("--finetune-steps", type=int, default=600)
    p.add_argument("--json", help="write per-run results here")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)

    dc = DirectionConfig(seeds=tuple(args.seeds), n_train=args.n_train, n_test=args.n_test,
                         explicit=not args.implicit)
    dc.train = dc.train.replace(steps_posttrain=args.posttrain_steps,
                                steps_finetune=args.finetune_steps)
    res = direction_check(dc)
    for r in res.runs:
        arm = "full" if r.use_graph else "ablation"
        print(f"seed={r.seed} arm={arm} accuracy={r.test_accuracy:.3f} seconds={r.seconds:.1f}")
    print(f"mean full={res.full:.4f} ablation={res.ablation:.4f} "
          f"{'full > ablation' if res.passed else 'full <= ablation'}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump([r.__dict__ for r in res.runs], f, indent=2)


if __name__ == "__main__":
    main()
