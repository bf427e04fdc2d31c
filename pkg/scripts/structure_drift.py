"""Track how the learned adjacency separates classes as meta-training proceeds.

For a fixed set of test episodes, reports the mean learned edge weight between
same-class and different-class task nodes at several training lengths.

    python scripts/structure_drift.py --epochs 0 50 150 300 [--set classic_maml=true]
"""

import argparse
import sys

import numpy as np
import yaml

from glitter.data import generate_sbm_dataset
from glitter.evaluation import episode_stream
from glitter.meta import adjacency, make_task_context, split_for, train
from glitter.model import ParameterSet
from glitter.verify import REPRO_CONFIG, REPRO_SBM


def class_contrast(ds, cfg, params, n_episodes):
    split = split_for(ds, cfg)
    rows = []
    for _, _, ep, _ in episode_stream(ds, split, cfg, 1, n_episodes):
        ctx = make_task_context(ds, ep, cfg)
        A = adjacency(ctx, params.theta_S).detach().numpy()
        labels = np.asarray(ds.graph(ep.graph_id).labels)[ctx.task.node_list]
        same = labels[:, None] == labels[None, :]
        rows.append((A[same].mean(), A[~same].mean()))
    return np.mean(rows, axis=0)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, nargs="+", default=[0, 50, 150, 300])
    ap.add_argument("--episodes", type=int, default=10)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args(argv)
    overrides = {k: yaml.safe_load(v) for k, _, v in (s.partition("=") for s in args.set)}

    ds = generate_sbm_dataset(REPRO_SBM)
    print("epochs  same-class  other-class  ratio")
    for E in args.epochs:
        cfg = REPRO_CONFIG.replace(epochs=E, **overrides)
        ckpt, _ = train(ds, cfg)
        same, other = class_contrast(ds, cfg, ParameterSet.from_checkpoint(ckpt), args.episodes)
        print(f"{E:>6}  {same:10.4f}  {other:11.4f}  {same / other:5.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
