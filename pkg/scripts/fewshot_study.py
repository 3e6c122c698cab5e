"""Few-shot attention-guidance study plus attention-weight sensitivity sweep.

Pretrains on a disjoint shape pair (cross vs ring, no context glyph), then
adapts to the disk-vs-square task from a handful of annotated instances.
The GRADIA arm weights an attention loss against cross-entropy; the baseline
arm is the same loop with attention weight 0. Arms are paired: both see the
identical sampled shots per study seed.
"""

import argparse
import json
import time

import numpy as np

from gradia.model import ModelConfig
from gradia.synthetic import SceneSpec, SplitCounts, generate_dataset
from gradia.training import (
    FewShotArm,
    FewShotScenario,
    OracleAnnotator,
    TrainConfig,
    annotated_pool,
    few_shot_study,
    sensitivity_sweep,
    train_baseline,
)


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--shots", type=int, nargs="+", default=[1, 5, 50])
    p.add_argument("--num-seeds", type=int, default=10)
    p.add_argument("--weight", type=float, default=0.8, help="GRADIA arm attention weight")
    p.add_argument("--sweep", type=float, nargs="+", default=[0.2, 0.4, 0.6, 0.8, 1.0])
    p.add_argument("--pretrain-lr", type=float, default=0.1)
    p.add_argument("--pretrain-epochs", type=int, default=20)
    p.add_argument("--ft-lr", type=float, default=0.03)
    p.add_argument("--ft-epochs", type=int, default=10)
    p.add_argument("--pool", type=int, default=300, help="annotated pool size")
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--out", help="optional JSON results path")
    return p.parse_args()


def spearman(xs, ys):
    """Spearman rank correlation; average ranks on ties."""
    def ranks(vals):
        order = np.argsort(vals, kind="mergesort")
        r = np.empty(len(vals))
        r[order] = np.arange(1, len(vals) + 1)
        arr = np.asarray(vals, dtype=float)
        for v in np.unique(arr):
            tied = arr == v
            if tied.sum() > 1:
                r[tied] = r[tied].mean()
        return r
    rx, ry = ranks(xs), ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    return float((rx * ry).sum() / denom) if denom else 0.0


def main():
    args = parse_args()
    t0 = time.time()
    ann = OracleAnnotator()
    mc = ModelConfig()

    pretrain_scene = SceneSpec(
        class0_shape="cross",
        class1_shape="ring",
        context_cooccurrence_train=0.0,
        context_cooccurrence_test=0.0,
        seed=500,
    )
    pre = generate_dataset(pretrain_scene, SplitCounts(train=700, validation=20, test=20))
    base = train_baseline(
        [i for i in pre if i.split == "train"],
        TrainConfig(learning_rate=args.pretrain_lr, epochs=args.pretrain_epochs, seed=0),
        mc,
    )
    print(f"[{time.time()-t0:5.0f}s] pretrained on disjoint shape pair", flush=True)

    target_scene = SceneSpec(seed=900)
    target = generate_dataset(
        target_scene, SplitCounts(train=args.pool, validation=10, test=args.test)
    )
    pool = annotated_pool([i for i in target if i.split == "train"], base, ann)
    test_set = [i for i in target if i.split == "test"]
    cfg = TrainConfig.finetune_defaults(learning_rate=args.ft_lr, epochs=args.ft_epochs)

    arms = [
        FewShotArm(name="baseline", attention_weight=0.0),
        FewShotArm(name="gradia", attention_weight=args.weight),
    ]
    results = {}
    for shots in args.shots:
        t1 = time.time()
        scenario = FewShotScenario(shots_per_class=shots, num_seeds=args.num_seeds)
        out = few_shot_study(
            scenario, arms, base_params=base, pool=pool, test_set=test_set, config=cfg
        )
        gains = [
            g - b for g, b in zip(out["gradia"].per_seed, out["baseline"].per_seed)
        ]
        wins = sum(1 for g in gains if g > 0)
        results[shots] = {
            "baseline": out["baseline"].per_seed,
            "gradia": out["gradia"].per_seed,
            "mean_gain": float(np.mean(gains)),
            "wins": wins,
        }
        print(
            f"[{time.time()-t0:5.0f}s] {shots}-shot: baseline auc "
            f"{out['baseline'].mean_auc:.4f}+-{out['baseline'].std_auc:.4f}, gradia "
            f"{out['gradia'].mean_auc:.4f}+-{out['gradia'].std_auc:.4f}, "
            f"mean gain {np.mean(gains):+.4f}, wins {wins}/{args.num_seeds} "
            f"[{time.time()-t1:.0f}s]",
            flush=True,
        )

    t1 = time.time()
    sweep_scenario = FewShotScenario(shots_per_class=1, num_seeds=args.num_seeds)
    sweep = sensitivity_sweep(
        args.sweep, sweep_scenario, base_params=base, pool=pool, test_set=test_set, config=cfg
    )
    stds = [r.std_auc for _w, r in sweep]
    means = [r.mean_auc for _w, r in sweep]
    rho = spearman(args.sweep, stds)
    print(f"[{time.time()-t0:5.0f}s] sweep (1-shot): [{time.time()-t1:.0f}s]")
    for (w, r) in sweep:
        print(f"  w={w:g}: auc {r.mean_auc:.4f}+-{r.std_auc:.4f}")
    print(f"  std-vs-weight Spearman rho {rho:+.3f} (expected <= 0)")
    spread = max(means) - min(means)
    print(f"  mean-auc spread {spread:.4f}, max std {max(stds):.4f}")

    if args.out:
        payload = {
            "shots": results,
            "sweep": [{"weight": w, "mean": r.mean_auc, "std": r.std_auc} for w, r in sweep],
            "spearman_std": rho,
            "args": vars(args),
        }
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
