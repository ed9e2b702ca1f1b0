"""Direct training against the noise curriculum on a few 1-D targets.

Both arms share the seed, the network initialisation and the epoch budget.
Prints the final W1 of each arm, the per-stage curriculum W1 and, for the
two-interval target, how much mass lands on each side of the gap.

    python scripts/compare_curriculum.py --stages 4 --stage-epochs 500
"""

import argparse

from pushmap.curriculum import CurriculumSchedule, compare_direct_vs_curriculum, pushforward, stratified_base
from pushmap.diffnum import init_mlp
from pushmap.distributions import GaussianMixture, Rng, StdGaussian, UnionOfIntervals, gaussian, sample
from pushmap.statmatch import Objective, w1_to_distribution

TARGETS = {
    "gaussian(3,4)": gaussian(3.0, 4.0),
    "mixture": GaussianMixture(((-1.0, 0.25, 0.4), (1.5, 0.16, 0.6))),
    "two-intervals": UnionOfIntervals(((0.0, 0.25), (0.75, 1.0))),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--stages", type=int, default=4)
    ap.add_argument("--stage-epochs", type=int, default=500)
    ap.add_argument("--t0", type=float, default=4.0)
    ap.add_argument("--ratio", type=float, default=0.35)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--batch", type=int, default=2048)
    ap.add_argument("--objective", default="energy")
    args = ap.parse_args()

    sched = CurriculumSchedule.geometric(args.t0, args.ratio, args.stages,
                                         stage_epochs=args.stage_epochs,
                                         objective=Objective(args.objective), lr=args.lr,
                                         batch_size=args.batch, lr_end_frac=0.05)
    z = stratified_base(10_000)
    for name, mu in TARGETS.items():
        data = sample(mu, 10_000, Rng(args.seed, (9,)))
        model = init_mlp([1, 32, 32, 1], Rng(args.seed, (0,)).gen, "relu", skip=True, zero_last=True)
        out = compare_direct_vs_curriculum(sched, StdGaussian(1), data, model, args.seed,
                                           target=mu if isinstance(mu, UnionOfIntervals) else None)
        print(f"== {name} (budget {out['budget']} epochs)")
        for arm, a in out["arms"].items():
            w = w1_to_distribution(pushforward(a["params"], z), mu)
            line = f"  {arm:<10} W1 to target {w:.4f}  final loss {a['records'][-1].loss:.3e}"
            if "split" in a:
                line += "  sides " + "/".join(f"{s:.3f}" for s in a["split"]["sides"])
            print(line)
        for s in out["arms"]["curriculum"]["stages"]:
            print(f"    stage {s.stage} t={s.t:.4f} epochs={s.epochs} W1(rho_t)={s.w1:.4f}")


if __name__ == "__main__":
    main()
