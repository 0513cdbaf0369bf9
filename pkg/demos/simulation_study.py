"""A small coverage experiment for the wild-bootstrap percentile interval.

Simulates repeated two-arm studies from known parameters, builds a 95%
percentile interval for the group-by-time interaction in each, and reports
how often the interval covers the truth, alongside the Wald interval for
contrast. With only 40 replicates this is a quick smoke experiment, not a
precise coverage estimate; raise REPLICATES and NSIM for sharper numbers.

Run:  python demos/simulation_study.py
"""

import mixedboot as mb
from mixedboot.data import design_from_json

REPLICATES = 40
NSIM = 400
TRUTH = 4.0

DESIGN = {
    "n": 60,
    "times": [0, 3, 6, 9, 12, 15, 18],
    "treat_fraction": 0.5,
    "gamma": [167.46, -3.11, -2.42, TRUTH],
    "sigma": [[2111.54, -121.63], [-121.63, 63.74]],
    "sigma_e2": 1229.93,
}


def covers(table):
    row = table.to_dict()["rows"][0]
    return row["lower"] <= TRUTH <= row["upper"]


def main():
    design, _ = design_from_json(DESIGN)
    parm = ("treat:time",)
    hits = {"wald": 0, "wild percentile": 0}
    for r in range(REPLICATES):
        ds = mb.simulate_dataset(design, mb.RandomStream(2026, r))
        result = mb.fit(ds)
        hits["wald"] += covers(
            mb.confint(result, ds, mb.CiOptions(method="wald", parm=parm)))
        hits["wild percentile"] += covers(
            mb.confint(result, ds, mb.CiOptions(
                method="boot", boot_type="wild", nsim=NSIM,
                parm=parm, seed=r)))
        done = r + 1
        print(f"\rreplicate {done}/{REPLICATES}", end="", flush=True)
    print()
    for name, h in hits.items():
        print(f"{name:>16}: coverage {h}/{REPLICATES} = {h / REPLICATES:.2f}"
              f"  (nominal 0.95)")


if __name__ == "__main__":
    main()
