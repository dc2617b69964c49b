"""Pick extreme cut-in scenarios out of a corpus with planted risky variants.

The corpus holds ordinary cut-ins plus low-TTC cut-ins and slow
right-of-way seizures. DBSCAN over the Graph-DTW matrix marks isolated
scenarios as NOISE; the TTC and vector-DTW references are compared in a
Venn table. Writes the scatter data to ``extreme_scatter.csv``.

Run: python demos/extreme_scenarios.py [n_normal]
"""

import dataclasses
import logging
import sys
from collections import Counter

from scnmine import synthgen
from scnmine.labeling import NOISE, label_scenarios
from scnmine.slicing import InteractionType, slice_all


def main(n_normal=30):
    specs, kinds = synthgen.risk_corpus(n_normal, 5, 5, seed=0)
    atoms = []
    for spec in specs:
        ts, rm, _ = synthgen.generate(spec)
        a = next(x for x in slice_all(ts, rm, egos=["E"]) if x.itype == InteractionType.DynamicConflictLine)
        atoms.append(dataclasses.replace(a, scenario_id=len(atoms)))

    report, _, _ = label_scenarios(atoms)
    noise = [i for i, c in zip(report.ids, report.clusters) if c == NOISE]
    print(f"eps={report.eps:.4f} min_pts={report.min_pts}")
    print("NOISE by kind:", dict(Counter(kinds[i] for i in noise)))
    print("planted kinds:", dict(Counter(k for k in kinds if k != "normal")))
    for region, n in report.venn["regions"].items():
        print(f"  {region:22s} {n}")
    with open("extreme_scatter.csv", "w") as fh:
        fh.write(report.coords_csv())


if __name__ == "__main__":
    logging.basicConfig(level=logging.ERROR)  # the slicer logs every skipped pair
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 30)
