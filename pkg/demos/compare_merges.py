"""Graph-DTW distance between the ramp-merge segments of two generated scripts.

Prints the normalized distance, the band that was used and a coarse view of
the warping path. Run: python demos/compare_merges.py
"""

import logging

from scnmine import synthgen
from scnmine.graph_dtw import DTWConfig, dtw, frame_distance_matrix
from scnmine.slicing import InteractionType, slice_all


def merge_segment(seed):
    ts, rm, _ = synthgen.generate(synthgen.merge_script(seed))
    atoms = slice_all(ts, rm, egos=["R1"])
    return next(a for a in atoms if a.itype == InteractionType.StaticConflictLine)


def main():
    a, b = merge_segment(1), merge_segment(2)
    cfg = DTWConfig(window=25)
    fm = frame_distance_matrix(a, b, cfg)
    res = dtw(fm)
    print(f"segment A: frames {a.start_frame}-{a.end_frame}, partners {list(a.interactive)}")
    print(f"segment B: frames {b.start_frame}-{b.end_frame}, partners {list(b.interactive)}")
    print(f"{fm.M} x {fm.N} frame matrix, band W={fm.window}")
    print(f"accumulated {res.L_min:.3f}, normalized {res.normalized:.4f}")
    step = max(1, len(res.path) // 10)
    sample = res.path[::step]
    if sample[-1] != res.path[-1]:
        sample.append(res.path[-1])
    print("path sample:", sample)


if __name__ == "__main__":
    logging.basicConfig(level=logging.ERROR)  # the slicer logs every skipped pair
    main()
