"""Slice a follow / cut-in / follow script and compare with its ground truth.

Run: python demos/slice_three_phase.py [seed]
"""

import logging
import sys

from scnmine import synthgen
from scnmine.slicing import segment_stats, slice_all


def main(seed=0):
    ts, rm, gt = synthgen.generate(synthgen.three_phase_script(seed))
    ego = gt.egos[0]
    atoms = [a for a in slice_all(ts, rm, egos=[ego]) if a.ego_id == ego]

    print(f"ego {ego}: {len(ts[ego])} frames at dt={ts.dt} s")
    print("ground truth:")
    for s in (s for s in gt.segments if s.ego_id == ego):
        print(f"  {s.start_frame:4d}-{s.end_frame:4d}  {s.itype:20s} {', '.join(s.others)}")
    print("sliced:")
    for a in atoms:
        print(f"  {a.start_frame:4d}-{a.end_frame:4d}  {a.itype.value:20s} {', '.join(a.interactive)}")

    st = segment_stats(atoms)
    print(f"{st.n_segments} segments, {st.filtered}/{st.searched} searched vehicles filtered out")


if __name__ == "__main__":
    logging.basicConfig(level=logging.ERROR)  # the slicer logs every skipped pair
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
