"""Hypothesis strategies for ring lanes and hybrid states."""
import numpy as np
from hypothesis import strategies as st

from lanebreak.ovm import OvmParams
from lanebreak.state import AV_ID, HybridState, LaneState

P = OvmParams()


@st.composite
def lanes(draw, n_min=3, n_max=22, with_av=None):
    """Ordered lane: positions decrease along the index modulo the circumference."""
    n = draw(st.integers(n_min, n_max))
    av = draw(st.booleans()) if with_av is None else with_av
    gaps = np.array(draw(st.lists(st.floats(0.05, 10.0), min_size=n, max_size=n)))
    gaps = gaps / gaps.sum() * P.circumference
    start = draw(st.floats(0, P.circumference))
    pos = start - np.concatenate(([0.0], np.cumsum(gaps[1:])))
    vel = np.array(draw(st.lists(st.floats(0, 35), min_size=n, max_size=n)))
    ids = np.arange(1, n + 1)
    if av:
        ids[-1] = AV_ID
    return LaneState(pos, vel, ids, P.circumference, av)


@st.composite
def hybrid_states(draw):
    n = draw(st.integers(4, 20))
    ctrl = draw(lanes(n, n, with_av=True))
    other = draw(lanes(n - 1, n - 1, with_av=False))
    mode = draw(st.sampled_from(["L", "R"]))
    pair = (ctrl, other) if mode == "L" else (other, ctrl)
    return HybridState(lane_l=pair[0], lane_r=pair[1], mode=mode)
