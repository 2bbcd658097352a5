"""Random wire messages for round-trip checks."""
import numpy as np
from hypothesis import strategies as st

from pcselect.degrade import KINDS, DegradationSpec
from pcselect.features import DataFeatures
from pcselect.protocol import (Ack, ErrorReply, FeatureReport, ModelAssignment,
                               SelectionRequest)
from pcselect.selector import MethodFeatures, TraceEntry

text = st.text(max_size=20)
real = st.floats(allow_nan=False, allow_infinity=True)
blob = st.binary(max_size=64)

methods = st.one_of(
    st.builds(MethodFeatures, text, st.just(1), st.sampled_from(["point", "voxel", "pillar"]),
              st.just("none"), st.sampled_from(["anchor_based", "anchor_free"])),
    st.builds(MethodFeatures, text, st.just(2), st.sampled_from(["point", "voxel", "pillar"]),
              st.sampled_from(["point", "voxel", "pillar"]),
              st.sampled_from(["anchor_based", "anchor_free"])),
)

specs = st.one_of(
    st.builds(DegradationSpec, st.just("none"), st.just(0.0), st.integers(0, 2**64 - 1)),
    st.builds(DegradationSpec, st.sampled_from(["voxel_grid", "uniform"]),
              st.floats(1e-3, 10), st.integers(0, 2**64 - 1)),
    st.builds(DegradationSpec, st.just("random"), st.floats(1e-3, 1.0), st.integers(0, 2**64 - 1)),
    st.builds(DegradationSpec, st.just("gaussian_noise"), st.floats(0, 1), st.integers(0, 2**64 - 1)),
)

messages = st.one_of(
    st.builds(SelectionRequest, st.lists(text, max_size=4).map(tuple), st.none() | real,
              st.lists(blob, max_size=4).map(tuple), st.none() | real),
    st.builds(FeatureReport, st.builds(DataFeatures, st.floats(0, 1e6), st.none() | st.floats(0, 10),
                                       st.integers(1, 2**32 - 1))),
    st.builds(ModelAssignment, text, methods, specs,
              st.lists(st.builds(TraceEntry, text, text, text), max_size=5).map(tuple),
              st.none() | blob),
    st.builds(ErrorReply, st.integers(0, 0xFFFF), text),
    st.just(Ack()),
)


def random_message(gen: np.random.Generator):
    """A random message from a numpy generator (fast bulk generation)."""
    def s():
        n = int(gen.integers(0, 12))
        return "".join(chr(int(c)) for c in gen.integers(32, 0x2FF, n))

    def r():
        return float(gen.normal(0, 100)) if gen.uniform() < 0.8 else None

    def b():
        return gen.bytes(int(gen.integers(0, 48)))

    kind = int(gen.integers(0, 5))
    if kind == 0:
        return SelectionRequest(tuple(s() for _ in range(gen.integers(0, 4))), r(),
                                tuple(b() for _ in range(gen.integers(0, 4))), r())
    if kind == 1:
        sigma = float(gen.uniform(0, 0.2)) if gen.uniform() < 0.5 else None
        return FeatureReport(DataFeatures(float(gen.uniform(0, 2)), sigma, int(gen.integers(1, 1000))))
    if kind == 2:
        stages = int(gen.integers(1, 3))
        units = ["point", "voxel", "pillar"]
        m = MethodFeatures(s(), stages, units[gen.integers(3)],
                           "none" if stages == 1 else units[gen.integers(3)],
                           ["anchor_based", "anchor_free"][gen.integers(2)])
        k = KINDS[int(gen.integers(0, len(KINDS)))]
        param = {"none": 0.0, "random": float(gen.uniform(0.01, 1))}.get(k, float(gen.uniform(0.01, 1)))
        spec = DegradationSpec(k, param, int(gen.integers(0, 2**63)))
        trace = tuple(TraceEntry(s(), s(), s()) for _ in range(gen.integers(0, 5)))
        return ModelAssignment(s(), m, spec, trace, b() if gen.uniform() < 0.3 else None)
    if kind == 3:
        return ErrorReply(int(gen.integers(0, 0x10000)), s())
    return Ack()
