"""Model registry and the rule-based model selector.

Registry files are UTF-8, one model per line, ``#`` starts a comment::

    model <id> method=<name> stages=<1|2> stage1=<point|voxel|pillar>
          stage2=<point|voxel|pillar|none> box=<anchor|free>
          train=<none|voxel_grid:<edge_m>|uniform:<edge_m>|random:<frac>|noise:<sigma>>
          ratio=<float> latency_s=<float> [ap.<class>=<float> ...]

(all on one line).  Selection runs in two steps.  :func:`select_method`
narrows the registered methods: latency budget, then box strategy by target
size, then processing unit by the kind of incompleteness.
:func:`select_model` then picks the registered model of a surviving method
whose training degradation is closest to the inference data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .degrade import DegradationSpec
from .features import DataFeatures

UNITS = ("point", "voxel", "pillar")
BOX_STRATEGIES = ("anchor_based", "anchor_free")
_BOX_TOKENS = {"anchor": "anchor_based", "free": "anchor_free"}

DEFAULT_SIZE_TABLE: Mapping[str, float] = {
    "Car": 3.9, "Van": 5.0, "Truck": 10.0, "Pedestrian": 0.8, "Cyclist": 1.8,
}


class RegistryError(ValueError):
    pass


class DuplicateId(RegistryError):
    pass


class MalformedLine(RegistryError):
    def __init__(self, line_no: int, detail: str):
        super().__init__(f"registry line {line_no}: {detail}")
        self.line_no = line_no


class UnknownEnum(RegistryError):
    def __init__(self, line_no: int, key: str, value: str):
        super().__init__(f"registry line {line_no}: unknown {key} value {value!r}")
        self.line_no = line_no


class UnknownClass(KeyError):
    pass


class NoCandidate(LookupError):
    pass


@dataclass(frozen=True, order=True)
class MethodFeatures:
    method_id: str
    num_stages: int
    stage1_unit: str
    stage2_unit: str
    box_strategy: str

    def __post_init__(self):
        if self.num_stages not in (1, 2):
            raise ValueError("num_stages must be 1 or 2")
        if self.stage1_unit not in UNITS or self.stage2_unit not in UNITS + ("none",):
            raise ValueError("unknown processing unit")
        if (self.num_stages == 1) != (self.stage2_unit == "none"):
            raise ValueError("one-stage methods need stage2=none and vice versa")
        if self.box_strategy not in BOX_STRATEGIES:
            raise ValueError(f"unknown box strategy {self.box_strategy!r}")

    @property
    def units(self) -> tuple[str, ...]:
        return (self.stage1_unit,) if self.num_stages == 1 else (self.stage1_unit, self.stage2_unit)

    @property
    def has_point_stage(self) -> bool:
        return "point" in self.units

    @property
    def point_free(self) -> bool:
        return "point" not in self.units


@dataclass(frozen=True)
class ModelDescriptor:
    model_id: str
    features: MethodFeatures
    train_degradation: DegradationSpec
    train_normalized_points: float
    ap_profile: Mapping[str, float]
    latency_s: float

    def __post_init__(self):
        if not 0.0 < self.train_normalized_points <= 1.0:
            raise ValueError("train_normalized_points must be in (0, 1]")
        if not self.latency_s > 0.0:
            raise ValueError("latency_s must be positive")
        for cls, ap in self.ap_profile.items():
            if not 0.0 <= ap <= 100.0:
                raise ValueError(f"AP for {cls} outside [0, 100]")
        object.__setattr__(self, "ap_profile", dict(sorted(self.ap_profile.items())))

    @property
    def method_id(self) -> str:
        return self.features.method_id

    @property
    def train_noise_sigma(self) -> float:
        return self.train_degradation.noise_sigma


@dataclass(frozen=True)
class TargetData:
    target_classes: tuple[str, ...]
    latency_budget_s: float | None = None

    def __post_init__(self):
        classes = tuple(self.target_classes)
        if not classes:
            raise ValueError("at least one target class is required")
        object.__setattr__(self, "target_classes", classes)


@dataclass(frozen=True)
class SelectionThresholds:
    large_object_min_length_m: float = 3.0
    low_density_max_ratio: float = 0.25
    severe_noise_min_sigma_m: float = 0.08
    close_density_rel_tol: float = 0.5
    close_noise_abs_tol_m: float = 0.02

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"threshold {name} must be positive")


@dataclass(frozen=True)
class TraceEntry:
    branch: str
    option: str
    reason: str

    def line(self) -> str:
        return f'{self.branch}={self.option} reason="{self.reason}"'


@dataclass(frozen=True)
class MethodSelection:
    methods: tuple[MethodFeatures, ...]
    trace: tuple[TraceEntry, ...]
    # how select_model measures distance: "small", "density" or "noise"
    mode: str


@dataclass(frozen=True)
class SelectionDecision:
    chosen: ModelDescriptor
    branch_trace: tuple[TraceEntry, ...] = field(default=())

    def trace_lines(self) -> list[str]:
        return [e.line() for e in self.branch_trace]


# ------------------------------------------------------------------ parsing

_REQUIRED = ("method", "stages", "stage1", "stage2", "box", "train", "ratio", "latency_s")


def _parse_line(line: str, line_no: int) -> ModelDescriptor:
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != "model":
        raise MalformedLine(line_no, "expected 'model <id> key=value ...'")
    model_id = tokens[1]
    if "=" in model_id:
        raise MalformedLine(line_no, "missing model id")
    fields: dict[str, str] = {}
    ap: dict[str, float] = {}
    for tok in tokens[2:]:
        key, sep, value = tok.partition("=")
        if not sep or not value:
            raise MalformedLine(line_no, f"bad token {tok!r}")
        if key.startswith("ap."):
            cls = key[3:]
            if not cls or cls in ap:
                raise MalformedLine(line_no, f"bad or repeated AP key {key!r}")
            ap[cls] = _float(value, line_no, key)
            continue
        if key not in _REQUIRED:
            raise MalformedLine(line_no, f"unknown key {key!r}")
        if key in fields:
            raise MalformedLine(line_no, f"repeated key {key!r}")
        fields[key] = value
    missing = [k for k in _REQUIRED if k not in fields]
    if missing:
        raise MalformedLine(line_no, f"missing keys {missing}")

    if fields["stages"] not in ("1", "2"):
        raise UnknownEnum(line_no, "stages", fields["stages"])
    if fields["stage1"] not in UNITS:
        raise UnknownEnum(line_no, "stage1", fields["stage1"])
    if fields["stage2"] not in UNITS + ("none",):
        raise UnknownEnum(line_no, "stage2", fields["stage2"])
    if fields["box"] not in _BOX_TOKENS:
        raise UnknownEnum(line_no, "box", fields["box"])
    train_kind = fields["train"].partition(":")[0]
    if train_kind not in ("none", "voxel_grid", "uniform", "random", "noise"):
        raise UnknownEnum(line_no, "train", fields["train"])
    try:
        features = MethodFeatures(fields["method"], int(fields["stages"]), fields["stage1"],
                                  fields["stage2"], _BOX_TOKENS[fields["box"]])
        train = DegradationSpec.parse(fields["train"])
        return ModelDescriptor(model_id, features, train,
                               _float(fields["ratio"], line_no, "ratio"), ap,
                               _float(fields["latency_s"], line_no, "latency_s"))
    except MalformedLine:
        raise
    except ValueError as exc:
        raise MalformedLine(line_no, str(exc)) from None


def _float(value: str, line_no: int, key: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise MalformedLine(line_no, f"{key} is not a number: {value!r}") from None
    if not math.isfinite(v):
        raise MalformedLine(line_no, f"{key} must be finite")
    return v


def parse_registry(text: str) -> list[ModelDescriptor]:
    models: list[ModelDescriptor] = []
    seen: set[str] = set()
    methods: dict[str, MethodFeatures] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        desc = _parse_line(line, line_no)
        if desc.model_id in seen:
            raise DuplicateId(f"registry line {line_no}: duplicate model id {desc.model_id!r}")
        known = methods.setdefault(desc.method_id, desc.features)
        if known != desc.features:
            raise MalformedLine(line_no, f"features of method {desc.method_id!r} disagree "
                                         "with an earlier line")
        seen.add(desc.model_id)
        models.append(desc)
    return models


def format_descriptor(d: ModelDescriptor) -> str:
    f = d.features
    box = "anchor" if f.box_strategy == "anchor_based" else "free"
    parts = [f"model {d.model_id}", f"method={f.method_id}", f"stages={f.num_stages}",
             f"stage1={f.stage1_unit}", f"stage2={f.stage2_unit}", f"box={box}",
             f"train={d.train_degradation.token()}", f"ratio={d.train_normalized_points:.6g}",
             f"latency_s={d.latency_s:g}"]
    parts += [f"ap.{cls}={ap:g}" for cls, ap in d.ap_profile.items()]
    return " ".join(parts)


def load_default_registry() -> list[ModelDescriptor]:
    """The shipped registry of the six KITTI-trained methods."""
    text = resources.files("pcselect").joinpath("data/kitti_registry.txt").read_text("utf-8")
    return parse_registry(text)


def registry_methods(registry: Iterable[ModelDescriptor]) -> dict[str, MethodFeatures]:
    return {d.method_id: d.features for d in sorted(registry, key=lambda d: d.method_id)}


# ---------------------------------------------------------------- selection

def classify_object_size(class_name: str, size_table: Mapping[str, float] = DEFAULT_SIZE_TABLE,
                         thresholds: SelectionThresholds = SelectionThresholds()) -> str:
    if class_name not in size_table:
        raise UnknownClass(class_name)
    return "large" if size_table[class_name] >= thresholds.large_object_min_length_m else "small"


def _close_density(models, ratio, tol):
    return [d for d in models if abs(d.train_normalized_points - ratio) <= tol * ratio]


def select_method(target: TargetData, features: DataFeatures,
                  registry: Sequence[ModelDescriptor],
                  thresholds: SelectionThresholds = SelectionThresholds(),
                  size_table: Mapping[str, float] = DEFAULT_SIZE_TABLE) -> MethodSelection:
    if not registry:
        raise NoCandidate("registry is empty")
    trace: list[TraceEntry] = []
    by_method: dict[str, list[ModelDescriptor]] = {}
    for d in registry:
        by_method.setdefault(d.method_id, []).append(d)
    methods = registry_methods(registry)

    budget = target.latency_budget_s
    if budget is not None:
        kept = {m: f for m, f in methods.items()
                if min(d.latency_s for d in by_method[m]) <= budget}
        dropped = sorted(set(methods) - set(kept))
        trace.append(TraceEntry("latency", "filtered",
                                f"budget {budget:g}s drops {dropped or 'none'}"))
        methods = kept
        if not methods:
            raise NoCandidate(f"no method meets the latency budget of {budget:g}s")

    first = target.target_classes[0]
    size = classify_object_size(first, size_table, thresholds)
    reason = (f"{first} representative length {size_table[first]:g} m "
              f"{'>=' if size == 'large' else '<'} {thresholds.large_object_min_length_m:g} m")
    other_sizes = {classify_object_size(c, size_table, thresholds) for c in target.target_classes[1:]}
    if other_sizes - {size}:
        reason += f"; warning: targets span sizes, branch follows first class {first}"
    trace.append(TraceEntry("size", size, reason))
    want = "anchor_based" if size == "large" else "anchor_free"
    methods = {m: f for m, f in methods.items() if f.box_strategy == want}
    if not methods:
        raise NoCandidate(f"no {want} method registered")

    ratio = features.normalized_point_count
    sigma = features.noise_sigma or 0.0
    low = ratio <= thresholds.low_density_max_ratio
    severe = sigma >= thresholds.severe_noise_min_sigma_m
    factor = None
    if low and severe:
        ex_density = (thresholds.low_density_max_ratio - ratio) / thresholds.low_density_max_ratio
        ex_noise = (sigma - thresholds.severe_noise_min_sigma_m) / thresholds.severe_noise_min_sigma_m
        factor = "density" if ex_density >= ex_noise else "noise"
        trace.append(TraceEntry("combination", factor,
                                f"extrapolation: both low density (exceedance {ex_density:.3g}) "
                                f"and severe noise (exceedance {ex_noise:.3g}); "
                                f"larger relative exceedance wins"))
    elif low:
        factor = "density"
    elif severe:
        factor = "noise"

    survivors = [d for m in methods for d in by_method[m]]
    if factor is None:
        trace.append(TraceEntry("incompleteness", "small_incompleteness",
                                f"ratio {ratio:.4g} > {thresholds.low_density_max_ratio:g} and "
                                f"sigma {sigma:.4g} < {thresholds.severe_noise_min_sigma_m:g}"))
        mode = "small"
    elif factor == "density":
        close = _close_density(survivors, ratio, thresholds.close_density_rel_tol)
        if close:
            best = min(close, key=lambda d: (abs(d.train_normalized_points - ratio), d.model_id))
            trace.append(TraceEntry("incompleteness", "small_incompleteness",
                                    f"ratio {ratio:.4g} is low but {best.model_id} was trained at "
                                    f"{best.train_normalized_points:.4g}, within "
                                    f"{thresholds.close_density_rel_tol:g} relative"))
        else:
            methods = {m: f for m, f in methods.items() if f.has_point_stage}
            trace.append(TraceEntry("incompleteness", "low_density",
                                    f"ratio {ratio:.4g} <= {thresholds.low_density_max_ratio:g}; "
                                    "keep methods with a point-based stage"))
        mode = "density"
    else:
        methods = {m: f for m, f in methods.items() if f.point_free}
        voxel = {m: f for m, f in methods.items() if "voxel" in f.units}
        pillar = {m: f for m, f in methods.items() if "pillar" in f.units and m not in voxel}
        matching = [d for m in voxel for d in by_method[m]
                    if d.train_degradation.kind == "gaussian_noise"
                    and abs(d.train_noise_sigma - sigma) <= thresholds.close_noise_abs_tol_m]
        if matching:
            methods, unit = voxel, "voxel"
            why = f"noise-trained voxel model {sorted(d.model_id for d in matching)[0]} available"
        elif pillar:
            methods, unit = pillar, "pillar"
            why = "no matching noise-trained voxel model; pillars tolerate noise best"
        else:
            methods, unit = voxel, "voxel"
            why = "no pillar method registered"
        trace.append(TraceEntry("incompleteness", "severe_noise",
                                f"sigma {sigma:.4g} >= {thresholds.severe_noise_min_sigma_m:g}; "
                                f"keep {unit}-based methods ({why})"))
        mode = "noise"
    if not methods:
        raise NoCandidate("every method was filtered out")
    return MethodSelection(tuple(methods[m] for m in sorted(methods)), tuple(trace), mode)


def _method_reference_ap(registry: Sequence[ModelDescriptor]) -> dict[tuple[str, str], float]:
    ref = {}
    for d in registry:
        if d.train_degradation.kind == "none":
            for cls, ap in d.ap_profile.items():
                ref[(d.method_id, cls)] = ap
    return ref


def select_model(selection: MethodSelection, features: DataFeatures, target: TargetData,
                 registry: Sequence[ModelDescriptor]) -> SelectionDecision:
    """Pick the model of a surviving method closest to the inference degradation.

    Distance is the density gap, the noise gap, or (for small
    incompleteness) a preference for undegraded training data.  Ties go to
    the higher AP on the first target class (models without their own AP
    inherit the AP of their method's undegraded model), then to the
    lexicographically smaller model id.
    """
    if not selection.methods:
        raise NoCandidate("no method to choose from")
    allowed = {f.method_id for f in selection.methods}
    candidates = [d for d in registry if d.method_id in allowed]
    if not candidates:
        raise NoCandidate("no registered model for the selected methods")
    ratio = features.normalized_point_count
    sigma = features.noise_sigma or 0.0
    first = target.target_classes[0]
    ref_ap = _method_reference_ap(registry)

    def distance(d: ModelDescriptor) -> float:
        if selection.mode == "density":
            return abs(d.train_normalized_points - ratio)
        if selection.mode == "noise":
            return abs(d.train_noise_sigma - sigma)
        return 0.0 if d.train_degradation.kind == "none" else 1.0

    def ap(d: ModelDescriptor) -> float:
        v = d.ap_profile.get(first, ref_ap.get((d.method_id, first)))
        return -math.inf if v is None else v

    chosen = min(candidates, key=lambda d: (round(distance(d), 12), -ap(d), d.model_id))
    dist = distance(chosen)
    what = {"density": "density gap", "noise": "noise gap",
            "small": "undegraded preference"}[selection.mode]
    reason = f"{what} {dist:.4g} among {len(candidates)} models"
    a = ap(chosen)
    if math.isfinite(a):
        reason += f"; {first} AP {a:g}"
    trace = selection.trace + (TraceEntry("model", chosen.model_id, reason),)
    return SelectionDecision(chosen, trace)


def select(target: TargetData, features: DataFeatures, registry: Sequence[ModelDescriptor],
           thresholds: SelectionThresholds = SelectionThresholds(),
           size_table: Mapping[str, float] = DEFAULT_SIZE_TABLE) -> SelectionDecision:
    """Both selection steps in one call."""
    selection = select_method(target, features, registry, thresholds, size_table)
    return select_model(selection, features, target, registry)
