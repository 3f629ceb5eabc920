"""Temporal attention maps and the multi-view transfer losses.

An activation map A in R^{C x t} collapses to a temporal attention map
(TAM): sum over channels of |A|^p per time step, batch-averaged, then
l2-normalized. Student TAMs are pulled toward the frozen teacher's TAMs
per view (channel/global/local), per placed layer, with deeper teacher
layers folded into the student's deepest layer when depths differ.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .model import ForwardTrace, MultiViewActivations
from .signal import DEFAULT_RESOLUTIONS, mrstft_loss
from .tensor import Tensor

VIEWS = ("channel", "global", "local")
SIDES = ("encoder", "decoder")


@dataclass
class TamParams:
    p_map: float = 2.0
    p_loss: int = 1
    eps: float = 1e-8

    def __post_init__(self):
        if self.p_map <= 0:
            raise ShapeError(f"p_map must be positive, got {self.p_map}")
        if self.p_loss not in (1, 2):
            raise ShapeError(f"p_loss must be 1 or 2, got {self.p_loss}")


@dataclass
class Tam:
    """Unit-l2-norm, non-negative temporal attention map of shape [1, t]
    (all-zero activations keep an all-zero map)."""

    values: Tensor
    view: str | None = None
    level: int | None = None
    side: str | None = None

    @property
    def length(self) -> int:
        return self.values.shape[-1]


@dataclass(frozen=True)
class PairEntry:
    student_level: int
    side: str
    teacher_levels: tuple

    def __post_init__(self):
        if not self.teacher_levels:
            raise ShapeError("pair entry needs at least one teacher level")
        if tuple(sorted(self.teacher_levels)) != tuple(self.teacher_levels):
            raise ShapeError("teacher levels must be sorted")


@dataclass
class PairMap:
    entries: list[PairEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            key = (e.student_level, e.side)
            if key in seen:
                raise ShapeError(f"duplicate pair entry for {key}")
            seen.add(key)


@dataclass
class DistillConfig:
    lambda_at: float = 1.0
    lambda_kd: float = 1.0
    lambda_distill: float = 1.0
    single_view: str | None = None
    dual_depth: bool = True
    tam: TamParams = field(default_factory=TamParams)

    def __post_init__(self):
        for name in ("lambda_at", "lambda_kd", "lambda_distill"):
            if getattr(self, name) < 0:
                raise ShapeError(f"{name} must be >= 0")
        if self.single_view is not None and self.single_view not in VIEWS:
            raise ShapeError(f"single_view must be one of {VIEWS}, got {self.single_view!r}")


# -- TAM extraction ------------------------------------------------------

def compute_tam(activation: Tensor, params: TamParams | None = None, *,
                view: str | None = None, level: int | None = None,
                side: str | None = None) -> Tam:
    """Collapse [B, C, t] (or [C, t]) activations to a normalized [1, t] map.

    Raw map: sum over channels of |A|^p_map per time step, averaged over
    the batch; then divided by (l2 norm + eps). An all-zero activation
    stays all-zero.
    """
    params = params or TamParams()
    if activation.size == 0:
        raise ShapeError("cannot compute a TAM of an empty tensor")
    a = activation
    if a.ndim == 2:
        a = a.reshape(1, *a.shape)
    if a.ndim != 3:
        raise ShapeError(f"activation must be [B, C, t] or [C, t], got shape {a.shape}")
    raw = a.abs().pow(params.p_map).sum(axis=1).mean(axis=0)  # [t]
    norm = (raw * raw).sum().pow(0.5)
    values = raw / (norm + params.eps)
    return Tam(values.reshape(1, raw.shape[0]), view=view, level=level, side=side)


def at_loss(tam_teacher: Tam, tam_student: Tam, params: TamParams | None = None) -> Tensor:
    """p-norm distance between two aligned maps; gradient flows into the
    student side only."""
    params = params or TamParams()
    if tam_teacher.length != tam_student.length:
        raise ShapeError(
            f"TAM length mismatch: teacher {tam_teacher.length} vs student {tam_student.length}"
        )
    diff = tam_teacher.values.detach() - tam_student.values
    if params.p_loss == 1:
        return diff.abs().sum()
    return (diff * diff).sum().pow(0.5)


def align_lengths(tam_teacher: Tam, target_len: int,
                  params: TamParams | None = None) -> Tam:
    """Interpolate a teacher map to the student length, then renormalize so
    the unit-norm contract survives the resampling. Equal lengths pass
    through bit-identically."""
    params = params or TamParams()
    if target_len < 1:
        raise ShapeError(f"target_len must be >= 1, got {target_len}")
    if tam_teacher.length == target_len:
        return tam_teacher
    resampled = T.interpolate_linear(tam_teacher.values, target_len)
    norm = (resampled * resampled).sum().pow(0.5)
    return Tam(resampled / (norm + params.eps), view=tam_teacher.view,
               level=tam_teacher.level, side=tam_teacher.side)


# -- multi-view loss -----------------------------------------------------

def mv_at_terms(views_teacher: MultiViewActivations, views_student: MultiViewActivations,
                params: TamParams | None = None, single_view: str | None = None,
                ) -> dict[str, Tensor]:
    """Per-view AT losses for one teacher/student block pair. Teacher maps
    are aligned to the student length first."""
    params = params or TamParams()
    selected = VIEWS if single_view is None else (single_view,)
    target_len = views_student.channel_view.shape[-1]
    terms = {}
    for view in selected:
        a_t = views_teacher.view(view)
        a_s = views_student.view(view)
        tam_t = align_lengths(
            compute_tam(a_t, params, view=view, level=views_teacher.level,
                        side=views_teacher.side),
            target_len, params,
        )
        tam_s = compute_tam(a_s, params, view=view, level=views_student.level,
                            side=views_student.side)
        terms[view] = at_loss(tam_t, tam_s, params)
    return terms


def mv_at_loss(views_teacher: MultiViewActivations, views_student: MultiViewActivations,
               params: TamParams | None = None, single_view: str | None = None) -> Tensor:
    terms = mv_at_terms(views_teacher, views_student, params, single_view)
    total = None
    for term in terms.values():
        total = term if total is None else total + term
    return total


# -- layer pairing ---------------------------------------------------------

def dual_depth_map(depth_teacher: int, depth_student: int, student_ma_placement,
                   dual_depth: bool = True) -> PairMap:
    """Which teacher levels feed each placed student level.

    Shallower student levels pair one-to-one; the deepest student level
    absorbs every remaining deeper teacher level (unless dual-depth
    transfer is disabled, in which case it also pairs one-to-one).
    """
    if depth_student < 1 or depth_teacher < depth_student:
        raise ShapeError(
            f"need 1 <= student depth <= teacher depth, got {depth_student} > {depth_teacher}"
        )
    placement = sorted(set(int(l) for l in student_ma_placement))
    entries = []
    for side in SIDES:
        for level in placement:
            if not 1 <= level <= depth_student:
                raise ShapeError(f"placement level {level} outside 1..{depth_student}")
            if level == depth_student and dual_depth:
                teachers = tuple(range(depth_student, depth_teacher + 1))
            else:
                teachers = (level,)
            entries.append(PairEntry(level, side, teachers))
    return PairMap(entries)


# -- output distillation and the combined losses -----------------------------

def _mean_l1(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return (a - b).abs().mean()


def kd_loss(y_hat_teacher: Tensor, y_hat_student: Tensor,
            resolutions=DEFAULT_RESOLUTIONS) -> Tensor:
    """Output distillation: mean l1 plus multi-resolution STFT distance
    between the student's and the frozen teacher's enhanced waveforms."""
    teacher = y_hat_teacher.detach() if isinstance(y_hat_teacher, Tensor) \
        else Tensor(np.asarray(y_hat_teacher))
    return _mean_l1(y_hat_student, teacher) + mrstft_loss(y_hat_student, teacher, resolutions)


def supervised_loss(clean: Tensor, y_hat: Tensor, resolutions=DEFAULT_RESOLUTIONS) -> Tensor:
    """Mean l1 plus multi-resolution STFT distance to the clean reference."""
    ref = clean.detach() if isinstance(clean, Tensor) else Tensor(np.asarray(clean))
    return _mean_l1(y_hat, ref) + mrstft_loss(y_hat, ref, resolutions)


def distill_loss_terms(trace_teacher: ForwardTrace, trace_student: ForwardTrace,
                       pair_map: PairMap, config: DistillConfig,
                       resolutions=DEFAULT_RESOLUTIONS) -> dict[str, Tensor | None]:
    """Per-view AT sums over all pairs plus the KD term (None when disabled)."""
    terms: dict[str, Tensor | None] = {f"at_{v}": None for v in VIEWS}
    if config.lambda_at > 0:
        for entry in pair_map.entries:
            views_s = trace_student.find(entry.side, entry.student_level)
            for t_level in entry.teacher_levels:
                views_t = trace_teacher.find(entry.side, t_level)
                for view, term in mv_at_terms(views_t, views_s, config.tam,
                                              config.single_view).items():
                    key = f"at_{view}"
                    terms[key] = term if terms[key] is None else terms[key] + term
    terms["kd"] = None
    if config.lambda_kd > 0:
        terms["kd"] = kd_loss(trace_teacher.enhanced, trace_student.enhanced, resolutions)
    return terms


def distill_loss(trace_teacher: ForwardTrace, trace_student: ForwardTrace,
                 pair_map: PairMap, config: DistillConfig,
                 resolutions=DEFAULT_RESOLUTIONS) -> Tensor:
    """lambda_at * sum of MV-AT terms over the pair map + lambda_kd * KD."""
    terms = distill_loss_terms(trace_teacher, trace_student, pair_map, config, resolutions)
    total = None
    at_sum = None
    for view in VIEWS:
        term = terms[f"at_{view}"]
        if term is not None:
            at_sum = term if at_sum is None else at_sum + term
    if at_sum is not None:
        total = at_sum * config.lambda_at
    if terms["kd"] is not None:
        kd_term = terms["kd"] * config.lambda_kd
        total = kd_term if total is None else total + kd_term
    if total is None:
        total = Tensor(np.zeros((), dtype=trace_student.enhanced.dtype))
    return total


def total_training_loss(clean: Tensor, trace_student: ForwardTrace,
                        trace_teacher: ForwardTrace | None = None,
                        pair_map: PairMap | None = None,
                        config: DistillConfig | None = None,
                        resolutions=DEFAULT_RESOLUTIONS) -> Tensor:
    """Supervised loss, plus lambda_distill times the distillation loss when
    a teacher trace is given."""
    sup = supervised_loss(clean, trace_student.enhanced, resolutions)
    if trace_teacher is None:
        return sup
    config = config or DistillConfig()
    if config.lambda_distill == 0:
        return sup
    if pair_map is None:
        raise ShapeError("distillation needs a pair map")
    return sup + distill_loss(trace_teacher, trace_student, pair_map, config,
                              resolutions) * config.lambda_distill


# -- TAM export ---------------------------------------------------------------

def trace_tams(trace: ForwardTrace, params: TamParams | None = None) -> list[Tam]:
    """One TAM per recorded (side, level, view), in trace order."""
    params = params or TamParams()
    out = []
    for act in trace.activations:
        for view in VIEWS:
            out.append(compute_tam(act.view(view), params, view=view,
                                   level=act.level, side=act.side))
    return out


def format_tam_record(tam: Tam) -> str:
    """Two lines: `side level view length` then the map values."""
    header = f"{tam.side} {tam.level} {tam.view} {tam.length}"
    values = " ".join(format(v, ".8g") for v in tam.values.data.reshape(-1))
    return header + "\n" + values + "\n"


def parse_tam_record(text: str) -> Tam:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) != 2:
        raise ShapeError(f"TAM record needs 2 lines, got {len(lines)}")
    side, level, view, length = lines[0].split()
    values = np.array([float(v) for v in lines[1].split()])
    if len(values) != int(length):
        raise ShapeError(f"TAM record header says {length} values, found {len(values)}")
    return Tam(Tensor(values.reshape(1, -1)), view=view, level=int(level), side=side)
