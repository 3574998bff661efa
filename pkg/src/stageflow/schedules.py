"""Multi-model sampling schedules: parsing, step plans and FLOPs accounting.

Two text forms are accepted::

    LSL:0.4:0.2          letters with optional boundary fractions
    L@0.4,S@0.4,L@0.2    explicit id@fraction list (canonical form)

In the letter form each letter is one model id.  Without fractions the
letters share the trajectory equally.  With fractions, the first fraction
belongs to the first letter, the last fraction (when two or more are given)
to the last letter, any further fractions to the second, third, ... letters,
and the letters left over split the remainder equally.  Adjacent segments
with the same id and multiplier are merged, so ``LLL`` is a single segment.

A segment may carry a step multiplier, written ``D@0.5x0.25`` in the
explicit form; it scales that segment's step count (a reduced-NFE segment).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .errors import DegenerateScheduleError, InvalidArgumentError, NotFoundError, ScheduleParseError, TooLargeError

FRACTION_TOL = 1e-9
MAX_ENUMERATION = 10**6


def _fmt(x: float) -> str:
    return f"{x:.12g}"


@dataclass(frozen=True)
class Segment:
    model_id: str
    fraction: float
    multiplier: float = 1.0


@dataclass(frozen=True)
class Schedule:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise InvalidArgumentError("a schedule needs at least one segment")
        if any(not 0.0 < s.fraction <= 1.0 + FRACTION_TOL for s in self.segments):
            raise InvalidArgumentError("segment fractions must lie in (0, 1]")
        if any(not s.multiplier > 0 for s in self.segments):
            raise InvalidArgumentError("segment multipliers must be positive")
        if abs(sum(s.fraction for s in self.segments) - 1.0) > FRACTION_TOL:
            raise InvalidArgumentError("segment fractions must sum to 1")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple], merge: bool = True) -> "Schedule":
        segs = [Segment(p[0], float(p[1]), float(p[2]) if len(p) > 2 else 1.0) for p in pairs]
        return cls(tuple(_merge(segs) if merge else segs))

    @property
    def model_ids(self) -> list[str]:
        return [s.model_id for s in self.segments]

    def text(self) -> str:
        """Canonical ``id@fraction`` serialization."""
        parts = []
        for s in self.segments:
            part = f"{s.model_id}@{_fmt(s.fraction)}"
            if s.multiplier != 1.0:
                part += f"x{_fmt(s.multiplier)}"
            parts.append(part)
        return ",".join(parts)

    def __str__(self) -> str:
        return self.text()


def _merge(segs: Sequence[Segment]) -> list[Segment]:
    out: list[Segment] = []
    for s in segs:
        if out and out[-1].model_id == s.model_id and out[-1].multiplier == s.multiplier:
            out[-1] = Segment(s.model_id, round(out[-1].fraction + s.fraction, 12), s.multiplier)
        else:
            out.append(s)
    return out


def _parse_float(text: str, token: str, pos: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ScheduleParseError(text, pos, f"expected a number, found {token!r}") from None
    if not math.isfinite(value):
        raise ScheduleParseError(text, pos, f"non-finite number {token!r}")
    return value


def _check_id(text: str, model_id: str, pos: int, registry_ids) -> None:
    if registry_ids is not None and model_id not in registry_ids:
        raise ScheduleParseError(text, pos, f"unknown model id {model_id!r}")


def _parse_explicit(text: str, registry_ids) -> list[Segment]:
    segs, pos = [], 0
    for part in text.split(","):
        if "@" not in part:
            raise ScheduleParseError(text, pos, f"segment {part!r} is not of the form id@fraction")
        model_id, _, rest = part.partition("@")
        model_id = model_id.strip()
        if not model_id:
            raise ScheduleParseError(text, pos, "empty model id")
        _check_id(text, model_id, pos, registry_ids)
        frac_txt, _, mult_txt = rest.partition("x")
        frac_pos = pos + len(part) - len(rest)
        frac = _parse_float(text, frac_txt.strip(), frac_pos)
        mult = _parse_float(text, mult_txt.strip(), frac_pos + len(frac_txt) + 1) if mult_txt else 1.0
        if not 0.0 < frac <= 1.0:
            raise ScheduleParseError(text, frac_pos, f"fraction {frac} outside (0, 1]")
        if mult <= 0:
            raise ScheduleParseError(text, frac_pos, f"multiplier {mult} must be positive")
        segs.append(Segment(model_id, frac, mult))
        pos += len(part) + 1
    total = sum(s.fraction for s in segs)
    if abs(total - 1.0) > FRACTION_TOL:
        raise ScheduleParseError(text, len(text), f"fractions sum to {_fmt(total)}, not 1")
    return segs


def _parse_letters(text: str, registry_ids) -> list[Segment]:
    letters, *frac_tokens = text.split(":")
    if not letters or not letters.isalnum():
        raise ScheduleParseError(text, 0, f"expected model-id letters, found {letters!r}")
    for i, ch in enumerate(letters):
        _check_id(text, ch, i, registry_ids)
    m, k = len(letters), len(frac_tokens)
    if k > m:
        raise ScheduleParseError(text, len(letters), f"{k} fractions given for {m} segments")
    fracs: list[Optional[float]] = [None] * m
    pos = len(letters) + 1
    positions = []
    for j, tok in enumerate(frac_tokens):
        value = _parse_float(text, tok, pos)
        if not 0.0 < value <= 1.0:
            raise ScheduleParseError(text, pos, f"fraction {value} outside (0, 1]")
        positions.append(pos)
        pos += len(tok) + 1
        # the final given fraction belongs to the last letter once two or more are given
        slot = m - 1 if (k >= 2 and j == k - 1) else j
        fracs[slot] = value
    free = [i for i, f in enumerate(fracs) if f is None]
    given = sum(f for f in fracs if f is not None)
    if free:
        remainder = 1.0 - given
        if remainder <= FRACTION_TOL:
            raise ScheduleParseError(
                text, positions[-1] if positions else 0, f"remaining share {_fmt(remainder)} for the unassigned segments is not positive"
            )
        # rounded shares keep both text forms equal; the last free slot takes the exact residue
        for i in free[:-1]:
            fracs[i] = round(remainder / len(free), 12)
        fracs[free[-1]] = round(1.0 - sum(f for f in fracs if f is not None), 12)
    elif abs(given - 1.0) > FRACTION_TOL:
        raise ScheduleParseError(text, len(text), f"fractions sum to {_fmt(given)}, not 1")
    return [Segment(ch, f) for ch, f in zip(letters, fracs)]


def parse_schedule(
    text: str,
    registry_ids: Optional[Iterable[str]] = None,
    multipliers: Optional[Mapping[str, float]] = None,
) -> Schedule:
    """Parse either schedule text form.

    ``registry_ids``, when given, restricts the accepted model ids.
    ``multipliers`` sets a default step multiplier per model id for segments
    that do not carry an explicit one.
    """
    text = text.strip()
    if not text:
        raise ScheduleParseError(text, 0, "empty schedule")
    ids = set(registry_ids) if registry_ids is not None else None
    segs = _parse_explicit(text, ids) if "@" in text else _parse_letters(text, ids)
    if multipliers:
        segs = [Segment(s.model_id, s.fraction, multipliers.get(s.model_id, 1.0)) if s.multiplier == 1.0 else s
                for s in segs]
    return Schedule(tuple(_merge(segs)))


@dataclass(frozen=True)
class PlanStep:
    t_start: float
    t_end: float
    model_id: str


@dataclass(frozen=True)
class StepPlan:
    steps: tuple[PlanStep, ...]
    segment_steps: tuple[int, ...] = ()

    @property
    def total_steps(self) -> int:
        return len(self.steps)

    @property
    def model_ids(self) -> list[str]:
        return [s.model_id for s in self.steps]

    def times(self) -> list[float]:
        return [s.t_start for s in self.steps] + ([self.steps[-1].t_end] if self.steps else [])


def _round_half_up(x: float) -> int:
    # a tiny slack keeps products such as 0.4 * 50 = 20.000000000000004 stable
    return int(math.floor(x + 0.5 + 1e-9))


def realize_plan(schedule: Schedule, total_steps: int) -> StepPlan:
    """Turn segment fractions into a concrete step list on a uniform t grid.

    Each segment receives ``round(fraction * total_steps * multiplier)``
    steps; the last segment absorbs the rounding residue so the count
    matches ``round(sum(fraction * multiplier) * total_steps)``.
    """
    if total_steps < len(schedule.segments):
        raise DegenerateScheduleError(
            f"{total_steps} steps cannot cover {len(schedule.segments)} segments of {schedule.text()}"
        )
    target = _round_half_up(sum(s.fraction * s.multiplier for s in schedule.segments) * total_steps)
    counts = [_round_half_up(s.fraction * total_steps * s.multiplier) for s in schedule.segments[:-1]]
    counts.append(target - sum(counts))
    for seg, c in zip(schedule.segments, counts):
        if c <= 0:
            raise DegenerateScheduleError(
                f"segment {seg.model_id}@{_fmt(seg.fraction)} of {schedule.text()} gets {c} steps at total_steps={total_steps}"
            )
    n = sum(counts)
    ids = [seg.model_id for seg, c in zip(schedule.segments, counts) for _ in range(c)]
    steps = tuple(PlanStep(i / n, (i + 1) / n, mid) for i, mid in enumerate(ids))
    return StepPlan(steps, tuple(counts))


def schedule_flops(plan: StepPlan, per_step_flops: Mapping[str, float], evals_per_step: int = 1) -> float:
    """Sum over steps of the step's model price times ``evals_per_step``."""
    total = 0.0
    for step in plan.steps:
        try:
            price = per_step_flops[step.model_id]
        except KeyError:
            raise NotFoundError(f"no FLOPs price for model id {step.model_id!r}") from None
        total += price * evals_per_step
    return total


def enumerate_schedules(num_segments: int, ids: Sequence[str]) -> list[Schedule]:
    """Every assignment of ``ids`` to ``num_segments`` equal segments, lexicographic in ``ids`` order."""
    if num_segments < 1 or len(ids) < 1:
        raise InvalidArgumentError("need num_segments >= 1 and at least one id")
    if len(ids) ** num_segments > MAX_ENUMERATION:
        raise TooLargeError(f"{len(ids)}^{num_segments} schedules exceeds the limit of {MAX_ENUMERATION}")
    frac = 1.0 / num_segments
    return [
        Schedule.from_pairs([(mid, frac) for mid in combo], merge=False)
        for combo in itertools.product(ids, repeat=num_segments)
    ]


def letters(schedule: Schedule) -> str:
    """Compact per-segment letter string, e.g. ``LSSL`` for an equal-segment schedule."""
    return "".join(s.model_id for s in schedule.segments)
