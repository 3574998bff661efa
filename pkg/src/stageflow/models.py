"""Velocity fields, the model registry and FLOPs accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import ConflictError, InvalidArgumentError, NotFoundError, ShapeError
from .numerics import ParamStore, mlp_forward

TIME_EMBED_DIM = 4


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise InvalidArgumentError(f"all layer widths must be >= 1: {self}")

    @classmethod
    def for_latent(cls, latent_dim: int, hidden_widths: Sequence[int], num_classes: int = 0) -> "MlpSpec":
        """Spec whose input is ``[z, time_embedding(t), one_hot(class)]``."""
        return cls(latent_dim + TIME_EMBED_DIM + num_classes, tuple(hidden_widths), latent_dim)

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.output_dim]

    @property
    def latent_dim(self) -> int:
        return self.output_dim

    @property
    def cond_dim(self) -> int:
        return self.input_dim - self.output_dim - TIME_EMBED_DIM


def flops_formula(spec: MlpSpec) -> int:
    """2 flops per multiply-add, 1 per bias add, 1 per hidden activation."""
    dims = spec.dims
    total = sum(2 * n_in * n_out + n_out for n_in, n_out in zip(dims[:-1], dims[1:]))
    return total + sum(spec.hidden_widths)


@dataclass(frozen=True)
class Condition:
    """Class label for the conditional branch; ``class_index=None`` is unconditional."""

    class_index: Optional[int] = None
    num_classes: int = 0

    def __post_init__(self):
        if self.class_index is not None and not 0 <= self.class_index < self.num_classes:
            raise InvalidArgumentError(f"class_index {self.class_index} outside [0, {self.num_classes})")

    @property
    def is_conditional(self) -> bool:
        return self.class_index is not None

    def unconditional(self) -> "Condition":
        return Condition(None, self.num_classes)

    def one_hot(self, width: int) -> np.ndarray:
        vec = np.zeros(width)
        if self.class_index is not None:
            if self.class_index >= width:
                raise ShapeError(f"class {self.class_index} does not fit a condition vector of width {width}")
            vec[self.class_index] = 1.0
        return vec


UNCONDITIONAL = Condition()


def time_embedding(t: float) -> np.ndarray:
    return np.array([t, 1.0 - t, math.sin(2.0 * math.pi * t), math.cos(2.0 * math.pi * t)])


def analytic_ot_velocity(mu, sigma: float, z, t: float) -> np.ndarray:
    """Marginal velocity of the straight path from N(0, I) to N(mu, sigma^2 I).

    Equals ``E[z1 - z0 | z_t = z]`` for independently coupled endpoints.
    ``z`` may be a single point or a batch of rows.
    """
    if sigma <= 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")
    mu = np.asarray(mu, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    s2 = sigma * sigma
    coeff = (t * s2 - (1.0 - t)) / ((1.0 - t) ** 2 + t * t * s2)
    return mu + coeff * (z - t * mu)


@dataclass(frozen=True)
class VelocityModel:
    """A registered velocity field.

    ``kind`` is ``"learned"`` (needs ``spec`` and ``params``) or
    ``"analytic_gaussian"`` (needs ``mu`` and ``sigma``).  ``scale``
    multiplies every output; it exists for control experiments such as a
    doubled or negated copy of another field.
    """

    id: str
    kind: str
    spec: Optional[MlpSpec] = None
    params: Optional[ParamStore] = field(default=None, compare=False)
    mu: Optional[tuple[float, ...]] = None
    sigma: Optional[float] = None
    scale: float = 1.0
    flops_per_eval: int = 0

    @classmethod
    def learned(cls, id: str, spec: MlpSpec, params: ParamStore, scale: float = 1.0) -> "VelocityModel":
        if params.dims != spec.dims:
            raise ShapeError(f"params dims {params.dims} do not match spec dims {spec.dims}")
        return cls(id, "learned", spec=spec, params=params, scale=scale, flops_per_eval=flops_formula(spec))

    @classmethod
    def analytic_gaussian(cls, id: str, mu: Sequence[float], sigma: float, scale: float = 1.0) -> "VelocityModel":
        if sigma <= 0:
            raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
        return cls(id, "analytic_gaussian", mu=tuple(float(m) for m in mu), sigma=float(sigma), scale=scale)

    def renamed(self, new_id: str, scale: Optional[float] = None) -> "VelocityModel":
        return VelocityModel(
            new_id, self.kind, self.spec, self.params, self.mu, self.sigma,
            self.scale if scale is None else scale, self.flops_per_eval,
        )

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim if self.kind == "learned" else len(self.mu)


def evaluate_velocity(model: VelocityModel, z, t: float, cond: Condition = UNCONDITIONAL) -> np.ndarray:
    """Velocity of ``model`` at ``(z, t)``; ``z`` may be one point or a batch of rows."""
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.latent_dim or z.ndim not in (1, 2):
        raise ShapeError(f"z shape {z.shape} does not match latent dim {model.latent_dim}")
    if model.kind == "analytic_gaussian":
        v = analytic_ot_velocity(model.mu, model.sigma, z, t)
    else:
        extra = np.concatenate([time_embedding(t), cond.one_hot(model.spec.cond_dim)])
        if z.ndim == 1:
            x = np.concatenate([z, extra])
        else:
            x = np.empty((z.shape[0], model.spec.input_dim))
            x[:, : z.shape[1]] = z
            x[:, z.shape[1] :] = extra
        v, _ = mlp_forward(model.params, x)
    return v if model.scale == 1.0 else model.scale * v


def guidance_evals(cond: Condition, guidance: float) -> int:
    """Model evaluations consumed by one guided velocity query."""
    if not cond.is_conditional:
        return 1
    return 1 if guidance == 1.0 else 2


def guided_velocity(model: VelocityModel, z, t: float, cond: Condition, guidance: float) -> np.ndarray:
    """Classifier-free guidance: ``v_uncond + g * (v_cond - v_uncond)``."""
    if not cond.is_conditional:
        raise InvalidArgumentError("guided_velocity needs a class-conditional Condition")
    if guidance < 0:
        raise InvalidArgumentError(f"guidance must be >= 0, got {guidance}")
    v_cond = evaluate_velocity(model, z, t, cond)
    if guidance == 1.0:
        return v_cond
    v_uncond = evaluate_velocity(model, z, t, cond.unconditional())
    return v_uncond + guidance * (v_cond - v_uncond)


class ModelRegistry(Mapping[str, VelocityModel]):
    """Immutable id -> model map; ``register`` returns a new registry."""

    def __init__(self, models: Optional[Mapping[str, VelocityModel]] = None):
        self._models = dict(models or {})

    def register(self, model: VelocityModel) -> "ModelRegistry":
        if model.id in self._models:
            raise ConflictError(f"model id {model.id!r} already registered")
        return ModelRegistry({**self._models, model.id: model})

    def lookup(self, model_id: str) -> VelocityModel:
        try:
            return self._models[model_id]
        except KeyError:
            raise NotFoundError(f"no model registered under id {model_id!r}") from None

    def __getitem__(self, model_id: str) -> VelocityModel:
        return self.lookup(model_id)

    def __iter__(self) -> Iterator[str]:
        return iter(self._models)

    def __len__(self) -> int:
        return len(self._models)

    def pricing(self) -> dict[str, float]:
        return {k: m.flops_per_eval for k, m in self._models.items()}


def register_model(registry: ModelRegistry, model: VelocityModel) -> ModelRegistry:
    return registry.register(model)


def lookup(registry: ModelRegistry, model_id: str) -> VelocityModel:
    return registry.lookup(model_id)
