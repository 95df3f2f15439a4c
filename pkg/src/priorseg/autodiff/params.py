"""Named trainable parameters with Adam state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class OptimError(RuntimeError):
    """Raised when an update would write non-finite values."""


@dataclass
class _Param:
    tensor: Tensor
    m: np.ndarray
    v: np.ndarray


@dataclass
class ParameterSet:
    """Ordered collection of named parameter tensors plus Adam moments."""

    params: dict[str, _Param] = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = _Param(t, np.zeros_like(t.data), np.zeros_like(t.data))
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.tensor.grad = None

    def num_values(self) -> int:
        return sum(p.tensor.data.size for p in self.params.values())

    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Flat name -> array view of values, moments and the step counter."""
        out: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            out[f"{prefix}{name}"] = p.tensor.data
            out[f"{prefix}{name}.adam_m"] = p.m
            out[f"{prefix}{name}.adam_v"] = p.v
        out[f"{prefix}__step__"] = np.array([float(self.step_count)])
        return out

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.params.items():
            for key, dst in ((f"{prefix}{name}", p.tensor.data),
                             (f"{prefix}{name}.adam_m", p.m),
                             (f"{prefix}{name}.adam_v", p.v)):
                src = arrays[key]
                if src.shape != dst.shape:
                    raise ValueError(f"{key}: shape {src.shape} != {dst.shape}")
                dst[...] = src
        self.step_count = int(arrays[f"{prefix}__step__"][0])


def fan_in_uniform(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    """U(-b, b) with b = sqrt(6/fan_in), i.e. variance 2/fan_in."""
    b = np.sqrt(6.0 / fan_in)
    return rng.uniform(-b, b, size=shape)


def adam_step(pset: ParameterSet, lr: float,
              betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> None:
    """One Adam update over every parameter; clears gradients afterwards.

    Parameters whose gradient accumulator is empty are treated as zero-grad:
    their moments decay but the bias-corrected update still applies.
    """
    b1, b2 = betas
    pset.step_count += 1
    t = pset.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in pset.params.items():
        g = p.tensor.grad
        if g is None:
            g = np.zeros_like(p.tensor.data)
        elif not np.all(np.isfinite(g)):
            raise OptimError(f"non-finite gradient for parameter {name!r}")
        p.m *= b1
        p.m += (1.0 - b1) * g
        p.v *= b2
        p.v += (1.0 - b2) * np.square(g)
        update = (p.m / c1) / (np.sqrt(p.v / c2) + eps)
        if not np.all(np.isfinite(update)):
            raise OptimError(f"non-finite update for parameter {name!r}")
        p.tensor.data -= lr * update
        p.tensor.grad = None


@dataclass
class Adam:
    """Convenience wrapper binding a learning rate to one ParameterSet."""

    pset: ParameterSet
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def step(self) -> None:
        adam_step(self.pset, self.lr, self.betas, self.eps)
