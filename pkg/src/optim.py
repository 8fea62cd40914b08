import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


# RNN training defaults to no weight decay.
RNN_SGD_DEFAULTS = SgdConfig(weight_decay=0.0)


@dataclass
class OptState:
    """Momentum buffers, one per parameter, shaped like the parameter."""
    velocity: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: dict) -> "OptState":
        return cls({name: np.zeros_like(p) for name, p in params.items()})


def sgd_step(params: dict, grads: dict, state: OptState, cfg: SgdConfig):
    """In-place SGD with momentum and additive weight decay; the learning rate is never annealed.

        g' = g + weight_decay * p
        v  = momentum * v - learning_rate * g'
        p  = p + v
    """
    if set(grads) != set(params) or set(state.velocity) != set(params):
        raise ShapeError("sgd_step: params, grads and optimizer state must name the same tensors")
    for name, p in params.items():
        g = grads[name]
        v = state.velocity[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"sgd_step: {name}: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        g = g + cfg.weight_decay * p
        v *= cfg.momentum
        v -= cfg.learning_rate * g
        p += v
    return params, state


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    gain: tuple = (0.9, 1.1)
    offset: tuple = (-0.1, 0.1)

    def __post_init__(self):
        object.__setattr__(self, "gain", tuple(float(v) for v in self.gain))
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if len(self.gain) != 2 or self.gain[0] > self.gain[1]:
            raise ConfigError(f"gain must be a (low, high) pair, got {self.gain}")
        if len(self.offset) != 2 or self.offset[0] > self.offset[1]:
            raise ConfigError(f"offset must be a (low, high) pair, got {self.offset}")


def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def augment(image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Random horizontal flip, then a gain and offset on every pixel (post-normalization units).

    Always consumes three draws so the stream stays aligned across samples.
    """
    flip = rng.random() < cfg.flip_prob
    factor = rng.uniform(cfg.gain[0], cfg.gain[1])
    shift = rng.uniform(cfg.offset[0], cfg.offset[1])
    out = hflip(image) if flip else image
    return out * factor + shift
