"""Observable specifications evaluated on mode-coefficient states."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import potential, spectral


@dataclass(frozen=True)
class ObservableSpec:
    """A named functional of the state.

    kind is one of mean, seminorm, sup, energy, mode_moment, custom.  For
    bounded-Lipschitz uses (the smoothing estimates) sup_bound and lip must
    be finite: |phi| <= sup_bound and |phi(x)-phi(y)| <= lip |x-y|_{-1}.
    """

    name: str
    kind: str
    gamma: float = 0.0
    k: int = 1
    p: int = 2
    fn: Callable[[np.ndarray], np.ndarray] | None = None
    sup_bound: float | None = None
    lip: float | None = None

    def require_bounded_lipschitz(self):
        if self.sup_bound is None or self.lip is None:
            raise ValueError(f"observable {self.name!r} needs sup_bound and lip")
        if not (np.isfinite(self.sup_bound) and np.isfinite(self.lip)):
            raise ValueError(f"observable {self.name!r} has non-finite constants")


def evaluate(spec: ObservableSpec, states: np.ndarray, sim_cfg) -> np.ndarray:
    """Evaluate an observable on states of shape (..., M+1)."""
    states = np.asarray(states, dtype=np.float64)
    if spec.kind == "mean":
        return states[..., 0]
    if spec.kind == "seminorm":
        return np.sqrt(spectral.seminorm_sq_many(states, spec.gamma))
    if spec.kind == "sup":
        grids = spectral.synthesize_many(states, sim_cfg.grid_size)
        return np.max(np.abs(grids), axis=-1)
    if spec.kind == "energy":
        return potential.free_energy_many(states, sim_cfg.potential, sim_cfg.grid_size)
    if spec.kind == "mode_moment":
        return states[..., spec.k] ** spec.p
    if spec.kind == "custom":
        if spec.fn is None:
            raise ValueError(f"custom observable {spec.name!r} has no function")
        return np.asarray(spec.fn(states), dtype=np.float64)
    raise ValueError(f"unknown observable kind {spec.kind!r}")


def mean() -> ObservableSpec:
    return ObservableSpec(name="mean", kind="mean")


def seminorm(gamma: float) -> ObservableSpec:
    return ObservableSpec(name=f"seminorm[{gamma:g}]", kind="seminorm", gamma=gamma)


def seminorm_sq(gamma: float) -> ObservableSpec:
    return ObservableSpec(
        name=f"seminorm_sq[{gamma:g}]",
        kind="custom",
        fn=lambda s, g=gamma: spectral.seminorm_sq_many(s, g),
    )


def sup_norm() -> ObservableSpec:
    return ObservableSpec(name="sup", kind="sup")


def energy() -> ObservableSpec:
    return ObservableSpec(name="energy", kind="energy")


def mode_moment(k: int, p: int) -> ObservableSpec:
    return ObservableSpec(name=f"mode[{k}]^{p}", kind="mode_moment", k=k, p=p)


def tanh_mode(k: int) -> ObservableSpec:
    """tanh of the (-1)-pairing with e_k: bounded by 1, Lipschitz alpha_k^(-1/2)."""
    alpha_k = spectral.eigenvalue(k)
    return ObservableSpec(
        name=f"tanh_mode[{k}]",
        kind="custom",
        fn=lambda s, a=alpha_k, kk=k: np.tanh(s[..., kk] / a),
        sup_bound=1.0,
        lip=alpha_k**-0.5,
    )
