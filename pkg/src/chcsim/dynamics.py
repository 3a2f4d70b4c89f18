"""Semi-implicit spectral integration of the approximated conserved equation.

The state evolves in mode space by

    x_k^+ = (x_k + (dt/2) alpha_k [f(X)]_k + dW_k) / (1 + (dt/2) alpha_k^2)

for k >= 1, where [f(X)]_k is the cosine analysis of the nonlinearity
evaluated pointwise on the dealiased midpoint grid and dW_k ~ N(0, b_k dt).
The stiff bi-Laplacian is inverted exactly per mode, so the linear part is
unconditionally stable; mode 0 is untouched and mass conservation is exact
in floating point.

Two execution paths share the same arithmetic:

* single trajectories (``simulate``, ``simulate_pair``) draw noise step by
  step from one counter-based stream and, when the grid sup-norm crosses the
  configured guard, retry the offending step on halved substeps obtained by
  Brownian-bridge refinement of the already-drawn increment (up to
  ``max_halvings``, then fail loudly);
* replica ensembles (``run_ensemble``) integrate all replicas as one batch
  with one noise stream per replica; a replica crossing the guard is marked
  failed at that step and surfaced, never silently NaN'd.

Both paths accumulate the dissipation integrals, the gradient functional,
and the noise martingales at every step (trapezoid / left-point rule), which
is what the energy-budget checks consume.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field

import numpy as np

from . import noise, potential, spectral
from .noise import CovarianceSpec
from .potential import PotentialSpec
from .spectral import ModeVector

MEAN_TOL = 1e-9


class StiffEventError(RuntimeError):
    """The grid sup-norm exceeded the guard and retries were exhausted."""

    def __init__(self, message: str, failed_replicas: np.ndarray | None = None):
        super().__init__(message)
        self.failed_replicas = failed_replicas


@dataclass(frozen=True)
class SimConfig:
    """Everything one integration needs; immutable and hashable by content."""

    M: int
    dt: float
    T: float
    c: float
    potential: PotentialSpec
    cov: CovarianceSpec
    seed: int
    Q: int | None = None
    oversample: int = 4
    sup_guard: float = 1.5
    save_every: int = 1
    max_halvings: int = 10

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.T < self.dt:
            raise ValueError(f"horizon T={self.T} shorter than one step dt={self.dt}")
        if abs(self.c) >= 1.0:
            raise ValueError(f"conserved mean must lie in (-1, 1), got {self.c}")
        if self.cov.order != self.M:
            raise ValueError(
                f"covariance order {self.cov.order} does not match M={self.M}"
            )
        if self.Q is not None and self.Q < self.M + 1:
            raise ValueError(f"grid size Q={self.Q} must be at least M+1")
        if self.oversample < 1:
            raise ValueError("oversample factor must be >= 1")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")
        if self.sup_guard <= 0:
            raise ValueError("sup_guard must be positive")

    @property
    def grid_size(self) -> int:
        if self.Q is not None:
            return self.Q
        return spectral.default_grid_size(self.M, self.oversample)

    @property
    def steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    @property
    def horizon(self) -> float:
        """Realized horizon steps * dt (T rounded to a whole step count)."""
        return self.steps * self.dt


@dataclass
class Trajectory:
    """A saved path: states at the save grid plus step-resolution integrals."""

    times: np.ndarray
    states: np.ndarray  # (S, M+1) coefficients
    observables: dict[str, np.ndarray]
    diss_h1: float  # integral of |X|_1^2 dt
    diss_h2: float  # integral of |X|_2^2 dt
    grad_functional: float  # 2 * integral of (grad X)^2 sum_k X^{2k}
    mart_m1: float  # 2 * integral of (X, sqrt(B) dW)_{-1}
    mart_0: float  # 2 * integral of <X, sqrt(B) dW>
    config: SimConfig
    stiff_retries: int = 0

    def state_at(self, i: int) -> ModeVector:
        return ModeVector(self.states[i])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True)
class EnergyBudget:
    """Assembled pieces of one dissipation budget inequality."""

    terminal_seminorm_sq: float
    initial_seminorm_sq: float
    dissipation: float
    bound: float
    martingale: float
    gradient_functional: float = float("nan")

    def __post_init__(self):
        vals = (
            self.terminal_seminorm_sq,
            self.initial_seminorm_sq,
            self.dissipation,
            self.bound,
            self.martingale,
        )
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("budget entries must be finite")
        if self.dissipation < 0:
            raise ValueError("dissipation integral cannot be negative")

    @property
    def lhs(self) -> float:
        """terminal - initial + dissipation, the quantity the bound controls."""
        return self.terminal_seminorm_sq - self.initial_seminorm_sq + self.dissipation


class Engine:
    """Precomputed arrays for stepping states of shape (..., M+1)."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.Q = cfg.grid_size
        self.alpha = spectral.eigenvalues(cfg.M)
        self.alpha_sq = self.alpha**2
        self.active = cfg.cov.active_modes
        self.sqrt_b_active = np.sqrt(cfg.cov.b[self.active])
        self.inv_alpha = np.zeros(cfg.M + 1)
        self.inv_alpha[1:] = 1.0 / self.alpha[1:]
        self._denoms: dict[float, np.ndarray] = {}
        spec = cfg.potential
        self.guard = cfg.sup_guard
        if spec.is_exact:
            self.guard = min(self.guard, 1.0 - 1e-12)
        self.needs_grid = spec.active
        self.grad_mat = (
            spectral.gradient_matrix(cfg.M, self.Q) if spec.is_truncated else None
        )

    def denom(self, dt: float) -> np.ndarray:
        d = self._denoms.get(dt)
        if d is None:
            d = 1.0 + 0.5 * dt * self.alpha_sq
            self._denoms[dt] = d
        return d

    def grid(self, states: np.ndarray) -> np.ndarray:
        return spectral.synthesize_many(states, self.Q)

    def nonlin_modes(self, grids: np.ndarray) -> np.ndarray:
        return spectral.analyze_many(
            potential.nonlinearity_grid(grids, self.cfg.potential), self.cfg.M
        )

    def scatter_noise(self, xi: np.ndarray, dt: float, out_shape) -> np.ndarray:
        """Scaled increments (variance b_k dt) from standard normals on the band."""
        out = np.zeros(out_shape)
        if self.active.size:
            out[..., self.active] = xi * (self.sqrt_b_active * math.sqrt(dt))
        return out

    def advance(
        self, states: np.ndarray, eta: np.ndarray, dt: float, nl: np.ndarray | None
    ) -> np.ndarray:
        num = states + eta
        if nl is not None:
            num += nl * ((0.5 * dt) * self.alpha)
        num /= self.denom(dt)
        return num

    # -- budget integrands ------------------------------------------------

    def h_integrands(self, states: np.ndarray, grids: np.ndarray | None):
        """(|X|_1^2, |X|_2^2, gradient functional integrand) for each row."""
        h1 = spectral.seminorm_sq_many(states, 1.0)
        h2 = spectral.seminorm_sq_many(states, 2.0)
        if self.grad_mat is None or grids is None:
            gg = np.zeros_like(np.asarray(h1))
        else:
            grad = states[..., 1:] @ self.grad_mat
            u2 = grids * grids
            n = self.cfg.potential.n
            power_sum = np.ones_like(u2)
            for _ in range(n):
                power_sum = 1.0 + u2 * power_sum
            gg = 2.0 * np.mean(grad * grad * power_sum, axis=-1)
        return h1, h2, gg

    def mart_weights(self, states: np.ndarray, eta: np.ndarray):
        """Left-point martingale increments (2(X, dW)_{-1}, 2<X, dW>)."""
        m1 = 2.0 * np.einsum("...k,...k->...", states * self.inv_alpha, eta)
        m0 = 2.0 * np.einsum("...k,...k->...", states, eta)
        return m1, m0


def _as_state_array(x0, M: int) -> np.ndarray:
    if isinstance(x0, ModeVector):
        arr = x0.coeffs
    else:
        arr = np.asarray(x0, dtype=np.float64)
    if arr.shape[-1] != M + 1:
        raise ValueError(f"state has {arr.shape[-1]} coefficients, expected {M + 1}")
    return arr.copy()


def _check_mean(arr: np.ndarray, c: float):
    if np.any(np.abs(arr[..., 0] - c) > MEAN_TOL):
        raise ValueError(f"initial mean differs from configured c={c}")


def save_steps(cfg: SimConfig) -> np.ndarray:
    """Step indices recorded on a trajectory: every save_every-th plus the end."""
    idx = list(range(0, cfg.steps + 1, cfg.save_every))
    if idx[-1] != cfg.steps:
        idx.append(cfg.steps)
    return np.asarray(idx, dtype=np.int64)


class _Budget:
    __slots__ = ("diss_h1", "diss_h2", "grad_fn", "mart_m1", "mart_0")

    def __init__(self):
        self.diss_h1 = 0.0
        self.diss_h2 = 0.0
        self.grad_fn = 0.0
        self.mart_m1 = 0.0
        self.mart_0 = 0.0


class _PathDriver:
    """Small-batch driver with Brownian-bridge stiff retries.

    With shared=True every row receives the identical increment sequence
    (pair and coupled runs); retries halve dt for all rows simultaneously
    and the bridge refinements stay shared as well.
    """

    def __init__(
        self, cfg: SimConfig, rows: int, rng: np.random.Generator, shared: bool = False
    ):
        self.cfg = cfg
        self.engine = Engine(cfg)
        self.rng = rng
        self.rows = rows
        self.shared = shared
        self.budget = _Budget()
        self.retries = 0

    def draw_xi(self) -> np.ndarray:
        n_act = self.engine.active.size
        if n_act == 0:
            return np.zeros((self.rows, 0))
        if self.shared:
            return np.repeat(self.rng.standard_normal((1, n_act)), self.rows, axis=0)
        return self.rng.standard_normal((self.rows, n_act))

    def check_guard(self, grids: np.ndarray | None) -> bool:
        if grids is None:
            return True
        return bool(np.max(np.abs(grids)) <= self.engine.guard)

    def substep(self, states, grids, eta, dt, depth, nl_hook=None):
        """Advance one interval of length dt, splitting on guard violations.

        nl_hook(states, nl_modes) may replace the nonlinearity coefficient
        vector (the coupled driver uses it for the low-mode shift); it is
        re-evaluated on every substep so controls stay left-point exact.
        """
        eng = self.engine
        nl = eng.nonlin_modes(grids) if eng.needs_grid else None
        if nl_hook is not None:
            nl = nl_hook(states, nl, dt, eta)
        cand = eng.advance(states, eta, dt, nl)
        cand_grids = eng.grid(cand) if eng.needs_grid else None
        if not self.check_guard(cand_grids):
            if depth >= self.cfg.max_halvings:
                raise StiffEventError(
                    f"grid sup-norm exceeded guard {eng.guard} after "
                    f"{self.cfg.max_halvings} halvings of dt={self.cfg.dt}"
                )
            self.retries += 1
            half = 0.5 * eta + 0.5 * math.sqrt(dt) * self.engine.scatter_noise(
                self.draw_xi(), 1.0, eta.shape
            )
            states, grids = self.substep(states, grids, half, 0.5 * dt, depth + 1, nl_hook)
            return self.substep(states, grids, eta - half, 0.5 * dt, depth + 1, nl_hook)

        h1a, h2a, gga = eng.h_integrands(states, grids)
        h1b, h2b, ggb = eng.h_integrands(cand, cand_grids)
        w = 0.5 * dt
        b = self.budget
        b.diss_h1 += float(np.sum(h1a + h1b)) * w
        b.diss_h2 += float(np.sum(h2a + h2b)) * w
        b.grad_fn += float(np.sum(gga + ggb)) * w
        m1, m0 = eng.mart_weights(states, eta)
        b.mart_m1 += float(np.sum(m1))
        b.mart_0 += float(np.sum(m0))
        return cand, cand_grids


def _record_observables(states, grids, cfg: SimConfig):
    return {
        "mean": states[..., 0].copy(),
        "norm_m1": np.sqrt(spectral.seminorm_sq_many(states, -1.0)),
        "norm_1": np.sqrt(spectral.seminorm_sq_many(states, 1.0)),
        "sup": np.max(np.abs(grids), axis=-1),
        "energy": potential.free_energy_many(states, cfg.potential, cfg.grid_size),
    }


def simulate(
    x0: ModeVector, cfg: SimConfig, *, rng: np.random.Generator | None = None
) -> Trajectory:
    """Integrate one trajectory and record observables on the save grid.

    The noise stream defaults to the replica-0 stream of cfg.seed, so a
    single run reproduces member 0 of an ensemble with the same config.
    """
    state = _as_state_array(x0, cfg.M)
    if state.ndim != 1:
        raise ValueError("simulate expects a single state")
    _check_mean(state, cfg.c)
    if rng is None:
        rng = noise.stream(cfg.seed, 0)

    driver = _PathDriver(cfg, rows=1, rng=rng)
    eng = driver.engine
    states = state[None, :]
    grids = eng.grid(states) if eng.needs_grid else None
    if not driver.check_guard(grids):
        raise StiffEventError("initial state already exceeds the sup-norm guard")

    marks = save_steps(cfg)
    mark_set = set(int(i) for i in marks)
    times = [0.0]
    saved = [states[0].copy()]
    obs_rows = [_record_observables(states, eng.grid(states) if grids is None else grids, cfg)]

    for i in range(cfg.steps):
        eta = eng.scatter_noise(driver.draw_xi(), cfg.dt, states.shape)
        states, grids = driver.substep(states, grids, eta, cfg.dt, 0)
        if (i + 1) in mark_set:
            times.append((i + 1) * cfg.dt)
            saved.append(states[0].copy())
            g = grids if grids is not None else eng.grid(states)
            obs_rows.append(_record_observables(states, g, cfg))

    observables = {
        name: np.array([row[name][0] for row in obs_rows]) for name in obs_rows[0]
    }
    if np.max(np.abs(observables["mean"] - cfg.c)) > 1e-12:
        raise RuntimeError("mass conservation broken: mean drifted beyond 1e-12")
    b = driver.budget
    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(saved),
        observables=observables,
        diss_h1=b.diss_h1,
        diss_h2=b.diss_h2,
        grad_functional=b.grad_fn,
        mart_m1=b.mart_m1,
        mart_0=b.mart_0,
        config=cfg,
        stiff_retries=driver.retries,
    )


def step(v: ModeVector, dW: ModeVector, cfg: SimConfig) -> ModeVector:
    """One semi-implicit transition with increment dW (variance b_k dt).

    Raises StiffEventError when the input or updated state exceeds the
    sup-norm guard; callers may halve dt and retry with bridged noise.
    """
    eng = Engine(cfg)
    state = _as_state_array(v, cfg.M)[None, :]
    grids = eng.grid(state) if eng.needs_grid else None
    if grids is not None and np.max(np.abs(grids)) > eng.guard:
        raise StiffEventError("input state exceeds the sup-norm guard")
    nl = eng.nonlin_modes(grids) if eng.needs_grid else None
    out = eng.advance(state, dW.coeffs[None, :], cfg.dt, nl)
    if eng.needs_grid and np.max(np.abs(eng.grid(out))) > eng.guard:
        raise StiffEventError("updated state exceeds the sup-norm guard")
    return ModeVector(out[0])


def simulate_pair(
    x0: ModeVector, y0: ModeVector, cfg: SimConfig
) -> tuple[Trajectory, Trajectory, np.ndarray]:
    """Integrate two starts under the identical noise realization.

    Returns both trajectories and the path of |X(t,x) - X(t,y)|_{-1} on the
    save grid.
    """
    xa = _as_state_array(x0, cfg.M)
    ya = _as_state_array(y0, cfg.M)
    _check_mean(xa, cfg.c)
    _check_mean(ya, cfg.c)
    rng = noise.stream(cfg.seed, 0)
    driver = _PathDriver(cfg, rows=2, rng=rng, shared=True)
    eng = driver.engine

    states = np.stack([xa, ya])
    grids = eng.grid(states) if eng.needs_grid else None
    if not driver.check_guard(grids):
        raise StiffEventError("initial state already exceeds the sup-norm guard")

    marks = set(int(i) for i in save_steps(cfg))
    times = [0.0]
    saved = [states.copy()]
    dist = [math.sqrt(spectral.seminorm_sq_many(states[0] - states[1], -1.0))]
    obs_rows = [_record_observables(states, grids if grids is not None else eng.grid(states), cfg)]

    for i in range(cfg.steps):
        eta = eng.scatter_noise(driver.draw_xi(), cfg.dt, states.shape)
        states, grids = driver.substep(states, grids, eta, cfg.dt, 0)
        if (i + 1) in marks:
            times.append((i + 1) * cfg.dt)
            saved.append(states.copy())
            dist.append(math.sqrt(spectral.seminorm_sq_many(states[0] - states[1], -1.0)))
            g = grids if grids is not None else eng.grid(states)
            obs_rows.append(_record_observables(states, g, cfg))

    saved_arr = np.asarray(saved)  # (S, 2, K)
    trajs = []
    for row in (0, 1):
        observables = {
            name: np.array([r[name][row] for r in obs_rows]) for name in obs_rows[0]
        }
        trajs.append(
            Trajectory(
                times=np.asarray(times),
                states=saved_arr[:, row, :],
                observables=observables,
                diss_h1=float("nan"),
                diss_h2=float("nan"),
                grad_functional=float("nan"),
                mart_m1=float("nan"),
                mart_0=float("nan"),
                config=cfg,
            )
        )
    return trajs[0], trajs[1], np.asarray(dist)


def ito_budget_m1(traj: Trajectory, cfg: SimConfig) -> EnergyBudget:
    """Assemble the level -1 dissipation budget of a recorded trajectory.

    bound = |x|_{-1}^2 + T * (Tr_{-1} + P_c(lam)); the dissipation integral
    and martingale were accumulated at every step during integration.
    """
    lam = cfg.potential.lam if cfg.potential.active else 0.0
    q = potential.budget_rate(lam, cfg.c, noise.trace_gamma(cfg.cov, -1.0))
    initial = float(spectral.seminorm_sq_many(traj.states[0], -1.0))
    terminal = float(spectral.seminorm_sq_many(traj.states[-1], -1.0))
    return EnergyBudget(
        terminal_seminorm_sq=terminal,
        initial_seminorm_sq=initial,
        dissipation=traj.diss_h1,
        bound=initial + traj.horizon * q,
        martingale=traj.mart_m1,
    )


def ito_budget_0(traj: Trajectory, cfg: SimConfig) -> EnergyBudget:
    """Assemble the level 0 budget: E int |X|_2^2 <= |x|_0^2 + T Tr_0.

    Also carries the accumulated gradient functional
    2 int (grad X)^2 sum_{k<=n} X^{2k}, which is nonnegative pathwise.
    """
    initial = float(spectral.seminorm_sq_many(traj.states[0], 0.0))
    terminal = float(spectral.seminorm_sq_many(traj.states[-1], 0.0))
    return EnergyBudget(
        terminal_seminorm_sq=terminal,
        initial_seminorm_sq=initial,
        dissipation=traj.diss_h2,
        bound=initial + traj.horizon * noise.trace_gamma(cfg.cov, 0.0),
        martingale=traj.mart_0,
        gradient_functional=traj.grad_functional,
    )


# ---------------------------------------------------------------------------
# batched ensembles
# ---------------------------------------------------------------------------


@dataclass
class EnsembleResult:
    """Per-replica outputs of a batched run."""

    times: np.ndarray  # save-time grid (S,)
    final: np.ndarray  # (R, M+1)
    failed_step: np.ndarray  # (R,), -1 where the replica completed
    norm_m1_sq: np.ndarray | None = None  # (R, S)
    budgets: dict = field(default_factory=dict)  # name -> (R,)
    snapshots: dict = field(default_factory=dict)  # step index -> (R, M+1)

    @property
    def n_failed(self) -> int:
        return int(np.sum(self.failed_step >= 0))


class _NoiseBlocks:
    """Per-replica standard normals, drawn in time blocks (C order, so the
    sequence per replica matches per-step draws from the same stream)."""

    def __init__(self, seed: int, replica_ids, n_active: int, total_steps: int):
        self.gens = [noise.stream(seed, int(r)) for r in replica_ids]
        self.n_active = n_active
        self.total = total_steps
        budget = 8_000_000  # ~64 MB of float64 per block across the batch
        per_step = max(1, len(self.gens) * max(1, n_active))
        self.block = max(1, min(total_steps, budget // per_step))
        self._buf = None
        self._lo = 0
        self._hi = 0

    def normals(self, i: int) -> np.ndarray:
        if self.n_active == 0:
            return np.zeros((len(self.gens), 0))
        if not (self._lo <= i < self._hi):
            self._lo = i
            self._hi = min(self.total, i + self.block)
            span = self._hi - self._lo
            self._buf = np.empty((len(self.gens), span, self.n_active))
            for r, g in enumerate(self.gens):
                self._buf[r] = g.standard_normal((span, self.n_active))
        return self._buf[:, i - self._lo, :]


def _ensemble_worker(
    cfg: SimConfig,
    x0_arr: np.ndarray,  # (R_total, K) starts
    r_lo: int,
    r_hi: int,
    replica_base: int,
    record_norm_path: bool,
    record_budgets: bool,
    snap_set: dict,
    out: EnsembleResult,
    marks: np.ndarray,
):
    eng = Engine(cfg)
    rows = r_hi - r_lo
    states = x0_arr[r_lo:r_hi].copy()
    blocks = _NoiseBlocks(
        cfg.seed, range(replica_base + r_lo, replica_base + r_hi), eng.active.size, cfg.steps
    )
    alive = np.ones(rows, dtype=bool)
    failed = out.failed_step[r_lo:r_hi]
    safe_row = np.zeros(cfg.M + 1)
    safe_row[0] = cfg.c

    grids = eng.grid(states) if eng.needs_grid else None
    if grids is not None:
        bad = np.max(np.abs(grids), axis=-1) > eng.guard
        if np.any(bad):
            raise StiffEventError(
                "initial state exceeds the sup-norm guard",
                failed_replicas=np.flatnonzero(bad) + r_lo,
            )

    if record_budgets:
        acc = {
            k: np.zeros(rows)
            for k in ("diss_h1", "diss_h2", "grad_functional", "mart_m1", "mart_0")
        }
        h1, h2, gg = eng.h_integrands(states, grids)
    else:
        acc = {}

    mark_pos = {int(s): j for j, s in enumerate(marks)}
    if record_norm_path:
        out.norm_m1_sq[r_lo:r_hi, 0] = spectral.seminorm_sq_many(states, -1.0)
    if 0 in snap_set:
        out.snapshots[0][r_lo:r_hi] = states

    for i in range(cfg.steps):
        xi = blocks.normals(i)
        eta = eng.scatter_noise(xi, cfg.dt, states.shape)
        eta[~alive] = 0.0
        nl = eng.nonlin_modes(grids) if eng.needs_grid else None
        if record_budgets:
            m1, m0 = eng.mart_weights(states, eta)
        new_states = eng.advance(states, eta, cfg.dt, nl)
        new_states[~alive] = states[~alive]
        if eng.needs_grid:
            new_grids = eng.grid(new_states)
            bad = alive & (np.max(np.abs(new_grids), axis=-1) > eng.guard)
            if np.any(bad):
                alive &= ~bad
                failed[bad] = i + 1
                new_states[bad] = safe_row
                new_grids[bad] = cfg.c
        else:
            new_grids = None

        if record_budgets:
            h1n, h2n, ggn = eng.h_integrands(new_states, new_grids)
            w = 0.5 * cfg.dt * alive
            acc["diss_h1"] += (h1 + h1n) * w
            acc["diss_h2"] += (h2 + h2n) * w
            acc["grad_functional"] += (gg + ggn) * w
            acc["mart_m1"] += m1 * alive
            acc["mart_0"] += m0 * alive
            h1, h2, gg = h1n, h2n, ggn

        states, grids = new_states, new_grids
        j = mark_pos.get(i + 1)
        if record_norm_path and j is not None:
            out.norm_m1_sq[r_lo:r_hi, j] = spectral.seminorm_sq_many(states, -1.0)
        if (i + 1) in snap_set:
            out.snapshots[i + 1][r_lo:r_hi] = states

    out.final[r_lo:r_hi] = states
    for k, v in acc.items():
        out.budgets[k][r_lo:r_hi] = v


def run_ensemble(
    x0,
    cfg: SimConfig,
    replicas: int,
    *,
    record_norm_path: bool = False,
    record_budgets: bool = False,
    snap_steps=(),
    threads: int = 1,
    replica_base: int = 0,
    strict: bool = True,
) -> EnsembleResult:
    """Integrate `replicas` independent copies with per-replica noise streams.

    x0 is one ModeVector shared by all replicas or an (R, M+1) array of
    per-replica starts.  Stream r is keyed by (cfg.seed, replica_base + r),
    so results are bit-identical for any thread count.  With strict=True a
    stiff replica aborts the run; otherwise it is surfaced in failed_step.
    """
    if isinstance(x0, ModeVector) or np.asarray(x0).ndim == 1:
        base = _as_state_array(x0, cfg.M)
        x0_arr = np.tile(base, (replicas, 1))
    else:
        x0_arr = np.asarray(x0, dtype=np.float64).copy()
        if x0_arr.shape != (replicas, cfg.M + 1):
            raise ValueError(f"x0 batch must have shape ({replicas}, {cfg.M + 1})")
    _check_mean(x0_arr, cfg.c)

    marks = save_steps(cfg)
    snap_steps = sorted(set(int(s) for s in snap_steps))
    for s in snap_steps:
        if not 0 <= s <= cfg.steps:
            raise ValueError(f"snapshot step {s} outside 0..{cfg.steps}")

    out = EnsembleResult(
        times=marks * cfg.dt,
        final=np.empty((replicas, cfg.M + 1)),
        failed_step=np.full(replicas, -1, dtype=np.int64),
        norm_m1_sq=np.empty((replicas, marks.size)) if record_norm_path else None,
        budgets={
            k: np.empty(replicas)
            for k in ("diss_h1", "diss_h2", "grad_functional", "mart_m1", "mart_0")
        }
        if record_budgets
        else {},
        snapshots={s: np.empty((replicas, cfg.M + 1)) for s in snap_steps},
    )

    threads = max(1, int(threads))
    bounds = np.linspace(0, replicas, min(threads, replicas) + 1, dtype=int)
    spans = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def work(span):
        _ensemble_worker(
            cfg, x0_arr, span[0], span[1], replica_base,
            record_norm_path, record_budgets, out.snapshots, out, marks,
        )

    if len(spans) == 1:
        work(spans[0])
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=len(spans)) as pool:
            list(pool.map(work, spans))

    if strict and out.n_failed:
        bad = np.flatnonzero(out.failed_step >= 0)
        raise StiffEventError(
            f"{bad.size} replica(s) exceeded the sup-norm guard "
            f"(first: replica {bad[0]} at step {out.failed_step[bad[0]]})",
            failed_replicas=bad,
        )
    return out
