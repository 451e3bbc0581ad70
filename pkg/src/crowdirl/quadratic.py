"""Stagewise quadratic approximation of trajectory costs.

Each agent's running cost is approximated at every step of a nominal
trajectory by a quadratic in the deviation variables (dx, du): a symmetric
curvature matrix, a gradient and an offset, obtained by central finite
differences. Costs whose control dependence is declared exactly quadratic
take a fast path that differentiates only the state block.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .features import StageCostModel
from .trajectory import CONTROL_DIM, STATE_DIM, Trajectory

DEFAULT_FD_STEP = 1e-3
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class QuadraticStage:
    """Quadratic cost c + l.z + z.H.z/2 in z = (dx, du) for one timestep."""

    H: np.ndarray  # (d, d), symmetric
    l: np.ndarray  # (d,)
    c: float
    state_dim: int

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        l = np.array(self.l, dtype=float).ravel()
        d = l.size
        if H.shape != (d, d):
            raise ValidationError(f"H must be ({d}, {d}), got {H.shape}")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(l)) and np.isfinite(self.c)):
            raise ValidationError("quadratic stage contains non-finite values")
        if np.max(np.abs(H - H.T), initial=0.0) > SYMMETRY_TOL:
            raise ValidationError("H is not symmetric within tolerance")
        if not 0 < self.state_dim <= d:
            raise ValidationError(f"state_dim {self.state_dim} out of range for d={d}")
        H.setflags(write=False)
        l.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "l", l)

    @property
    def control_dim(self) -> int:
        return self.l.size - self.state_dim

    @property
    def H_xx(self) -> np.ndarray:
        return self.H[: self.state_dim, : self.state_dim]

    @property
    def H_xu(self) -> np.ndarray:
        return self.H[: self.state_dim, self.state_dim :]

    @property
    def H_uu(self) -> np.ndarray:
        return self.H[self.state_dim :, self.state_dim :]

    @property
    def l_x(self) -> np.ndarray:
        return self.l[: self.state_dim]

    @property
    def l_u(self) -> np.ndarray:
        return self.l[self.state_dim :]


@dataclass(frozen=True)
class TerminalQuadratic:
    """Quadratic state-only cost c + l.dx + dx.H.dx/2 at the horizon end."""

    H: np.ndarray  # (n, n)
    l: np.ndarray  # (n,)
    c: float

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        l = np.array(self.l, dtype=float).ravel()
        if H.shape != (l.size, l.size):
            raise ValidationError(f"H must be square matching l, got {H.shape} vs {l.size}")
        if np.max(np.abs(H - H.T), initial=0.0) > SYMMETRY_TOL:
            raise ValidationError("terminal H is not symmetric within tolerance")
        H.setflags(write=False)
        l.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "l", l)

    @classmethod
    def zero(cls, n: int) -> "TerminalQuadratic":
        return cls(np.zeros((n, n)), np.zeros(n), 0.0)


@dataclass(frozen=True)
class LinearDynamics:
    """Time-invariant joint double integrator: x' = A x + sum_i B_i u_i."""

    A: np.ndarray  # (4k, 4k)
    B: tuple[np.ndarray, ...]  # k matrices (4k, 2)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = tuple(np.array(b, dtype=float) for b in self.B)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValidationError(f"A must be square, got {A.shape}")
        for b in B:
            if b.shape != (n, CONTROL_DIM):
                raise ValidationError(f"each B_i must be ({n}, 2), got {b.shape}")
            b.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def k(self) -> int:
        return len(self.B)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]


def linearize_dynamics(k: int, dt: float) -> LinearDynamics:
    """Exact discrete double-integrator blocks for k agents at step dt."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt!r}")
    a_blk = np.array(
        [[1.0, 0.0, dt, 0.0],
         [0.0, 1.0, 0.0, dt],
         [0.0, 0.0, 1.0, 0.0],
         [0.0, 0.0, 0.0, 1.0]]
    )
    b_blk = np.array(
        [[0.5 * dt * dt, 0.0],
         [0.0, 0.5 * dt * dt],
         [dt, 0.0],
         [0.0, dt]]
    )
    n = STATE_DIM * k
    A = np.zeros((n, n))
    B = []
    for i in range(k):
        sl = slice(STATE_DIM * i, STATE_DIM * (i + 1))
        A[sl, sl] = a_blk
        Bi = np.zeros((n, CONTROL_DIM))
        Bi[sl, :] = b_blk
        B.append(Bi)
    return LinearDynamics(A, tuple(B))


def _fd_steps(z0: np.ndarray, h: float) -> np.ndarray:
    return h * np.maximum(1.0, np.abs(z0))


def fd_gradient(f, z0: np.ndarray, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference gradient of a batch-capable scalar function.

    f maps (n, d) -> (n,); steps are h scaled by max(1, |coordinate|).
    """
    z0 = np.asarray(z0, dtype=float).ravel()
    d = z0.size
    steps = _fd_steps(z0, h)
    probes = np.concatenate([z0 + np.diag(steps), z0 - np.diag(steps)], axis=0)
    vals = _eval_batch(f, probes)
    return (vals[:d] - vals[d:]) / (2.0 * steps)


def fd_hessian(f, z0: np.ndarray, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference Hessian, symmetrized; same batching contract."""
    z0 = np.asarray(z0, dtype=float).ravel()
    d = z0.size
    steps = _fd_steps(z0, h)
    E = np.diag(steps)

    probes = [z0[None, :]]
    probes.append(z0 + E)
    probes.append(z0 - E)
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    for i, j in pairs:
        probes.append((z0 + E[i] + E[j])[None, :])
        probes.append((z0 + E[i] - E[j])[None, :])
        probes.append((z0 - E[i] + E[j])[None, :])
        probes.append((z0 - E[i] - E[j])[None, :])
    vals = _eval_batch(f, np.concatenate(probes, axis=0))

    f0 = vals[0]
    fp = vals[1 : 1 + d]
    fm = vals[1 + d : 1 + 2 * d]
    H = np.zeros((d, d))
    H[np.diag_indices(d)] = (fp - 2.0 * f0 + fm) / steps**2
    off = vals[1 + 2 * d :].reshape(-1, 4)
    for (i, j), (fpp, fpm, fmp, fmm) in zip(pairs, off):
        val = (fpp - fpm - fmp + fmm) / (4.0 * steps[i] * steps[j])
        H[i, j] = val
        H[j, i] = val
    return 0.5 * (H + H.T)


def _eval_batch(f, probes: np.ndarray) -> np.ndarray:
    vals = np.asarray(f(probes), dtype=float)
    if vals.shape != (probes.shape[0],):
        raise ValidationError(
            f"cost function must map (n, d) -> (n,), got output shape {vals.shape}"
        )
    if not np.all(np.isfinite(vals)):
        bad = probes[~np.isfinite(vals)][0]
        raise ValidationError(f"cost function returned non-finite value near {bad}")
    return vals


def taylor_expand(costfn, x_nom, u_nom, h: float = DEFAULT_FD_STEP) -> QuadraticStage:
    """Quadratic fit of costfn(x, u) around a nominal point.

    costfn must accept batched inputs: x (n, 4k) and u (n, 2) -> (n,).
    """
    x_nom = np.asarray(x_nom, dtype=float).ravel()
    u_nom = np.asarray(u_nom, dtype=float).ravel()
    nx = x_nom.size
    z0 = np.concatenate([x_nom, u_nom])

    def f(z: np.ndarray) -> np.ndarray:
        return costfn(z[:, :nx], z[:, nx:])

    c = float(_eval_batch(f, z0[None, :])[0])
    l = fd_gradient(f, z0, h)
    H = fd_hessian(f, z0, h)
    return QuadraticStage(H=H, l=l, c=c, state_dim=nx)


def expand_along(
    costfn,
    nominal: Trajectory,
    agent: int,
    h: float = DEFAULT_FD_STEP,
    control_weight: float | None = None,
) -> list[QuadraticStage]:
    """One QuadraticStage per step of the nominal trajectory.

    With control_weight given, the control dependence is taken as exactly
    w*||u||^2 with no state coupling: only the state block is differenced,
    and the control blocks are filled in analytically.
    """
    stages = []
    for t in range(nominal.horizon):
        x_nom = nominal.states[t]
        u_nom = nominal.agent_controls(agent)[t]
        if control_weight is None:
            stages.append(taylor_expand(costfn, x_nom, u_nom, h))
        else:
            stages.append(_expand_separable(costfn, x_nom, u_nom, h, control_weight))
    return stages


def _expand_separable(
    costfn, x_nom: np.ndarray, u_nom: np.ndarray, h: float, w: float
) -> QuadraticStage:
    x_nom = np.asarray(x_nom, dtype=float).ravel()
    u_nom = np.asarray(u_nom, dtype=float).ravel()
    nx, nu = x_nom.size, u_nom.size

    def f_state(x: np.ndarray) -> np.ndarray:
        return costfn(x, np.broadcast_to(u_nom, (x.shape[0], nu)))

    c = float(_eval_batch(f_state, x_nom[None, :])[0])
    lx = fd_gradient(f_state, x_nom, h)
    Hxx = fd_hessian(f_state, x_nom, h)

    d = nx + nu
    H = np.zeros((d, d))
    H[:nx, :nx] = Hxx
    H[nx:, nx:] = 2.0 * w * np.eye(nu)
    l = np.concatenate([lx, 2.0 * w * u_nom])
    return QuadraticStage(H=H, l=l, c=c, state_dim=nx)


def expand_terminal(state_costfn, x_nom, h: float = DEFAULT_FD_STEP) -> TerminalQuadratic:
    """Quadratic fit of a state-only cost at the horizon-end nominal state."""
    x_nom = np.asarray(x_nom, dtype=float).ravel()
    c = float(_eval_batch(state_costfn, x_nom[None, :])[0])
    l = fd_gradient(state_costfn, x_nom, h)
    H = fd_hessian(state_costfn, x_nom, h)
    return TerminalQuadratic(H=H, l=l, c=c)


def expand_model_along(
    model: StageCostModel, nominal: Trajectory, h: float = DEFAULT_FD_STEP
) -> tuple[list[QuadraticStage], TerminalQuadratic]:
    """Stages plus terminal quadratic for one agent's StageCostModel."""
    stages = expand_along(
        model, nominal, model.agent, h, control_weight=model.control_weight
    )
    terminal = expand_terminal(model.terminal_cost, nominal.states[-1], h)
    return stages, terminal
