"""Entropy-regularized linear-quadratic dynamic game solver.

A backward recursion stacks every agent's first-order optimality condition at
each timestep into one coupled linear system, yielding simultaneous affine
feedback laws (a feedback Nash point of the quadratic game). Each agent's
policy is Gaussian around its feedback mean; the covariance is the tempered
inverse of that agent's control-space curvature of its Q-function. Along
near-straight nominal trajectories this curvature can lose positive
definiteness, in which case the covariance is repaired by the smallest
uniform diagonal shift that restores a configurable eigenvalue floor. The
repair trades modeled decision randomness for numerical tractability and is
recorded per stage in the solver diagnostics.

Rollouts draw controls from per-(seed, rollout) Philox streams, so sampled
trajectory sets are bit-reproducible for a given seed regardless of batching
or thread count.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InternalError, SolverError, ValidationError
from .features import ProximityConfig, StageCostModel, stage_cost_models
from .quadratic import (
    DEFAULT_FD_STEP,
    LinearDynamics,
    QuadraticStage,
    TerminalQuadratic,
    expand_model_along,
    linearize_dynamics,
)
from .rng import substream
from .trajectory import (
    CONTROL_DIM,
    DEFAULT_U_MAX,
    ScenarioSpec,
    Trajectory,
    clamp_control,
    constant_velocity_rollout,
    propagate_joint,
)

MAX_GAIN_CONDITION = 1e12
PINV_CUTOFF = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the game solve.

    entropy_temp scales policy covariance (decision randomness); eps_psd is
    the eigenvalue floor enforced on covariances; max_outer_iters > 1 enables
    re-expansion of the cost around the latest mean rollout, with outer_tol
    the mean-trajectory change at which that loop stops.
    """

    eps_psd: float = 1e-6
    entropy_temp: float = 1.0
    max_outer_iters: int = 1
    outer_tol: float = 1e-6

    def __post_init__(self):
        if not self.eps_psd > 0:
            raise ValidationError(f"eps_psd must be positive, got {self.eps_psd!r}")
        if not self.entropy_temp > 0:
            raise ValidationError(f"entropy_temp must be positive, got {self.entropy_temp!r}")
        if self.max_outer_iters < 1:
            raise ValidationError("max_outer_iters must be >= 1")


@dataclass(frozen=True)
class PolicyStage:
    """Affine Gaussian feedback at one step: u = kff - K (x - x_nom) + noise."""

    K: np.ndarray  # (2, 4k)
    kff: np.ndarray  # (2,)
    Sigma: np.ndarray  # (2, 2)

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        kff = np.array(self.kff, dtype=float).ravel()
        Sigma = np.array(self.Sigma, dtype=float)
        if K.ndim != 2 or K.shape[0] != CONTROL_DIM:
            raise ValidationError(f"K must be (2, 4k), got {K.shape}")
        if kff.shape != (CONTROL_DIM,):
            raise ValidationError(f"kff must be length 2, got {kff.shape}")
        if Sigma.shape != (CONTROL_DIM, CONTROL_DIM):
            raise ValidationError(f"Sigma must be 2x2, got {Sigma.shape}")
        for name, arr in (("K", K), ("kff", kff), ("Sigma", Sigma)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"PolicyStage.{name} contains non-finite values")
        if np.max(np.abs(Sigma - Sigma.T)) > 1e-9:
            raise ValidationError("Sigma must be symmetric")
        for arr in (K, kff, Sigma):
            arr.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "kff", kff)
        object.__setattr__(self, "Sigma", Sigma)


@dataclass
class SolverDiagnostics:
    """Per-solve record of covariance repairs: (timestep, agent, shift)."""

    horizon: int = 0
    k: int = 0
    events: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def conditioned_stages(self) -> int:
        return len(self.events)

    def as_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "agents": self.k,
            "conditioned_stages": self.conditioned_stages,
            "total_stages": self.horizon * self.k,
            "events": [
                {"t": t, "agent": i, "shift": s} for (t, i, s) in self.events
            ],
        }


@dataclass(frozen=True)
class PolicySequence:
    """Time-varying feedback policies of all agents plus their reference path.

    stages[i][t] is agent i's policy at step t; deviations are measured from
    nominal_states, the trajectory the quadratic stages were expanded around.
    """

    stages: tuple[tuple[PolicyStage, ...], ...]
    nominal_states: np.ndarray  # (T+1, 4k)
    dt: float
    diagnostics: SolverDiagnostics = field(default_factory=SolverDiagnostics)

    def __post_init__(self):
        if not self.stages or not self.stages[0]:
            raise ValidationError("policy sequence must cover >= 1 agent and >= 1 step")
        T = len(self.stages[0])
        if any(len(s) != T for s in self.stages):
            raise ValidationError("all agents must share the horizon")
        nominal = np.array(self.nominal_states, dtype=float)
        n = self.stages[0][0].K.shape[1]
        if nominal.shape != (T + 1, n):
            raise ValidationError(
                f"nominal_states must be ({T + 1}, {n}), got {nominal.shape}"
            )
        nominal.setflags(write=False)
        object.__setattr__(self, "nominal_states", nominal)
        object.__setattr__(self, "stages", tuple(tuple(s) for s in self.stages))

    @property
    def k(self) -> int:
        return len(self.stages)

    @property
    def horizon(self) -> int:
        return len(self.stages[0])


def min_eigenvalue(M: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-9 * scale:
        raise ValidationError("matrix is not symmetric within tolerance")
    return float(np.linalg.eigvalsh(M)[0])


def condition_covariance(sigma_raw: np.ndarray, eps_psd: float) -> np.ndarray:
    """Minimal uniform diagonal shift making the eigenvalues >= eps_psd.

    Returns sigma_raw + s*I with s = max(0, eps_psd - lambda_min), the
    smallest such shift; already well-conditioned inputs pass through
    unchanged. Idempotent.
    """
    sigma_raw = np.asarray(sigma_raw, dtype=float)
    lam = min_eigenvalue(sigma_raw)
    shift = max(0.0, eps_psd - lam)
    if shift == 0.0:
        return sigma_raw.copy()
    return sigma_raw + shift * np.eye(sigma_raw.shape[0])


def _covariance_shift(sigma_raw: np.ndarray, eps_psd: float) -> float:
    return max(0.0, eps_psd - float(np.linalg.eigvalsh(sigma_raw)[0]))


def solve_lq_game(
    dyn: LinearDynamics,
    stages: Sequence[Sequence[QuadraticStage]],
    cfg: SolverConfig = SolverConfig(),
    terminal: Sequence[TerminalQuadratic] | None = None,
    nominal: Trajectory | None = None,
) -> PolicySequence:
    """Backward recursion over stacked first-order conditions.

    stages[i][t] is agent i's quadratic cost at step t in deviations from the
    nominal; terminal (optional, per agent) seeds the value recursion at the
    horizon end. The returned policies act on deviations from the nominal
    trajectory (identically zero reference when none is given).
    """
    k = dyn.k
    n = dyn.state_dim
    if len(stages) != k:
        raise ValidationError(f"need stage sequences for {k} agents, got {len(stages)}")
    T = len(stages[0])
    if T < 1 or any(len(s) != T for s in stages):
        raise ValidationError("all agents must supply the same horizon T >= 1")
    for i in range(k):
        for st in stages[i]:
            if st.state_dim != n or st.control_dim != CONTROL_DIM:
                raise ValidationError(
                    f"stage dims ({st.state_dim}+{st.control_dim}) do not match dynamics ({n}+2)"
                )
    if terminal is None:
        terminal = [TerminalQuadratic.zero(n) for _ in range(k)]
    if len(terminal) != k:
        raise ValidationError(f"need {k} terminal quadratics, got {len(terminal)}")
    if nominal is not None and (nominal.horizon != T or nominal.states.shape[1] != n):
        raise ValidationError("nominal trajectory does not match stages/dynamics")

    A = dyn.A
    B = dyn.B
    Z = [terminal[i].H.copy() for i in range(k)]
    zeta = [terminal[i].l.copy() for i in range(k)]
    diag = SolverDiagnostics(horizon=T, k=k)
    out: list[list[PolicyStage]] = [[] for _ in range(k)]

    for t in range(T - 1, -1, -1):
        st = [stages[i][t] for i in range(k)]
        BtZ = [B[i].T @ Z[i] for i in range(k)]  # (2, n) each

        # Control-space curvature of each agent's Q-function.
        Huu_q = [st[i].H_uu + BtZ[i] @ B[i] for i in range(k)]
        Huu_q = [0.5 * (M + M.T) for M in Huu_q]

        # Stacked stationarity system: rows are agents' gradients wrt own u.
        S = np.zeros((CONTROL_DIM * k, CONTROL_DIM * k))
        Yk = np.zeros((CONTROL_DIM * k, n))
        yff = np.zeros(CONTROL_DIM * k)
        for i in range(k):
            r = slice(CONTROL_DIM * i, CONTROL_DIM * (i + 1))
            for j in range(k):
                c = slice(CONTROL_DIM * j, CONTROL_DIM * (j + 1))
                S[r, c] = Huu_q[i] if i == j else BtZ[i] @ B[j]
            Yk[r] = st[i].H_xu.T + BtZ[i] @ A
            yff[r] = st[i].l_u + B[i].T @ zeta[i]

        if np.linalg.cond(S) > MAX_GAIN_CONDITION:
            raise SolverError("coupled gain system is numerically singular", timestep=t)
        sol = np.linalg.solve(S, np.concatenate([Yk, yff[:, None]], axis=1))
        K_all, alpha_all = sol[:, :-1], sol[:, -1]

        K = [K_all[CONTROL_DIM * i : CONTROL_DIM * (i + 1)] for i in range(k)]
        alpha = [alpha_all[CONTROL_DIM * i : CONTROL_DIM * (i + 1)] for i in range(k)]
        u_nom = (
            nominal.controls[t]
            if nominal is not None
            else np.zeros((k, CONTROL_DIM))
        )

        for i in range(k):
            sigma_raw = cfg.entropy_temp * _robust_inverse(Huu_q[i])
            sigma_raw = 0.5 * (sigma_raw + sigma_raw.T)
            shift = _covariance_shift(sigma_raw, cfg.eps_psd)
            needs_repair = shift > 0.0 or min_eigenvalue(Huu_q[i]) < cfg.eps_psd
            if needs_repair:
                sigma = condition_covariance(sigma_raw, cfg.eps_psd)
                diag.events.append((t, i, shift))
            else:
                sigma = sigma_raw
            out[i].append(PolicyStage(K=K[i], kff=u_nom[i] - alpha[i], Sigma=sigma))

        # Closed-loop value recursion for every agent.
        F = A - sum(B[j] @ K[j] for j in range(k))
        beta = -sum(B[j] @ alpha[j] for j in range(k))
        for i in range(k):
            Ki, ai = K[i], alpha[i]
            Z_new = (
                st[i].H_xx
                + Ki.T @ st[i].H_uu @ Ki
                - st[i].H_xu @ Ki
                - Ki.T @ st[i].H_xu.T
                + F.T @ Z[i] @ F
            )
            zeta_new = (
                st[i].l_x
                - st[i].H_xu @ ai
                + Ki.T @ (st[i].H_uu @ ai - st[i].l_u)
                + F.T @ (zeta[i] + Z[i] @ beta)
            )
            Z[i] = 0.5 * (Z_new + Z_new.T)
            zeta[i] = zeta_new

    for seq in out:
        seq.reverse()
    nominal_states = (
        nominal.states if nominal is not None else np.zeros((T + 1, n))
    )
    return PolicySequence(
        stages=tuple(tuple(seq) for seq in out),
        nominal_states=nominal_states,
        dt=nominal.dt if nominal is not None else 1.0,
        diagnostics=diag,
    )


def _robust_inverse(M: np.ndarray) -> np.ndarray:
    """Inverse, falling back to a cutoff pseudo-inverse for singular input."""
    try:
        if abs(np.linalg.det(M)) < 1e-300:
            raise np.linalg.LinAlgError
        return np.linalg.inv(M)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(M, rcond=PINV_CUTOFF)


def solve_scenario(
    models: Sequence[StageCostModel],
    spec: ScenarioSpec,
    cfg: SolverConfig = SolverConfig(),
    fd_step: float = DEFAULT_FD_STEP,
) -> PolicySequence:
    """Expand every agent's cost along the constant-velocity nominal and solve.

    With cfg.max_outer_iters > 1, re-expands around the latest mean rollout
    until the mean trajectory moves less than cfg.outer_tol.
    """
    if len(models) != spec.k:
        raise ValidationError(f"need {spec.k} cost models, got {len(models)}")
    dyn = linearize_dynamics(spec.k, spec.dt)
    nominal = constant_velocity_rollout(spec)
    policies = None
    for it in range(cfg.max_outer_iters):
        expansions = [expand_model_along(m, nominal, fd_step) for m in models]
        policies = solve_lq_game(
            dyn,
            [e[0] for e in expansions],
            cfg,
            terminal=[e[1] for e in expansions],
            nominal=nominal,
        )
        if it + 1 == cfg.max_outer_iters:
            break
        refit = mean_rollout(policies, spec)
        if float(np.max(np.abs(refit.states - nominal.states))) < cfg.outer_tol:
            break
        nominal = refit
    if policies is None:  # pragma: no cover - max_outer_iters >= 1
        raise InternalError("solver loop did not run")
    return policies


def _rollout_batch(
    policies: PolicySequence,
    spec: ScenarioSpec,
    noise: np.ndarray | None,
    u_max: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate M rollouts at once; noise is (M, T, k, 2) standard normals."""
    T, k = policies.horizon, policies.k
    n = policies.nominal_states.shape[1]
    if spec.k != k or spec.horizon != T:
        raise ValidationError("scenario does not match the policy sequence")
    M = 1 if noise is None else noise.shape[0]
    chol = _stage_cholesky(policies) if noise is not None else None

    states = np.empty((M, T + 1, n))
    controls = np.empty((M, T, k, CONTROL_DIM))
    states[:, 0] = spec.x0.as_array()
    # broadcast-and-reduce instead of matmul: reduction trees then depend only
    # on the row length, so rollout m is bit-identical for any batch size M
    for t in range(T):
        dx = states[:, t] - policies.nominal_states[t]
        for i in range(k):
            stg = policies.stages[i][t]
            u = stg.kff - np.sum(dx[:, None, :] * stg.K, axis=-1)
            if noise is not None:
                u = u + np.sum(noise[:, t, i][:, None, :] * chol[i][t], axis=-1)
            controls[:, t, i] = clamp_control(u, u_max)
        states[:, t + 1] = propagate_joint(states[:, t], controls[:, t], spec.dt)
    return states, controls


def _stage_cholesky(policies: PolicySequence) -> list[list[np.ndarray]]:
    chol = []
    for i in range(policies.k):
        per_agent = []
        for t, stg in enumerate(policies.stages[i]):
            try:
                per_agent.append(np.linalg.cholesky(stg.Sigma))
            except np.linalg.LinAlgError as exc:
                raise InternalError(
                    f"covariance at (t={t}, agent={i}) is not positive definite; "
                    "it must have been conditioned at solve time"
                ) from exc
        chol.append(per_agent)
    return chol


def mean_rollout(
    policies: PolicySequence, spec: ScenarioSpec, u_max: float = DEFAULT_U_MAX
) -> Trajectory:
    """Deterministic rollout under the feedback means (zero policy noise)."""
    states, controls = _rollout_batch(policies, spec, None, u_max)
    return Trajectory(states[0], controls[0], spec.dt)


def sample_rollouts(
    policies: PolicySequence,
    spec: ScenarioSpec,
    M: int,
    seed: int,
    u_max: float = DEFAULT_U_MAX,
) -> list[Trajectory]:
    """Draw M stochastic rollouts; bit-deterministic for a given seed.

    Rollout m consumes the Philox stream keyed by (seed, m); the draw for
    (step t, agent i) sits at a fixed counter offset inside that stream, so
    results do not depend on M, batching or scheduling.
    """
    if M < 1:
        raise ValidationError(f"M must be >= 1, got {M}")
    T, k = policies.horizon, policies.k
    noise = np.empty((M, T, k, CONTROL_DIM))
    for m in range(M):
        noise[m] = substream(seed, m).standard_normal((T, k, CONTROL_DIM))
    states, controls = _rollout_batch(policies, spec, noise, u_max)
    return [Trajectory(states[m], controls[m], spec.dt) for m in range(M)]


def build_policies(
    thetas,
    spec: ScenarioSpec,
    solver_cfg: SolverConfig = SolverConfig(),
    proximity: ProximityConfig = ProximityConfig(),
    fd_step: float = DEFAULT_FD_STEP,
) -> PolicySequence:
    """Convenience wrapper: weight vectors -> solved policies for a scenario."""
    return solve_scenario(stage_cost_models(thetas, spec, proximity), spec, solver_cfg, fd_step)
