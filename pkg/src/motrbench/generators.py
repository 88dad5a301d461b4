"""Disturbance generators behind a single round protocol.

Per round the harness calls emit(x_t) to get w_t, steps the plant with the
controller's u_t, then calls observe(u_t).  A generator therefore never
sees the current control before committing its disturbance; the base class
enforces that call order.  All generators except the Gaussian keep
||w_t|| <= W_max.

The adaptive generators (MOTR and OGA) act in residual coordinates: the
plant is recast with the game-optimal feedback as A - B K, the learned
policy reads residual controls r_t = K x_t + u_t, and the disturbance
bias is the game's equilibrium gain W x_t.  Against a controller playing
exactly u = -K x the residuals vanish and the equilibrium generator is
recovered; MOTR's learned component only spends its budget on deviations.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cdg import (
    CdgPolicy,
    hessian_gradient_at_zero,
    project_frobenius,
    rollout_cost_quadratic,
)
from .controllers import HinfSolution
from .lds import CostWeights, LinearSystem
from .online import CollapsedQuadratic, OtrState, default_perturbation_rate
from .trust_region import TrustRegionProblem, solve as tr_solve

__all__ = [
    "GeneratorError",
    "TransformError",
    "DisturbanceGenerator",
    "MotrConfig",
    "AdaptiveCdgGenerator",
    "normalize_budget",
    "scale_to_budget",
    "transform_residual",
    "motr_generator",
    "oga_generator",
    "hinf_generator",
    "sinusoid_generator",
    "gaussian_generator",
    "random_direction_generator",
    "SinusoidGenerator",
]

GAUSSIAN_BUDGET_FACTOR = 1.05


class GeneratorError(RuntimeError):
    """Failure inside a generator round; the message carries the round index."""


class TransformError(RuntimeError):
    """The residual-coordinate state map is not stable."""


def normalize_budget(w: np.ndarray, W_max: float) -> np.ndarray:
    """Clip w onto the norm budget: unchanged if ||w|| <= W_max, else
    rescaled to norm W_max."""
    if not (W_max > 0.0):
        raise ValueError("W_max must be positive")
    w = np.asarray(w, dtype=float)
    norm = float(np.linalg.norm(w))
    if norm <= W_max:
        return w
    return w * (W_max / norm)


def scale_to_budget(w: np.ndarray, W_max: float) -> np.ndarray:
    """Spend the whole budget in the direction of w: W_max * w / ||w||.

    The zero vector stays zero.  The state-feedback generators emit through
    this, so the shared budget does not vary across generators; a generator
    that merely clipped w = W x would spend almost nothing once the
    stabilized state decays, and every comparison against persistent noise
    would be vacuous.
    """
    if not (W_max > 0.0):
        raise ValueError("W_max must be positive")
    w = np.asarray(w, dtype=float)
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        return np.zeros_like(w)
    return w * (W_max / norm)


class DisturbanceGenerator:
    """Base round protocol: emit(x) -> w, then observe(u)."""

    name = "generator"

    def __init__(self):
        self._awaiting_control = False
        self._round = 0

    def emit(self, x: np.ndarray) -> np.ndarray:
        if self._awaiting_control:
            raise GeneratorError(f"round {self._round}: emit called before observe")
        w = self._emit(np.asarray(x, dtype=float))
        self._awaiting_control = True
        return w

    def observe(self, u: np.ndarray) -> None:
        if not self._awaiting_control:
            raise GeneratorError(f"round {self._round}: observe called before emit")
        self._observe(np.asarray(u, dtype=float))
        self._awaiting_control = False
        self._round += 1

    def _emit(self, x):
        raise NotImplementedError

    def _observe(self, u):
        pass


class HinfGenerator(DisturbanceGenerator):
    """Full-budget disturbance along the equilibrium direction W x."""

    name = "hinf"

    def __init__(self, hinf: HinfSolution, W_max: float):
        super().__init__()
        self.W = hinf.W
        self.W_max = float(W_max)

    def _emit(self, x):
        return scale_to_budget(self.W @ x, self.W_max)


class GaussianGenerator(DisturbanceGenerator):
    """i.i.d. normal disturbances scaled so the mean norm is slightly above
    the shared budget (the one unclipped baseline)."""

    name = "gaussian"

    def __init__(self, d_w: int, W_max: float, seed: int):
        super().__init__()
        if not (W_max > 0.0):
            raise ValueError("W_max must be positive")
        self.d_w = d_w
        self.rng = np.random.default_rng(seed)
        mean_norm = math.sqrt(2.0) * math.gamma((d_w + 1) / 2.0) / math.gamma(d_w / 2.0)
        self.scale = GAUSSIAN_BUDGET_FACTOR * W_max / mean_norm

    def _emit(self, x):
        return self.scale * self.rng.standard_normal(self.d_w)


class RandomDirectionGenerator(DisturbanceGenerator):
    """Uniform random direction at full budget each round."""

    name = "random"

    def __init__(self, d_w: int, W_max: float, seed: int):
        super().__init__()
        if not (W_max > 0.0):
            raise ValueError("W_max must be positive")
        self.d_w = d_w
        self.W_max = float(W_max)
        self.rng = np.random.default_rng(seed)

    def _emit(self, x):
        v = self.rng.standard_normal(self.d_w)
        norm = float(np.linalg.norm(v))
        while norm == 0.0:
            v = self.rng.standard_normal(self.d_w)
            norm = float(np.linalg.norm(v))
        return self.W_max * v / norm


class SinusoidGenerator(DisturbanceGenerator):
    """Sinusoid w_t = W_max sin(omega t + phase) v, with (omega, phase, v)
    chosen offline as the candidate maximizing open-loop (u = 0) cumulative
    cost over the horizon.  Ties break to the first candidate in direction,
    then frequency, then phase order."""

    name = "sine"

    def __init__(
        self,
        sys: LinearSystem,
        cw: CostWeights,
        W_max: float,
        T: int,
        freqs: Optional[np.ndarray] = None,
        phases: Optional[np.ndarray] = None,
        n_random_directions: int = 8,
        seed: int = 0,
    ):
        super().__init__()
        if not (W_max > 0.0):
            raise ValueError("W_max must be positive")
        if freqs is None:
            freqs = np.linspace(0.0, np.pi, 16)
        if phases is None:
            phases = 2.0 * np.pi * np.arange(8) / 8.0
        freqs = np.asarray(freqs, dtype=float)
        phases = np.asarray(phases, dtype=float)
        if freqs.size == 0 or phases.size == 0:
            raise ValueError("frequency and phase grids must be non-empty")
        d_w = sys.d_w
        rng = np.random.default_rng(seed)
        dirs = [np.eye(d_w)[i] for i in range(d_w)]
        for _ in range(n_random_directions):
            v = rng.standard_normal(d_w)
            dirs.append(v / np.linalg.norm(v))
        # Candidate order: direction-major, then frequency, then phase.
        omega, phase, vdir = [], [], []
        for v in dirs:
            for om in freqs:
                for ph in phases:
                    omega.append(om)
                    phase.append(ph)
                    vdir.append(v)
        omega = np.array(omega)
        phase = np.array(phase)
        vdir = np.array(vdir)

        X = np.zeros((len(omega), sys.d_x))
        J = np.zeros(len(omega))
        for t in range(T):
            J += np.einsum("ni,ij,nj->n", X, cw.Q, X)
            Wt = (W_max * np.sin(omega * t + phase))[:, None] * vdir
            X = X @ sys.A.T + Wt @ sys.C.T
        best = int(np.argmax(J))
        self.W_max = float(W_max)
        self.omega = float(omega[best])
        self.phase = float(phase[best])
        self.direction = vdir[best]
        self._t = 0

    def _emit(self, x):
        w = self.W_max * math.sin(self.omega * self._t + self.phase) * self.direction
        self._t += 1
        return w


def transform_residual(sys: LinearSystem, hinf: HinfSolution) -> LinearSystem:
    """Residual-coordinate plant (A - B K, B, C); raises TransformError if
    the transformed state map is not strictly stable."""
    Abar = sys.A - sys.B @ hinf.K
    rho = float(np.max(np.abs(np.linalg.eigvals(Abar))))
    if rho >= 1.0:
        raise TransformError(f"residual state map has spectral radius {rho:.6g} >= 1")
    return LinearSystem(Abar, sys.B, sys.C)


@dataclass
class MotrConfig:
    """Adaptive-generator configuration.

    eta and eps default at runtime: eps to 1/T, eta to the nominal
    perturbation rate computed from the first observed quadratic's
    coefficient magnitude.
    """

    T: int
    H: int = 3
    D_M: float = 0.3
    eta: Optional[float] = None
    eps: Optional[float] = None
    W_max: float = 1.0
    residual_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.T < 1 or self.H < 1:
            raise ValueError("T and H must be positive")
        if not (self.D_M > 0.0 and self.W_max > 0.0):
            raise ValueError("D_M and W_max must be positive")
        if self.eta is not None and not (self.eta > 0.0):
            raise ValueError("eta must be positive when given")
        if self.eps is not None and not (self.eps > 0.0):
            raise ValueError("eps must be positive when given")


class AdaptiveCdgGenerator(DisturbanceGenerator):
    """Shared machinery of the MOTR and OGA generators.

    Both emit the budget-scaled w_t along bias(x_t) + sum_i M_t[i] r_{t-i}
    and rebuild the rollout-cost quadratic after observing each control;
    they differ only in how the policy is updated from it.  update is one
    of "motr" (perturbed-leader trust-region step on the accumulated
    Hessians and gradients at zero), "oga" (one projected gradient-ascent
    step at the current policy), or "none" (frozen policy).
    """

    def __init__(
        self,
        sys: LinearSystem,
        cw: CostWeights,
        hinf: HinfSolution,
        cfg: MotrConfig,
        update: str = "motr",
        lr: Optional[float] = None,
    ):
        super().__init__()
        if update not in ("motr", "oga", "none"):
            raise ValueError(f"unknown update rule {update!r}")
        self.name = {"motr": "motr", "oga": "oga", "none": "frozen"}[update]
        self.cfg = cfg
        self.update_rule = update
        self.cw = cw
        H = cfg.H
        if cfg.residual_bias:
            self.base = transform_residual(sys, hinf)
            self.K = hinf.K
            self.Wb = hinf.W
        else:
            rho = float(np.max(np.abs(np.linalg.eigvals(sys.A))))
            if rho >= 1.0:
                raise TransformError(
                    "without the residual transformation the plant must be open-loop stable"
                )
            self.base = sys
            self.K = np.zeros((sys.d_u, sys.d_x))
            self.Wb = None
        self.d_x, self.d_u, self.d_w = sys.d_x, sys.d_u, sys.d_w
        self.n = H * self.d_w * self.d_u
        self.eps = cfg.eps if cfg.eps is not None else 1.0 / cfg.T
        self.rng = np.random.default_rng(cfg.seed)
        self._learner: Optional[OtrState] = None
        if cfg.eta is not None:
            self._make_learner(cfg.eta)
        # Bias contribution of each unrolled step to the rollout state.
        if self.Wb is not None:
            mats = []
            Ak = np.eye(self.d_x)
            for _ in range(H + 1):
                mats.append(Ak @ self.base.C @ self.Wb)
                Ak = self.base.A @ Ak
            self._bias_mats = mats
        else:
            self._bias_mats = None
        self.lr = lr
        self.M = self._initial_policy()
        self._r_hist: list = []  # residual controls, most recent first
        self._x_hist: list = []  # states, most recent first
        self._pending_x: Optional[np.ndarray] = None
        # Quadratics buffered until the control window is fully populated;
        # the perturbation rate is calibrated on their coefficient scale.
        self._pending_quads: list = []
        self._coeff_max = 0.0
        self._warmup_rounds = min(2 * H + 1, max(1, cfg.T - 1))
        # Surrogate-reward audit accumulators.
        self._SP = np.zeros((self.n, self.n))
        self._sp = np.zeros(self.n)
        self._c_sum = 0.0
        self._achieved = 0.0
        self._audited_rounds = 0

    def _make_learner(self, eta: float) -> None:
        self._learner = OtrState(self.n, self.cfg.D_M, eta, self.eps, self.cfg.seed + 1)

    def _initial_policy(self) -> CdgPolicy:
        v = self.rng.standard_normal(self.n)
        norm = float(np.linalg.norm(v))
        if norm > 0.0:
            v *= self.cfg.D_M * self.rng.random() ** (1.0 / self.n) / norm
        return CdgPolicy.from_vec(v, self.cfg.H, self.d_w, self.d_u, self.cfg.D_M)

    def _emit(self, x):
        H = self.cfg.H
        w = np.zeros(self.d_w)
        for i in range(min(H, len(self._r_hist))):
            w += self.M.blocks[i] @ self._r_hist[i]
        if self.Wb is not None:
            w += self.Wb @ x
        self._pending_x = x
        return scale_to_budget(w, self.cfg.W_max)

    def _bias_vec(self) -> Optional[np.ndarray]:
        if self._bias_mats is None:
            return None
        v = np.zeros(self.d_x)
        for a, mat in enumerate(self._bias_mats):
            if a < len(self._x_hist):
                v += mat @ self._x_hist[a]
        return v

    def _observe(self, u):
        H = self.cfg.H
        x = self._pending_x
        r = self.K @ x + u
        window = np.zeros((2 * H + 1, self.d_u))
        for i, past in enumerate(self._r_hist[: 2 * H + 1]):
            window[i] = past
        try:
            rq = rollout_cost_quadratic(
                self.base, self.cw, window, u_now=r, H=H, bias_vec=self._bias_vec()
            )
            hess, grad = hessian_gradient_at_zero(rq)
            self._SP += rq.P
            self._sp += rq.p
            self._c_sum += rq.const
            self._achieved += rq.evaluate(self.M.vec())
            self._audited_rounds += 1
            if self.update_rule == "motr":
                self._coeff_max = max(
                    self._coeff_max, float(np.max(np.abs(rq.P))), float(np.max(np.abs(rq.p)))
                )
                g = CollapsedQuadratic(hess, grad, rq.const)
                if self._learner is None and self.cfg.eta is None:
                    if self._round < self._warmup_rounds:
                        self._pending_quads.append(g)
                    else:
                        self._make_learner(
                            default_perturbation_rate(
                                max(self._coeff_max, 1e-9), self.n, self.cfg.D_M, H, self.cfg.T
                            )
                        )
                if self._learner is not None:
                    for buffered in self._pending_quads:
                        self._learner.observe(buffered)
                    self._pending_quads.clear()
                    self._learner.observe(g)
                    z = self._learner.update()
                    self.M = project_frobenius(
                        CdgPolicy.from_vec(z, H, self.d_w, self.d_u, np.inf), self.cfg.D_M
                    )
            elif self.update_rule == "oga":
                lr0 = self.lr if self.lr is not None else 0.1 * self.cfg.D_M
                step = lr0 / math.sqrt(self._round + 1.0)
                v = self.M.vec()
                g = hess @ v + grad
                gnorm = float(np.linalg.norm(g))
                if gnorm > 0.0:
                    v = v + step * g / gnorm
                self.M = project_frobenius(
                    CdgPolicy.from_vec(v, H, self.d_w, self.d_u, np.inf), self.cfg.D_M
                )
        except (ValueError, RuntimeError) as exc:
            if isinstance(exc, GeneratorError):
                raise
            raise GeneratorError(f"round {self._round}: {exc}") from exc
        self._r_hist.insert(0, r)
        del self._r_hist[2 * self.cfg.H + 1 :]
        self._x_hist.insert(0, x)
        del self._x_hist[self.cfg.H + 2 :]

    def regret_pair(self):
        """(hindsight-best fixed policy value, achieved value) on the
        surrogate rewards; None before any round completed."""
        if self._audited_rounds == 0:
            return None
        sol = tr_solve(TrustRegionProblem(self._SP, self._sp, self.cfg.D_M), self.eps)
        return float(sol.value + self._c_sum), float(self._achieved)


def motr_generator(
    sys: LinearSystem, cw: CostWeights, hinf: HinfSolution, cfg: MotrConfig
) -> AdaptiveCdgGenerator:
    """Perturbed-leader trust-region generator."""
    return AdaptiveCdgGenerator(sys, cw, hinf, cfg, update="motr")


def oga_generator(
    sys: LinearSystem,
    cw: CostWeights,
    hinf: HinfSolution,
    cfg: MotrConfig,
    lr: Optional[float] = None,
) -> AdaptiveCdgGenerator:
    """Online gradient-ascent generator (same structure as MOTR, first-order
    update on the instantaneous surrogate)."""
    return AdaptiveCdgGenerator(sys, cw, hinf, cfg, update="oga", lr=lr)


def hinf_generator(hinf: HinfSolution, W_max: float) -> HinfGenerator:
    return HinfGenerator(hinf, W_max)


def sinusoid_generator(
    sys: LinearSystem,
    cw: CostWeights,
    W_max: float,
    T: int,
    seed: int = 0,
    **grid,
) -> SinusoidGenerator:
    return SinusoidGenerator(sys, cw, W_max, T, seed=seed, **grid)


def gaussian_generator(d_w: int, W_max: float, seed: int) -> GaussianGenerator:
    return GaussianGenerator(d_w, W_max, seed)


def random_direction_generator(d_w: int, W_max: float, seed: int) -> RandomDirectionGenerator:
    return RandomDirectionGenerator(d_w, W_max, seed)
