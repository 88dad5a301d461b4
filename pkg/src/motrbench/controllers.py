"""Baseline controllers the disturbance generators attack.

A controller handle is any object with a ``name`` attribute and an
``act(x) -> u`` method; handles may keep internal memory and must evolve
deterministically.  Provided here:

* LQR: fixed-point iteration on the discrete algebraic Riccati equation
      P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA,   K = (R + B'PB)^{-1} B'PA
* H-infinity: value iteration on the LQ dynamic game with disturbance
  penalty -gamma^2 ||w||^2, gains from the one-step saddle conditions, and
  a bisection on gamma down to the attenuation infimum.  The saddle also
  yields the disturber's equilibrium gain W (w = W x), used as the
  equilibrium disturbance generator elsewhere.
* GPC: disturbance-action controller u = -K x + sum_i N[i] w_hat_{t-i} on
  recovered disturbances, with N adapted by projected gradient steps on a
  truncated counterfactual cost.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cdg import CdgPolicy, affine_state_map, project_frobenius
from .lds import CostWeights, LinearSystem

__all__ = [
    "SynthesisError",
    "BracketingError",
    "HinfSolution",
    "LinearFeedback",
    "GpcController",
    "solve_dare",
    "solve_hinf_game",
    "hinf_bisection",
    "lqr_controller",
    "hinf_controller",
    "gpc_controller",
]


class SynthesisError(RuntimeError):
    """Controller synthesis failed (divergence, loss of stabilizability)."""


class BracketingError(SynthesisError):
    """The bisection bracket does not contain the feasibility boundary."""


def _spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def _check_stabilizable(A: np.ndarray, B: np.ndarray) -> None:
    # PBH test on the unstable eigenvalues.
    d_x = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-9:
            M = np.hstack([A - lam * np.eye(d_x), B])
            if np.linalg.matrix_rank(M) < d_x:
                raise SynthesisError(f"(A, B) not stabilizable: eigenvalue {lam:.4g} uncontrollable")


def solve_dare(sys: LinearSystem, cw: CostWeights, tol: float = 1e-12, max_iter: int = 100000):
    """Value matrix and gain of the infinite-horizon LQR.

    Returns (P, K) with the closed loop A - BK stable.  tol bounds the
    relative entrywise change between successive iterates.
    """
    if np.linalg.eigvalsh(cw.R).min() <= 0.0:
        raise ValueError("R must be positive definite")
    _check_stabilizable(sys.A, sys.B)
    A, B, Q, R = sys.A, sys.B, cw.Q, cw.R
    P = Q.copy()
    for _ in range(max_iter):
        G = R + B.T @ P @ B
        K = np.linalg.solve(G, B.T @ P @ A)
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ K
        Pn = 0.5 * (Pn + Pn.T)
        delta = float(np.max(np.abs(Pn - P)))
        P = Pn
        if delta < tol * (1.0 + float(np.max(np.abs(P)))):
            break
    else:
        raise SynthesisError(f"Riccati iteration did not converge in {max_iter} steps")
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if _spectral_radius(A - B @ K) >= 1.0:
        raise SynthesisError("LQR closed loop is not stable")
    return P, K


@dataclass(frozen=True)
class HinfSolution:
    """Saddle-point solution of the LQ disturbance game at level gamma_star:
    control gain K (u = -Kx), disturbance gain W (w = Wx), value matrix P."""

    P: np.ndarray
    K: np.ndarray
    W: np.ndarray
    gamma_star: float

    def to_json(self) -> dict:
        return {
            "P": self.P.tolist(),
            "K": self.K.tolist(),
            "W": self.W.tolist(),
            "gamma_star": self.gamma_star,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HinfSolution":
        return cls(
            P=np.array(obj["P"], dtype=float),
            K=np.array(obj["K"], dtype=float),
            W=np.array(obj["W"], dtype=float),
            gamma_star=float(obj["gamma_star"]),
        )


def solve_hinf_game(
    sys: LinearSystem,
    cw: CostWeights,
    gamma: float,
    tol: float = 1e-11,
    max_iter: int = 20000,
) -> Optional[HinfSolution]:
    """Value iteration for the disturbance game at attenuation level gamma.

    Returns None when gamma is infeasible: the concavity certificate
    gamma^2 I - C'PC loses positive definiteness, or the value iteration
    blows up.  Raises SynthesisError only on numerical breakdown.
    """
    if not (gamma > 0.0):
        raise ValueError("gamma must be positive")
    if np.linalg.eigvalsh(cw.R).min() <= 0.0:
        raise ValueError("R must be positive definite")
    A, B, C, Q, R = sys.A, sys.B, sys.C, cw.Q, cw.R
    d_x, d_u = sys.d_x, sys.d_u
    I = np.eye(d_x)
    Mg = B @ np.linalg.solve(R, B.T) - (C @ C.T) / gamma**2
    P = Q.copy()
    converged = False
    for _ in range(max_iter):
        if np.linalg.eigvalsh(gamma**2 * np.eye(sys.d_w) - C.T @ P @ C).min() <= 0.0:
            return None
        try:
            Z = np.linalg.solve(I + Mg @ P, A)
        except np.linalg.LinAlgError:
            return None
        Pn = Q + A.T @ P @ Z
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)):
            raise SynthesisError("H-infinity value iteration produced non-finite values")
        if float(np.max(np.abs(Pn))) > 1e12:
            return None
        delta = float(np.max(np.abs(Pn - P)))
        P = Pn
        if delta < tol * (1.0 + float(np.max(np.abs(P)))):
            converged = True
            break
    if not converged:
        return None
    if np.linalg.eigvalsh(gamma**2 * np.eye(sys.d_w) - C.T @ P @ C).min() <= 0.0:
        return None

    # Gains from the joint stationarity of the one-step saddle.
    G = np.block([
        [R + B.T @ P @ B, B.T @ P @ C],
        [C.T @ P @ B, C.T @ P @ C - gamma**2 * np.eye(sys.d_w)],
    ])
    rhs = np.vstack([B.T @ P @ A, C.T @ P @ A])
    try:
        sol = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError as exc:
        raise SynthesisError(f"saddle system is singular: {exc}") from exc
    K = sol[:d_u]
    W = -sol[d_u:]
    if _spectral_radius(A - B @ K + C @ W) >= 1.0:
        raise SynthesisError("game closed loop is not stable at the computed gains")
    return HinfSolution(P=P, K=K, W=W, gamma_star=float(gamma))


def hinf_bisection(
    sys: LinearSystem,
    cw: CostWeights,
    lo: float = 1e-3,
    hi: float = 1e6,
    rel_tol: float = 1e-3,
    safety: float = 1.01,
    max_iter: int = 5000,
) -> HinfSolution:
    """Smallest feasible attenuation level within rel_tol, returned at a 1.01
    safety factor above the bisected infimum."""
    if solve_hinf_game(sys, cw, hi, max_iter=max_iter) is None:
        raise BracketingError(f"gamma = {hi:.4g} is infeasible; enlarge the bracket")
    for _ in range(60):
        if solve_hinf_game(sys, cw, lo, max_iter=max_iter) is None:
            break
        lo /= 4.0
    else:
        # Feasible essentially down to zero: disturbances cannot hurt.
        sol = solve_hinf_game(sys, cw, lo * safety, max_iter=max_iter)
        if sol is None:
            raise SynthesisError("feasibility is not monotone near zero attenuation")
        return sol
    while hi / lo > 1.0 + rel_tol:
        mid = float(np.sqrt(lo * hi))
        if solve_hinf_game(sys, cw, mid, max_iter=max_iter) is None:
            lo = mid
        else:
            hi = mid
    sol = solve_hinf_game(sys, cw, hi * safety, max_iter=max_iter)
    if sol is None:
        raise SynthesisError("safety-factored gamma unexpectedly infeasible")
    return sol


class LinearFeedback:
    """Stateless handle playing u = -K x."""

    def __init__(self, K: np.ndarray, name: str):
        self.K = np.array(K, dtype=float)
        self.name = name

    def act(self, x: np.ndarray) -> np.ndarray:
        return -self.K @ np.asarray(x, dtype=float)


def lqr_controller(sys: LinearSystem, cw: CostWeights) -> LinearFeedback:
    _, K = solve_dare(sys, cw)
    return LinearFeedback(K, "lqr")


def hinf_controller(sol: HinfSolution) -> LinearFeedback:
    return LinearFeedback(sol.K, "hinf")


class GpcController:
    """Gradient perturbation controller.

    Plays u = -K x + sum_i N[i] w_hat_{t-i} on disturbances recovered from
    the observed transitions (w_hat_s = x_{s+1} - A x_s - B u_s, which
    presumes knowledge of A and B).  After each recovered disturbance, N
    takes one projected gradient step on the counterfactual cost of a
    truncated rollout driven by the recent disturbances, evaluated at the
    state and control the current N would have produced.
    """

    def __init__(
        self,
        sys: LinearSystem,
        cw: CostWeights,
        K_base: np.ndarray,
        h: int = 5,
        lr: float = 0.01,
        ball_radius: Optional[float] = None,
    ):
        if h < 1:
            raise ValueError("h must be >= 1")
        K_base = np.array(K_base, dtype=float)
        Abar = sys.A - sys.B @ K_base
        if _spectral_radius(Abar) >= 1.0:
            raise ValueError("K_base must stabilize the plant")
        self.name = "gpc"
        self.sys = sys
        self.cw = cw
        self.K = K_base
        self.h = h
        self.lr = float(lr)
        self.ball = float(ball_radius) if ball_radius is not None else 10.0 * float(
            np.linalg.norm(K_base)
        )
        # Counterfactual plant: recovered disturbances drive the state
        # directly, the policy output enters through B.
        self._mirror = LinearSystem(Abar, np.eye(sys.d_x), sys.B)
        self.N = CdgPolicy.zeros(h, sys.d_u, sys.d_x, self.ball)
        self._whist = []  # recovered disturbances, most recent first
        self._prev = None
        self._t = 0

    def _window(self) -> np.ndarray:
        win = np.zeros((2 * self.h + 1, self.sys.d_x))
        for i, w in enumerate(self._whist[: 2 * self.h + 1]):
            win[i] = w
        return win

    def _policy_sum_map(self, window: np.ndarray) -> np.ndarray:
        # Row r of sum_i N[i] w_hat_{t-i} as a linear map on vec(N).
        d_u, d_x, h = self.sys.d_u, self.sys.d_x, self.h
        eye = np.eye(d_u)
        return np.hstack([np.kron(window[:h, col][None, :], eye) for col in range(d_x)])

    def _update(self) -> None:
        window = self._window()
        Ty, by, _, _ = affine_state_map(self._mirror, window, self.h)
        GL = self._policy_sum_map(window)
        Tv = GL - self.K @ Ty
        bv = -self.K @ by
        m = self.N.vec()
        y = Ty @ m + by
        v = Tv @ m + bv
        grad = 2.0 * (Ty.T @ (self.cw.Q @ y)) + 2.0 * (Tv.T @ (self.cw.R @ v))
        gnorm = float(np.linalg.norm(grad))
        if gnorm > 0.0:
            # Rate lr, but capped so one step never moves farther than
            # lr/sqrt(t): vanishing gradients get a plain gradient step while
            # badly conditioned rounds cannot fling N to the projection ball.
            rate = min(self.lr, self.lr / (np.sqrt(self._t + 1.0) * gnorm))
            m = m - rate * grad
        self.N = project_frobenius(
            CdgPolicy.from_vec(m, self.h, self.sys.d_u, self.sys.d_x, np.inf),
            self.ball,
        )

    def act(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._prev is not None:
            xp, up = self._prev
            w_hat = x - self.sys.A @ xp - self.sys.B @ up
            self._whist.insert(0, w_hat)
            del self._whist[2 * self.h + 1 :]
            self._update()
        u = -self.K @ x
        for i in range(min(self.h, len(self._whist))):
            u = u + self.N.blocks[i] @ self._whist[i]
        self._prev = (x, u)
        self._t += 1
        return u


def gpc_controller(
    sys: LinearSystem,
    cw: CostWeights,
    K_base: np.ndarray,
    h: int = 5,
    lr: Optional[float] = None,
    T: Optional[int] = None,
    ball_radius: Optional[float] = None,
) -> GpcController:
    """GPC handle.  lr scales the normalized step length lr/sqrt(t), so by
    the end of a T-round episode the step size is of order lr/sqrt(T)."""
    if lr is None:
        lr = 0.5
    return GpcController(sys, cw, K_base, h=h, lr=lr, ball_radius=ball_radius)
