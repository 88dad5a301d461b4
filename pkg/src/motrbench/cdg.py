"""Control-disturbance generator policies and the quadratic form of their
truncated-rollout cost.

A policy with history H maps the last H controls to a disturbance,
w_t = sum_i M[i] u_{t-i} + bias.  Unrolling the plant H+1 steps expresses
a state as a linear function of the last 2H+1 controls through a stack of
transfer matrices; with a single repeated policy the truncated-rollout
cost becomes an explicit quadratic in the flattened policy, which is what
the online learner consumes.

Index conventions (fixed by the requirement that unrolled_state reproduce
direct simulation exactly, and pinned by the calibration tests):

* A control window is ordered most recent first.  For a target state x_tau
  the window is (u_{tau-1}, ..., u_{tau-2H-1}) and the unroll starts H+1
  steps back at x_{tau-H-2+1} = x_{tau-H-1}:

      x_tau = A^{H+1} x_{tau-H-1} + sum_{i=0}^{2H} psi[i] u_{tau-1-i}

* The unroll spans H+1 plant steps, so H+1 per-step policies are required,
  passed oldest first.  psi[i] = A^i B [i <= H]
  + sum_{m=1}^{H} A^{i-m} C M_(s)[m] [0 <= i-m <= H], where M_(s) is the
  policy of the step whose control is u_{tau-1-(i-m)}.

* Policies are flattened column-major over the vertically stacked
  (H d_w, d_u) block matrix: vec index = col*(H*d_w) + (block-1)*d_w + row.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lds import CostWeights, LinearSystem, stage_cost

__all__ = [
    "CdgPolicy",
    "TransferStack",
    "RolloutQuadratic",
    "InstabilityError",
    "project_frobenius",
    "transfer_stack",
    "unrolled_state",
    "approx_state",
    "approx_cost",
    "affine_state_map",
    "rollout_cost_quadratic",
    "hessian_gradient_at_zero",
]


class InstabilityError(RuntimeError):
    """The rollout quadratic requires a strictly stable state map."""


@dataclass(frozen=True)
class CdgPolicy:
    """Disturbance policy: blocks[i-1] multiplies the control i steps back.

    The stacked Frobenius norm of the blocks must stay within
    frobenius_bound; the bias is not counted against the bound.
    """

    blocks: tuple
    bias: np.ndarray
    frobenius_bound: float

    def __post_init__(self):
        blocks = tuple(np.array(b, dtype=float) for b in self.blocks)
        if not blocks:
            raise ValueError("policy needs at least one block")
        shape = blocks[0].shape
        if len(shape) != 2:
            raise ValueError("blocks must be matrices")
        for b in blocks:
            if b.shape != shape:
                raise ValueError("all blocks must share one shape")
            if not np.all(np.isfinite(b)):
                raise ValueError("blocks must be finite")
            b.setflags(write=False)
        bias = np.array(self.bias, dtype=float)
        if bias.shape != (shape[0],):
            raise ValueError(f"bias must have shape ({shape[0]},), got {bias.shape}")
        bias.setflags(write=False)
        if not (self.frobenius_bound > 0.0):
            raise ValueError("frobenius_bound must be positive")
        norm = math.sqrt(sum(float(np.sum(b * b)) for b in blocks))
        if norm > self.frobenius_bound * (1.0 + 1e-9):
            raise ValueError(
                f"stacked Frobenius norm {norm:.6g} exceeds bound {self.frobenius_bound:.6g}"
            )
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "frobenius_bound", float(self.frobenius_bound))

    @property
    def H(self) -> int:
        return len(self.blocks)

    @property
    def d_w(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def d_u(self) -> int:
        return self.blocks[0].shape[1]

    def frobenius_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(b * b)) for b in self.blocks))

    def stacked(self) -> np.ndarray:
        return np.vstack(self.blocks)

    def vec(self) -> np.ndarray:
        return self.stacked().ravel(order="F")

    @classmethod
    def zeros(cls, H: int, d_w: int, d_u: int, frobenius_bound: float) -> "CdgPolicy":
        return cls(
            tuple(np.zeros((d_w, d_u)) for _ in range(H)),
            np.zeros(d_w),
            frobenius_bound,
        )

    @classmethod
    def from_vec(
        cls,
        v: np.ndarray,
        H: int,
        d_w: int,
        d_u: int,
        frobenius_bound: float,
        bias: Optional[np.ndarray] = None,
    ) -> "CdgPolicy":
        v = np.asarray(v, dtype=float)
        if v.shape != (H * d_w * d_u,):
            raise ValueError(f"vector must have length {H * d_w * d_u}")
        stacked = v.reshape((H * d_w, d_u), order="F")
        blocks = tuple(stacked[i * d_w : (i + 1) * d_w].copy() for i in range(H))
        if bias is None:
            bias = np.zeros(d_w)
        return cls(blocks, bias, frobenius_bound)

    def disturbance(
        self,
        past_controls: Sequence[np.ndarray],
        x: Optional[np.ndarray] = None,
        bias_gain: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """sum_i blocks[i-1] @ past_controls[i-1] + bias, with past controls
        most recent first.  When bias_gain is given the constant bias is
        replaced by the state-dependent term bias_gain @ x."""
        if len(past_controls) != self.H:
            raise ValueError(f"need exactly {self.H} past controls, got {len(past_controls)}")
        w = np.zeros(self.d_w)
        for b, u in zip(self.blocks, past_controls):
            u = np.asarray(u, dtype=float)
            if u.shape != (self.d_u,):
                raise ValueError(f"controls must have shape ({self.d_u},)")
            w += b @ u
        if bias_gain is not None:
            if x is None:
                raise ValueError("state x required for a state-dependent bias")
            w += np.asarray(bias_gain, dtype=float) @ np.asarray(x, dtype=float)
        else:
            w += self.bias
        return w


def project_frobenius(policy: CdgPolicy, bound: float) -> CdgPolicy:
    """Radially project the blocks onto the Frobenius ball; bias untouched."""
    if not (bound > 0.0):
        raise ValueError("bound must be positive")
    norm = policy.frobenius_norm()
    if norm <= bound * (1.0 + 1e-12):
        return CdgPolicy(policy.blocks, policy.bias, bound)
    scale = bound / norm
    return CdgPolicy(tuple(b * scale for b in policy.blocks), policy.bias, bound)


@dataclass(frozen=True)
class TransferStack:
    """psi[i] maps the control i steps before the target state (see module
    docstring for the exact convention)."""

    psi: tuple
    H: int

    def __post_init__(self):
        psi = tuple(np.asarray(m, dtype=float) for m in self.psi)
        if len(psi) != 2 * self.H + 1:
            raise ValueError(f"expected {2 * self.H + 1} transfer matrices")
        object.__setattr__(self, "psi", psi)


def transfer_stack(sys: LinearSystem, policies: Sequence[CdgPolicy]) -> TransferStack:
    """Transfer matrices of an H+1-step unroll under per-step policies.

    policies holds the H+1 policies in play at the unrolled steps, oldest
    first.  All must share (H, d_w, d_u) matching the plant.
    """
    if not policies:
        raise ValueError("need policies")
    H = policies[0].H
    if len(policies) != H + 1:
        raise ValueError(f"need H+1 = {H + 1} per-step policies, got {len(policies)}")
    for pol in policies:
        if pol.H != H or pol.d_w != sys.d_w or pol.d_u != sys.d_u:
            raise ValueError("policy dimensions must match the plant and each other")
    A, B, C = sys.A, sys.B, sys.C
    coeffs = [np.zeros((sys.d_x, sys.d_u)) for _ in range(2 * H + 1)]
    for j, pol in enumerate(policies):
        age = H - j  # window index of this step's own control
        coeffs = [A @ c for c in coeffs]
        coeffs[age] = coeffs[age] + B
        for m in range(1, H + 1):
            coeffs[age + m] = coeffs[age + m] + C @ pol.blocks[m - 1]
    return TransferStack(tuple(coeffs), H)


def unrolled_state(
    sys: LinearSystem,
    x_past: np.ndarray,
    stack: TransferStack,
    controls: Sequence[np.ndarray],
) -> np.ndarray:
    """A^{H+1} x_past + sum_i psi[i] controls[i] with controls most recent
    first (length 2H+1)."""
    H = stack.H
    if len(controls) != 2 * H + 1:
        raise ValueError(f"need 2H+1 = {2 * H + 1} controls, got {len(controls)}")
    x_past = np.asarray(x_past, dtype=float)
    if x_past.shape != (sys.d_x,):
        raise ValueError(f"x_past must have shape ({sys.d_x},)")
    out = np.linalg.matrix_power(sys.A, H + 1) @ x_past
    for psi_i, u in zip(stack.psi, controls):
        out = out + psi_i @ np.asarray(u, dtype=float)
    return out


def approx_state(
    sys: LinearSystem,
    policies: Sequence[CdgPolicy],
    controls: Sequence[np.ndarray],
) -> np.ndarray:
    """Truncated-rollout state: the unroll started from zero instead of the
    true state H+1 steps back."""
    stack = transfer_stack(sys, policies)
    return unrolled_state(sys, np.zeros(sys.d_x), stack, controls)


def approx_cost(cw: CostWeights, y: np.ndarray, u: np.ndarray) -> float:
    """Stage cost evaluated on the truncated-rollout state."""
    return stage_cost(cw, y, u)


def _stable_spectral_radius(sys: LinearSystem) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(sys.A))))


def affine_state_map(
    sys: LinearSystem,
    window: np.ndarray,
    H: int,
    bias_vec: Optional[np.ndarray] = None,
):
    """(T, b) with truncated-rollout state y = T vec(M) + b for a stationary
    policy M, given the 2H+1 most-recent-first window of controls.

    bias_vec is any fixed state contribution (e.g. from per-step bias
    disturbances already aggregated by the caller); it is simply added to b.
    """
    window = np.asarray(window, dtype=float)
    if window.shape != (2 * H + 1, sys.d_u):
        raise ValueError(f"window must have shape ({2 * H + 1}, {sys.d_u}), got {window.shape}")
    d_x, d_u, d_w = sys.d_x, sys.d_u, sys.d_w
    A = sys.A

    a_pow_c = np.empty((H + 1, d_x, d_w))
    a_pow_b = np.empty((H + 1, d_x, d_u))
    a_pow_c[0] = sys.C
    a_pow_b[0] = sys.B
    for k in range(1, H + 1):
        a_pow_c[k] = A @ a_pow_c[k - 1]
        a_pow_b[k] = A @ a_pow_b[k - 1]

    # Block m of the map collects sum_k A^k C weighted by window[m+k].
    idx = np.arange(1, H + 1)[None, :] + np.arange(H + 1)[:, None]  # (H+1, H)
    w_slices = window[idx]  # (H+1, H, d_u)
    Tb = np.einsum("kxw,kml->xmwl", a_pow_c, w_slices)  # (d_x, H, d_w, d_u)
    T = Tb.transpose(0, 3, 1, 2).reshape(d_x, d_u * H * d_w)

    b = np.einsum("kxu,ku->x", a_pow_b, window[: H + 1])
    if bias_vec is not None:
        bias_vec = np.asarray(bias_vec, dtype=float)
        if bias_vec.shape != (d_x,):
            raise ValueError(f"bias_vec must have shape ({d_x},)")
        b = b + bias_vec
    return T, b, a_pow_c, a_pow_b


@dataclass(frozen=True)
class RolloutQuadratic:
    """Truncated-rollout cost as a quadratic in the flattened policy:
    g(M) = vec(M)' P vec(M) + p' vec(M) + const."""

    P: np.ndarray
    p: np.ndarray
    const: float
    H: int
    d_x: int
    d_w: int
    d_u: int
    window: np.ndarray
    a_pow_c: np.ndarray
    a_pow_b: np.ndarray

    @property
    def n(self) -> int:
        return self.H * self.d_w * self.d_u

    def C_block(self, i: int) -> np.ndarray:
        """Block row [A^{i-1}C ... ] selecting policy blocks: block m holds
        A^{i-m} C when 0 <= i-m <= H, else zero."""
        out = np.zeros((self.d_x, self.H * self.d_w))
        for m in range(1, self.H + 1):
            k = i - m
            if 0 <= k <= self.H:
                out[:, (m - 1) * self.d_w : m * self.d_w] = self.a_pow_c[k]
        return out

    def D_block(self, i: int) -> np.ndarray:
        """A^i B for i <= H, zero beyond."""
        if 0 <= i <= self.H:
            return self.a_pow_b[i]
        return np.zeros((self.d_x, self.d_u))

    def U(self, i: int, j: int) -> np.ndarray:
        """Outer product window[j] window[i]' of the paired controls."""
        return np.outer(self.window[j], self.window[i])

    def evaluate(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"expected flattened policy of length {self.n}")
        return float(v @ self.P @ v + self.p @ v + self.const)

    def evaluate_policy(self, policy: CdgPolicy) -> float:
        return self.evaluate(policy.vec())


def rollout_cost_quadratic(
    sys: LinearSystem,
    cw: CostWeights,
    window: np.ndarray,
    u_now: np.ndarray,
    H: int,
    bias_vec: Optional[np.ndarray] = None,
) -> RolloutQuadratic:
    """Quadratic coefficients of the truncated-rollout cost.

    window holds the 2H+1 controls driving the rollout (most recent first,
    the current control excluded); u_now is the current control, entering
    only through the u'Ru constant.  bias_vec is the aggregated fixed
    disturbance contribution to the rollout state, folded into the affine
    and constant parts so the result stays a pure quadratic in the policy.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    if cw.d_x != sys.d_x or cw.d_u != sys.d_u:
        raise ValueError("cost weights do not match the plant dimensions")
    rho = _stable_spectral_radius(sys)
    if rho >= 1.0:
        raise InstabilityError(f"state map has spectral radius {rho:.6g} >= 1")
    u_now = np.asarray(u_now, dtype=float)
    if u_now.shape != (sys.d_u,):
        raise ValueError(f"u_now must have shape ({sys.d_u},)")

    T, b, a_pow_c, a_pow_b = affine_state_map(sys, window, H, bias_vec)
    Qb = cw.Q @ b
    P = T.T @ cw.Q @ T
    p = 2.0 * (T.T @ Qb)
    const = float(b @ Qb + u_now @ cw.R @ u_now)
    window = np.array(window, dtype=float)
    window.setflags(write=False)
    return RolloutQuadratic(
        P=P,
        p=p,
        const=const,
        H=H,
        d_x=sys.d_x,
        d_w=sys.d_w,
        d_u=sys.d_u,
        window=window,
        a_pow_c=a_pow_c,
        a_pow_b=a_pow_b,
    )


def hessian_gradient_at_zero(rq: RolloutQuadratic):
    """Hessian P + P' and gradient p of the rollout cost at the zero policy;
    the quantities accumulated by the online learner."""
    return rq.P + rq.P.T, rq.p.copy()
