"""Safeguarding control: barrier forces, gradient manipulation, gain adaptation.

The safeguarding term added to the learned policy is

    u_s = - K_s R^-1 (L_g psi_{m-1})^T dB/dpsi          (one constraint)

summed over constraints, each with its own gain K_s.  Because B blows up at
the boundary the force grows unboundedly, which is what yields forward
invariance without solving an optimization online.  Two refinements from the
adaptive variant:

* gradient manipulation: the component of the safety gradient parallel to the
  performance gradient sqrt(R^-1) g^T gradV is scaled by (1-mu), reducing the
  safety/performance conflict while preserving the perpendicular (safety
  critical) part;
* gain adaptation: Ks_dot = -Y Ks^2 + gamma exp(-h) l(x, k(x)), projected onto
  [0, Ks_max] — the gain decays when safety is cheap and grows near the
  boundary when the stage cost is large.

Also here: the analytic KKT policy (needs the true fault — a cheating
baseline) and a QP safety filter baseline solved by active-set enumeration.
"""

from dataclasses import dataclass, replace

import numpy as np

from .barrier import eval_barrier

__all__ = [
    "CostWeights",
    "SafeguardConfig",
    "GainState",
    "QPResult",
    "optimal_policy",
    "safeguard_force",
    "gradient_similarity",
    "manipulated_safeguard",
    "hamiltonian_excess",
    "adapt_gain",
    "kkt_policy",
    "kkt_policy_multi",
    "qp_safety_filter",
]

_NORM_TOL = 1e-12


def _sqrtm_spd(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(w)) @ V.T


def _check_spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.max(np.abs(M - M.T)) > 1e-10:
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(M)) <= 0:
        raise ValueError(f"{name} must be positive definite")
    return M


class CostWeights:
    """Quadratic stage cost l(x,u) = x'Qx + u'Ru with cached R^-1, sqrt(R^-1)."""

    def __init__(self, Q, R):
        self.Q = _check_spd(Q, "Q")
        self.R = _check_spd(R, "R")
        self.Rinv = np.linalg.inv(self.R)
        self.Rinv_sqrt = _sqrtm_spd(self.Rinv)

    def stage_cost(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return float(x @ self.Q @ x + u @ self.R @ u)


@dataclass
class SafeguardConfig:
    """Knobs of the (adaptive) safeguarding policy."""
    mu: float = 0.0          # gradient-manipulation parameter, in [0, 1)
    y_gain: float = 0.0      # Y  : gain-decay weight
    gamma_gain: float = 0.0  # gamma: gain-growth weight
    ks_max: float = 1e4      # projection upper bound for K_s
    ks0: float = 1.0
    mode: str = "fixed-gain"  # fixed-gain | adaptive

    def __post_init__(self):
        if not (0.0 <= self.mu < 1.0):
            raise ValueError("mu must lie in [0, 1)")
        if self.y_gain < 0 or self.gamma_gain < 0:
            raise ValueError("Y and gamma must be nonnegative")
        if self.ks_max <= 0:
            raise ValueError("ks_max must be positive")
        if not (0.0 <= self.ks0 <= self.ks_max):
            raise ValueError("need 0 <= ks0 <= ks_max")


@dataclass
class GainState:
    """Safeguarding gain of one constraint, kept in [0, ks_max]."""
    ks: float
    ks_max: float = 1e4

    def __post_init__(self):
        self.ks = float(np.clip(self.ks, 0.0, self.ks_max))


def optimal_policy(gradV, x, system, weights):
    """k(x) = -1/2 R^-1 g(x)^T gradV, the HJB minimizer for the quadratic cost."""
    return -0.5 * weights.Rinv @ (np.asarray(system.g(x)).T @ np.asarray(gradV, dtype=float))


def _barrier_lie(bf, x):
    """(B, dB/dpsi, L_f psi, L_g psi) of the top chain level at x."""
    chain = bf.chain
    B, slope, _ = eval_barrier(bf, x)
    grad = chain.grad(x)
    Lf = float(grad @ chain.system.f(x))
    Lg = np.atleast_1d(grad @ chain.system.g(x))
    return B, slope, Lf, Lg


def safeguard_force(x, barriers, gains, weights):
    """u_s = - sum_j Ks_j R^-1 (L_g psi_j)^T dB_j/dpsi."""
    u = np.zeros(weights.R.shape[0])
    for bf, gain in zip(barriers, gains):
        ks = gain.ks if isinstance(gain, GainState) else float(gain)
        if ks == 0.0:
            # still evaluate so a crossed boundary is reported
            eval_barrier(bf, x)
            continue
        _, slope, _, Lg = _barrier_lie(bf, x)
        u -= ks * (weights.Rinv @ Lg) * slope
    return u


def gradient_similarity(x, gradV, bf, system, weights):
    """Cosine between performance gradient and safety gradient in the sqrt(R^-1) frame.

    Returns 0 when either vector is numerically zero; clamped to [-1, 1].
    """
    S = weights.Rinv_sqrt
    a = S @ (np.asarray(system.g(x)).T @ np.asarray(gradV, dtype=float))
    _, slope, _, Lg = _barrier_lie(bf, x)
    w = S @ (slope * Lg)
    na, nw = np.linalg.norm(a), np.linalg.norm(w)
    if na < _NORM_TOL or nw < _NORM_TOL:
        return 0.0
    return float(np.clip((a @ w) / (na * nw), -1.0, 1.0))


def manipulated_safeguard(x, gradV, bf, gain, weights, mu):
    """Safeguard force with the parallel component scaled by (1-mu).

    Decompose w = sqrt(R^-1) L_g B against a = sqrt(R^-1) g^T gradV; the
    recombined gradient (1-mu)*w_par + w_perp is mapped back out of the
    sqrt(R^-1) frame, i.e. u_s = -Ks sqrt(R^-1) w_tilde.  Falls back to the
    plain force when the performance gradient is numerically zero.
    """
    ks = gain.ks if isinstance(gain, GainState) else float(gain)
    gradV = np.asarray(gradV, dtype=float)
    S = weights.Rinv_sqrt
    _, slope, _, Lg = _barrier_lie(bf, x)
    w = S @ (slope * Lg)
    a = S @ (np.asarray(bf.chain.system.g(x)).T @ gradV)
    if (np.linalg.norm(gradV) < _NORM_TOL or np.linalg.norm(a) < _NORM_TOL
            or np.linalg.norm(w) < _NORM_TOL or mu == 0.0):
        return -ks * (weights.Rinv @ Lg) * slope
    w_par = (a @ w) / (a @ a) * a
    w_tilde = (1.0 - mu) * w_par + (w - w_par)
    return -ks * (S @ w_tilde)


def hamiltonian_excess(x, gradV, bf, gain, weights, mu):
    """Predicted Hamiltonian under the manipulated safeguard.

    H(x, gradV, k* + u_s~) = Ks^2 (1 - 2 rho^2 mu + rho^2 mu^2) ||sqrt(R^-1) L_g B||^2
    assuming gradV solves the HJB (the mu=0 case is the plain Ks^2||.||^2).
    """
    ks = gain.ks if isinstance(gain, GainState) else float(gain)
    rho = gradient_similarity(x, gradV, bf, bf.chain.system, weights)
    _, slope, _, Lg = _barrier_lie(bf, x)
    w = weights.Rinv_sqrt @ (slope * Lg)
    return ks**2 * (1.0 - 2.0 * rho**2 * mu + rho**2 * mu**2) * float(w @ w)


def adapt_gain(gain, x, h_value, stage_cost, cfg, dt):
    """One integration step of Ks_dot = -Y Ks^2 + gamma exp(-h) l, then clip.

    h and the stage cost are frozen over the step (they are state quantities,
    not functions of Ks), so the scalar ODE is autonomous and a plain RK4 step
    applies.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if stage_cost < 0:
        raise ValueError("stage cost must be nonnegative")
    drive = cfg.gamma_gain * np.exp(-h_value) * stage_cost

    def kdot(k):
        return -cfg.y_gain * k * k + drive

    k = gain.ks
    k1 = kdot(k)
    k2 = kdot(k + 0.5 * dt * k1)
    k3 = kdot(k + 0.5 * dt * k2)
    k4 = kdot(k + dt * k3)
    k_new = k + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return replace(gain, ks=float(np.clip(k_new, 0.0, cfg.ks_max)))


def kkt_policy(x, kstar, bf, weights, uf_known, gamma3_gain=1.0):
    """Closed-form single-constraint safe policy from the KKT conditions.

        lam = max((L_f B + L_g B (k* + u_f) - gamma3 psi) / (L_g B R^-1 L_g B^T), 0)
        u   = -lam R^-1 L_g B^T + k*

    Requires the exact fault u_f — this baseline deliberately uses information
    the safeguard does not have.  A degenerate denominator (< 1e-10, i.e. no
    instantaneous control authority) yields lam = 0.
    """
    kstar = np.atleast_1d(np.asarray(kstar, dtype=float))
    uf_known = np.atleast_1d(np.asarray(uf_known, dtype=float))
    psi = bf.chain.value(x)
    _, slope, Lf, Lg = _barrier_lie(bf, x)
    LfB = slope * Lf
    LgB = slope * Lg
    denom = float(LgB @ weights.Rinv @ LgB)
    if denom <= 1e-10:
        return kstar.copy(), 0.0
    num = LfB + float(LgB @ (kstar + uf_known)) - gamma3_gain * psi
    lam = max(num / denom, 0.0)
    return kstar - lam * (weights.Rinv @ LgB), lam


@dataclass
class QPResult:
    u: np.ndarray
    feasible: bool
    multipliers: np.ndarray  # one per constraint, complementary-slack at u
    active: tuple = ()


def _projection_qp(u0, A, b, weights, max_active=2, tol=1e-9):
    """min ||u - u0||_R^2  s.t.  A u >= b, by active-set enumeration.

    Enumerates active sets up to ``max_active`` simultaneous constraints
    (sufficient for the shipped scenarios), skipping singular ones.  If no
    candidate is feasible the least-violating candidate is returned with
    feasible=False.
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    k = A.shape[0]
    Rinv = weights.Rinv

    def violation(u):
        return float(np.max(b - A @ u)) if k else 0.0

    if violation(u0) <= tol:
        return QPResult(u0, True, np.zeros(k))

    from itertools import combinations

    best = None           # (objective, u, lam_full, S)
    least_bad = None      # (violation, u, lam_full, S)
    singles = list(combinations(range(k), 1))
    pairs = list(combinations(range(k), 2)) if max_active >= 2 else []
    for S in singles + pairs:
        As = A[list(S)]
        M = As @ Rinv @ As.T
        try:
            lam_S = 2.0 * np.linalg.solve(M, b[list(S)] - As @ u0)
        except np.linalg.LinAlgError:
            continue
        if np.linalg.cond(M) > 1e12:
            continue
        u = u0 + 0.5 * Rinv @ As.T @ lam_S
        lam_full = np.zeros(k)
        lam_full[list(S)] = lam_S
        v = violation(u)
        if least_bad is None or v < least_bad[0]:
            least_bad = (v, u, lam_full, S)
        if np.all(lam_S >= -tol) and v <= tol:
            obj = float((u - u0) @ weights.R @ (u - u0))
            if best is None or obj < best[0]:
                best = (obj, u, lam_full, S)
    if best is not None:
        return QPResult(best[1], True, np.maximum(best[2], 0.0), best[3])
    v, u, lam_full, S = least_bad
    return QPResult(u, False, np.maximum(lam_full, 0.0), S)


def qp_safety_filter(x, u_nominal, chains, gamma3_gains, weights):
    """Project u_nominal onto the half-spaces L_f psi + L_g psi u >= -gamma3 psi.

    One constraint per chain, each at its top level psi_{m-1}.  Returns a
    QPResult; ``feasible`` False flags a step where every enumerated active
    set violated some constraint (the least-violating input is still
    returned).
    """
    if np.isscalar(gamma3_gains):
        gamma3_gains = [gamma3_gains] * len(chains)
    rows, rhs = [], []
    for chain, c3 in zip(chains, gamma3_gains):
        grad = chain.grad(x)
        Lf = float(grad @ chain.system.f(x))
        Lg = np.atleast_1d(grad @ chain.system.g(x))
        psi = chain.value(x)
        rows.append(Lg)
        rhs.append(-c3 * psi - Lf)
    return _projection_qp(u_nominal, np.array(rows), np.array(rhs), weights)


def kkt_policy_multi(x, kstar, barriers, weights, uf_known, gamma3_gain=1.0):
    """Multi-constraint version of kkt_policy via the same active-set QP.

    Minimizing the Hamiltonian subject to  L_f B_j + L_g B_j (u + u_f) <=
    gamma3 psi_j  is the R-metric projection of k* onto those half-spaces.
    Returns (u, lam per constraint, residual per constraint at the final u);
    complementary slackness lam_j * residual_j = 0 holds per constraint.
    """
    kstar = np.atleast_1d(np.asarray(kstar, dtype=float))
    uf_known = np.atleast_1d(np.asarray(uf_known, dtype=float))
    rows, rhs = [], []
    cache = []
    for bf in barriers:
        psi = bf.chain.value(x)
        _, slope, Lf, Lg = _barrier_lie(bf, x)
        LfB, LgB = slope * Lf, slope * Lg
        # LgB u <= gamma3 psi - LfB - LgB uf   ->   (-LgB) u >= -(rhs)
        r = gamma3_gain * psi - LfB - float(LgB @ uf_known)
        rows.append(-LgB)
        rhs.append(-r)
        cache.append((LfB, LgB, gamma3_gain * psi))
    result = _projection_qp(kstar, np.array(rows), np.array(rhs), weights)
    # paper-convention multiplier: u = k* - lam R^-1 LgB^T  ->  lam = lam_qp / 2
    lams = result.multipliers / 2.0
    residuals = np.array([
        LfB + float(LgB @ (result.u + uf_known)) - g3psi
        for (LfB, LgB, g3psi) in cache
    ])
    return result.u, lams, residuals
