"""Control-affine plants and matched disturbance/fault signals.

Plants have the form

    xdot = f(x) + g(x) (u + u_f(t))

where u_f is an unknown additive input disturbance (actuator fault).  The
concrete systems used by the built-in scenarios are an inverted pendulum and a
1- or 2-axis double integrator ("mobile robot").
"""

import numpy as np

__all__ = [
    "SystemModel",
    "FaultSignal",
    "make_pendulum",
    "make_double_integrator",
    "eval_fault",
    "fd_jacobian",
]


def fd_jacobian(func, x, out_dim=None):
    """Central-difference Jacobian of ``func`` at ``x``.

    Step h = max(1e-6, 1e-6*||x||), the usual truncation/rounding balance.
    """
    x = np.asarray(x, dtype=float)
    h = max(1e-6, 1e-6 * float(np.linalg.norm(x)))
    f0 = np.asarray(func(x), dtype=float)
    if out_dim is None:
        out_dim = f0.shape[0]
    jac = np.empty((out_dim, x.shape[0]))
    for j in range(x.shape[0]):
        dx = np.zeros_like(x)
        dx[j] = h
        jac[:, j] = (np.asarray(func(x + dx)) - np.asarray(func(x - dx))) / (2.0 * h)
    return jac


class SystemModel:
    """Control-affine plant xdot = f(x) + g(x) u.

    Parameters
    ----------
    n, p : state and input dimensions
    f : callable state -> (n,) drift
    g : callable state -> (n, p) input map
    jacobian_f : callable state -> (n, n), optional.  Falls back to central
        finite differences when not supplied.
    g_norm_bound : upper bound asserted on ||g(x)|| along visited states
        (lower bound is "nonzero"); checked by the simulator, not here.
    """

    def __init__(self, n, p, f, g, jacobian_f=None, name="system", g_norm_bound=1e3):
        self.n = int(n)
        self.p = int(p)
        self.f = f
        self.g = g
        self.name = name
        self.g_norm_bound = float(g_norm_bound)
        if jacobian_f is None:
            self.jacobian_f = lambda x: fd_jacobian(self.f, np.asarray(x, float), self.n)
        else:
            self.jacobian_f = jacobian_f

        f0 = np.asarray(self.f(np.zeros(self.n)), dtype=float)
        if f0.shape != (self.n,):
            raise ValueError(f"f must return shape ({self.n},), got {f0.shape}")
        if np.linalg.norm(f0) > 1e-12:
            raise ValueError("drift must vanish at the origin: ||f(0)|| = %g" % np.linalg.norm(f0))
        g0 = np.asarray(self.g(np.zeros(self.n)), dtype=float)
        if g0.shape != (self.n, self.p):
            raise ValueError(f"g must return shape ({self.n},{self.p}), got {g0.shape}")

    def __repr__(self):
        return f"SystemModel({self.name}, n={self.n}, p={self.p})"


def make_pendulum(mass, length, gravity):
    """Inverted pendulum: x = (theta, theta_dot), single torque input.

        theta_ddot = (gravity/length) sin(theta) + u / (mass length^2)

    State values are treated as raw numbers (sin applied directly).
    """
    if mass <= 0 or length <= 0 or gravity <= 0:
        raise ValueError("mass, length, gravity must all be positive")
    a = gravity / length
    b = 1.0 / (mass * length**2)

    def f(x):
        return np.array([x[1], a * np.sin(x[0])])

    def g(x):
        return np.array([[0.0], [b]])

    def jac(x):
        return np.array([[0.0, 1.0], [a * np.cos(x[0]), 0.0]])

    return SystemModel(2, 1, f, g, jacobian_f=jac, name="pendulum")


def make_double_integrator(axes):
    """Double integrator with ``axes`` independent axes.

    State ordering (p_1..p_axes, v_1..v_axes); pdot = v, vdot = u.
    """
    if axes not in (1, 2):
        raise ValueError("axes must be 1 or 2")
    n = 2 * axes
    A = np.zeros((n, n))
    A[:axes, axes:] = np.eye(axes)
    B = np.zeros((n, axes))
    B[axes:, :] = np.eye(axes)

    def f(x):
        return A @ np.asarray(x, dtype=float)

    def g(x):
        return B

    return SystemModel(n, axes, f, g, jacobian_f=lambda x: A,
                       name=f"double-integrator-{axes}d")


class FaultSignal:
    """Additive input disturbance u_f(t) with an analytic time derivative.

    kinds:
      zero          u_f = 0
      constant      u_f = value
      sinusoid-sum  per channel: offset + sum_k a_k sin(w_k t + phi_k)
      user-table    piecewise-linear interpolation of (t, value) samples

    Declared bounds eta1 >= sup||u_f||, eta2 >= sup||u_f'|| are computed from
    the parameterization (conservative for sinusoid sums) so they can be
    checked against dense sampling rather than assumed.
    """

    def __init__(self, kind, p, value=None, offset=None, terms=None,
                 times=None, values=None):
        self.kind = kind
        self.p = int(p)
        if kind == "zero":
            self.eta1 = 0.0
            self.eta2 = 0.0
        elif kind == "constant":
            self.value = np.atleast_1d(np.asarray(value, dtype=float))
            if self.value.shape != (self.p,):
                raise ValueError("constant fault value has wrong dimension")
            self.eta1 = float(np.linalg.norm(self.value, np.inf))
            self.eta2 = 0.0
        elif kind == "sinusoid-sum":
            self.offset = np.zeros(self.p) if offset is None else np.atleast_1d(np.asarray(offset, float))
            # terms: list of (channel, amplitude, angular frequency, phase)
            self.terms = [(int(c), float(a), float(w), float(ph)) for (c, a, w, ph) in (terms or [])]
            amp = np.abs(self.offset).copy()
            damp = np.zeros(self.p)
            for c, a, w, ph in self.terms:
                amp[c] += abs(a)
                damp[c] += abs(a * w)
            self.eta1 = float(np.max(amp)) if self.p else 0.0
            self.eta2 = float(np.max(damp)) if self.p else 0.0
        elif kind == "user-table":
            self.times = np.asarray(times, dtype=float)
            self.values = np.asarray(values, dtype=float).reshape(len(self.times), self.p)
            if not np.all(np.diff(self.times) > 0):
                raise ValueError("table times must be strictly increasing")
            self.eta1 = float(np.max(np.abs(self.values))) if self.values.size else 0.0
            slopes = np.diff(self.values, axis=0) / np.diff(self.times)[:, None]
            self.eta2 = float(np.max(np.abs(slopes))) if slopes.size else 0.0
        else:
            raise ValueError(f"unknown fault kind {kind!r}")

    def __call__(self, t):
        return eval_fault(self, t)


def eval_fault(signal, t):
    """Return (u_f(t), u_f'(t)) for a FaultSignal."""
    if t < 0:
        raise ValueError("fault evaluated at negative time")
    p = signal.p
    if signal.kind == "zero":
        return np.zeros(p), np.zeros(p)
    if signal.kind == "constant":
        return signal.value.copy(), np.zeros(p)
    if signal.kind == "sinusoid-sum":
        val = signal.offset.copy()
        der = np.zeros(p)
        for c, a, w, ph in signal.terms:
            val[c] += a * np.sin(w * t + ph)
            der[c] += a * w * np.cos(w * t + ph)
        return val, der
    if signal.kind == "user-table":
        tt = signal.times
        if t < tt[0] or t > tt[-1]:
            raise ValueError(f"table fault queried at t={t} outside [{tt[0]}, {tt[-1]}]")
        i = min(np.searchsorted(tt, t, side="right"), len(tt) - 1)
        lo = max(i - 1, 0)
        hi = min(lo + 1, len(tt) - 1)
        if hi == lo:
            return signal.values[lo].copy(), np.zeros(p)
        w = (t - tt[lo]) / (tt[hi] - tt[lo])
        val = (1 - w) * signal.values[lo] + w * signal.values[hi]
        der = (signal.values[hi] - signal.values[lo]) / (tt[hi] - tt[lo])
        return val, der
    raise ValueError(f"unknown fault kind {signal.kind!r}")
