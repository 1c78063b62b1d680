"""High-relative-degree state constraints and reciprocal barriers.

A scalar safety function h defines the safe set {h(x) > 0}.  When the input
only appears after m differentiations of h along the dynamics (relative degree
m), the constraint is reduced to a relative-degree-one surrogate through the
chain

    psi_0 = h,    psi_i = psi_{i-1}_dot + alpha_i(psi_{i-1}),   i = 1..m-1,

with class-K functions alpha_i.  Safety of the intersection of the level sets
{psi_i > 0} is then enforced through a reciprocal barrier built on the top
level psi_{m-1}:

    B = 1/psi_{m-1}               (reciprocal form, default)
    B = (1/psi - 1/psi_ref)^2     (shifted-square form, psi_ref = psi_{m-1}(0))

Both blow up as psi_{m-1} -> 0+, which is what gives the safeguarding force
its unbounded authority at the boundary.
"""

import numpy as np

from .dynamics import fd_jacobian

__all__ = [
    "LinearAlpha",
    "ConstraintSpec",
    "PsiChain",
    "BarrierFunction",
    "BoundaryCrossedError",
    "RelativeDegreeError",
    "FeasibilityReport",
    "build_chain",
    "eval_chain",
    "lie_derivatives",
    "eval_barrier",
    "initial_feasibility",
    "halfspace_constraint",
    "ball_exclusion_constraint",
    "ball_inclusion_constraint",
]


class BoundaryCrossedError(RuntimeError):
    """Raised when a barrier is evaluated at psi_{m-1} <= 0."""

    def __init__(self, label, psi_value):
        self.label = label
        self.psi_value = psi_value
        super().__init__(f"constraint {label!r}: barrier evaluated at psi={psi_value:.6g} <= 0")


class RelativeDegreeError(ValueError):
    """Input appears at a chain level below the declared relative degree."""

    def __init__(self, label, level, magnitude):
        self.label = label
        self.level = level
        super().__init__(
            f"constraint {label!r}: ||L_g psi_{level}|| = {magnitude:.3g} != 0, "
            f"inconsistent with the declared relative degree"
        )


class LinearAlpha:
    """Linear class-K function alpha(s) = lam*s, lam > 0."""

    def __init__(self, lam):
        self.lam = float(lam)
        if self.lam <= 0:
            raise ValueError("class-K gain must be positive")

    def __call__(self, s):
        return self.lam * s

    def derivative(self, s):
        return self.lam


def _check_class_k(alpha):
    """Sample-grid check that alpha is strictly increasing with alpha(0)=0."""
    if abs(alpha(0.0)) > 1e-12:
        raise ValueError("class-K function must satisfy alpha(0)=0")
    grid = np.linspace(-5.0, 5.0, 21)
    vals = np.array([alpha(s) for s in grid])
    if not np.all(np.diff(vals) > 0):
        raise ValueError("class-K function must be strictly increasing")


class ConstraintSpec:
    """Declaration of one state constraint h(x) > 0.

    Parameters
    ----------
    h, grad_h : safety function and its gradient (state -> scalar / n-vector)
    relative_degree : m >= 1
    alphas : m-1 class-K functions (or positive gains, wrapped into
        LinearAlpha); level i uses alphas[i-1]
    hess_h : optional Hessian of h; enables the analytic gradient of psi_1
        (otherwise finite differences are used for levels >= 1)
    """

    def __init__(self, h, grad_h, relative_degree, alphas=(), label="constraint",
                 hess_h=None):
        self.h = h
        self.grad_h = grad_h
        self.m = int(relative_degree)
        self.label = label
        self.hess_h = hess_h
        if self.m < 1:
            raise ValueError("relative degree must be >= 1")
        alphas = [a if callable(a) else LinearAlpha(a) for a in alphas]
        if len(alphas) != self.m - 1:
            raise ValueError(f"need {self.m - 1} class-K functions, got {len(alphas)}")
        for a in alphas:
            _check_class_k(a)
        self.alphas = alphas


class PsiChain:
    """Evaluators for psi_0..psi_{m-1} and their gradients.

    psi_i is input-free for i < m by the relative-degree property, so the
    recursion only involves the drift:  psi_i = grad(psi_{i-1}).f + alpha_i.

    Gradients: level 0 is the user's grad_h; level 1 is analytic whenever
    hess_h and jacobian_f are available (grad psi_1 = H_h f + J_f^T grad_h +
    alpha' grad_h); deeper or Hessian-less levels fall back to central finite
    differences of the level value.
    """

    def __init__(self, spec, system):
        self.spec = spec
        self.system = system
        self.label = spec.label
        self.m = spec.m
        self._value_fns = [spec.h]
        self._grad_fns = [spec.grad_h]
        for i in range(1, self.m):
            self._value_fns.append(self._make_value(i))
            self._grad_fns.append(self._make_grad(i))

    def _make_value(self, i):
        prev_grad = self._grad_fns[i - 1]
        prev_val = self._value_fns[i - 1]
        alpha = self.spec.alphas[i - 1]
        f = self.system.f

        def value(x):
            return float(np.dot(prev_grad(x), f(x))) + alpha(prev_val(x))

        return value

    def _make_grad(self, i):
        spec, system = self.spec, self.system
        if i == 1 and spec.hess_h is not None:
            alpha = spec.alphas[0]

            def grad(x):
                gh = np.asarray(spec.grad_h(x), dtype=float)
                return (np.asarray(spec.hess_h(x), dtype=float) @ system.f(x)
                        + system.jacobian_f(x).T @ gh
                        + alpha.derivative(spec.h(x)) * gh)

            return grad

        value_fn = self._value_fns[i]

        def grad(x):
            return fd_jacobian(lambda y: np.atleast_1d(value_fn(y)), np.asarray(x, float), 1)[0]

        return grad

    def value(self, x, level=None):
        if level is None:
            level = self.m - 1
        return self._value_fns[level](x)

    def grad(self, x, level=None):
        if level is None:
            level = self.m - 1
        return np.asarray(self._grad_fns[level](x), dtype=float)

    def values(self, x):
        """All m level values, cheapest path (no gradients of the top level)."""
        return np.array([fn(x) for fn in self._value_fns])


def build_chain(spec, system, probe_states=None, tol=1e-7):
    """Build the psi chain and verify the declared relative degree.

    The verification is probabilistic: on a handful of probe states we check
    that the input does not appear before level m-1, i.e.
    ||grad(psi_i)^T g(x)|| ~ 0 for i < m-1.
    """
    chain = PsiChain(spec, system)
    if probe_states is None:
        rng = np.random.default_rng(12345)
        probe_states = 0.5 * rng.standard_normal((8, system.n))
    for i in range(spec.m - 1):
        for x in probe_states:
            lg = chain.grad(x, i) @ system.g(x)
            scale = 1.0 + np.linalg.norm(chain.grad(x, i)) * np.linalg.norm(system.g(x))
            mag = float(np.linalg.norm(lg)) / scale
            if mag > tol:
                raise RelativeDegreeError(spec.label, i, mag)
    return chain


def eval_chain(chain, x):
    """List of (psi_i value, grad psi_i) for i = 0..m-1."""
    return [(chain.value(x, i), chain.grad(x, i)) for i in range(chain.m)]


def lie_derivatives(chain, x):
    """(L_f psi_{m-1}, L_g psi_{m-1}) at x; Lg is a p-row."""
    grad = chain.grad(x)
    Lf = float(grad @ chain.system.f(x))
    Lg = grad @ chain.system.g(x)
    return Lf, np.atleast_1d(Lg)


class BarrierFunction:
    """Reciprocal barrier on the top chain level.

    form 'reciprocal':     B = 1/psi,              dB/dpsi = -1/psi^2
    form 'shifted-square': B = (1/psi - 1/psi_ref)^2 with psi_ref = psi(origin),
                           so B(0) = 0, B >= 0, B -> inf at the boundary.
    """

    def __init__(self, chain, form="reciprocal"):
        if form not in ("reciprocal", "shifted-square"):
            raise ValueError(f"unknown barrier form {form!r}")
        self.chain = chain
        self.form = form
        self.label = chain.label
        if form == "shifted-square":
            self.psi_ref = chain.value(np.zeros(chain.system.n))
            if self.psi_ref <= 0:
                raise ValueError(f"constraint {chain.label!r}: origin is not in the interior")
        else:
            self.psi_ref = None

    def value_and_slope(self, psi):
        """(B, dB/dpsi) as functions of the top-level value alone."""
        if self.form == "reciprocal":
            return 1.0 / psi, -1.0 / psi**2
        d = 1.0 / psi - 1.0 / self.psi_ref
        return d * d, -2.0 * d / psi**2


def eval_barrier(bf, x):
    """(B, dB/dpsi, grad_x B) at x; raises BoundaryCrossedError if psi <= 0."""
    psi = bf.chain.value(x)
    if psi <= 0.0:
        raise BoundaryCrossedError(bf.label, psi)
    B, slope = bf.value_and_slope(psi)
    return B, slope, slope * bf.chain.grad(x)


class FeasibilityReport:
    """Per-level strict-positivity report for one constraint at one state."""

    def __init__(self, label, levels):
        self.label = label
        self.levels = levels  # list of (level index, psi value)
        self.feasible = all(v > 0.0 for _, v in levels)

    def __bool__(self):
        return self.feasible

    def __str__(self):
        marks = ", ".join(f"psi_{i}={v:.6g}{'' if v > 0 else ' <= 0'}" for i, v in self.levels)
        status = "feasible" if self.feasible else "INFEASIBLE"
        return f"{self.label}: {status} ({marks})"


def initial_feasibility(chain, x0):
    """Strict membership of x0 in the intersection of all chain level sets."""
    vals = chain.values(np.asarray(x0, dtype=float))
    return FeasibilityReport(chain.label, [(i, float(v)) for i, v in enumerate(vals)])


# --- constraint factories used by the scenario configs ---------------------

def halfspace_constraint(offset, coeffs, relative_degree=1, alphas=(), label="halfspace"):
    """h(x) = offset + coeffs . x  (affine safe half-space)."""
    coeffs = np.asarray(coeffs, dtype=float)
    offset = float(offset)
    zero = np.zeros((coeffs.size, coeffs.size))
    return ConstraintSpec(
        h=lambda x: offset + float(coeffs @ x),
        grad_h=lambda x: coeffs,
        relative_degree=relative_degree,
        alphas=alphas,
        label=label,
        hess_h=lambda x: zero,
    )


def _ball_parts(n, indices, center):
    indices = np.asarray(indices, dtype=int)
    center = np.asarray(center, dtype=float)
    sel = np.zeros((len(indices), n))
    sel[np.arange(len(indices)), indices] = 1.0
    return indices, center, sel


def ball_exclusion_constraint(n, indices, center, radius, relative_degree=2,
                              alphas=(1.0,), label="obstacle"):
    """h(x) = ||x[indices] - center||^2 - radius^2  (keep out of a ball)."""
    indices, center, sel = _ball_parts(n, indices, center)
    r2 = float(radius) ** 2
    hess = 2.0 * sel.T @ sel

    def h(x):
        d = np.asarray(x)[indices] - center
        return float(d @ d) - r2

    def grad_h(x):
        d = np.asarray(x)[indices] - center
        return 2.0 * sel.T @ d

    return ConstraintSpec(h, grad_h, relative_degree, alphas, label, hess_h=lambda x: hess)


def ball_inclusion_constraint(n, indices, center, radius, relative_degree=2,
                              alphas=(1.0,), label="area"):
    """h(x) = radius^2 - ||x[indices] - center||^2  (stay inside a ball)."""
    indices, center, sel = _ball_parts(n, indices, center)
    r2 = float(radius) ** 2
    hess = -2.0 * sel.T @ sel

    def h(x):
        d = np.asarray(x)[indices] - center
        return r2 - float(d @ d)

    def grad_h(x):
        d = np.asarray(x)[indices] - center
        return -2.0 * sel.T @ d

    return ConstraintSpec(h, grad_h, relative_degree, alphas, label, hess_h=lambda x: hess)
