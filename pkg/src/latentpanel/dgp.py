"""Simulation of panels Y_it(0) = g(alpha_i, beta_t, eps_it).

Built-in outcome functions (all with scalar components unless noted):

============== ================================ =========================
kind           g(alpha, beta, eps)              mu(alpha, beta)
============== ================================ =========================
twfe           alpha + beta + eps               alpha + beta + E eps
linear_factor  alpha . beta + eps  (rank r)     alpha . beta + E eps
sign_flip      alpha (beta - 1/2) + eps         alpha (beta - 1/2) + E eps
scale_noise    alpha (beta + eps)               alpha (beta + E eps)
symmetric_sq.  (alpha - 1/2)^2 (beta - 1/2)+eps (alpha-1/2)^2 (beta-1/2)+E eps
============== ================================ =========================

Custom outcome functions are registered by name with :func:`register_outcome`
so that specs stay JSON-serialisable.

Time processes are Gaussian AR(1) series started from their stationary law and
pushed through the target marginal's quantile function, so beta_t and eps_it
are stationary for any autocorrelation in [0, 1).
"""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, ndtr

from .exceptions import QuadratureError, SpecError
from .panel import Panel, TreatmentMask

G_KINDS = ("twfe", "linear_factor", "sign_flip", "scale_noise", "symmetric_square", "custom")


@dataclass(frozen=True)
class LatentDist:
    """Marginal law of one latent component.

    ``uniform`` is supported on ``[loc, loc + scale]``; ``normal`` has mean
    ``loc`` and standard deviation ``scale``. ``scale == 0`` gives a point mass.
    """

    kind: str = "uniform"
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "normal"):
            raise SpecError(f"unknown latent distribution {self.kind!r}")
        if not (math.isfinite(self.loc) and math.isfinite(self.scale)) or self.scale < 0:
            raise SpecError(f"bad parameters for {self.kind}: loc={self.loc}, scale={self.scale}")

    @classmethod
    def uniform(cls, low=0.0, high=1.0):
        return cls("uniform", float(low), float(high) - float(low))

    @classmethod
    def normal(cls, loc=0.0, scale=1.0):
        return cls("normal", float(loc), float(scale))

    @property
    def bounded(self):
        return self.kind == "uniform" or self.scale == 0

    @property
    def mean(self):
        return self.loc + (0.5 * self.scale if self.kind == "uniform" else 0.0)

    @property
    def median(self):
        return self.mean

    @property
    def support(self):
        if self.kind == "uniform":
            return self.loc, self.loc + self.scale
        if self.scale == 0:
            return self.loc, self.loc
        return -math.inf, math.inf

    def abs_max(self, shift=0.0):
        """sup |x - shift| over the support."""
        lo, hi = self.support
        return max(abs(lo - shift), abs(hi - shift))

    def from_normal(self, z):
        """Quantile transform of standard-normal draws."""
        if self.kind == "uniform":
            return self.loc + self.scale * ndtr(z)
        return self.loc + self.scale * z

    def quadrature(self, n, truncation=None):
        """Nodes and probability weights (summing to 1) for E[f(X)].

        Uniform laws use Gauss-Legendre on the support. Normal laws use
        probabilists' Gauss-Hermite unless ``truncation`` (in standard
        deviations) is given, in which case Gauss-Legendre on the truncated
        interval with renormalised density weights is used.
        """
        if self.scale == 0:
            return np.array([self.loc]), np.array([1.0])
        if self.kind == "uniform":
            x, w = np.polynomial.legendre.leggauss(n)
            return self.loc + self.scale * (x + 1) / 2, w / 2
        if truncation is None:
            x, w = np.polynomial.hermite_e.hermegauss(n)
            return self.loc + self.scale * x, w / math.sqrt(2 * math.pi)
        x, w = np.polynomial.legendre.leggauss(n)
        z = truncation * x
        w = w * np.exp(-0.5 * z * z)
        return self.loc + self.scale * z, w / w.sum()


@dataclass(frozen=True)
class Assignment:
    """Propensity family e(alpha, beta).

    ``score`` is the first latent coordinate. Families:

    * ``none``: never treated (prediction setting)
    * ``uniform``: e = p
    * ``confounded_logistic``: e = clip(logistic(intercept + a*score(alpha)
      + b*score(beta)), clamp, 1 - clamp)
    * ``block``: 1 - clamp where both scores exceed their population medians,
      clamp elsewhere
    """

    kind: str = "none"
    p: float = 0.0
    a: float = 0.0
    b: float = 0.0
    intercept: float = 0.0
    clamp: float = 0.0

    def validate(self):
        if self.kind == "none":
            return
        if self.kind == "uniform":
            if not 0 < self.p < 1:
                raise SpecError(f"uniform propensity must lie in (0, 1), got {self.p}")
            return
        if self.kind in ("confounded_logistic", "block"):
            if not 0 < self.clamp < 0.5:
                raise SpecError(f"clamp must lie in (0, 1/2), got {self.clamp}")
            return
        raise SpecError(f"unknown assignment kind {self.kind!r}")

    @property
    def overlap(self):
        """The c with c <= e(alpha, beta) <= 1 - c, or 0 for ``none``."""
        if self.kind == "uniform":
            return min(self.p, 1 - self.p)
        return self.clamp

    def propensity(self, alpha_score, beta_score, medians=(0.5, 0.5)):
        a_s, b_s = np.broadcast_arrays(alpha_score, beta_score)
        if self.kind == "none":
            return np.zeros(a_s.shape)
        if self.kind == "uniform":
            return np.full(a_s.shape, self.p)
        if self.kind == "confounded_logistic":
            e = expit(self.intercept + self.a * a_s + self.b * b_s)
            return np.clip(e, self.clamp, 1 - self.clamp)
        high = (a_s > medians[0]) & (b_s > medians[1])
        return np.where(high, 1 - self.clamp, self.clamp)


def builtin_assignments():
    """Catalog of named propensity families (constructors)."""

    def uniform(p):
        a = Assignment("uniform", p=float(p))
        a.validate()
        return a

    def confounded_logistic(a, b, c, intercept=0.0):
        out = Assignment("confounded_logistic", a=float(a), b=float(b),
                         intercept=float(intercept), clamp=float(c))
        out.validate()
        return out

    def block(c):
        out = Assignment("block", clamp=float(c))
        out.validate()
        return out

    return {"uniform": uniform, "confounded_logistic": confounded_logistic, "block": block}


@dataclass(frozen=True)
class Effect:
    """Additive treatment effect Y(1) - Y(0): none, constant ``tau``, or a
    registered cell function ``fn(alpha, beta) * tau``."""

    kind: str = "none"
    tau: float = 0.0
    fn: Optional[str] = None

    def validate(self):
        if self.kind not in ("none", "constant", "cell"):
            raise SpecError(f"unknown effect kind {self.kind!r}")
        if self.kind == "cell" and self.fn not in _CELL_EFFECTS:
            raise SpecError(f"unregistered cell effect {self.fn!r}")

    def matrix(self, alpha, beta):
        n, t = alpha.shape[0], beta.shape[0]
        if self.kind == "none":
            return np.zeros((n, t))
        if self.kind == "constant":
            return np.full((n, t), float(self.tau))
        f = _CELL_EFFECTS[self.fn]
        return self.tau * np.broadcast_to(f(alpha[:, None, :], beta[None, :, :]), (n, t))


_CELL_EFFECTS: dict = {
    "alpha_linear": lambda a, b: a[..., 0],
    "beta_linear": lambda a, b: b[..., 0],
}


@dataclass(frozen=True)
class _Custom:
    g: Callable
    mu: Optional[Callable]


_CUSTOM: dict = {}


def register_outcome(name, g, mu=None):
    """Register a custom outcome function for use with ``g_kind='custom'``.

    ``g(alpha, beta, eps)`` receives broadcastable arrays whose last axis is
    the component dimension and must return the broadcast shape without it.
    ``mu(alpha, beta)``, if given, is used as the closed-form mean; otherwise
    the mean is obtained by quadrature over eps.
    """
    _CUSTOM[name] = _Custom(g, mu)


def register_cell_effect(name, fn):
    _CELL_EFFECTS[name] = fn


@dataclass(frozen=True)
class DgpSpec:
    """Full generative description of a simulated panel."""

    g_kind: str = "twfe"
    rank: int = 1
    alpha_dist: LatentDist = field(default_factory=LatentDist)
    beta_dist: LatentDist = field(default_factory=LatentDist)
    eps_dist: LatentDist = field(default_factory=lambda: LatentDist.normal())
    rho_beta: float = 0.0
    rho_eps: float = 0.0
    assignment: Assignment = field(default_factory=Assignment)
    effect: Effect = field(default_factory=Effect)
    scale: float = 1.0
    custom: Optional[str] = None
    dims: Optional[tuple] = None
    quad_nodes: int = 129
    eps_truncation: Optional[float] = None

    @property
    def d_alpha(self):
        return self._dims()[0]

    @property
    def d_beta(self):
        return self._dims()[1]

    @property
    def d_eps(self):
        return self._dims()[2]

    def _dims(self):
        if self.g_kind == "linear_factor":
            return (self.rank, self.rank, 1)
        if self.g_kind == "custom" and self.dims is not None:
            return tuple(int(d) for d in self.dims)
        return (1, 1, 1)

    def validate(self):
        if self.g_kind not in G_KINDS:
            raise SpecError(f"unknown g_kind {self.g_kind!r}")
        if self.g_kind == "linear_factor" and self.rank < 1:
            raise SpecError("linear_factor needs rank >= 1")
        if self.g_kind == "custom":
            if self.custom not in _CUSTOM:
                raise SpecError(f"unregistered custom outcome {self.custom!r}")
            if self.dims is not None and (len(self.dims) != 3 or min(self.dims) < 1):
                raise SpecError(f"custom dims must be three positive ints, got {self.dims}")
        elif self.dims is not None and tuple(self.dims) != self._dims():
            raise SpecError(f"dims {tuple(self.dims)} do not match {self.g_kind} "
                            f"(expects {self._dims()})")
        for name in ("rho_beta", "rho_eps"):
            rho = getattr(self, name)
            if not 0 <= rho < 1:
                raise SpecError(f"{name} must lie in [0, 1), got {rho}")
        if not math.isfinite(self.scale):
            raise SpecError("scale must be finite")
        if self.quad_nodes < 1:
            raise SpecError("quad_nodes must be positive")
        self.assignment.validate()
        self.effect.validate()
        return self

    # outcome function and its conditional mean --------------------------------

    def g(self, alpha, beta, eps):
        """Unscaled outcome on broadcastable (..., d) arrays."""
        a0, b0, e0 = alpha[..., 0], beta[..., 0], eps[..., 0]
        k = self.g_kind
        if k == "twfe":
            return a0 + b0 + e0
        if k == "linear_factor":
            return (alpha * beta).sum(axis=-1) + e0
        if k == "sign_flip":
            return a0 * (b0 - 0.5) + e0
        if k == "scale_noise":
            return a0 * (b0 + e0)
        if k == "symmetric_square":
            return (a0 - 0.5) ** 2 * (b0 - 0.5) + e0
        return _CUSTOM[self.custom].g(alpha, beta, eps)

    def has_closed_form(self):
        return self.g_kind != "custom" or _CUSTOM[self.custom].mu is not None

    def mu(self, alpha, beta):
        """Unscaled mu(alpha, beta) on broadcastable (..., d) arrays."""
        a0, b0 = alpha[..., 0], beta[..., 0]
        m = self.eps_dist.mean
        k = self.g_kind
        if k == "twfe":
            return a0 + b0 + m
        if k == "linear_factor":
            return (alpha * beta).sum(axis=-1) + m
        if k == "sign_flip":
            return a0 * (b0 - 0.5) + m
        if k == "scale_noise":
            return a0 * (b0 + m)
        if k == "symmetric_square":
            return (a0 - 0.5) ** 2 * (b0 - 0.5) + m
        custom = _CUSTOM[self.custom]
        if custom.mu is not None:
            return custom.mu(alpha, beta)
        return self._mu_quadrature(alpha, beta)

    def _mu_quadrature(self, alpha, beta):
        d = self.eps_dist
        if not d.bounded and self.eps_truncation is None:
            raise QuadratureError("quadrature over an unbounded eps law needs eps_truncation")
        x, w = d.quadrature(self.quad_nodes, self.eps_truncation)
        nodes, weights = _tensor_rule(x, w, self.d_eps)
        shape = np.broadcast_shapes(alpha.shape[:-1], beta.shape[:-1])
        out = np.zeros(shape)
        for node, wt in zip(nodes, weights):
            out = out + wt * self.g(alpha, beta, np.broadcast_to(node, shape + (self.d_eps,)))
        return out

    def analytic_bound(self):
        """Upper bound on |g| over the latent supports (inf if unbounded)."""
        A, B, E = self.alpha_dist, self.beta_dist, self.eps_dist
        k = self.g_kind
        if k == "twfe":
            v = A.abs_max() + B.abs_max() + E.abs_max()
        elif k == "linear_factor":
            v = self.rank * A.abs_max() * B.abs_max() + E.abs_max()
        elif k == "sign_flip":
            v = A.abs_max() * B.abs_max(0.5) + E.abs_max()
        elif k == "scale_noise":
            v = A.abs_max() * (B.abs_max() + E.abs_max())
        elif k == "symmetric_square":
            v = A.abs_max(0.5) ** 2 * B.abs_max(0.5) + E.abs_max()
        else:
            v = math.inf
        return abs(self.scale) * v

    # serialisation ------------------------------------------------------------

    def to_dict(self):
        d = asdict(self)
        if d["dims"] is not None:
            d["dims"] = list(d["dims"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key, typ in (("alpha_dist", LatentDist), ("beta_dist", LatentDist),
                         ("eps_dist", LatentDist), ("assignment", Assignment),
                         ("effect", Effect)):
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        if d.get("dims") is not None:
            d["dims"] = tuple(d["dims"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown DgpSpec fields: {sorted(unknown)}")
        return cls(**d).validate()

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def with_(self, **changes):
        return replace(self, **changes)


def preset(name, noise=None, **overrides):
    """Named specs mirroring the standard examples.

    ``noise`` is the standard deviation of a centred normal eps. When omitted
    it is 1 for twfe, linear_factor and the scale_noise forms, and 0 for
    sign_flip and symmetric_square (which are stated without noise).
    ``scale_noise`` draws alpha and beta from U[0, 1]; ``scale_noise_normal``
    draws all three components from N(0, 1).
    """
    noiseless = name in ("sign_flip", "symmetric_square")
    sd = (0.0 if noiseless else 1.0) if noise is None else float(noise)
    eps = LatentDist.normal(0.0, sd)
    if name == "scale_noise_normal":
        base = DgpSpec("scale_noise", alpha_dist=LatentDist.normal(), beta_dist=LatentDist.normal(),
                       eps_dist=eps)
    elif name in G_KINDS and name != "custom":
        base = DgpSpec(name, eps_dist=eps)
    else:
        raise SpecError(f"unknown preset {name!r}")
    return replace(base, **overrides).validate()


@dataclass(frozen=True, eq=False)
class LatentDraw:
    alpha: np.ndarray
    beta: np.ndarray
    epsilon: np.ndarray


@dataclass(frozen=True, eq=False)
class SimulatedPanel:
    """Simulated data plus the truth it was drawn from.

    ``y0`` holds the control potential outcomes, so the residual
    eta = y0 - mu is available for every cell.
    """

    panel: Panel
    mask: TreatmentMask
    truth: LatentDraw
    mu: np.ndarray
    y0: np.ndarray
    true_att: float
    spec: DgpSpec
    seed: int

    @property
    def eta(self):
        return self.y0 - self.mu


def substream(seed, label):
    """Generator for ``label`` derived deterministically from ``seed``."""
    key = zlib.crc32(label.encode())
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def _ar1_normals(rng, shape, rho):
    """Stationary N(0, 1) AR(1) along axis -2 (time) of ``shape``."""
    z = rng.standard_normal(shape)
    if rho == 0:
        return z
    s = math.sqrt(1 - rho * rho)
    out = np.empty(shape)
    out[..., 0, :] = z[..., 0, :]
    for t in range(1, shape[-2]):
        out[..., t, :] = rho * out[..., t - 1, :] + s * z[..., t, :]
    return out


def _tensor_rule(x, w, dim):
    if dim == 1:
        return x[:, None], w
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    return nodes, np.prod([g.ravel() for g in wgrids], axis=0)


def mu_matrix(spec: DgpSpec, alpha, beta):
    """scale * mu(alpha_i, beta_t) for row arrays alpha (N, d) and beta (T, d)."""
    alpha = np.asarray(alpha, dtype=float).reshape(len(alpha), -1)
    beta = np.asarray(beta, dtype=float).reshape(len(beta), -1)
    return spec.scale * spec.mu(alpha[:, None, :], beta[None, :, :])


def mu_oracle(spec: DgpSpec, alpha, beta) -> float:
    """mu(alpha, beta) = E[g(alpha, beta, eps)] for one latent pair."""
    spec.validate()
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    b = np.atleast_1d(np.asarray(beta, dtype=float))
    return float(mu_matrix(spec, a[None, :], b[None, :])[0, 0])


def simulate(spec: DgpSpec, n: int, t: int, seed: int, pin_alpha=None) -> SimulatedPanel:
    """Draw one panel.

    Each of alpha, beta, eps, assignment and effect uses its own substream of
    ``seed``. ``pin_alpha`` maps unit index -> alpha value and overrides the
    draw for those units after sampling (other units are unaffected).
    """
    spec.validate()
    if n < 2 or t < 2:
        raise SpecError(f"need n >= 2 and t >= 2, got n={n}, t={t}")
    da, db, de = spec.d_alpha, spec.d_beta, spec.d_eps

    alpha = spec.alpha_dist.from_normal(substream(seed, "alpha").standard_normal((n, da)))
    if pin_alpha:
        for i, v in pin_alpha.items():
            alpha[i] = np.broadcast_to(np.asarray(v, dtype=float), (da,))
    beta = spec.beta_dist.from_normal(_ar1_normals(substream(seed, "beta"), (t, db), spec.rho_beta))
    eps = spec.eps_dist.from_normal(
        _ar1_normals(substream(seed, "epsilon"), (n, t, de), spec.rho_eps))

    y0_raw = spec.g(alpha[:, None, :], beta[None, :, :], eps)
    mu = mu_matrix(spec, alpha, beta)

    e = spec.assignment.propensity(alpha[:, None, 0], beta[None, :, 0],
                                   (spec.alpha_dist.median, spec.beta_dist.median))
    W = substream(seed, "assignment").random((n, t)) < e
    eff = spec.effect.matrix(alpha, beta)

    y0 = spec.scale * y0_raw
    y = spec.scale * (y0_raw + np.where(W, eff, 0.0))
    true_att = float(np.mean((y - y0)[W])) if W.any() else math.nan

    return SimulatedPanel(
        panel=Panel(y),
        mask=TreatmentMask(W.astype(np.int8)),
        truth=LatentDraw(alpha, beta, eps),
        mu=mu,
        y0=y0,
        true_att=true_att,
        spec=spec,
        seed=int(seed),
    )


def beta_quadrature(spec: DgpSpec, n_nodes=257):
    """Tensor-product rule for expectations over the beta marginal.

    One-dimensional beta uses ``n_nodes`` nodes; for d > 1 the per-axis count
    is reduced so the grid stays near ``n_nodes`` points (never below 9).
    """
    d = spec.d_beta
    per_axis = n_nodes if d == 1 else max(9, int(round(n_nodes ** (1.0 / d))))
    x, w = spec.beta_dist.quadrature(per_axis)
    return _tensor_rule(x, w, d)
