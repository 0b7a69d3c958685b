"""MAP fitting and Laplace posterior draws on an unconstrained space.

Positive scalars are optimized on the log scale and the mixture weights through
a centered stick-breaking map, so that the zero vector corresponds to unit
scales and uniform weights. The objective is the log posterior plus the
log-Jacobian of that map, i.e. the mode is taken in the unconstrained space.

Anything exposing the small "target" interface below can be fitted:
``size``, ``value_and_grad(v)``, ``constrain(v)`` and ``unconstrain(params)``.
:class:`PoolingTarget` is the one for the pooling models; the Fourier baseline
brings its own.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import expit

from . import model as mc
from .errors import (
    ConvergenceError,
    CurvatureError,
    DomainError,
    InitializationError,
    NumericalError,
)
from .model import ModelData, ModelSpec, ParameterSet, StandardizationInfo, TimeSeries

log = logging.getLogger(__name__)


# --- simplex -----------------------------------------------------------------


def _stick_offsets(n_free: int) -> np.ndarray:
    return np.log(n_free - np.arange(n_free, dtype=float))


def simplex_from_unconstrained(u) -> tuple[np.ndarray, float]:
    """Centered stick-breaking: ``u`` of length D-1 to a D-simplex.

    Returns the simplex and the log absolute Jacobian determinant.
    """
    u = np.asarray(u, dtype=float)
    x = u - _stick_offsets(u.size)
    z = expit(x)
    theta = np.empty(u.size + 1)
    remaining = 1.0
    log_rem = 0.0
    log_jac = 0.0
    for j in range(u.size):
        theta[j] = remaining * z[j]
        # log z + log(1 - z), written to stay finite for large |x|
        log_jac += -np.logaddexp(0.0, -x[j]) - np.logaddexp(0.0, x[j]) + log_rem
        remaining -= theta[j]
        log_rem += -np.logaddexp(0.0, x[j])
    theta[-1] = max(remaining, 0.0)
    return theta, float(log_jac)


def simplex_to_unconstrained(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    n_free = theta.size - 1
    u = np.empty(n_free)
    remaining = 1.0
    for j in range(n_free):
        z = theta[j] / remaining
        u[j] = math.log(z) - math.log1p(-z)
        remaining -= theta[j]
    return u + _stick_offsets(n_free)


def _simplex_pullback(u: np.ndarray, theta: np.ndarray, g_theta: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``u`` of f(theta(u)) + log|J(u)| given df/dtheta."""
    n_free = u.size
    z = expit(u - _stick_offsets(n_free))
    out = np.empty(n_free)
    for i in range(n_free):
        # d theta_j / d u_i = theta_j * dlog(theta_j)/du_i
        dlog = np.zeros(theta.size)
        dlog[i] = 1.0 - z[i]
        dlog[i + 1 :] = -z[i]
        out[i] = float(g_theta @ (theta * dlog))
        out[i] += 1.0 - 2.0 * z[i] - (n_free - 1 - i) * z[i]
    return out


# --- bijection ---------------------------------------------------------------

#: log-sd below which a hierarchical family counts as collapsed onto its mean
COLLAPSE_LOG_SD = -8.0


@dataclass(frozen=True)
class Bijection:
    """Layout of the unconstrained vector for one :class:`ModelSpec`.

    Families listed in ``tied`` have no coordinates of their own: every group
    value equals the hypermean and the group sd is zero.
    """

    spec: ModelSpec
    layout: tuple[tuple[str, int], ...]
    tied: frozenset = frozenset()

    @classmethod
    def for_spec(cls, spec: ModelSpec, tied=()) -> "Bijection":
        tied = frozenset(tied)
        if not spec.hierarchical:
            return cls(spec, (("k", 1), ("m", 1), ("sigma_obs", 1)))
        n_sub = sum(spec.cardinalities)
        layout = []
        for family in ("k", "m"):
            layout.append((f"{family}_mu", 1))
            if family not in tied:
                layout.append((f"{family}_sigma", 1))
        for family in ("k", "m"):
            if family not in tied:
                layout.append((family, n_sub))
        if spec.kind is mc.ModelKind.MIXED:
            layout.append(("theta", spec.n_groups - 1))
        layout.append(("sigma_obs", 1))
        return cls(spec, tuple(layout), tied)

    @property
    def size(self) -> int:
        return sum(n for _, n in self.layout)

    def slices(self) -> dict[str, slice]:
        out = {}
        start = 0
        for name, n in self.layout:
            out[name] = slice(start, start + n)
            start += n
        return out

    def names(self) -> list[str]:
        """One label per unconstrained coordinate."""
        labels = []
        for name, n in self.layout:
            if name in ("k", "m") and self.spec.hierarchical:
                for d, size in zip(self.spec.dims, self.spec.cardinalities):
                    labels.extend(f"{name}[{d.value}][{j}]" for j in range(size))
            elif n == 1:
                labels.append(name)
            else:
                labels.extend(f"{name}[{j}]" for j in range(n))
        return labels


def _split(flat: np.ndarray, sizes: Sequence[int]) -> tuple[np.ndarray, ...]:
    return tuple(np.split(flat, np.cumsum(sizes)[:-1]))


def to_unconstrained(params: ParameterSet, b: Bijection) -> np.ndarray:
    spec = b.spec
    params.validate(spec, b.tied)
    v = np.empty(b.size)
    sl = b.slices()
    v[sl["sigma_obs"]] = math.log(params.sigma_obs)
    if not spec.hierarchical:
        v[sl["k"]] = params.k[0]
        v[sl["m"]] = params.m[0]
        return v
    for family in ("k", "m"):
        v[sl[f"{family}_mu"]] = getattr(params, f"{family}_mu")
        if family not in b.tied:
            v[sl[f"{family}_sigma"]] = math.log(getattr(params, f"{family}_sigma"))
            v[sl[family]] = np.concatenate(getattr(params, family))
    if "theta" in sl:
        v[sl["theta"]] = simplex_to_unconstrained(params.theta)
    return v


def to_constrained(v, b: Bijection) -> tuple[ParameterSet, float]:
    """Constrained parameters and the log absolute Jacobian determinant."""
    v = np.asarray(v, dtype=float)
    if v.shape != (b.size,):
        raise DomainError(f"expected an unconstrained vector of length {b.size}, got {v.shape}")
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.isfinite(v))[0])
        raise DomainError(f"non-finite unconstrained coordinate {bad}")
    spec = b.spec
    sl = b.slices()
    u_sigma = float(v[sl["sigma_obs"]][0])
    log_jac = u_sigma
    if not spec.hierarchical:
        params = ParameterSet(
            (v[sl["k"]].copy(),), (v[sl["m"]].copy(),), math.exp(u_sigma), np.ones(1)
        )
        return params, log_jac
    sizes = spec.cardinalities
    fields = {}
    for family in ("k", "m"):
        mu = float(v[sl[f"{family}_mu"]][0])
        fields[f"{family}_mu"] = mu
        if family in b.tied:
            fields[f"{family}_sigma"] = 0.0
            fields[family] = tuple(np.full(p, mu) for p in sizes)
        else:
            u_sd = float(v[sl[f"{family}_sigma"]][0])
            log_jac += u_sd
            fields[f"{family}_sigma"] = math.exp(u_sd)
            fields[family] = _split(v[sl[family]].copy(), sizes)
    if "theta" in sl:
        theta, lj = simplex_from_unconstrained(v[sl["theta"]])
        log_jac += lj
    else:
        theta = np.ones(1)
    return ParameterSet(sigma_obs=math.exp(u_sigma), theta=theta, **fields), log_jac


def pull_back(v: np.ndarray, params: ParameterSet, grad: ParameterSet, b: Bijection) -> np.ndarray:
    """Unconstrained gradient of ``log_posterior + log_jacobian``."""
    spec = b.spec
    sl = b.slices()
    out = np.empty(b.size)
    out[sl["sigma_obs"]] = grad.sigma_obs * params.sigma_obs + 1.0
    if not spec.hierarchical:
        out[sl["k"]] = grad.k[0]
        out[sl["m"]] = grad.m[0]
        return out
    for family in ("k", "m"):
        g_groups = np.concatenate(getattr(grad, family))
        g_mu = getattr(grad, f"{family}_mu")
        if family in b.tied:
            # every group value is the hypermean itself
            out[sl[f"{family}_mu"]] = g_mu + g_groups.sum()
        else:
            out[sl[f"{family}_mu"]] = g_mu
            sd = getattr(params, f"{family}_sigma")
            out[sl[f"{family}_sigma"]] = getattr(grad, f"{family}_sigma") * sd + 1.0
            out[sl[family]] = g_groups
    if "theta" in sl:
        out[sl["theta"]] = _simplex_pullback(v[sl["theta"]], params.theta, grad.theta)
    return out


# --- targets -----------------------------------------------------------------


class PoolingTarget:
    """Jacobian-adjusted log posterior of a pooling model on fixed data."""

    def __init__(
        self,
        data: ModelData,
        spec: ModelSpec,
        info: Optional[StandardizationInfo] = None,
        tied=(),
    ):
        self.data = data
        self.spec = spec
        self.info = info
        self.tied = frozenset(tied)
        self.bijection = Bijection.for_spec(spec, self.tied)

    @property
    def size(self) -> int:
        return self.bijection.size

    @property
    def label(self) -> str:
        return self.spec.label

    def constrain(self, v) -> ParameterSet:
        return to_constrained(v, self.bijection)[0]

    def unconstrain(self, params: ParameterSet) -> np.ndarray:
        return to_unconstrained(params, self.bijection)

    def value_and_grad(self, v) -> tuple[float, np.ndarray]:
        v = np.asarray(v, dtype=float)
        params, log_jac = to_constrained(v, self.bijection)
        value, grad = mc.value_and_grad(params, self.data, self.spec, self.tied)
        return value + log_jac, pull_back(v, params, grad, self.bijection)

    def log_posterior(self, params: ParameterSet) -> float:
        if self.tied:
            return mc.value_and_grad(params, self.data, self.spec, self.tied)[0]
        return mc.log_posterior(params, self.data, self.spec)

    @property
    def hyper_scale_coordinates(self) -> tuple[int, ...]:
        sl = self.bijection.slices()
        return tuple(sl[name].start for name in ("k_sigma", "m_sigma") if name in sl)

    def collapsed(self, v) -> tuple[str, ...]:
        """Families whose group sd has run into the sd -> 0 funnel."""
        sl = self.bijection.slices()
        return tuple(
            family
            for family in ("k", "m")
            if f"{family}_sigma" in sl and v[sl[f"{family}_sigma"]][0] < COLLAPSE_LOG_SD
        )

    def tie(self, families) -> "PoolingTarget":
        return PoolingTarget(self.data, self.spec, self.info, self.tied | frozenset(families))

    def with_data(self, data: ModelData) -> "PoolingTarget":
        return PoolingTarget(data, self.spec, self.info, self.tied)

    # scoring on new dates, always on the standardized scale
    def make_data(self, series: TimeSeries) -> ModelData:
        return mc.prepare_data(series, self.spec, self.info)[0]

    def predict_std(self, params: ParameterSet, data: ModelData) -> np.ndarray:
        return mc.predict_mean(params, data.t, data.pooling, self.spec)

    def pointwise_log_lik(self, params: ParameterSet, data: ModelData) -> np.ndarray:
        yhat = self.predict_std(params, data)
        return mc.normal_logpdf(data.y, yhat, params.sigma_obs)

    def sigma(self, params: ParameterSet) -> float:
        return params.sigma_obs


# --- optimization ------------------------------------------------------------


@dataclass
class OptimizerOptions:
    max_iter: int = 1000
    grad_tol: float = 1e-8
    restarts: int = 3
    jitter: float = 1.0
    seed: int = 0
    newton_iter: int = 50
    max_step: float = 10.0


@dataclass
class MapResult:
    """Outcome of :func:`maximize`.

    ``log_post`` is the log posterior at the mode and ``objective`` the
    Jacobian-adjusted value that was maximized. ``tied`` lists hierarchical
    families that collapsed onto their hypermean; the mode then lies on that
    boundary and ``converged`` refers to the remaining coordinates.
    """

    params: Any
    log_post: float
    objective: float
    unconstrained_opt: np.ndarray
    iterations: int
    converged: bool
    grad_norm: float
    trace: list = field(default_factory=list, repr=False)
    target: Any = field(default=None, repr=False)
    restart: int = 0
    tied: tuple = ()

    @property
    def info(self) -> Optional[StandardizationInfo]:
        return getattr(self.target, "info", None)

    @property
    def spec(self):
        return getattr(self.target, "spec", None)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["restart", "phase", "iteration", "objective", "grad_norm"])
            for row in self.trace:
                writer.writerow([row[0], row[1], row[2], repr(row[3]), repr(row[4])])


def _safe_eval(target, x):
    with np.errstate(all="ignore"):
        try:
            f, g = target.value_and_grad(x)
        except (DomainError, OverflowError, FloatingPointError, ValueError):
            return -math.inf, None
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        return -math.inf, None
    return f, g


def _line_search(target, x, f, g, p, max_step):
    """Backtracking Armijo search along ascent direction ``p``."""
    slope = float(g @ p)
    norm_p = float(np.linalg.norm(p))
    step = min(1.0, max_step / norm_p) if norm_p > 0 else 1.0
    while step * norm_p > 1e-14 * (1.0 + float(np.linalg.norm(x))):
        x_new = x + step * p
        f_new, g_new = _safe_eval(target, x_new)
        if g_new is not None and f_new >= f + 1e-4 * step * slope:
            return x_new, f_new, g_new
        step *= 0.5
    return None


def _roundoff_step(target, x, f, g, p):
    """Full step accepted when the objective is flat to rounding but the gradient shrinks."""
    x_new = x + p
    f_new, g_new = _safe_eval(target, x_new)
    if g_new is None:
        return None
    if f_new >= f - 1e-11 * max(1.0, abs(f)) and np.linalg.norm(g_new) < 0.5 * np.linalg.norm(g):
        return x_new, f_new, g_new
    return None


class _Frozen:
    """View of a target with some coordinates held fixed."""

    def __init__(self, target, frozen: Sequence[int], x_full: np.ndarray):
        self.target = target
        self.x_full = np.array(x_full, dtype=float)
        self.free = np.setdiff1d(np.arange(target.size), frozen)
        self.size = self.free.size

    def embed(self, x):
        full = self.x_full.copy()
        full[self.free] = x
        return full

    def value_and_grad(self, x):
        f, g = self.target.value_and_grad(self.embed(x))
        return f, g[self.free]

    def collapsed(self, x):
        return ()


def _bfgs(target, x, f, g, opts: OptimizerOptions, restart: int, trace: list, it0: int = 0):
    """Quasi-Newton ascent; stops early if the target reports a collapse."""
    n = x.size
    inv_h = None
    collapsed = getattr(target, "collapsed", lambda _: ())
    it = it0
    for it in range(it0 + 1, it0 + opts.max_iter + 1):
        if np.linalg.norm(g) <= opts.grad_tol:
            return x, f, g, it - 1
        p = inv_h @ g if inv_h is not None else g / max(1.0, float(np.linalg.norm(g)))
        if float(g @ p) <= 0:
            inv_h = None
            p = g / max(1.0, float(np.linalg.norm(g)))
        found = _line_search(target, x, f, g, p, opts.max_step)
        if found is None:
            return x, f, g, it
        x_new, f_new, g_new = found
        s = x_new - x
        y = g - g_new  # gradient change of the minimized objective -f
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if inv_h is None:
                inv_h = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            hy = inv_h @ y
            inv_h = (
                inv_h
                - rho * (np.outer(s, hy) + np.outer(hy, s))
                + (rho * rho * float(y @ hy) + rho) * np.outer(s, s)
            )
        x, f, g = x_new, f_new, g_new
        trace.append((restart, "bfgs", it, f, float(np.linalg.norm(g))))
        if collapsed(x):
            break
    return x, f, g, it


def _newton(target, x, f, g, opts: OptimizerOptions, restart: int, trace: list, start_it: int):
    it = start_it
    for _ in range(opts.newton_iter):
        if np.linalg.norm(g) <= opts.grad_tol:
            break
        try:
            hess = _fd_hessian(target, x)
        except (NumericalError, DomainError):
            break
        neg = -hess
        p = None
        for lam in (0.0, 1e-8, 1e-6, 1e-4, 1e-2):
            try:
                p = cho_solve(cho_factor(neg + lam * np.eye(x.size)), g)
                break
            except np.linalg.LinAlgError:
                continue
        if p is None or not np.all(np.isfinite(p)):
            break
        found = _line_search(target, x, f, g, p, opts.max_step) or _roundoff_step(target, x, f, g, p)
        if found is None:
            break
        it += 1
        x, f, g = found
        trace.append((restart, "newton", it, f, float(np.linalg.norm(g))))
    return x, f, g, it


@dataclass
class _Run:
    restart: int
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    trace: list
    collapsed: tuple


def _ascend(target, x0, opts: OptimizerOptions, restart: int) -> Optional[_Run]:
    trace = []
    x = np.array(x0, dtype=float)
    f, g = _safe_eval(target, x)
    if g is None:
        return None
    trace.append((restart, "init", 0, f, float(np.linalg.norm(g))))
    it = 0
    frozen = list(getattr(target, "hyper_scale_coordinates", ()))
    if frozen:
        # Settle the group parameters at fixed group sds before letting the
        # sds move; otherwise the ascent can slide into the sd -> 0 funnel.
        sub = _Frozen(target, frozen, x)
        fs, gs = _safe_eval(sub, x[sub.free])
        if gs is not None:
            xs, fs, gs, it = _bfgs(sub, x[sub.free], fs, gs, opts, restart, trace)
            x = sub.embed(xs)
            f, g = _safe_eval(target, x)
            trace[1:] = [(row[0], "stage", *row[2:]) for row in trace[1:]]
    x, f, g, it = _bfgs(target, x, f, g, opts, restart, trace, it)
    collapsed = tuple(getattr(target, "collapsed", lambda _: ())(x))
    if not collapsed and np.linalg.norm(g) > opts.grad_tol and opts.newton_iter > 0:
        x, f, g, it = _newton(target, x, f, g, opts, restart, trace, it)
    return _Run(restart, x, f, g, it, trace, collapsed)


def _restart_rng(seed: int, stream: Sequence[int], restart: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream), int(restart)]))


def maximize(target, opts: Optional[OptimizerOptions] = None, stream: Sequence[int] = ()) -> MapResult:
    """Run the zero start plus ``opts.restarts`` jittered starts; keep the best.

    Converged runs win over the rest, then the higher objective. When no run
    converges and some ran into a collapsing group sd, the collapsed families
    are tied to their hypermean and the fit is repeated on the remaining
    coordinates.
    """
    opts = opts or OptimizerOptions()
    n = target.size
    runs = []
    for restart in range(opts.restarts + 1):
        if restart == 0:
            x0 = np.zeros(n)
        else:
            x0 = _restart_rng(opts.seed, stream, restart).uniform(-opts.jitter, opts.jitter, n)
        run = _ascend(target, x0, opts, restart)
        if run is None:
            if restart == 0:
                label = getattr(target, "label", "model")
                raise InitializationError(f"{label}: objective not finite at the zero start")
            log.debug("restart %d skipped: non-finite start", restart)
            continue
        runs.append(run)

    trace = [row for run in runs for row in run.trace]
    converged = [r for r in runs if np.linalg.norm(r.g) <= opts.grad_tol and not r.collapsed]
    collapsed = [r for r in runs if r.collapsed]
    if not converged and collapsed and hasattr(target, "tie"):
        families = collapsed[0].collapsed
        log.info("%s: tying collapsed families %s", getattr(target, "label", ""), families)
        result = maximize(target.tie(families), opts, stream)
        result.trace = trace + result.trace
        return result

    pool = converged or runs
    best = pool[0]
    for run in pool[1:]:
        if run.f > best.f:
            best = run
    params = target.constrain(best.x)
    gnorm = float(np.linalg.norm(best.g))
    return MapResult(
        params=params,
        log_post=float(target.log_posterior(params)),
        objective=float(best.f),
        unconstrained_opt=best.x,
        iterations=int(best.iterations),
        converged=bool(gnorm <= opts.grad_tol and not best.collapsed),
        grad_norm=gnorm,
        trace=trace,
        target=target,
        restart=best.restart,
        tied=tuple(sorted(getattr(target, "tied", ()))),
    )


def map_fit(
    data: TimeSeries,
    spec: ModelSpec,
    opts: Optional[OptimizerOptions] = None,
    stream: Sequence[int] = (),
) -> MapResult:
    """MAP fit of a pooling model to a raw series."""
    model_data, info = mc.prepare_data(data, spec)
    result = maximize(PoolingTarget(model_data, spec, info), opts, stream)
    if not result.converged:
        log.warning("%s: not converged (grad norm %.3g)", spec.label, result.grad_norm)
    return result


# --- curvature ---------------------------------------------------------------


def _fd_hessian(target, v, h: float = 1e-5) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = v.size
    hess = np.empty((n, n))
    with np.errstate(all="ignore"):
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            _, g_plus = target.value_and_grad(v + e)
            _, g_minus = target.value_and_grad(v - e)
            col = (g_plus - g_minus) / (2 * h)
            if not np.all(np.isfinite(col)):
                raise NumericalError(f"non-finite Hessian entry in column {j}")
            hess[:, j] = col
    return 0.5 * (hess + hess.T)


def hessian_at(v, target, h: float = 1e-5) -> np.ndarray:
    """Symmetrized central-difference Hessian of the target's analytic gradient."""
    try:
        return _fd_hessian(target, v, h)
    except DomainError as exc:
        raise NumericalError(str(exc)) from exc


@dataclass
class PosteriorDraws:
    draws: np.ndarray
    params: list
    seed: int
    target: Any = field(repr=False, default=None)
    source: str = "laplace"
    mean: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.draws.shape[0]

    @classmethod
    def from_unconstrained(cls, draws, target, seed: int = 0, source: str = "laplace"):
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        return cls(draws, [target.constrain(row) for row in draws], seed, target, source)


def laplace_draws(fit: MapResult, n_draws: int = 1000, seed: int = 0) -> PosteriorDraws:
    """Gaussian draws around the mode with covariance ``(-H)^-1``."""
    if not fit.converged:
        raise ConvergenceError(
            f"Laplace draws need a converged fit (grad norm {fit.grad_norm:.3g})"
        )
    target = fit.target
    mode = np.asarray(fit.unconstrained_opt, dtype=float)
    precision = -hessian_at(mode, target)
    chol = None
    for lam in (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2):
        try:
            chol = np.linalg.cholesky(precision + lam * np.eye(mode.size))
            if lam:
                log.warning("Laplace precision needed jitter %.0e", lam)
                precision = precision + lam * np.eye(mode.size)
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        raise CurvatureError(
            "negative Hessian is not positive definite at the mode; "
            "inspect the model and data (e.g. empty or degenerate subcategories)"
        )
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, mode.size))
    # precision = L L^T  =>  mode + L^{-T} z has covariance precision^{-1}
    draws = mode + solve_triangular(chol, z.T, lower=True, trans="T").T
    out = PosteriorDraws.from_unconstrained(draws, target, seed)
    out.mean = mode
    out.covariance = np.linalg.inv(precision)
    return out
