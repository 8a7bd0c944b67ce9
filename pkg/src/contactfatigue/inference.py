"""Gradient-based MCMC, MAP optimization, diagnostics, and summaries.

The sampler is a dynamic Hamiltonian Monte Carlo with multinomial trajectory
sampling over a binary tree (a no-U-turn scheme), dual-averaging step-size
adaptation toward a target acceptance statistic, and a diagonal mass matrix
estimated in expanding warmup windows. Chains own independent RNG streams
derived from (seed, chain index), so runs are reproducible and chain order
is irrelevant.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .models.params import Layout, ParamVector

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 8
    warmup: int = 500
    sampling: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    threads: int = 1
    init_jitter: float = 2.0
    init: str = "random"    # "random": uniform(-jitter, jitter) per chain;
                            # "map": jitter around a shared MAP point

    def __post_init__(self) -> None:
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if self.warmup < 100:
            raise ValueError("warmup must be >= 100 for adaptation")
        if self.init not in ("random", "map"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class Diagnostics:
    rhat: dict[str, float]
    ess_bulk: dict[str, float]
    divergences: int

    def max_rhat(self) -> float:
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return max(vals) if vals else float("nan")

    def min_ess(self) -> float:
        vals = [v for v in self.ess_bulk.values() if np.isfinite(v)]
        return min(vals) if vals else float("nan")


@dataclass
class PosteriorDraws:
    """Post-warmup draws on the unconstrained scale plus bookkeeping."""

    layout: Layout | None
    draws: np.ndarray                    # (chains, iterations, dim)
    divergent: np.ndarray                # (chains, iterations) bool
    step_sizes: np.ndarray               # (chains,)
    pointwise_loglik: np.ndarray | None  # (chains * iterations, n_obs)
    parameter_names: list[str] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def stacked(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])

    def constrained(self, name: str) -> np.ndarray:
        """(n_draws, block size) draws of one named block, natural scale."""
        if self.layout is None:
            raise ValueError("no layout attached to these draws")
        flat = self.stacked()
        block = next(b for b in self.layout.blocks if b.name == name)
        vals = flat[:, self.layout.sl(name)]
        return np.exp(vals) if block.transform == "log" else vals

    def median(self, name: str) -> np.ndarray:
        return np.median(self.constrained(name), axis=0)

    def mean(self, name: str) -> np.ndarray:
        return self.constrained(name).mean(axis=0)

    def point(self, reducer=np.median) -> dict[str, np.ndarray]:
        if self.layout is None:
            raise ValueError("no layout attached to these draws")
        flat = self.stacked()
        out = {}
        for b in self.layout.blocks:
            vals = flat[:, self.layout.sl(b.name)]
            if b.transform == "log":
                vals = np.exp(vals)
            out[b.name] = reducer(vals, axis=0)
        return out


# ---------------------------------------------------------------------------
# Dynamic HMC with multinomial trajectory sampling
# ---------------------------------------------------------------------------

class _Target:
    """Counts gradient evaluations around a (logp, grad) callable."""

    def __init__(self, logp_grad):
        self.logp_grad = logp_grad
        self.evals = 0

    def __call__(self, theta):
        self.evals += 1
        return self.logp_grad(theta)


class _DualAveraging:
    def __init__(self, eps0: float, target: float):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.log_eps = np.log(eps0)
        self.log_eps_bar = np.log(eps0)
        self.h_bar = 0.0
        self.count = 0
        self.gamma = 0.1
        self.t0 = 10.0
        self.kappa = 0.75

    def update(self, accept_stat: float) -> None:
        self.count += 1
        eta = 1.0 / (self.count + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - np.sqrt(self.count) / self.gamma * self.h_bar
        w = self.count ** -self.kappa
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar

    @property
    def eps(self) -> float:
        return float(np.exp(self.log_eps))

    @property
    def eps_final(self) -> float:
        return float(np.exp(self.log_eps_bar))


class _Welford:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.n - 1)
        # shrink toward a small diagonal, as in standard warmup practice
        return (self.n / (self.n + 5.0)) * var + 1e-3 * (5.0 / (self.n + 5.0))


def _leapfrog(target, theta, r, grad, eps, inv_mass):
    r1 = r + 0.5 * eps * grad
    theta1 = theta + eps * inv_mass * r1
    logp1, grad1 = target(theta1)
    r1 = r1 + 0.5 * eps * grad1
    return theta1, r1, logp1, grad1


def _kinetic(r, inv_mass):
    return 0.5 * float(r @ (inv_mass * r))


class _TreeState:
    __slots__ = ("theta_minus", "r_minus", "grad_minus", "theta_plus",
                 "r_plus", "grad_plus", "theta", "logp", "grad", "log_w",
                 "r_sum", "alpha", "n_alpha", "divergent", "ok")

    def __init__(self):
        self.ok = True
        self.divergent = False


def _find_reasonable_epsilon(target, theta, logp, grad, inv_mass, rng):
    eps = 1.0
    r = rng.standard_normal(theta.size) / np.sqrt(inv_mass)
    h0 = logp - _kinetic(r, inv_mass)
    _, r1, logp1, _ = _leapfrog(target, theta, r, grad, eps, inv_mass)
    h1 = logp1 - _kinetic(r1, inv_mass)
    if not np.isfinite(h1):
        h1 = -np.inf
    direction = 1.0 if (h1 - h0) > np.log(0.5) else -1.0
    for _ in range(50):
        eps *= 2.0 ** direction
        _, r1, logp1, _ = _leapfrog(target, theta, r, grad, eps, inv_mass)
        h1 = logp1 - _kinetic(r1, inv_mass)
        if not np.isfinite(h1):
            h1 = -np.inf
        if direction * (h1 - h0) <= direction * np.log(0.5):
            break
    return max(min(eps, 10.0), 1e-10)


def _build_tree(target, state_point, depth, direction, eps, inv_mass, h0,
                rng, max_depth_leaves):
    """Recursively double the trajectory; multinomial weight per subtree."""
    theta, r, grad = state_point
    out = _TreeState()
    if depth == 0:
        theta1, r1, logp1, grad1 = _leapfrog(target, theta, r, grad,
                                             direction * eps, inv_mass)
        h1 = logp1 - _kinetic(r1, inv_mass) if np.isfinite(logp1) else -np.inf
        delta = h1 - h0
        if not np.isfinite(delta):
            delta = -np.inf
        out.theta_minus = out.theta_plus = out.theta = theta1
        out.r_minus = out.r_plus = r1
        out.grad_minus = out.grad_plus = out.grad = grad1
        out.logp = logp1
        out.log_w = delta
        out.r_sum = r1.copy()
        out.alpha = min(1.0, float(np.exp(min(delta, 0.0))))
        out.n_alpha = 1
        out.divergent = -delta > DIVERGENCE_THRESHOLD
        out.ok = not out.divergent
        return out

    first = _build_tree(target, state_point, depth - 1, direction, eps,
                        inv_mass, h0, rng, max_depth_leaves)
    if not first.ok:
        return first
    if direction == 1:
        edge = (first.theta_plus, first.r_plus, first.grad_plus)
    else:
        edge = (first.theta_minus, first.r_minus, first.grad_minus)
    second = _build_tree(target, edge, depth - 1, direction, eps, inv_mass,
                         h0, rng, max_depth_leaves)

    first.alpha += second.alpha
    first.n_alpha += second.n_alpha
    first.divergent |= second.divergent
    if not second.ok:
        first.ok = False
        return first

    total = np.logaddexp(first.log_w, second.log_w)
    if np.log(rng.uniform()) < second.log_w - total:
        first.theta, first.logp, first.grad = (second.theta, second.logp,
                                               second.grad)
    first.log_w = total
    if direction == 1:
        first.theta_plus = second.theta_plus
        first.r_plus = second.r_plus
        first.grad_plus = second.grad_plus
    else:
        first.theta_minus = second.theta_minus
        first.r_minus = second.r_minus
        first.grad_minus = second.grad_minus
    first.r_sum = first.r_sum + second.r_sum
    span = first.theta_plus - first.theta_minus
    if (span @ (inv_mass * first.r_minus)) < 0 or \
            (span @ (inv_mass * first.r_plus)) < 0:
        first.ok = False
    return first


def _run_chain(logp_grad, dim, cfg: SamplerConfig, chain_idx: int,
               init_center: np.ndarray | None = None,
               mass0: np.ndarray | None = None):
    rng = np.random.default_rng([cfg.seed, chain_idx])
    target = _Target(logp_grad)

    theta = None
    for _ in range(100):
        if init_center is None:
            cand = rng.uniform(-cfg.init_jitter, cfg.init_jitter, size=dim)
        else:
            cand = init_center + rng.uniform(-0.1, 0.1, size=dim)
        logp, grad = target(cand)
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            theta = cand
            break
    if theta is None:
        raise RuntimeError(
            "could not find a finite initial point in 100 attempts")

    inv_mass = np.ones(dim) if mass0 is None else 1.0 / mass0
    eps0 = _find_reasonable_epsilon(target, theta, logp, grad, inv_mass, rng)
    adapt = _DualAveraging(eps0, cfg.target_accept)

    # Warmup phases: step-size only, expanding variance windows, final
    # step-size polish.
    fast1 = max(1, int(round(0.15 * cfg.warmup)))
    fast2 = max(1, int(round(0.10 * cfg.warmup)))
    slow = cfg.warmup - fast1 - fast2
    window_ends: list[int] = []
    w = max(25, slow // 8)
    pos = fast1
    while slow > 0 and pos < fast1 + slow:
        nxt = min(pos + w, fast1 + slow)
        if (fast1 + slow) - nxt < w:
            nxt = fast1 + slow
        window_ends.append(nxt)
        pos = nxt
        w *= 2
    welford = _Welford(dim)

    total = cfg.warmup + cfg.sampling
    draws = np.zeros((cfg.sampling, dim))
    divergent = np.zeros(cfg.sampling, dtype=bool)

    eps = adapt.eps
    for it in range(total):
        r0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = logp - _kinetic(r0, inv_mass)

        state = _TreeState()
        state.theta_minus = state.theta_plus = state.theta = theta
        state.r_minus = state.r_plus = r0
        state.grad_minus = state.grad_plus = state.grad = grad
        state.logp = logp
        state.log_w = 0.0
        state.r_sum = r0.copy()
        state.alpha = 0.0
        state.n_alpha = 0
        state.divergent = False

        for depth in range(cfg.max_tree_depth):
            direction = 1 if rng.uniform() < 0.5 else -1
            if direction == 1:
                edge = (state.theta_plus, state.r_plus, state.grad_plus)
            else:
                edge = (state.theta_minus, state.r_minus, state.grad_minus)
            sub = _build_tree(target, edge, depth, direction, eps, inv_mass,
                              h0, rng, cfg.max_tree_depth)
            state.alpha += sub.alpha
            state.n_alpha += sub.n_alpha
            state.divergent |= sub.divergent
            if not sub.ok:
                break
            total_w = np.logaddexp(state.log_w, sub.log_w)
            if np.log(rng.uniform()) < sub.log_w - state.log_w:
                state.theta, state.logp, state.grad = (sub.theta, sub.logp,
                                                       sub.grad)
            state.log_w = total_w
            if direction == 1:
                state.theta_plus = sub.theta_plus
                state.r_plus = sub.r_plus
                state.grad_plus = sub.grad_plus
            else:
                state.theta_minus = sub.theta_minus
                state.r_minus = sub.r_minus
                state.grad_minus = sub.grad_minus
            state.r_sum = state.r_sum + sub.r_sum
            span = state.theta_plus - state.theta_minus
            if (span @ (inv_mass * state.r_minus)) < 0 or \
                    (span @ (inv_mass * state.r_plus)) < 0:
                break

        theta, logp, grad = state.theta, state.logp, state.grad
        accept_stat = state.alpha / max(state.n_alpha, 1)

        if it < cfg.warmup:
            adapt.update(accept_stat)
            eps = adapt.eps
            in_slow = fast1 <= it < fast1 + slow
            if in_slow:
                welford.push(theta)
                if (it + 1) in window_ends:
                    inv_mass = 1.0 / welford.variance()
                    welford = _Welford(dim)
                    # restart dual averaging anchored at the matured
                    # running average, which is stable against the
                    # oscillation of the instantaneous step size
                    adapt = _DualAveraging(max(adapt.eps_final, 1e-10),
                                           cfg.target_accept)
                    eps = adapt.eps
            if it == cfg.warmup - 1:
                eps = adapt.eps_final
        else:
            draws[it - cfg.warmup] = theta
            divergent[it - cfg.warmup] = state.divergent

    return draws, divergent, eps, target.evals


def sample_model(model, cfg: SamplerConfig,
                 compute_pointwise: bool = True
                 ) -> tuple[PosteriorDraws, Diagnostics]:
    """Run the sampler on any object exposing ``logp_grad`` and a layout."""
    layout = getattr(model, "layout", None)
    dim = layout.size if layout is not None else model.dim

    init_center = None
    mass0 = None
    if cfg.init == "map":
        init_center = warm_start_point(model, seed=cfg.seed)
        if init_center is None:
            logger.info("warm start failed; falling back to random init")
        else:
            mass0 = _diag_curvature(model, init_center)

    def run(c):
        return _run_chain(model.logp_grad, dim, cfg, c, init_center, mass0)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, range(cfg.chains)))
    else:
        results = [run(c) for c in range(cfg.chains)]

    draws = np.stack([r[0] for r in results])
    divergent = np.stack([r[1] for r in results])
    step_sizes = np.array([r[2] for r in results])

    n_div = int(divergent.sum())
    if n_div > 0.10 * divergent.size:
        warnings.warn(
            f"{n_div} of {divergent.size} transitions were divergent",
            RuntimeWarning, stacklevel=2)

    pointwise = None
    if compute_pointwise and hasattr(model, "pointwise_loglik"):
        flat = draws.reshape(-1, dim)
        pointwise = np.asarray([model.pointwise_loglik(t) for t in flat])

    names = (layout.parameter_names() if layout is not None
             else [f"theta[{i}]" for i in range(dim)])
    post = PosteriorDraws(layout=layout, draws=draws, divergent=divergent,
                          step_sizes=step_sizes, pointwise_loglik=pointwise,
                          parameter_names=names)
    if cfg.chains >= 2 and cfg.sampling >= 4:
        diag = rhat_ess(post)
    else:
        nan = {n: float("nan") for n in names}
        diag = Diagnostics(rhat=dict(nan), ess_bulk=dict(nan),
                           divergences=n_div)
    diag.divergences = n_div
    return post, diag


def sample(spec, data, cfg: SamplerConfig,
           compute_pointwise: bool = True
           ) -> tuple[PosteriorDraws, Diagnostics]:
    """Build the model for (spec, data) and sample its posterior."""
    from .models import build_model
    return sample_model(build_model(spec, data), cfg,
                        compute_pointwise=compute_pointwise)


# ---------------------------------------------------------------------------
# MAP optimization
# ---------------------------------------------------------------------------

def _negative_logp(model):
    def objective(theta):
        logp, grad = model.logp_grad(theta)
        if not np.isfinite(logp):
            return 1e30, np.zeros_like(theta)
        return -logp, -grad
    return objective


def _lbfgs(model, x0, max_iter):
    return minimize(_negative_logp(model), x0, jac=True, method="L-BFGS-B",
                    options={"maxiter": max_iter, "gtol": 1e-10,
                             "ftol": 1e-18, "maxls": 100})


def warm_start_point(model, seed: int = 0) -> np.ndarray | None:
    """Best-effort posterior-mode search used to initialize chains."""
    layout = getattr(model, "layout", None)
    dim = layout.size if layout is not None else model.dim
    res = _lbfgs(model, np.zeros(dim), max_iter=500)
    if np.isfinite(res.fun) and res.fun < 1e29:
        return res.x
    rng = np.random.default_rng(seed)
    res = _lbfgs(model, rng.uniform(-1, 1, size=dim), max_iter=500)
    if np.isfinite(res.fun) and res.fun < 1e29:
        return res.x
    return None


def _diag_curvature(model, mode: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Diagonal negative-Hessian estimate at a mode (one FD pass on the
    analytic gradient per axis); used as the initial inverse mass."""
    dim = mode.size
    diag = np.ones(dim)
    for j in range(dim):
        up, dn = mode.copy(), mode.copy()
        up[j] += h
        dn[j] -= h
        gu = model.logp_grad(up)[1][j]
        gd = model.logp_grad(dn)[1][j]
        diag[j] = -(gu - gd) / (2 * h)
    diag = np.where(np.isfinite(diag) & (diag > 0), diag, 1.0)
    return np.clip(diag, 1e-8, 1e12)


def map_fit(model, restarts: int = 3, seed: int = 0,
            grad_tol: float = 1e-6, max_iter: int = 2000) -> ParamVector:
    """Quasi-Newton ascent of the log posterior; best of several restarts."""
    layout = getattr(model, "layout", None)
    dim = layout.size if layout is not None else model.dim
    rng = np.random.default_rng(seed)

    best = None
    best_val = np.inf
    best_gnorm = np.inf
    for k in range(max(restarts, 1)):
        x0 = (np.zeros(dim) if k == 0
              else rng.uniform(-1.5, 1.5, size=dim))
        res = _lbfgs(model, x0, max_iter)
        gnorm = float(np.max(np.abs(res.jac)))
        if res.fun < best_val and gnorm < grad_tol:
            best, best_val = res, res.fun
        best_gnorm = min(best_gnorm, gnorm)
    if best is None:
        raise RuntimeError(
            "MAP optimization failed to reach gradient tolerance "
            f"{grad_tol} (best gradient norm {best_gnorm:.2e})")
    if layout is None:
        layout = Layout([])
        layout.size = dim
    return ParamVector(layout=layout, theta=best.x)


# ---------------------------------------------------------------------------
# Convergence diagnostics
# ---------------------------------------------------------------------------

def _split_chains(x: np.ndarray) -> np.ndarray:
    n = x.shape[1] // 2
    return np.vstack([x[:, :n], x[:, x.shape[1] - n:]])


def _rhat_1d(x: np.ndarray) -> float:
    """Split R-hat on a (chains, draws) array of one parameter."""
    x = _split_chains(x)
    m, n = x.shape
    if n < 2:
        return float("nan")
    chain_means = x.mean(axis=1)
    within = x.var(axis=1, ddof=1).mean()
    between = n * np.var(chain_means, ddof=1)
    if within == 0:
        return float("nan")
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    pad = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, pad)
    acov = np.fft.irfft(f * np.conj(f), pad)[:n].real / n
    return acov


def _ess_1d(x: np.ndarray) -> float:
    """Bulk ESS via Geyer's initial monotone sequence on split chains."""
    x = _split_chains(x)
    m, n = x.shape
    if n < 4 or np.allclose(x, x.ravel()[0]):
        return float("nan")
    acov = np.asarray([_autocov(x[c]) for c in range(m)])
    chain_means = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(chain_means, ddof=1)
    if var_plus == 0:
        return float("nan")

    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 2 and (rho_even + rho_odd) >= 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        rho[t + 1] = rho_even
        if rho_even + rho_odd >= 0:
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t + 1: max_t + 2].sum()
    return float(m * n / max(tau, 1e-12))


def rhat_ess(draws: PosteriorDraws) -> Diagnostics:
    """Split R-hat and bulk effective sample size per parameter."""
    arr = draws.draws
    if arr.shape[0] < 2 or arr.shape[1] < 4:
        raise ValueError("diagnostics need >= 2 chains and >= 4 draws each")
    rhat: dict[str, float] = {}
    ess: dict[str, float] = {}
    constant = []
    for j, name in enumerate(draws.parameter_names):
        x = arr[:, :, j]
        if np.allclose(x, x.ravel()[0]):
            rhat[name] = float("nan")
            ess[name] = float("nan")
            constant.append(name)
            continue
        rhat[name] = _rhat_1d(x)
        ess[name] = _ess_1d(x)
    if constant:
        warnings.warn(
            f"R-hat undefined for constant chains: {constant[:5]}",
            RuntimeWarning, stacklevel=2)
    return Diagnostics(rhat=rhat, ess_bulk=ess,
                       divergences=int(draws.divergent.sum()))


def summarize(draws: PosteriorDraws,
              probs: tuple[float, ...] = (0.025, 0.25, 0.75, 0.975)
              ) -> list[dict[str, float]]:
    """Per-parameter posterior medians and quantiles on the natural scale."""
    flat = draws.stacked()
    if flat.size == 0:
        raise ValueError("no draws to summarize")
    rows = []
    transforms = {}
    if draws.layout is not None:
        for b in draws.layout.blocks:
            sl = draws.layout.sl(b.name)
            for j in range(sl.start, sl.stop):
                transforms[j] = b.transform
    for j, name in enumerate(draws.parameter_names):
        x = flat[:, j]
        if transforms.get(j) == "log":
            x = np.exp(x)
        row = {"parameter": name, "median": float(np.median(x))}
        for p in probs:
            row[f"q{p}"] = float(np.quantile(x, p))
        rows.append(row)
    return rows
