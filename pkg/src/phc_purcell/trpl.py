"""Time-resolved photoluminescence: IRF-convolved multi-exponential decays.

Each component is an exponential of lifetime ``tau`` convolved with a Gaussian
instrument response of standard deviation ``sigma``::

    h(u) = 1/2 exp(sigma^2 / (2 tau^2) - u / tau) erfc((sigma^2 - u tau) / (sqrt(2) sigma tau))

with ``u = t - t0``. ``h`` tends to ``exp(-u / tau)`` for ``u > 0`` as
``sigma -> 0`` and integrates to ``tau``, so the amplitudes ``a_i`` are the
unconvolved peak heights. All times are in ns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, erfcx, ndtr

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
DEFAULT_SIGMA_NS = 0.070 / SQRT2  # sqrt(2) sigma = 70 ps detector resolution
DEFAULT_REP_PERIOD_NS = 12.5  # 80 MHz

LM_LAMBDA0 = 1e-3
LM_MAX_ITER = 200
LM_XTOL = 1e-8
NEGLIGIBLE_SIGMA = 1e-12  # relative to tau; below this the IRF is treated as a delta
COLLAPSE_RTOL = 1e-3  # two lifetimes this close describe one exponential


class FitError(ValueError):
    pass


class DegenerateFitError(FitError):
    """The normal matrix is singular; two parameters cannot be separated."""


@dataclass
class DecayModelParams:
    components: list  # [(amplitude, tau_ns), ...], sorted fast first
    sigma: float = DEFAULT_SIGMA_NS
    baseline: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        comps = [(float(a), float(tau)) for a, tau in self.components]
        if not comps:
            raise ValueError("at least one decay component is required")
        for a, tau in comps:
            if not tau > 0:
                raise ValueError(f"lifetimes must be positive, got {tau}")
            if a < 0:
                raise ValueError(f"amplitudes must be non-negative, got {a}")
        if self.sigma < 0 or self.baseline < 0:
            raise ValueError("sigma and baseline must be non-negative")
        self.components = sorted(comps, key=lambda c: c[1])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([a for a, _ in self.components])

    @property
    def lifetimes(self) -> np.ndarray:
        return np.array([tau for _, tau in self.components])


@dataclass
class DecayHistogram:
    bin_width: float
    counts: np.ndarray
    t_start: float = 0.0
    rep_period: float = DEFAULT_REP_PERIOD_NS

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be non-negative")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")

    @property
    def total_counts(self):
        return self.counts.sum()

    @property
    def edges(self) -> np.ndarray:
        return self.t_start + self.bin_width * np.arange(len(self.counts) + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.t_start + self.bin_width * (np.arange(len(self.counts)) + 0.5)


@dataclass
class DecayFit:
    params: DecayModelParams
    std_errors: dict
    covariance: np.ndarray
    param_names: list
    reduced_chi2: float
    n_iterations: int
    converged: bool
    sigma_fixed: bool = True
    extras: dict = field(default_factory=dict)

    @property
    def lifetimes(self) -> np.ndarray:
        return self.params.lifetimes

    def lifetime_errors(self) -> np.ndarray:
        return np.array([self.std_errors[f"tau_{k}"] for k in range(len(self.params.components))])

    def to_dict(self) -> dict:
        return {
            "params": {
                "components": [[a, tau] for a, tau in self.params.components],
                "sigma": self.params.sigma,
                "baseline": self.params.baseline,
                "t0": self.params.t0,
            },
            "std_errors": dict(self.std_errors),
            "covariance": np.asarray(self.covariance).tolist(),
            "param_names": list(self.param_names),
            "reduced_chi2": self.reduced_chi2,
            "n_iterations": self.n_iterations,
            "converged": self.converged,
        }


# --- kernel ----------------------------------------------------------------------

def _kernel(u, tau, sigma):
    """``h(u)`` for one component, overflow-free for any ``tau / sigma``."""
    u = np.asarray(u, dtype=float)
    if sigma <= NEGLIGIBLE_SIGMA * tau:
        return np.where(u > 0, np.exp(-np.clip(u, 0, None) / tau), np.where(u == 0, 0.5, 0.0))
    z = (sigma / tau - u / sigma) / SQRT2
    out = np.empty_like(z)
    pos = z >= 0
    # z >= 0: exp(-u^2/2s^2) * erfcx(z); z < 0: the exponent below is <= -s^2/2tau^2 < 0
    out[pos] = 0.5 * np.exp(-0.5 * (u[pos] / sigma) ** 2) * erfcx(z[pos])
    neg = ~pos
    out[neg] = 0.5 * np.exp(0.5 * (sigma / tau) ** 2 - u[neg] / tau) * erfc(z[neg])
    return out


def _gauss(u, sigma):
    return np.exp(-0.5 * (u / sigma) ** 2) / (SQRT2PI * sigma)


def decay_model(t, params: DecayModelParams):
    """IRF-convolved multi-exponential intensity at times ``t`` (ns)."""
    u = np.asarray(t, dtype=float) - params.t0
    out = np.full(u.shape, float(params.baseline))
    for a, tau in params.components:
        out = out + a * _kernel(u, tau, params.sigma)
    return out


def _cumulative(u, tau, sigma):
    """``H(u) = int_{-inf}^u h = tau * (Phi(u / sigma) - h(u))``."""
    if sigma <= NEGLIGIBLE_SIGMA * tau:
        return tau * np.where(u > 0, -np.expm1(-np.clip(u, 0, None) / tau), 0.0)
    return tau * (ndtr(u / sigma) - _kernel(u, tau, sigma))


def binned_model(edges, params: DecayModelParams) -> np.ndarray:
    """Mean of :func:`decay_model` over each bin (exact bin integral / width)."""
    edges = np.asarray(edges, dtype=float)
    u = edges - params.t0
    width = np.diff(edges)
    out = np.full(len(width), float(params.baseline))
    for a, tau in params.components:
        out = out + a * np.diff(_cumulative(u, tau, params.sigma)) / width
    return out


def _binned_with_jacobian(edges, amps, taus, baseline, t0, sigma, fit_sigma):
    """Bin-mean model and its Jacobian w.r.t. (a..., tau..., baseline, t0[, sigma])."""
    u = np.asarray(edges, dtype=float) - t0
    width = np.diff(edges)
    n = len(amps)
    cols = []
    model = np.full(len(width), float(baseline))
    d_t0 = np.zeros(len(width))
    d_sigma = np.zeros(len(width))
    dtau_cols = []
    for a, tau in zip(amps, taus):
        h = _kernel(u, tau, sigma)
        H = tau * (ndtr(u / sigma) - h)
        model = model + a * np.diff(H) / width
        cols.append(np.diff(H) / width)
        g = _gauss(u, sigma)
        dh_dtau = ((u - sigma**2 / tau) * h + sigma**2 * g) / tau**2
        dH_dtau = (ndtr(u / sigma) - h) - tau * dh_dtau
        dtau_cols.append(a * np.diff(dH_dtau) / width)
        # dH/du = h, and t0 enters through u = t - t0
        d_t0 -= a * np.diff(h) / width
        if fit_sigma:
            h2 = h / tau**2 - g / tau - u * g / sigma**2
            dH_dsigma = tau * (-(u / sigma) * g - sigma * h2)
            d_sigma += a * np.diff(dH_dsigma) / width
    jac = cols + dtau_cols + [np.ones(len(width)), d_t0]
    if fit_sigma:
        jac.append(d_sigma)
    assert len(jac) == 2 * n + 2 + int(fit_sigma)
    return model, np.column_stack(jac)


# --- Monte Carlo -----------------------------------------------------------------

def simulate_histogram(
    params: DecayModelParams,
    n_photons: int,
    dark_rate: float = 0.0,
    acquisition_time: float = 0.0,
    bin_width: float = 0.01,
    rep_period: float = DEFAULT_REP_PERIOD_NS,
    wrap: bool = False,
    seed: int = 0,
    t_start: float = -1.0,
) -> DecayHistogram:
    """Photon-arrival histogram on ``[t_start, t_start + rep_period)``.

    Each photon picks a component with probability ``a_i tau_i / sum a_j tau_j``,
    an exponential delay of that lifetime and Gaussian timing jitter ``sigma``.
    Dark counts (rate in 1/s over ``acquisition_time`` s) arrive uniformly.
    """
    if n_photons < 0:
        raise ValueError("n_photons must be non-negative")
    if not (bin_width > 0 and rep_period > 0):
        raise ValueError("bin_width and rep_period must be positive")
    if dark_rate < 0 or acquisition_time < 0:
        raise ValueError("dark_rate and acquisition_time must be non-negative")
    rng = np.random.default_rng(seed)
    n_bins = int(round(rep_period / bin_width))
    edges = t_start + bin_width * np.arange(n_bins + 1)
    counts = np.zeros(n_bins, dtype=np.int64)

    if n_photons:
        weights = params.amplitudes * params.lifetimes
        if weights.sum() <= 0:
            raise ValueError("all component amplitudes are zero")
        which = rng.choice(len(weights), size=n_photons, p=weights / weights.sum())
        t = params.t0 + rng.exponential(params.lifetimes[which])
        if params.sigma > 0:
            t = t + rng.normal(0.0, params.sigma, size=n_photons)
        if wrap:
            t = t_start + np.mod(t - t_start, rep_period)
        counts += np.histogram(t, bins=edges)[0]

    n_dark = rng.poisson(dark_rate * acquisition_time)
    if n_dark:
        counts += np.histogram(rng.uniform(t_start, t_start + rep_period, size=n_dark), bins=edges)[0]
    return DecayHistogram(bin_width=bin_width, counts=counts, t_start=t_start, rep_period=rep_period)


# --- fitting ------------------------------------------------------------------------

def _log_line(t, y):
    """Weighted line through log(y); returns (rate, log-amplitude at t=0)."""
    w = np.sqrt(y)
    slope, intercept = np.polyfit(t, np.log(y), 1, w=w)
    return -slope, intercept


def initial_guess(hist: DecayHistogram, n_components: int, sigma: float) -> DecayModelParams:
    """Tail fits on log-counts: long lifetime first, then the residual for the fast one."""
    t = hist.centers
    c = np.asarray(hist.counts, dtype=float)
    k_peak = int(np.argmax(c))
    pre = t < t[k_peak] - max(5 * sigma, 5 * hist.bin_width) - 0.2
    baseline = float(c[pre].mean()) if pre.sum() >= 3 else 0.0
    net = c - baseline
    peak = net[k_peak]
    if not peak > 0:
        raise FitError("histogram has no peak above baseline")
    rising = np.nonzero(net[:k_peak + 1] >= 0.5 * peak)[0]
    t0 = float(t[rising[0]]) if len(rising) else float(t[k_peak])

    floor = max(3.0 * math.sqrt(max(baseline, 1.0)), 10.0)
    after = np.arange(len(t)) > k_peak
    tail = after & (net > floor) & (net < 10 * floor)
    if tail.sum() < 3:
        tail = after & (net > floor)
    if tail.sum() < 3:
        tail = after & (net > 0)
    if tail.sum() < 2:
        raise FitError("too few counts after the peak to initialise the fit")
    rate, icpt = _log_line(t[tail] - t0, net[tail])
    tau_l = 1.0 / rate if rate > 0 else (t[-1] - t0) / 3
    a_l = math.exp(icpt) if rate > 0 else float(peak)
    comps = [(a_l, tau_l)]

    if n_components == 2:
        resid = net - a_l * np.exp(-np.clip(t - t0, 0, None) / tau_l) * (t >= t0)
        rpeak = float(resid[after].max()) if after.any() else 0.0
        early = after & (resid > max(rpeak / 10, floor)) & (t - t0 < tau_l)
        tau_f = a_f = None
        if early.sum() >= 3:
            r, ic = _log_line(t[early] - t0, resid[early])
            if r > 1.0 / tau_l:
                tau_f, a_f = 1.0 / r, math.exp(ic)
        if tau_f is None:
            tau_f, a_f = tau_l / 10, max(rpeak, 0.1 * a_l)
        comps.append((a_f, tau_f))
    return DecayModelParams(components=comps, sigma=sigma, baseline=max(baseline, 0.0), t0=t0)


def _param_names(n: int, fit_sigma: bool) -> list:
    names = [f"a_{k}" for k in range(n)] + [f"tau_{k}" for k in range(n)] + ["baseline", "t0"]
    return names + (["sigma"] if fit_sigma else [])


def _check_singular(normal: np.ndarray, names: list) -> np.ndarray:
    d = np.sqrt(np.diag(normal))
    dead = np.nonzero(~(d > 0))[0]
    if len(dead):
        other = names[(dead[0] + 1) % len(names)] if len(dead) == 1 else names[dead[1]]
        raise DegenerateFitError(f"singular normal matrix: parameter {names[dead[0]]!r} has no "
                                 f"influence (degenerate with {other!r})")
    corr = normal / np.outer(d, d)
    if np.linalg.cond(corr) > 1e14:
        off = np.abs(corr - np.eye(len(d)))
        i, j = np.unravel_index(int(np.argmax(off)), off.shape)
        raise DegenerateFitError(f"singular normal matrix: parameters {names[i]!r} and {names[j]!r} "
                                 f"are degenerate (correlation {corr[i, j]:+.12f})")
    return np.linalg.inv(corr) / np.outer(d, d)


def fit_decay(
    hist: DecayHistogram,
    n_components: int = 2,
    sigma_mode: str = "fixed",
    sigma: float = DEFAULT_SIGMA_NS,
    init: DecayModelParams | None = None,
) -> DecayFit:
    """Weighted Levenberg-Marquardt fit of the binned decay model.

    Minimises ``sum (c_k - m_k)^2 / max(c_k, 1)``. ``sigma_mode`` is
    ``"fixed"`` (``sigma`` held) or ``"free"`` (``sigma`` is the start value).
    """
    if n_components not in (1, 2):
        raise ValueError("n_components must be 1 or 2")
    if sigma_mode not in ("fixed", "free"):
        raise ValueError(f"unknown sigma_mode {sigma_mode!r}")
    if len(hist.counts) == 0 or not hist.total_counts > 0:
        raise ValueError("histogram is empty")
    if not sigma > 0:
        raise ValueError("the fit needs a positive IRF width sigma")
    fit_sigma = sigma_mode == "free"
    if init is None:
        init = initial_guess(hist, n_components, sigma)
    if len(init.components) != n_components:
        raise ValueError("init has the wrong number of components")

    edges = hist.edges
    c = np.asarray(hist.counts, dtype=float)
    weight = 1.0 / np.maximum(c, 1.0)
    n = n_components
    names = _param_names(n, fit_sigma)
    # longest lifetime last, as in the canonical order
    p = np.concatenate([init.amplitudes, init.lifetimes, [init.baseline, init.t0]])
    if fit_sigma:
        p = np.append(p, init.sigma)

    def unpack(q):
        s = q[2 * n + 2] if fit_sigma else sigma
        return q[:n], q[n:2 * n], q[2 * n], q[2 * n + 1], s

    def project(q, prev):
        """Clip a trial point onto the feasible set (a >= 0, baseline >= 0, tau > 0, sigma > 0)."""
        q = q.copy()
        q[:n] = np.maximum(q[:n], 0.0)
        q[2 * n] = max(q[2 * n], 0.0)
        # positive scales may shrink at most tenfold per step
        scale_idx = list(range(n, 2 * n)) + ([2 * n + 2] if fit_sigma else [])
        for k in scale_idx:
            q[k] = max(q[k], 0.1 * prev[k])
        return q

    def evaluate(q):
        a, tau, base, t0, s = unpack(q)
        m, jac = _binned_with_jacobian(edges, a, tau, base, t0, s, fit_sigma)
        r = c - m
        return float(np.sum(weight * r * r)), r, jac

    # absolute scales below which a parameter change is immaterial: one count, one bin
    floor = np.concatenate([np.ones(n), np.full(n, 1e-9), [1.0, hist.bin_width]])
    if fit_sigma:
        floor = np.append(floor, 1e-9)

    cost, r, jac = evaluate(p)
    lam = LM_LAMBDA0
    converged = False
    it = 0
    while it < LM_MAX_ITER:
        it += 1
        if cost == 0.0:
            converged = True
            break
        normal = jac.T @ (weight[:, None] * jac)
        grad = jac.T @ (weight * r)
        damped = normal + lam * np.diag(np.diag(normal))
        try:
            step = np.linalg.solve(damped, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(damped, grad, rcond=None)[0]
        trial = project(p + step, p)
        t_cost, t_r, t_jac = evaluate(trial)
        if t_cost < cost:
            rel = np.max(np.abs(trial - p) / np.maximum(np.abs(p), floor))
            p, cost, r, jac = trial, t_cost, t_r, t_jac
            lam /= 10.0
            if rel < LM_XTOL:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left: a stationary point at working precision
                converged = True
                break

    dof = max(len(c) - len(p), 1)
    red_chi2 = cost / dof
    normal = jac.T @ (weight[:, None] * jac)
    try:
        cov = _check_singular(normal, names) * red_chi2
    except DegenerateFitError as exc:
        a, tau, *_ = unpack(p)
        collapsed = n == 2 and (abs(tau[0] - tau[1]) <= COLLAPSE_RTOL * tau.max() or a.min() <= 1e-9 * a.sum())
        if not collapsed:
            raise
        return _collapsed_fit(hist, p, names, fit_sigma, sigma, it, str(exc))
    cov = 0.5 * (cov + cov.T)
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    a, tau, base, t0, s = unpack(p)
    order = np.argsort(tau)
    perm = list(order) + list(n + order) + list(range(2 * n, len(p)))
    cov = cov[np.ix_(perm, perm)]
    errs = errs[perm]
    params = DecayModelParams(
        components=[(float(a[k]), float(tau[k])) for k in order],
        sigma=float(s), baseline=float(base), t0=float(t0),
    )
    return DecayFit(
        params=params,
        std_errors={name: float(e) for name, e in zip(names, errs)},
        covariance=cov,
        param_names=names,
        reduced_chi2=float(red_chi2),
        n_iterations=it,
        converged=converged,
        sigma_fixed=not fit_sigma,
    )


def _collapsed_fit(hist, p, names, fit_sigma, sigma, n_outer, reason) -> DecayFit:
    """Two-component optimum that is really one exponential.

    Refit with a single component and report it as both components: the
    lifetimes coincide, the amplitudes keep their split, and the covariance is
    the single-component one mapped onto the two-component parameters.
    """
    a, tau = p[:2], p[2:4]
    total = float(a.sum())
    share = a / total if total > 0 else np.array([0.5, 0.5])
    tau_mean = float(np.dot(share, tau))
    init = DecayModelParams([(total, tau_mean)], sigma=p[6] if fit_sigma else sigma,
                            baseline=float(p[4]), t0=float(p[5]))
    single = fit_decay(hist, 1, "free" if fit_sigma else "fixed", sigma, init)
    (a1, tau1), = single.params.components
    # rows: a_0, a_1, tau_0, tau_1, baseline, t0[, sigma]; columns: a, tau, baseline, t0[, sigma]
    m = len(single.param_names)
    jmap = np.zeros((len(names), m))
    jmap[0, 0], jmap[1, 0] = share
    jmap[2, 1] = jmap[3, 1] = 1.0
    jmap[4:, 2:] = np.eye(m - 2)
    cov = jmap @ single.covariance @ jmap.T
    cov = 0.5 * (cov + cov.T)
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    params = DecayModelParams(components=[(float(share[0] * a1), tau1), (float(share[1] * a1), tau1)],
                              sigma=single.params.sigma, baseline=single.params.baseline, t0=single.params.t0)
    return DecayFit(
        params=params,
        std_errors={name: float(e) for name, e in zip(names, errs)},
        covariance=cov,
        param_names=names,
        reduced_chi2=single.reduced_chi2,
        n_iterations=n_outer + single.n_iterations,
        converged=single.converged,
        sigma_fixed=not fit_sigma,
        extras={"degenerate": True, "reason": reason},
    )


def _component(fit, component: str) -> tuple[float, float]:
    if isinstance(fit, DecayFit):
        n = len(fit.params.components)
        if component == "long":
            k = n - 1
        elif component == "fast":
            if n < 2:
                raise FitError("fit has no fast component")
            k = 0
        else:
            raise ValueError(f"component must be 'fast' or 'long', got {component!r}")
        return float(fit.params.components[k][1]), fit.std_errors[f"tau_{k}"]
    tau, err = fit
    return float(tau), float(err)


def lifetime_ratio(fit_ref, fit_cav, component: str = "long") -> tuple[float, float]:
    """``tau_ref / tau_cav`` with independent-error propagation.

    Either argument may be a :class:`DecayFit` or a ``(tau, std_error)`` pair.
    """
    t_ref, s_ref = _component(fit_ref, component)
    t_cav, s_cav = _component(fit_cav, component)
    ratio = t_ref / t_cav
    return ratio, ratio * math.hypot(s_ref / t_ref, s_cav / t_cav)
