"""Gibbs/Metropolis sampler used as an independent check on the grid fits.

The sampler treats the slope of the error-prone covariate as an ordinary
regression coefficient (no copy augmentation): each sweep cycles exact
conjugate draws for the precisions and the exposure coefficients, latent
updates for x (exact for Gaussian responses, componentwise random-walk
Metropolis otherwise), a regression-block update (conjugate for Gaussian,
joint random-walk Metropolis otherwise), and the family precision.

Proposal scales adapt by Robbins-Monro toward a 0.35 acceptance rate and
freeze when burn-in ends. All randomness flows through one counter-based
generator (Philox) seeded explicitly, so chains are reproducible bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericError, SpecError
from .model import JointModel
from .priors import FixedValue, GammaPrior, GaussianPrior

__all__ = [
    "ChainConfig",
    "ChainOutput",
    "ChainState",
    "tau_x_conditional",
    "tau_u_conditional",
    "alpha_conditional",
    "gibbs_tau_x",
    "gibbs_tau_u",
    "gibbs_alpha",
    "mh_latent_x",
    "mh_beta",
    "run_chain",
    "effective_sample_size",
]

ADAPT_TARGET = 0.35
_ADAPT_OFFSET = 10.0
_LOG_SCALE_BOUND = 20.0
DEFAULT_PROPOSAL_SCALES = {"x": 0.5, "beta": 0.2, "gamma": 0.5}


@dataclass(frozen=True)
class ChainConfig:
    """Sampler run parameters; defaults follow the reference run lengths."""

    iterations: int = 100_000
    burn_in: int = 10_000
    thin: int = 10
    seed: Optional[int] = None
    proposal_scales: Optional[dict] = None
    adapt: bool = True
    monitor_x: Optional[tuple] = None
    store_x: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise SpecError("iterations must be positive, got %d" % self.iterations)
        if not 0 <= self.burn_in < self.iterations:
            raise SpecError(
                "burn_in must satisfy 0 <= burn_in < iterations, got %d/%d"
                % (self.burn_in, self.iterations)
            )
        if self.thin < 1:
            raise SpecError("thin must be >= 1, got %d" % self.thin)
        if self.seed is None:
            raise SpecError("a seed is required: chains must be reproducible")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= int(self.seed) < 2**64):
            raise SpecError("seed must be a 64-bit unsigned integer, got %r" % (self.seed,))
        if self.proposal_scales is not None:
            unknown = set(self.proposal_scales) - set(DEFAULT_PROPOSAL_SCALES)
            if unknown:
                raise SpecError(
                    "unknown proposal scale blocks: %s" % ", ".join(sorted(unknown))
                )
            for name, value in self.proposal_scales.items():
                if not (np.isfinite(value) and value >= 0.0):
                    raise SpecError("proposal scale %r must be >= 0, got %r" % (name, value))

    @property
    def kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ChainOutput:
    """Thinned draws plus per-block Metropolis acceptance rates."""

    names: tuple
    draws: np.ndarray
    acceptance_rates: dict
    config: ChainConfig

    def column(self, name: str) -> np.ndarray:
        if name not in self.names:
            raise SpecError(
                "no monitored parameter %r (have: %s)" % (name, ", ".join(self.names))
            )
        return self.draws[:, self.names.index(name)]


@dataclass
class ChainState:
    """Current values of every sampled block."""

    x: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    tau_u: float
    tau_x: float = math.nan
    tau_eps: float = math.nan
    tau_gamma: float = math.nan


# ---------------------------------------------------------------------------
# conjugate conditionals (pure parameter computations)


def tau_x_conditional(x: np.ndarray, exposure_mean: np.ndarray, prior: GammaPrior) -> tuple:
    """Gamma(shape, rate) of the exposure precision given x and its mean."""
    resid = np.asarray(x, dtype=float) - np.asarray(exposure_mean, dtype=float)
    shape = prior.shape + 0.5 * resid.size
    rate = prior.rate + 0.5 * float(resid @ resid)
    return shape, rate


def tau_u_conditional(
    w: np.ndarray, x_at_w: np.ndarray, weights: np.ndarray, prior: GammaPrior
) -> tuple:
    """Gamma(shape, rate) of the error precision given all proxy residuals.

    Rows cover every replicate measurement; `weights` are the known per-row
    precision factors (all ones in the homoscedastic case). The same form
    serves both error kinds since the residual enters squared.
    """
    w = np.asarray(w, dtype=float)
    resid = w - np.asarray(x_at_w, dtype=float)
    shape = prior.shape + 0.5 * w.size
    rate = prior.rate + 0.5 * float((np.asarray(weights, dtype=float) * resid) @ resid)
    return shape, rate


def alpha_conditional(
    x: np.ndarray,
    design: np.ndarray,
    tau_x: float,
    prior_mean: np.ndarray,
    prior_precision: np.ndarray,
) -> tuple:
    """Gaussian (mean, precision matrix) of the exposure coefficients."""
    design = np.atleast_2d(np.asarray(design, dtype=float))
    prior_mean = np.asarray(prior_mean, dtype=float)
    prior_precision = np.asarray(prior_precision, dtype=float)
    precision = tau_x * (design.T @ design) + np.diag(prior_precision)
    rhs = tau_x * (design.T @ np.asarray(x, dtype=float)) + prior_precision * prior_mean
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        raise NumericError(
            "exposure-coefficient conditional precision is singular "
            "(flat priors with a degenerate design)"
        )
    mean = _chol_solve(chol, rhs)
    return mean, precision


def _chol_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    half = solve_triangular(chol, rhs, lower=True)
    return solve_triangular(chol.T, half, lower=False)


def _draw_gamma(rng, shape: float, rate: float) -> float:
    return float(rng.gamma(shape, 1.0 / rate))


def _draw_mvn_from_precision(rng, mean: np.ndarray, precision: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(precision)
    noise = solve_triangular(chol.T, rng.standard_normal(mean.size), lower=False)
    return mean + noise


# ---------------------------------------------------------------------------
# family log-likelihood pieces


def _loglik_terms(family: str, y: np.ndarray, trials: np.ndarray, eta: np.ndarray) -> np.ndarray:
    if family == "binomial":
        return y * eta - trials * np.logaddexp(0.0, eta)
    if family == "poisson":
        with np.errstate(over="ignore"):
            return y * eta - np.exp(eta)
    raise SpecError("no Metropolis likelihood for family %r" % family)


# ---------------------------------------------------------------------------
# sampler plumbing derived from a JointModel


@dataclass
class _Sampler:
    model: JointModel
    family: str
    error_kind: str
    # regression block
    y: np.ndarray
    trials: np.ndarray
    reg_rows: np.ndarray
    X: np.ndarray          # columns: intercept, x slot, covariates
    x_col: int
    beta_names: tuple
    beta_free: np.ndarray
    beta_mean: np.ndarray
    beta_prec: np.ndarray
    # latent exposure plumbing
    n_x: int
    x_index: np.ndarray
    w: np.ndarray
    d: np.ndarray
    proxy_index: np.ndarray
    sum_d: np.ndarray
    sum_dw: np.ndarray
    # classical exposure model
    exp_design: Optional[np.ndarray] = None
    alpha_names: tuple = ()
    alpha_free: Optional[np.ndarray] = None
    alpha_mean: Optional[np.ndarray] = None
    alpha_prec: Optional[np.ndarray] = None
    tau_x_prior: object = None
    # berkson prior pieces
    w_group: Optional[np.ndarray] = None
    d_group: Optional[np.ndarray] = None
    # hyperpriors
    tau_u_prior: object = None
    tau_eps_prior: object = None
    tau_gamma_prior: object = None
    has_gamma: bool = False

    def eta(self, state: ChainState) -> np.ndarray:
        X = self.X.copy()
        X[:, self.x_col] = state.x[self.x_index]
        eta = X @ state.beta
        if self.has_gamma:
            eta = eta + state.gamma
        return eta


def _prior_mean_prec(prior) -> tuple:
    if isinstance(prior, FixedValue):
        return prior.value, math.inf
    if isinstance(prior, GaussianPrior):
        return prior.mean, prior.precision
    raise SpecError("expected a gaussian or fixed prior, got %r" % (prior,))


def _prepare(model: JointModel) -> _Sampler:
    spec = model.spec
    if model.is_augmented:
        raise SpecError("the sampler works on the plain model, not the augmented one")
    if spec.error is None:
        raise SpecError("the sampler requires a measurement error model")
    family = spec.observation.family
    if family not in ("gaussian", "binomial", "poisson"):
        raise SpecError("unsupported family for the sampler: %r" % family)
    error_kind = spec.error.kind

    n = model.n
    reg_rows = model.reg_rows
    y = model.y[reg_rows]
    trials = model.trials[reg_rows]

    p = model.Z.shape[1]
    X = np.empty((reg_rows.size, 2 + p))
    X[:, 0] = 1.0
    X[:, 1] = 0.0
    X[:, 2:] = model.Z[reg_rows]
    beta_priors = [spec.beta0, spec.beta_x] + list(spec.beta_z)
    beta_names = ("beta_0", "beta_x") + tuple("beta_%s" % c for c in spec.covariates)
    beta_mean = np.array([_prior_mean_prec(pr)[0] for pr in beta_priors])
    beta_prec = np.array([_prior_mean_prec(pr)[1] for pr in beta_priors])
    beta_free = np.isfinite(beta_prec)

    x_index = model.x_index[reg_rows]
    w = model.proxy_sign * model.proxy_obs
    d = model.proxy_weights
    proxy_index = model.proxy_x_index
    sum_d = np.bincount(proxy_index, weights=d, minlength=model.n_x)
    sum_dw = np.bincount(proxy_index, weights=d * w, minlength=model.n_x)

    sampler = _Sampler(
        model=model,
        family=family,
        error_kind=error_kind,
        y=y,
        trials=trials,
        reg_rows=reg_rows,
        X=X,
        x_col=1,
        beta_names=beta_names,
        beta_free=beta_free,
        beta_mean=beta_mean,
        beta_prec=beta_prec,
        n_x=model.n_x,
        x_index=x_index,
        w=w,
        d=d,
        proxy_index=proxy_index,
        sum_d=sum_d,
        sum_dw=sum_dw,
        tau_u_prior=spec.error.tau_u,
    )

    if error_kind == "classical":
        exposure = spec.exposure
        q = len(exposure.alpha_z)
        design = np.empty((model.n_x, 1 + q))
        design[:, 0] = 1.0
        design[:, 1:] = model.Z
        alpha_priors = [exposure.alpha0] + list(exposure.alpha_z)
        sampler.exp_design = design
        sampler.alpha_names = ("alpha_0",) + tuple("alpha_%s" % c for c in spec.covariates)
        sampler.alpha_mean = np.array([_prior_mean_prec(pr)[0] for pr in alpha_priors])
        sampler.alpha_prec = np.array([_prior_mean_prec(pr)[1] for pr in alpha_priors])
        sampler.alpha_free = np.isfinite(sampler.alpha_prec)
        sampler.tau_x_prior = exposure.tau_x
    else:
        sampler.w_group = w
        sampler.d_group = d

    sampler.tau_eps_prior = spec.observation.residual_precision
    sampler.tau_gamma_prior = spec.observation.random_effect
    sampler.has_gamma = spec.observation.random_effect is not None
    return sampler


def _initial_state(sampler: _Sampler) -> ChainState:
    def prior_value(prior, fallback: float) -> float:
        if prior is None:
            return math.nan
        if isinstance(prior, FixedValue):
            return prior.value
        if isinstance(prior, GammaPrior):
            return prior.shape / prior.rate
        return fallback

    counts = np.bincount(sampler.proxy_index, minlength=sampler.n_x).astype(float)
    counts[counts == 0.0] = 1.0
    x0 = np.bincount(sampler.proxy_index, weights=sampler.w, minlength=sampler.n_x) / counts

    beta = sampler.beta_mean.copy()
    beta[sampler.beta_free] = 0.0
    state = ChainState(
        x=x0,
        beta=beta,
        alpha=np.zeros(0),
        gamma=np.zeros(sampler.y.size) if sampler.has_gamma else np.zeros(0),
        tau_u=prior_value(sampler.tau_u_prior, 1.0),
        tau_eps=prior_value(sampler.tau_eps_prior, math.nan),
        tau_gamma=prior_value(sampler.tau_gamma_prior, math.nan),
    )
    if sampler.error_kind == "classical":
        alpha = sampler.alpha_mean.copy()
        alpha[sampler.alpha_free] = 0.0
        state.alpha = alpha
        state.tau_x = prior_value(sampler.tau_x_prior, 1.0)
    return state


# ---------------------------------------------------------------------------
# block updates


def gibbs_tau_x(state: ChainState, sampler: _Sampler, rng) -> float:
    shape, rate = tau_x_conditional(
        state.x, sampler.exp_design @ state.alpha, sampler.tau_x_prior
    )
    return _draw_gamma(rng, shape, rate)


def gibbs_tau_u(state: ChainState, sampler: _Sampler, rng) -> float:
    shape, rate = tau_u_conditional(
        sampler.w, state.x[sampler.proxy_index], sampler.d, sampler.tau_u_prior
    )
    return _draw_gamma(rng, shape, rate)


def gibbs_alpha(state: ChainState, sampler: _Sampler, rng) -> np.ndarray:
    free = sampler.alpha_free
    alpha = state.alpha.copy()
    if not np.any(free):
        return alpha
    offset = sampler.exp_design[:, ~free] @ alpha[~free]
    mean, precision = alpha_conditional(
        state.x - offset,
        sampler.exp_design[:, free],
        state.tau_x,
        sampler.alpha_mean[free],
        sampler.alpha_prec[free],
    )
    alpha[free] = _draw_mvn_from_precision(rng, mean, precision)
    return alpha


def _x_prior_precision_mean(state: ChainState, sampler: _Sampler) -> tuple:
    """Per-unit Gaussian prior pieces for x from the error/exposure laws."""
    if sampler.error_kind == "classical":
        prec = state.tau_x + state.tau_u * sampler.sum_d
        numer = state.tau_x * (sampler.exp_design @ state.alpha) + state.tau_u * sampler.sum_dw
    else:
        prec = state.tau_u * sampler.d_group
        numer = state.tau_u * sampler.d_group * sampler.w_group
    return prec, numer


def mh_latent_x(state: ChainState, sampler: _Sampler, scale: float, rng) -> tuple:
    """One update of every latent x component; returns (new x, acceptance).

    Gaussian responses use the exact conjugate draw (acceptance 1). Other
    families take one componentwise random-walk Metropolis step; components
    are conditionally independent, so the vectorized accept/reject per
    component is a valid Gibbs sweep. A zero proposal scale leaves the chain
    in place with acceptance 1 by convention.
    """
    prior_prec, prior_numer = _x_prior_precision_mean(state, sampler)
    beta_x = state.beta[sampler.x_col]

    if sampler.family == "gaussian":
        eta = sampler.eta(state)
        resid_wo_x = sampler.y - (eta - beta_x * state.x[sampler.x_index])
        prec = prior_prec + state.tau_eps * beta_x**2 * np.bincount(
            sampler.x_index, minlength=sampler.n_x
        )
        numer = prior_numer + state.tau_eps * beta_x * np.bincount(
            sampler.x_index, weights=resid_wo_x, minlength=sampler.n_x
        )
        draw = numer / prec + rng.standard_normal(sampler.n_x) / np.sqrt(prec)
        return draw, 1.0

    if scale == 0.0:
        return state.x.copy(), 1.0

    x_new = state.x + scale * rng.standard_normal(sampler.n_x)
    eta = sampler.eta(state)
    eta_new = eta + beta_x * (x_new - state.x)[sampler.x_index]
    terms = _loglik_terms(sampler.family, sampler.y, sampler.trials, eta)
    terms_new = _loglik_terms(sampler.family, sampler.y, sampler.trials, eta_new)
    delta = np.bincount(sampler.x_index, weights=terms_new - terms, minlength=sampler.n_x)
    delta += -0.5 * prior_prec * (x_new**2 - state.x**2) + prior_numer * (x_new - state.x)
    accept = np.log(rng.uniform(size=sampler.n_x)) < delta
    out = np.where(accept, x_new, state.x)
    return out, float(np.mean(accept))


def _update_gamma(state: ChainState, sampler: _Sampler, scale: float, rng) -> tuple:
    eta = sampler.eta(state)
    if sampler.family == "gaussian":
        resid_wo_g = sampler.y - (eta - state.gamma)
        prec = state.tau_gamma + state.tau_eps
        mean = state.tau_eps * resid_wo_g / prec
        draw = mean + rng.standard_normal(state.gamma.size) / math.sqrt(prec)
        return draw, 1.0
    if scale == 0.0:
        return state.gamma.copy(), 1.0
    g_new = state.gamma + scale * rng.standard_normal(state.gamma.size)
    eta_new = eta + (g_new - state.gamma)
    delta = _loglik_terms(sampler.family, sampler.y, sampler.trials, eta_new)
    delta -= _loglik_terms(sampler.family, sampler.y, sampler.trials, eta)
    delta -= 0.5 * state.tau_gamma * (g_new**2 - state.gamma**2)
    accept = np.log(rng.uniform(size=state.gamma.size)) < delta
    return np.where(accept, g_new, state.gamma), float(np.mean(accept))


def mh_beta(state: ChainState, sampler: _Sampler, scale: float, rng) -> tuple:
    """One update of the free regression coefficients; returns (beta, accepted).

    Gaussian responses use the exact conjugate multivariate normal draw
    (acceptance 1); other families take one joint random-walk step.
    """
    free = sampler.beta_free
    beta = state.beta.copy()
    if not np.any(free):
        return beta, 1.0
    X = sampler.X.copy()
    X[:, sampler.x_col] = state.x[sampler.x_index]
    offset = X[:, ~free] @ beta[~free]
    if sampler.has_gamma:
        offset = offset + state.gamma
    Xf = X[:, free]

    if sampler.family == "gaussian":
        precision = state.tau_eps * (Xf.T @ Xf) + np.diag(sampler.beta_prec[free])
        rhs = state.tau_eps * (Xf.T @ (sampler.y - offset))
        rhs += sampler.beta_prec[free] * sampler.beta_mean[free]
        try:
            chol = np.linalg.cholesky(precision)
        except np.linalg.LinAlgError:
            raise NumericError("regression-coefficient conditional is singular")
        mean = _chol_solve(chol, rhs)
        beta[free] = _draw_mvn_from_precision(rng, mean, precision)
        return beta, 1.0

    if scale == 0.0:
        return beta, 1.0
    bf = beta[free]
    bf_new = bf + scale * rng.standard_normal(bf.size)
    eta = Xf @ bf + offset
    eta_new = Xf @ bf_new + offset
    delta = float(
        np.sum(_loglik_terms(sampler.family, sampler.y, sampler.trials, eta_new))
        - np.sum(_loglik_terms(sampler.family, sampler.y, sampler.trials, eta))
    )
    pm = sampler.beta_mean[free]
    pp = sampler.beta_prec[free]
    delta -= 0.5 * float(pp @ ((bf_new - pm) ** 2 - (bf - pm) ** 2))
    accepted = math.log(rng.uniform()) < delta
    if accepted:
        beta[free] = bf_new
    return beta, float(accepted)


def _gibbs_tau_eps(state: ChainState, sampler: _Sampler, rng) -> float:
    resid = sampler.y - sampler.eta(state)
    prior = sampler.tau_eps_prior
    shape = prior.shape + 0.5 * resid.size
    rate = prior.rate + 0.5 * float(resid @ resid)
    return _draw_gamma(rng, shape, rate)


def _gibbs_tau_gamma(state: ChainState, sampler: _Sampler, rng) -> float:
    prior = sampler.tau_gamma_prior
    shape = prior.shape + 0.5 * state.gamma.size
    rate = prior.rate + 0.5 * float(state.gamma @ state.gamma)
    return _draw_gamma(rng, shape, rate)


# ---------------------------------------------------------------------------
# the full chain


def _monitor_layout(sampler: _Sampler, cfg: ChainConfig) -> tuple:
    names = [n for n, f in zip(sampler.beta_names, sampler.beta_free) if f]
    if sampler.error_kind == "classical":
        names.extend(n for n, f in zip(sampler.alpha_names, sampler.alpha_free) if f)
    for tau_name, prior in (
        ("tau_u", sampler.tau_u_prior),
        ("tau_x", sampler.tau_x_prior),
        ("tau_eps", sampler.tau_eps_prior),
        ("tau_gamma", sampler.tau_gamma_prior),
    ):
        if prior is not None and not isinstance(prior, FixedValue):
            names.append(tau_name)
    if cfg.store_x:
        x_picks = tuple(range(sampler.n_x))
    elif cfg.monitor_x is not None:
        x_picks = tuple(int(i) for i in cfg.monitor_x)
        for i in x_picks:
            if not 0 <= i < sampler.n_x:
                raise SpecError("monitored x index %d out of range [0, %d)" % (i, sampler.n_x))
    else:
        count = min(4, sampler.n_x)
        x_picks = tuple(
            int(i) for i in np.unique(np.linspace(0, sampler.n_x - 1, count).round())
        )
    names.extend("x_%d" % (i + 1) for i in x_picks)
    return tuple(names), x_picks


def _record(state: ChainState, sampler: _Sampler, x_picks: tuple) -> list:
    row = [state.beta[j] for j in range(state.beta.size) if sampler.beta_free[j]]
    if sampler.error_kind == "classical":
        row.extend(state.alpha[j] for j in range(state.alpha.size) if sampler.alpha_free[j])
    for tau_name, prior in (
        ("tau_u", sampler.tau_u_prior),
        ("tau_x", sampler.tau_x_prior),
        ("tau_eps", sampler.tau_eps_prior),
        ("tau_gamma", sampler.tau_gamma_prior),
    ):
        if prior is not None and not isinstance(prior, FixedValue):
            row.append(getattr(state, tau_name))
    row.extend(state.x[i] for i in x_picks)
    return row


def run_chain(model: JointModel, cfg: ChainConfig) -> ChainOutput:
    """Run one chain on a measurement-error model; deterministic given seed."""
    sampler = _prepare(model)
    state = _initial_state(sampler)
    rng = np.random.Generator(np.random.Philox(int(cfg.seed)))

    scales = dict(DEFAULT_PROPOSAL_SCALES)
    if cfg.proposal_scales:
        scales.update(cfg.proposal_scales)
    log_scales = {k: math.log(v) if v > 0 else -math.inf for k, v in scales.items()}

    names, x_picks = _monitor_layout(sampler, cfg)
    draws = np.empty((cfg.kept, len(names)))
    kept = 0
    accept_totals = {"x": 0.0, "beta": 0.0, "gamma": 0.0}
    accept_counts = {"x": 0, "beta": 0, "gamma": 0}

    classical = sampler.error_kind == "classical"
    tau_x_free = classical and not isinstance(sampler.tau_x_prior, FixedValue)
    tau_u_free = not isinstance(sampler.tau_u_prior, FixedValue)
    tau_eps_free = sampler.tau_eps_prior is not None and not isinstance(
        sampler.tau_eps_prior, FixedValue
    )
    tau_gamma_free = sampler.tau_gamma_prior is not None and not isinstance(
        sampler.tau_gamma_prior, FixedValue
    )
    mh_needed = sampler.family != "gaussian"

    for it in range(1, cfg.iterations + 1):
        if tau_x_free:
            state.tau_x = gibbs_tau_x(state, sampler, rng)
        if tau_u_free:
            state.tau_u = gibbs_tau_u(state, sampler, rng)
        if classical and np.any(sampler.alpha_free):
            state.alpha = gibbs_alpha(state, sampler, rng)

        state.x, acc_x = mh_latent_x(state, sampler, math.exp(log_scales["x"]), rng)
        acc_g = None
        if sampler.has_gamma:
            state.gamma, acc_g = _update_gamma(
                state, sampler, math.exp(log_scales["gamma"]), rng
            )
        state.beta, acc_b = mh_beta(state, sampler, math.exp(log_scales["beta"]), rng)

        if tau_eps_free:
            state.tau_eps = _gibbs_tau_eps(state, sampler, rng)
        if tau_gamma_free:
            state.tau_gamma = _gibbs_tau_gamma(state, sampler, rng)

        if mh_needed and cfg.adapt and it <= cfg.burn_in:
            step = (it + _ADAPT_OFFSET) ** -0.6
            updates = {"x": acc_x, "beta": acc_b}
            if acc_g is not None:
                updates["gamma"] = acc_g
            for block, acc in updates.items():
                if np.isfinite(log_scales[block]):
                    log_scales[block] += step * (acc - ADAPT_TARGET)
                    log_scales[block] = min(
                        max(log_scales[block], -_LOG_SCALE_BOUND), _LOG_SCALE_BOUND
                    )

        if it > cfg.burn_in:
            accept_totals["x"] += acc_x
            accept_counts["x"] += 1
            accept_totals["beta"] += acc_b
            accept_counts["beta"] += 1
            if acc_g is not None:
                accept_totals["gamma"] += acc_g
                accept_counts["gamma"] += 1
            if (it - cfg.burn_in) % cfg.thin == 0 and kept < draws.shape[0]:
                draws[kept] = _record(state, sampler, x_picks)
                kept += 1

    rates = {
        block: (accept_totals[block] / accept_counts[block])
        for block in accept_totals
        if accept_counts[block]
    }
    return ChainOutput(names=names, draws=draws[:kept], acceptance_rates=rates, config=cfg)


def effective_sample_size(draws: np.ndarray) -> float:
    """Initial-positive-sequence autocorrelation estimate of the ESS."""
    x = np.asarray(draws, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise SpecError("need at least 10 draws for an ESS estimate, got %d" % n)
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0.0:
        return float(n)
    size = int(2 ** math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n].real / (n * var)
    total = 0.0
    for lag in range(1, n - 1, 2):
        pair = acf[lag] + acf[lag + 1]
        if pair <= 0.0:
            break
        total += pair
    return float(n / (1.0 + 2.0 * total))
