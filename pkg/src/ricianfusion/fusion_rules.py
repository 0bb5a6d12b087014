"""Interference-free fusion statistics at the fusion center.

Six statistics, all real-valued and all "large under H1":

  llr   exact log-likelihood ratio (2^K-term Gaussian-mixture ratio)
  is    ideal-sensor approximation: 2 Re(mu_bar^H y) + (nu_bar/sigma_w^2) ||y||^2
  nlos  energy detector ||y||^2
  wl0   widely-linear weights maximizing the H0-normalized deflection
  wl1   same with H1-normalized deflection
  igmm  improper-Gaussian moment-matched quadratic statistic

Every rule evaluates either one received vector (N,) -> float or a batch
(T, N) -> (T,) array.  ``RuleContext`` carries everything precomputable
from the scenario alone so the per-trial work stays small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .scenario import WsnScenario
from .signal_model import (H0, H1, SecondOrderChar, augment, augment_batch,
                           enumerate_decisions, pmf_moments, second_order_char)

FREE_RULES = ("llr", "is", "nlos", "wl0", "wl1", "igmm")

_HERM_RTOL = 1e-10
_IMAG_TOL = 1e-10


class UnsupportedSizeError(ValueError):
    """Raised when an exact-enumeration rule is asked for too many sensors."""


class DegenerateWeightsError(ValueError):
    """Raised when the deflection-optimal weight direction is undefined."""


def _hermitian_inv(m: np.ndarray) -> np.ndarray:
    asym = np.linalg.norm(m - m.conj().T)
    if asym > _HERM_RTOL * max(np.linalg.norm(m), 1e-300):
        raise ValueError("covariance matrix is not Hermitian within tolerance")
    c, low = scipy.linalg.cho_factor(m)
    return scipy.linalg.cho_solve((c, low), np.eye(m.shape[0], dtype=complex))


@dataclass(frozen=True)
class _LlrTables:
    """Enumeration tables for the exact mixture LLR."""

    x_all: np.ndarray        # (2^K, K) int8
    mu_all: np.ndarray       # (N, 2^K) conditional means A_tilde x
    mu_norm2: np.ndarray     # (2^K,)
    sigma_e2_all: np.ndarray  # (2^K,) equivalent variances
    log_p0: np.ndarray       # (2^K,) log P(x | H0)
    log_p1: np.ndarray       # (2^K,) log P(x | H1)


def _log_pmf_iid(x_all: np.ndarray, p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logp = np.log(p)
        logq = np.log1p(-p)
    # selection, not multiplication: 0 * (-inf) must never appear
    return np.where(x_all == 1, logp[None, :], logq[None, :]).sum(axis=1)


def _build_llr_tables(scenario: WsnScenario, pmf0, pmf1) -> _LlrTables:
    k = scenario.k_sensors
    x_all = enumerate_decisions(k)
    xf = x_all.astype(float)
    mu_all = scenario.a_tilde @ xf.T
    sigma_e2_all = scenario.noise_power + xf @ scenario.nu
    if pmf0 is None:
        log_p0 = _log_pmf_iid(x_all, scenario.pf)
    else:
        with np.errstate(divide="ignore"):
            log_p0 = np.log(np.asarray(pmf0, dtype=float))
    if pmf1 is None:
        log_p1 = _log_pmf_iid(x_all, scenario.pd)
    else:
        with np.errstate(divide="ignore"):
            log_p1 = np.log(np.asarray(pmf1, dtype=float))
    return _LlrTables(x_all=x_all, mu_all=mu_all,
                      mu_norm2=np.sum(np.abs(mu_all) ** 2, axis=0),
                      sigma_e2_all=sigma_e2_all, log_p0=log_p0, log_p1=log_p1)


@dataclass(frozen=True)
class RuleContext:
    """Precomputed per-scenario quantities shared by all fusion rules."""

    scenario: WsnScenario
    char0: SecondOrderChar
    char1: SecondOrderChar
    aug_inv0: np.ndarray
    aug_inv1: np.ndarray
    z_wl0: np.ndarray | None
    z_wl1: np.ndarray | None
    llr_tables: _LlrTables | None
    llr_cap: int


def make_context(scenario: WsnScenario,
                 sigma_x0: np.ndarray | None = None,
                 sigma_x1: np.ndarray | None = None,
                 pmf0: np.ndarray | None = None,
                 pmf1: np.ndarray | None = None,
                 llr_cap: int = 16) -> RuleContext:
    """Build a RuleContext.

    Dependent local decisions enter either through explicit decision
    covariances (sigma_x0/sigma_x1) or through full joint pmf tables
    (pmf0/pmf1), from which marginals and covariances are derived.  The
    exact-LLR enumeration tables are built only when K <= llr_cap.
    """
    k = scenario.k_sensors
    rho0 = rho1 = None
    if pmf0 is not None:
        rho0, sigma_x0 = pmf_moments(pmf0, k)
    if pmf1 is not None:
        rho1, sigma_x1 = pmf_moments(pmf1, k)
    char0 = second_order_char(scenario, H0, sigma_x=sigma_x0, rho=rho0)
    char1 = second_order_char(scenario, H1, sigma_x=sigma_x1, rho=rho1)
    aug_inv0 = _hermitian_inv(char0.aug_cov)
    aug_inv1 = _hermitian_inv(char1.aug_cov)
    tables = None
    if k <= llr_cap:
        tables = _build_llr_tables(scenario, pmf0, pmf1)
    ctx = RuleContext(scenario=scenario, char0=char0, char1=char1,
                      aug_inv0=aug_inv0, aug_inv1=aug_inv1,
                      z_wl0=None, z_wl1=None, llr_tables=tables, llr_cap=llr_cap)
    for i, name in ((H0, "z_wl0"), (H1, "z_wl1")):
        try:
            object.__setattr__(ctx, name, wl_weights(ctx, i))
        except DegenerateWeightsError:
            pass
    return ctx


def _as_batch(y) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=complex)
    if y.ndim == 1:
        return y[None, :], True
    return y, False


def llr(y, ctx: RuleContext):
    """Exact log-likelihood ratio.

    Both conditional densities are 2^K-component Gaussian mixtures; each
    mixture is evaluated in the log domain via logsumexp, so the result
    stays finite for ||y|| far into the tails and for pmf entries equal to
    zero.  Requires K <= llr_cap (enumeration tables).
    """
    tab = ctx.llr_tables
    if tab is None:
        raise UnsupportedSizeError(
            f"exact LLR needs K <= {ctx.llr_cap} (K={ctx.scenario.k_sensors})")
    ys, single = _as_batch(y)
    t = ys.shape[0]
    n = ctx.scenario.n_antennas
    m = tab.mu_all.shape[1]
    out = np.empty(t)
    log_var = n * np.log(tab.sigma_e2_all)
    chunk = max(1, (1 << 23) // m)
    for lo in range(0, t, chunk):
        ysl = ys[lo:lo + chunk]
        g = ysl @ tab.mu_all.conj()
        d2 = (np.sum(np.abs(ysl) ** 2, axis=1)[:, None]
              + tab.mu_norm2[None, :] - 2.0 * g.real)
        np.maximum(d2, 0.0, out=d2)
        base = -log_var[None, :] - d2 / tab.sigma_e2_all[None, :]
        out[lo:lo + chunk] = (logsumexp(base + tab.log_p1[None, :], axis=1)
                              - logsumexp(base + tab.log_p0[None, :], axis=1))
    return float(out[0]) if single else out


def is_rule(y, ctx: RuleContext):
    """Ideal-sensor statistic 2 Re(mu_bar^H y) + (nu_bar / sigma_w^2) ||y||^2."""
    ys, single = _as_batch(y)
    sc = ctx.scenario
    out = (2.0 * (ys @ sc.mu_bar.conj()).real
           + (sc.nu_bar / sc.noise_power) * np.sum(np.abs(ys) ** 2, axis=1))
    return float(out[0]) if single else out


def nlos_rule(y):
    """Energy detector ||y||^2 (context-free)."""
    ys, single = _as_batch(y)
    out = np.sum(np.abs(ys) ** 2, axis=1)
    return float(out[0]) if single else out


def wl_weights(ctx: RuleContext, h: int) -> np.ndarray:
    """Deflection-optimal widely-linear weights for hypothesis-h normalization.

    z = Sigma_aug(h)^{-1} A_aug (rho1 - rho0), normalized to unit length.
    The direction is undefined when the two hypotheses have identical
    transmit-probability vectors.
    """
    rho10 = ctx.char1.rho - ctx.char0.rho
    if np.all(rho10 == 0.0):
        raise DegenerateWeightsError(
            "identical transmit probabilities under both hypotheses")
    a_aug = augment(ctx.scenario.a_tilde)
    inv = ctx.aug_inv1 if h else ctx.aug_inv0
    z = inv @ (a_aug @ rho10)
    n = ctx.scenario.n_antennas
    # the solution of the structured system is augmented-consistent by
    # construction; enforce it exactly to kill roundoff drift
    mismatch = np.abs(z[n:] - z[:n].conj()).max()
    if mismatch > 1e-8 * max(np.abs(z).max(), 1e-300):
        raise ValueError("widely-linear weight solve lost augmented structure")
    z = np.concatenate([z[:n], z[:n].conj()])
    norm = np.linalg.norm(z)
    if norm < 1e-150:
        raise DegenerateWeightsError(
            "weight direction vanishes (zero mean channel matrix)")
    return z / norm


def wl_rule(y, z: np.ndarray):
    """Widely-linear statistic z^H [y; conj(y)].

    ``z`` must be augmented-consistent (second half the conjugate of the
    first); the inner product is then real up to roundoff, which is checked
    before the imaginary part is dropped.
    """
    z = np.asarray(z, dtype=complex)
    n2 = z.shape[0]
    if n2 % 2:
        raise ValueError("augmented weight vector must have even length")
    n = n2 // 2
    if np.abs(z[n:] - z[:n].conj()).max() > 1e-8 * max(np.abs(z).max(), 1e-300):
        raise ValueError("weight vector is not augmented-consistent")
    ys, single = _as_batch(y)
    if ys.shape[1] != n:
        raise ValueError(f"received vector length {ys.shape[1]} != {n}")
    vals = augment_batch(ys) @ z.conj()
    imag_max = np.abs(vals.imag).max(initial=0.0)
    scale = max(np.abs(vals).max(initial=0.0), 1.0)
    if imag_max > _IMAG_TOL * scale:
        raise ValueError(f"widely-linear statistic has imaginary residue {imag_max:g}")
    out = vals.real
    return float(out[0]) if single else out


def _quad_form_batch(d: np.ndarray, m_inv: np.ndarray) -> np.ndarray:
    # d^H M^{-1} d for each row d; M Hermitian so M^T = conj(M)
    return np.sum(d.conj() * (d @ m_inv.conj()), axis=1).real


def igmm_rule(y, ctx: RuleContext):
    """Moment-matched improper-Gaussian quadratic statistic.

    Difference of Mahalanobis distances of the augmented vector under the
    two hypotheses' augmented covariances.
    """
    ys, single = _as_batch(y)
    ya = augment_batch(ys)
    d1 = ya - augment(ctx.char1.mean)[None, :]
    d0 = ya - augment(ctx.char0.mean)[None, :]
    out = (_quad_form_batch(d0, ctx.aug_inv0) - _quad_form_batch(d1, ctx.aug_inv1))
    return float(out[0]) if single else out


@dataclass(frozen=True)
class FusionStatistic:
    """A named, real, finite fusion statistic value."""

    rule: str
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"statistic {self.rule!r} is not finite: {self.value}")


def evaluate(rule: str, y, ctx: RuleContext):
    """Dispatch an interference-free rule by id."""
    if rule == "llr":
        return llr(y, ctx)
    if rule == "is":
        return is_rule(y, ctx)
    if rule == "nlos":
        return nlos_rule(y)
    if rule in ("wl0", "wl1"):
        z = ctx.z_wl0 if rule == "wl0" else ctx.z_wl1
        if z is None:
            raise DegenerateWeightsError(
                "widely-linear weights undefined for this scenario")
        return wl_rule(y, z)
    if rule == "igmm":
        return igmm_rule(y, ctx)
    raise ValueError(f"unknown fusion rule {rule!r}; choose from {FREE_RULES}")
