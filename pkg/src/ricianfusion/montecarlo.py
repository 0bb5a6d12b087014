"""Monte Carlo detection-performance machinery.

Thresholds are calibrated empirically: draw H0 statistics, take the upper
order-statistic quantile for the target false-alarm rate, then measure the
achieved rate on a fresh sample and the detection rate under H1.  All
randomness is derived from (seed, stream, hypothesis, block) seed sequences
with a fixed block size, so results are bit-identical for a given seed no
matter how many worker threads evaluate the blocks.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from . import fusion_rules, jamming_rules
from .scenario import (JAMMER_PRESETS, PRESETS, DeploymentConfig, JammerScenario,
                       WsnScenario, db_to_lin, generate_jammer, generate_wsn,
                       preset_config)
from .signal_model import H0, H1, draw_decisions, draw_jammed, draw_received

BLOCK = 8192
DEFAULT_LEVELS = (0.3, 0.1, 0.05, 0.02, 0.01)

CSV_COLUMNS = ("preset", "jammer", "rule", "sigma_w2_dbm", "n_antennas",
               "target_pf0", "gamma", "achieved_pf0", "pd0", "pd0_stderr",
               "trials", "seed")


@dataclass(frozen=True)
class SampleBatch:
    """A block-concatenated set of Monte Carlo channel uses."""

    hypothesis: int
    y: np.ndarray                 # (T, N)
    x: np.ndarray                 # (T, K)
    psi: np.ndarray | None = None  # (T, r) jammer symbols when jammed


@dataclass(frozen=True)
class CalibratedTest:
    """A rule with an empirically calibrated threshold (decide H1 iff value > gamma)."""

    rule: object
    gamma: float
    target_pf0: float
    achieved_pf0: float
    achieved_stderr: float
    achieved_ci95: tuple[float, float]
    trials: int


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float
    trials: int


@dataclass(frozen=True)
class EquivalenceResult:
    """Outcome of comparing two rules under common random numbers."""

    verdict: str  # equivalent | monotone-equivalent | distinct
    spearman: float
    max_disagreement: float
    levels: tuple[float, ...]
    disagreement: tuple[float, ...]


def upper_quantile(values: np.ndarray, target_pf0: float) -> float:
    """Threshold as the order statistic with index ceil((1-p)*n), no interpolation.

    With n*p an integer this leaves exactly n*p strict exceedances in the
    calibration sample itself.
    """
    if not (0.0 < target_pf0 < 1.0):
        raise ValueError(f"target_pf0 must be in (0, 1), got {target_pf0}")
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    if n < 1:
        raise ValueError("need at least one calibration value")
    m = int(math.floor(target_pf0 * n + 1e-9))  # = n - ceil((1-p)*n)
    return float(v[n - m - 1] if m < n else v[0]) if m else float(v[-1])


class Engine:
    """Draws samples and evaluates rules for one (scenario, jammer) pair.

    Samples are drawn in fixed-size blocks, block b of stream s seeded by
    (seed, s, hypothesis, b); a small cache keeps the most recent batches so
    several rules can share common random numbers without redrawing.
    """

    def __init__(self, scenario: WsnScenario, ctx=None,
                 jammer: JammerScenario | None = None, workspace=None,
                 seed: int = 0, block: int = BLOCK, threads: int = 1):
        self.scenario = scenario
        self.ctx = ctx if ctx is not None else fusion_rules.make_context(scenario)
        self.jammer = jammer
        self._ws = workspace
        self.seed = int(seed)
        self.block = int(block)
        self.threads = max(1, int(threads))
        self._cache: dict = {}

    @property
    def workspace(self):
        if self._ws is None and self.jammer is not None:
            self._ws = jamming_rules.build_workspace(self.ctx, self.jammer)
        return self._ws

    def _draw_block(self, h: int, stream: int, b: int, size: int) -> SampleBatch:
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, int(stream), int(h), int(b)]))
        x = draw_decisions(self.scenario, h, rng, size=size)
        if self.jammer is not None:
            y, psi = draw_jammed(self.scenario, self.jammer, x, rng)
        else:
            y, psi = draw_received(self.scenario, x, rng), None
        return SampleBatch(hypothesis=h, y=y, x=x, psi=psi)

    def sample(self, h: int, trials: int, stream: int) -> SampleBatch:
        key = (h, int(trials), int(stream))
        if key in self._cache:
            return self._cache[key]
        sizes = [self.block] * (trials // self.block)
        if trials % self.block:
            sizes.append(trials % self.block)
        parts = [self._draw_block(h, stream, b, s) for b, s in enumerate(sizes)]
        batch = SampleBatch(
            hypothesis=h,
            y=np.concatenate([p.y for p in parts]),
            x=np.concatenate([p.x for p in parts]),
            psi=(np.concatenate([p.psi for p in parts])
                 if self.jammer is not None else None),
        )
        if len(self._cache) >= 8:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = batch
        return batch

    def eval(self, rule, batch: SampleBatch) -> np.ndarray:
        """Evaluate one rule on a batch, slicing across worker threads."""
        t = batch.y.shape[0]
        slices = [slice(lo, min(lo + self.block, t)) for lo in range(0, t, self.block)]

        def run(sl):
            y = batch.y[sl]
            if callable(rule):
                return np.asarray(rule(y, self.ctx), dtype=float)
            if rule in fusion_rules.FREE_RULES:
                return fusion_rules.evaluate(rule, y, self.ctx)
            if rule in jamming_rules.JAM_RULES:
                if rule != "clairvoyant" and self.jammer is None:
                    raise ValueError(f"rule {rule!r} needs a jammer scenario")
                psi = None if batch.psi is None else batch.psi[sl]
                return jamming_rules.evaluate_jam(
                    rule, y, self.ctx, self.jammer,
                    self.workspace if rule == "igmm-glrt" else None, psi=psi)
            raise ValueError(
                f"unknown rule {rule!r}; choose from "
                f"{fusion_rules.FREE_RULES + jamming_rules.JAM_RULES}")

        if self.threads == 1 or len(slices) == 1:
            outs = [run(sl) for sl in slices]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                outs = list(pool.map(run, slices))
        return np.concatenate(outs)

    def stats(self, rule, h: int, trials: int, stream: int) -> np.ndarray:
        return self.eval(rule, self.sample(h, trials, stream))


def calibrate_threshold(engine: Engine, rule, target_pf0: float, trials: int,
                        streams: tuple[int, int] = (0, 1)) -> CalibratedTest:
    """Empirical threshold at the target false-alarm rate.

    Requires trials >= 100 / target_pf0 so the upper tail is resolved by at
    least ~100 exceedances.  The achieved rate is measured on a fresh,
    equally sized H0 sample.
    """
    if trials < 100.0 / target_pf0:
        raise ValueError(
            f"need trials >= {math.ceil(100.0 / target_pf0)} for target_pf0="
            f"{target_pf0}, got {trials}")
    cal = engine.stats(rule, H0, trials, streams[0])
    gamma = upper_quantile(cal, target_pf0)
    chk = engine.stats(rule, H0, trials, streams[1])
    achieved = float(np.mean(chk > gamma))
    stderr = math.sqrt(max(achieved * (1.0 - achieved), 1e-300) / trials)
    ci = (max(achieved - 1.96 * stderr, 0.0), min(achieved + 1.96 * stderr, 1.0))
    return CalibratedTest(rule=rule, gamma=gamma, target_pf0=target_pf0,
                          achieved_pf0=achieved, achieved_stderr=stderr,
                          achieved_ci95=ci, trials=trials)


def estimate_pd0(engine: Engine, test: CalibratedTest, trials: int,
                 stream: int = 2) -> McEstimate:
    """Detection probability of a calibrated test under H1."""
    vals = engine.stats(test.rule, H1, trials, stream)
    p = float(np.mean(vals > test.gamma))
    return McEstimate(estimate=p,
                      stderr=math.sqrt(p * (1.0 - p) / trials),
                      trials=trials)


def equivalence_check(engine: Engine, rule_a, rule_b, trials: int,
                      levels: tuple[float, ...] = DEFAULT_LEVELS,
                      streams: tuple[int, int, int] = (0, 3, 4)) -> EquivalenceResult:
    """Decision-level comparison of two rules under common random numbers.

    Thresholds for both rules are calibrated at matched quantiles of the
    same H0 calibration sample for each target level; decisions are then
    compared on fresh common H0 and H1 samples.  Verdicts:

      equivalent           decisions agree on every trial at every level
      monotone-equivalent  orderings identical (Spearman rank corr. == 1)
      distinct             anything else
    """
    if trials < 100.0 / min(levels):
        raise ValueError(
            f"need trials >= {math.ceil(100.0 / min(levels))} for levels {levels}")
    cal = engine.sample(H0, trials, streams[0])
    ev0 = engine.sample(H0, trials, streams[1])
    ev1 = engine.sample(H1, trials, streams[2])
    a_cal = engine.eval(rule_a, cal)
    b_cal = engine.eval(rule_b, cal)
    a_ev = np.concatenate([engine.eval(rule_a, ev0), engine.eval(rule_a, ev1)])
    b_ev = np.concatenate([engine.eval(rule_b, ev0), engine.eval(rule_b, ev1)])
    rates = []
    for level in levels:
        ga = upper_quantile(a_cal, level)
        gb = upper_quantile(b_cal, level)
        rates.append(float(np.mean((a_ev > ga) != (b_ev > gb))))
    rho = float(spearmanr(a_ev, b_ev).statistic)
    max_dis = max(rates)
    if max_dis == 0.0:
        verdict = "equivalent"
    elif rho >= 1.0 - 1e-12:
        verdict = "monotone-equivalent"
    else:
        verdict = "distinct"
    return EquivalenceResult(verdict=verdict, spearman=rho,
                             max_disagreement=max_dis, levels=tuple(levels),
                             disagreement=tuple(rates))


def _engine_seed(seed: int, *indices: int) -> int:
    return int(np.random.SeedSequence([seed, *indices]).generate_state(1)[0])


def sweep(presets, sigma_w2_dbm, n_antennas, rules, trials: int,
          target_pf0: float = 0.01, jammer_preset: str | None = None,
          k_sensors: int = 14, pd: float = 0.5, pf: float = 0.05,
          seed: int = 0, threads: int = 1, llr_cap: int = 16,
          signal_policy: str = "uniform-phase", frozen=None):
    """Detection-performance grid sweep.

    One deployment (and jammer) is drawn per preset and frozen; the grid
    then varies the antenna count and noise power, recomputing only derived
    matrices.  All rules at one grid point share the same draws.  Returns a
    list of row dicts in CSV_COLUMNS order (plus ``wall_time_s``).

    ``frozen`` bypasses generation: a list of (label, wsn, jammer) tuples,
    e.g. deployments loaded from a scenario file.
    """
    if isinstance(presets, str):
        presets = [presets]
    if jammer_preset is not None and jammer_preset not in JAMMER_PRESETS:
        raise ValueError(
            f"unknown jammer preset {jammer_preset!r}; choose from "
            f"{sorted(JAMMER_PRESETS)} or None")
    if frozen is None:
        deployments = []
        for pi, preset in enumerate(presets):
            config = preset_config(preset, k_sensors=k_sensors,
                                   n_antennas=max(n_antennas), pd=pd, pf=pf,
                                   seed=seed, signal_policy=signal_policy)
            root = np.random.SeedSequence([seed, pi])
            wsn_ss, jam_ss = root.spawn(2)
            wsn0 = generate_wsn(config, np.random.default_rng(wsn_ss))
            jam0 = (generate_jammer(config, np.random.default_rng(jam_ss),
                                    preset=jammer_preset)
                    if jammer_preset is not None else None)
            deployments.append((preset, wsn0, jam0))
    else:
        deployments = list(frozen)
    rows = []
    for pi, (preset, wsn0, jam0) in enumerate(deployments):
        jam_label = jammer_preset or ("custom" if jam0 is not None else "none")
        for ni, n in enumerate(n_antennas):
            wsn_n = wsn0.with_(n_antennas=n)
            jam_n = jam0.with_(n_antennas=n) if jam0 is not None else None
            for si, s_dbm in enumerate(sigma_w2_dbm):
                scenario = wsn_n.with_(noise_power=float(db_to_lin(s_dbm)))
                ctx = fusion_rules.make_context(scenario, llr_cap=llr_cap)
                engine = Engine(scenario, ctx, jam_n,
                                seed=_engine_seed(seed, pi, ni, si),
                                threads=threads)
                for rule in rules:
                    t0 = time.perf_counter()
                    test = calibrate_threshold(engine, rule, target_pf0, trials)
                    pd0 = estimate_pd0(engine, test, trials)
                    rows.append({
                        "preset": preset,
                        "jammer": jam_label,
                        "rule": rule,
                        "sigma_w2_dbm": float(s_dbm),
                        "n_antennas": int(n),
                        "target_pf0": float(target_pf0),
                        "gamma": test.gamma,
                        "achieved_pf0": test.achieved_pf0,
                        "pd0": pd0.estimate,
                        "pd0_stderr": pd0.stderr,
                        "trials": int(trials),
                        "seed": int(seed),
                        "wall_time_s": time.perf_counter() - t0,
                    })
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows, path) -> None:
    """Write sweep rows with the exact public column set (no timing)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def roc_points(engine: Engine, rule, trials: int, levels) -> list[dict]:
    """Empirical (Pf0, Pd0) pairs for one rule across threshold levels."""
    h0 = engine.stats(rule, H0, trials, 0)
    chk = engine.stats(rule, H0, trials, 1)
    h1 = engine.stats(rule, H1, trials, 2)
    out = []
    for level in levels:
        gamma = upper_quantile(h0, level)
        out.append({
            "rule": rule,
            "target_pf0": float(level),
            "gamma": gamma,
            "pf0": float(np.mean(chk > gamma)),
            "pd0": float(np.mean(h1 > gamma)),
            "trials": int(trials),
        })
    return out
