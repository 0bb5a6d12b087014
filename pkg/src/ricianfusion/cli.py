"""Command-line front end.

Subcommands:

  generate   draw a deployment (and optional jammer) and write a scenario file
  run        detection-performance sweep over a noise/antenna grid -> CSV
  verify     self-check battery (rule equivalences, closed-form reductions,
             floor-solver oracle); exits 1 if any check fails
  roc        empirical (Pf0, Pd0) operating points for chosen rules -> CSV

Decibel quantities appear only here: noise powers are taken in dBm and
converted once, at the boundary.  Exit codes: 0 ok, 1 failed check,
2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import fusion_rules, jamming_rules, montecarlo
from .scenario import (JAMMER_PRESETS, PRESETS, DeploymentConfig, db_to_lin,
                       generate_jammer, generate_wsn, lin_to_db, load_scenario,
                       preset_config, save_scenario)
from .signal_model import H0, H1, second_order_char

SEED_ENV = "RICIANFUSION_SEED"
ALL_RULES = fusion_rules.FREE_RULES + jamming_rules.JAM_RULES


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    """A fully resolved `run` invocation."""

    presets: tuple[str, ...]
    jammer_preset: str | None
    rules: tuple[str, ...]
    sigma_w2_dbm: tuple[float, ...]
    n_antennas: tuple[int, ...]
    target_pf0: float
    trials: int
    seed: int
    k_sensors: int
    pd: float
    pf: float
    threads: int


def parse_grid(text: str) -> tuple[float, ...]:
    """Parse 'start:step:stop' (inclusive) or a single value, in dBm."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return (float(parts[0]),)
        if len(parts) != 3:
            raise ValueError
        start, step, stop = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"bad grid {text!r}; expected 'start:step:stop'") from None
    if step == 0.0 or (stop - start) * step < 0.0:
        raise UsageError(f"grid {text!r} does not reach its stop value")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(start + i * step for i in range(count))


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"bad integer list {text!r}") from None


def _parse_rules(text: str, k: int, jammed: bool) -> tuple[str, ...]:
    rules = tuple(r.strip() for r in text.split(",") if r.strip())
    for r in rules:
        if r not in ALL_RULES:
            raise UsageError(f"unknown rule {r!r}; choose from {', '.join(ALL_RULES)}")
        if r in ("llr", "clairvoyant") and k > 16:
            raise UsageError(f"rule {r!r} enumerates 2^K terms and needs K <= 16")
        if r in jamming_rules.JAM_RULES and r != "clairvoyant" and not jammed:
            raise UsageError(f"rule {r!r} needs --jammer")
    if not rules:
        raise UsageError("no rules given")
    return rules


def _seed_default() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"environment variable {SEED_ENV}={raw!r} is not an integer") from None


def _force_kappa_zero(wsn):
    return type(wsn)(sensors=tuple(replace(s, kappa=0.0) for s in wsn.sensors),
                     n_antennas=wsn.n_antennas, noise_power=wsn.noise_power)


def _force_ideal(wsn):
    return type(wsn)(sensors=tuple(replace(s, pd=1.0, pf=0.0) for s in wsn.sensors),
                     n_antennas=wsn.n_antennas, noise_power=wsn.noise_power)


def _fmt_db(x: float) -> str:
    v = float(lin_to_db(x)) if x > 0 else float("-inf")
    return f"{v:9.2f}"


def cmd_generate(args) -> int:
    config = preset_config(args.preset, k_sensors=args.k, n_antennas=args.n,
                           pd=args.pd, pf=args.pf, seed=args.seed,
                           jammer_rank=args.r)
    root = np.random.SeedSequence([args.seed])
    wsn_ss, jam_ss = root.spawn(2)
    wsn = generate_wsn(config, np.random.default_rng(wsn_ss))
    if args.kappa_zero:
        wsn = _force_kappa_zero(wsn)
    jammer = None
    if args.jammer != "none":
        jammer = generate_jammer(config, np.random.default_rng(jam_ss),
                                 preset=args.jammer)
    if args.out:
        save_scenario(args.out, config, wsn, jammer)
    print(f"# preset={args.preset} jammer={args.jammer} K={wsn.k_sensors} "
          f"N={wsn.n_antennas} seed={args.seed}")
    print("sensor  theta_deg   beta_dbm  los_power_dbm")
    for i, s in enumerate(wsn.sensors):
        los = s.beta * s.b ** 2
        print(f"{i + 1:>6}  {np.degrees(s.theta):9.2f}  {_fmt_db(s.beta)}  "
              f"{_fmt_db(los)}")
    if jammer is not None:
        print("jammer  phi_deg     beta_dbm  los_power_dbm")
        for i in range(jammer.rank):
            los = jammer.beta[i] * jammer.b[i] ** 2
            print(f"{i + 1:>6}  {np.degrees(jammer.phi[i]):9.2f}  "
                  f"{_fmt_db(jammer.beta[i])}  {_fmt_db(los)}")
    if args.out:
        print(f"# wrote {args.out}")
    return 0


def _write_plot_data(rows, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    series = {}
    for row in rows:
        key = (row["preset"], row["jammer"], row["rule"], row["n_antennas"])
        series.setdefault(key, []).append(row)
    for (preset, jam, rule, n), pts in series.items():
        name = f"pd0__{preset}__{jam}__{rule}__N{n}.csv"
        with open(os.path.join(outdir, name), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sigma_w2_dbm", "pd0", "pd0_stderr"])
            for p in sorted(pts, key=lambda r: r["sigma_w2_dbm"]):
                writer.writerow([repr(p["sigma_w2_dbm"]), repr(p["pd0"]),
                                 repr(p["pd0_stderr"])])


def cmd_run(args) -> int:
    jammer_preset = None if args.jammer == "none" else args.jammer
    if args.scenario:
        config, wsn, jammer = load_scenario(args.scenario)
        k = wsn.k_sensors
        rules = _parse_rules(args.rules, k, jammer is not None)
        label = os.path.splitext(os.path.basename(args.scenario))[0]
        rows = montecarlo.sweep(
            [label], parse_grid(args.sigma_grid), _parse_int_list(args.n),
            rules, args.trials, target_pf0=args.pf0, jammer_preset=None,
            k_sensors=k, seed=args.seed, threads=args.threads,
            frozen=[(label, wsn, jammer)])
    else:
        rules = _parse_rules(args.rules, args.k, jammer_preset is not None)
        rows = montecarlo.sweep(
            tuple(args.preset.split(",")), parse_grid(args.sigma_grid),
            _parse_int_list(args.n), rules, args.trials, target_pf0=args.pf0,
            jammer_preset=jammer_preset, k_sensors=args.k, pd=args.pd,
            pf=args.pf, seed=args.seed, threads=args.threads)
    montecarlo.write_csv(rows, args.out)
    if args.plot_data:
        _write_plot_data(rows, args.plot_data)
    print(f"# wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_roc(args) -> int:
    jammer_preset = None if args.jammer == "none" else args.jammer
    config = preset_config(args.preset, k_sensors=args.k, n_antennas=args.n,
                           pd=args.pd, pf=args.pf, seed=args.seed)
    root = np.random.SeedSequence([args.seed, 0])
    wsn_ss, jam_ss = root.spawn(2)
    wsn = generate_wsn(config, np.random.default_rng(wsn_ss))
    wsn = wsn.with_(noise_power=float(db_to_lin(args.sigma_dbm)))
    jammer = (generate_jammer(config, np.random.default_rng(jam_ss),
                              preset=jammer_preset)
              if jammer_preset is not None else None)
    rules = _parse_rules(args.rules, args.k, jammer is not None)
    levels = (tuple(float(x) for x in args.levels.split(","))
              if args.levels else montecarlo.DEFAULT_LEVELS)
    if args.trials < 100.0 / min(levels):
        raise UsageError(f"need --trials >= {int(np.ceil(100.0 / min(levels)))} "
                         f"for the smallest level {min(levels)}")
    engine = montecarlo.Engine(wsn, jammer=jammer, seed=args.seed,
                               threads=args.threads)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rule", "target_pf0", "gamma", "pf0", "pd0", "trials"])
        for rule in rules:
            for pt in montecarlo.roc_points(engine, rule, args.trials, levels):
                writer.writerow([pt["rule"], repr(pt["target_pf0"]),
                                 repr(pt["gamma"]), repr(pt["pf0"]),
                                 repr(pt["pd0"]), pt["trials"]])
    print(f"# wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# verify battery


def _check_equivalence(name, engine, rule_a, rule_b, trials, results,
                       expect="equivalent"):
    res = montecarlo.equivalence_check(engine, rule_a, rule_b, trials)
    ok = res.verdict == expect
    results.append((name, ok,
                    f"{res.verdict} (spearman={res.spearman:.6f}, "
                    f"max_disagree={res.max_disagreement:.2e})"))


def _grid_loglik(lambda_a, lambda_c, v2, s):
    s = np.asarray(s)[:, None]
    return (-np.sum(np.log(lambda_a[None, :] + s), axis=1)
            - np.sum(v2[None, :] / (lambda_c[None, :] + s), axis=1))


def _verify_battery(args) -> list[tuple[str, bool, str]]:
    results: list[tuple[str, bool, str]] = []
    seed = args.seed
    trials = args.trials
    jammer_preset = None if args.jammer == "none" else args.jammer
    run_all = not (args.kappa_zero or args.is_assumption)

    def new_engine(wsn, jammer=None):
        return montecarlo.Engine(wsn, jammer=jammer, seed=seed,
                                 threads=args.threads)

    def deployment(preset, jam_preset=None, kappa_zero=False, ideal=False):
        config = preset_config(preset, k_sensors=args.k, n_antennas=args.n,
                               pd=args.pd, pf=args.pf, seed=seed)
        root = np.random.SeedSequence([seed, 1])
        wsn_ss, jam_ss = root.spawn(2)
        wsn = generate_wsn(config, np.random.default_rng(wsn_ss))
        if kappa_zero:
            wsn = _force_kappa_zero(wsn)
        if ideal:
            wsn = _force_ideal(wsn)
        jam = (generate_jammer(config, np.random.default_rng(jam_ss),
                               preset=jam_preset)
               if jam_preset is not None else None)
        return wsn, jam

    if args.kappa_zero or run_all:
        wsn, _ = deployment(args.preset, kappa_zero=True)
        eng = new_engine(wsn)
        _check_equivalence("lemma1-is-nlos", eng, "is", "nlos", trials, results)
        _check_equivalence("lemma1-igmm-nlos", eng, "igmm", "nlos", trials, results)

    if run_all:
        # weak-LOS regime: raise the noise floor until the LOS spread is
        # negligible next to the equivalent noise, then is/igmm must agree
        # in ranking
        wsn, _ = deployment("nlos")
        for _ in range(60):
            ctx = fusion_rules.make_context(wsn)
            a_aug = np.vstack([wsn.a_tilde, wsn.a_tilde.conj()])
            lam_min = float(np.linalg.eigvalsh(a_aug @ a_aug.conj().T)[0])
            spread = max(float(np.max(r * (1 - r))) for r in (wsn.pf, wsn.pd))
            bound = 0.01 * min(ctx.char0.sigma_e2, ctx.char1.sigma_e2)
            if spread * lam_min <= bound:
                break
            wsn = wsn.with_(noise_power=wsn.noise_power * 2.0)
        res = montecarlo.equivalence_check(new_engine(wsn), "is", "igmm", trials)
        ok = res.spearman >= 0.999
        results.append(("lemma2-rankcorr", ok, f"spearman={res.spearman:.6f}"))

    if args.is_assumption or run_all:
        wsn, jam = deployment(args.preset, jam_preset=jammer_preset or "los-jam",
                              ideal=True)
        eng = new_engine(wsn)
        _check_equivalence("lemma3-igmm-is", eng, "igmm", "is", trials, results)
        _check_equivalence("wl-pair", eng, "wl0", "wl1", trials, results)
        if args.k <= 12:
            _check_equivalence("lemma3-llr-is", eng, "llr", "is", trials, results)
        if jammer_preset is not None or run_all:
            eng_j = new_engine(wsn, jam)
            _check_equivalence("jam-lemma-igmm-is-glrt", eng_j, "igmm-glrt",
                               "is-glrt", trials, results)

    if run_all:
        # closed-form reduction of both subspace GLRTs with no LOS component
        wsn, jam = deployment(args.preset, jam_preset=jammer_preset or "los-jam",
                              kappa_zero=True)
        eng = new_engine(wsn, jam)
        ctx = eng.ctx
        n = wsn.n_antennas
        batch = eng.sample(H1, min(trials, 2000), 0)
        e = jamming_rules.nlos_glrt(batch.y, jam)
        ref_is = jamming_rules.nlos_piecewise_reference(
            e, wsn.noise_power, wsn.noise_power + float(wsn.nu.sum()), n)
        d_is = float(np.max(np.abs(jamming_rules.is_glrt(batch.y, ctx, jam) - ref_is)))
        results.append(("piecewise-is-glrt", d_is <= 1e-9, f"max_abs_diff={d_is:.2e}"))
        s0 = float(wsn.beta @ wsn.pf + wsn.noise_power)
        s1 = float(wsn.beta @ wsn.pd + wsn.noise_power)
        ref_ig = jamming_rules.nlos_piecewise_reference(e, s0, s1, n)
        d_ig = float(np.max(np.abs(jamming_rules.igmm_glrt(batch.y, ctx, jam) - ref_ig)))
        results.append(("piecewise-igmm-glrt", d_ig <= 1e-9, f"max_abs_diff={d_ig:.2e}"))

        p = jam.p_perp
        d_proj = max(float(np.abs(p - p.conj().T).max()),
                     float(np.abs(p @ p - p).max()),
                     float(np.abs(p @ jam.a_j).max()))
        results.append(("projector", d_proj <= 1e-10, f"max_residual={d_proj:.2e}"))

        rng = np.random.default_rng(seed + 7)
        worst = 0.0
        for _ in range(20):
            nn = int(rng.integers(2, 9))
            rr = int(rng.integers(1, nn))
            la = rng.uniform(0.1, 50.0, size=2 * nn)
            lc = rng.uniform(0.1, 50.0, size=2 * (nn - rr))
            v2 = rng.uniform(0.0, 200.0, size=2 * (nn - rr))
            s_hat = jamming_rules.solve_sigma_poly(la, lc, v2)
            grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e3 * la.max(), 4000)])
            l_hat = _grid_loglik(la, lc, v2, np.array([s_hat]))[0]
            l_grid = _grid_loglik(la, lc, v2, grid).max()
            worst = max(worst, l_grid - l_hat)
        results.append(("sigma-poly-oracle", worst <= 1e-6,
                        f"max_loglik_gap={worst:.2e}"))

    return results


def cmd_verify(args) -> int:
    results = _verify_battery(args)
    failed = 0
    for name, ok, detail in results:
        print(f"{name}: {'pass' if ok else 'FAIL'} {detail}")
        failed += 0 if ok else 1
    print(f"# {len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ricianfusion",
        description="Decision-fusion detection-performance simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, n_default="6"):
        p.add_argument("--k", type=int, default=14, help="number of sensors")
        p.add_argument("--pd", type=float, default=0.5)
        p.add_argument("--pf", type=float, default=0.05)
        p.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (default: ${SEED_ENV} or 0)")
        p.add_argument("--threads", type=int, default=1)

    g = sub.add_parser("generate", help="draw and store a scenario")
    g.add_argument("--preset", choices=sorted(PRESETS), default="intermediate")
    g.add_argument("--jammer", choices=["none", *sorted(JAMMER_PRESETS)],
                   default="none")
    g.add_argument("--n", type=int, default=6, help="antennas at the fusion center")
    g.add_argument("--r", type=int, default=2, help="jammer rank")
    g.add_argument("--kappa-zero", action="store_true",
                   help="force all Rician factors to zero")
    g.add_argument("--out", default=None, help="scenario file to write")
    common(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="performance sweep to CSV")
    r.add_argument("--preset", default="intermediate",
                   help="comma list of presets (los,intermediate,nlos)")
    r.add_argument("--scenario", default=None, help="scenario file instead of preset")
    r.add_argument("--jammer", choices=["none", *sorted(JAMMER_PRESETS)],
                   default="none")
    r.add_argument("--rules", default="is,nlos,igmm")
    r.add_argument("--sigma-grid", default="0", help="noise power dBm, start:step:stop")
    r.add_argument("--n", default="6", help="comma list of antenna counts")
    r.add_argument("--pf0", type=float, default=0.01)
    r.add_argument("--trials", type=int, default=20000)
    r.add_argument("--out", required=True)
    r.add_argument("--plot-data", default=None,
                   help="directory for per-rule plot series")
    common(r)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="equivalence/oracle self checks")
    v.add_argument("--preset", choices=sorted(PRESETS), default="intermediate")
    v.add_argument("--jammer", choices=["none", *sorted(JAMMER_PRESETS)],
                   default="none")
    v.add_argument("--kappa-zero", action="store_true",
                   help="only the zero-Rician equivalence checks")
    v.add_argument("--is-assumption", action="store_true",
                   help="only the ideal-sensor (pd=1, pf=0) checks")
    v.add_argument("--n", type=int, default=6)
    v.add_argument("--trials", type=int, default=10000)
    common(v)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("roc", help="operating points to CSV")
    c.add_argument("--preset", choices=sorted(PRESETS), default="intermediate")
    c.add_argument("--jammer", choices=["none", *sorted(JAMMER_PRESETS)],
                   default="none")
    c.add_argument("--rules", default="is,nlos,igmm")
    c.add_argument("--n", type=int, default=6)
    c.add_argument("--sigma-dbm", type=float, default=0.0)
    c.add_argument("--levels", default=None, help="comma list of target Pf0 values")
    c.add_argument("--trials", type=int, default=20000)
    c.add_argument("--out", required=True)
    common(c)
    c.set_defaults(func=cmd_roc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed is None:
            args.seed = _seed_default()
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
