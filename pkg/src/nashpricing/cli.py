"""Command-line harness: surface export, training sweeps, nash-vs-baseline
comparison, and the self-verification oracle suite."""

from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from . import __version__
from . import equilibrium as eq
from .learner import Hyperparams, train, train_baseline
from .learner import JointPolicy, QEvaluator, estimate_delta_exhaustive, simplex_grid
from .market import MarketObservation, MarketParams, expected_profit
from .scenarios import get_scenario


def _load_hyperparams(args) -> Hyperparams:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            return Hyperparams.from_dict(json.load(fh))
    return Hyperparams()


def _seed_list(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip() != ""]


def cmd_surface(args) -> int:
    scenario = get_scenario(args.scenario).with_agents(args.agents)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = np.asarray(scenario.params.price_grid)
    if args.resolution != len(grid):
        grid = np.linspace(grid[0], grid[-1], args.resolution)
    surface = eq.epsilon_surface(
        scenario.params, grid, grid, scenario.epsilon_threshold
    )
    surface.to_csv(out / "surface.csv")
    bands = eq.all_reward_bands(
        scenario.params, scenario.epsilon_threshold, p_grid=grid, x_grid=grid
    )
    eq.bands_to_json(bands, out / "ne_bands.json")
    print(f"wrote {out/'surface.csv'} and {out/'ne_bands.json'}")
    return 0


def _write_manifest(out: Path, scenario, hp: Hyperparams, seeds, files, mode):
    manifest = {
        "scenario": scenario.name,
        "mode": mode,
        "n_agents": scenario.params.n_agents,
        "seeds": list(seeds),
        "hyperparams": hp.to_dict(),
        "config_hash": hp.config_hash(),
        "outputs": sorted(str(f) for f in files),
        "tool_version": __version__,
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _run_sweep(scenario, hp, seeds, mode, out: Path):
    trainer = train if mode == "nash" else train_baseline
    files = []
    summaries = {}
    for seed in seeds:
        report = trainer(scenario.params, hp, seed)
        rpath = out / f"rewards_seed{seed}.csv"
        lpath = out / f"losses_seed{seed}.csv"
        report.rewards_to_csv(rpath)
        report.losses_to_csv(lpath)
        files += [rpath, lpath]
        summaries[seed] = report
    return files, summaries


def _final_k_mean(values, k=10):
    tail = values[-k:] if len(values) >= k else values
    return float(np.mean(tail)) if tail else float("nan")


def cmd_train(args) -> int:
    scenario = get_scenario(args.scenario).with_agents(args.agents)
    hp = _load_hyperparams(args)
    hp.noise_sigma = scenario.noise_sigma
    seeds = _seed_list(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files, summaries = _run_sweep(scenario, hp, seeds, args.mode, out)

    bands = eq.all_reward_bands(scenario.params, scenario.epsilon_threshold)
    union = eq.union_band(bands)
    hits = []
    summary = {"mode": args.mode, "scenario": scenario.name, "seeds": {}}
    for seed, report in summaries.items():
        agent0 = _final_k_mean(report.episode_agent0_mean)
        market = _final_k_mean(report.episode_market_mean)
        in_band = (
            union is not None and union[0] - 1e-12 <= agent0 <= union[1] + 1e-12
        )
        hits.append(in_band)
        summary["seeds"][str(seed)] = {
            "final10_agent0_mean": agent0,
            "final10_market_mean": market,
            "in_ne_band": in_band,
            "aborted": report.aborted,
            "abort_reason": report.abort_reason,
        }
    summary["ne_band_union"] = list(union) if union else None
    summary["band_hit_rate"] = float(np.mean(hits)) if hits else 0.0
    spath = out / "summary.json"
    with open(spath, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    files.append(spath)
    _write_manifest(out, scenario, hp, seeds, files, args.mode)
    print(f"wrote {len(files)} files to {out}")
    return 0


def cmd_compare(args) -> int:
    scenario = get_scenario(args.scenario).with_agents(args.agents)
    hp = _load_hyperparams(args)
    hp.noise_sigma = scenario.noise_sigma
    seeds = _seed_list(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    nash_dir = out / "nash"
    base_dir = out / "baseline"
    nash_dir.mkdir(exist_ok=True)
    base_dir.mkdir(exist_ok=True)
    files_n, nash_runs = _run_sweep(scenario, hp, seeds, "nash", nash_dir)
    files_b, base_runs = _run_sweep(scenario, hp, seeds, "baseline", base_dir)
    cpath = out / "compare.csv"
    with open(cpath, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["seed", "nash_final10_market_mean", "baseline_final10_market_mean"]
        )
        for seed in seeds:
            writer.writerow(
                [
                    seed,
                    repr(_final_k_mean(nash_runs[seed].episode_market_mean)),
                    repr(_final_k_mean(base_runs[seed].episode_market_mean)),
                ]
            )
    _write_manifest(out, scenario, hp, seeds, files_n + files_b + [cpath], "compare")
    print(f"wrote {cpath}")
    return 0


def _verify_gain_equivalence(scenario, n_samples=1000, seed=0) -> dict:
    params = scenario.params
    rng = np.random.default_rng(seed)
    worst = 0.0
    n = 0
    while n < n_samples:
        x = rng.uniform(1.0, 9.0)
        p = rng.uniform(1.0, 10.0)
        ctx = eq.DeviationContext(params, x, p)
        if ctx.demand <= 0:
            continue
        lo, hi = eq.admissible_range(ctx)
        d = rng.uniform(max(lo, -x + 1e-3) * 0.99, hi * 0.99)
        if not lo < d < hi or x - d <= 0 or ctx.demand + ctx.gamma * d <= 0:
            continue
        ratio = eq.gain(ctx, d)
        prices = [x - d] + [x] * (params.n_agents - 1)
        obs = MarketObservation(
            reference_price=p, mean_price=x - d, per_agent_prices=tuple(prices)
        )
        direct = expected_profit(params, 0, obs)
        worst = max(worst, abs(ratio * ctx.symmetric_profit - direct))
        n += 1
    return {"name": "gain_cross_module", "max_abs_error": worst, "passed": worst < 1e-9}


def _verify_dstar(scenario, n_samples=200, seed=0) -> dict:
    params = scenario.params
    rng = np.random.default_rng(seed)
    worst = 0.0
    diffs = []
    n = 0
    while n < n_samples:
        x = rng.uniform(1.0, 9.0)
        p = rng.uniform(1.0, 10.0)
        ctx = eq.DeviationContext(params, x, p)
        if ctx.demand <= 0:
            continue
        d_star, eps_star = eq.optimal_deviation(ctx)
        lo, hi = eq.admissible_range(ctx)
        grid = np.linspace(lo + 1e-9, hi - 1e-9, 512)
        vals = ctx.symmetric_profit * (
            eq.win_factor_bound(ctx, grid)
            * (1 + ctx.gamma / ctx.demand * grid)
            * (1 - grid / ctx.mean_price)
            - 1.0
        )
        grid_best = max(0.0, float(np.max(vals)))
        worst = max(worst, grid_best - eps_star)
        report = eq.compare_deviation_paths(ctx)
        if np.isfinite(report["abs_difference"]):
            diffs.append(report["abs_difference"])
        n += 1
    return {
        "name": "optimal_deviation_maximality",
        "max_grid_excess": worst,
        "passed": worst < 1e-9,
        "closed_form_mean_abs_difference": float(np.mean(diffs)) if diffs else None,
        "closed_form_samples": len(diffs),
    }


def _verify_small_game(seed=0) -> dict:
    # 2-state / 2-agent / 2-action desk game with a known dominant action
    payoff = {
        0: np.array([[[4.0, 4.0], [6.0, 1.0]], [[1.0, 6.0], [2.0, 2.0]]]),
        1: np.array([[[3.0, 3.0], [5.0, 0.5]], [[0.5, 5.0], [1.0, 1.0]]]),
    }

    def q_fn(state, joints):
        table = payoff[state]
        return np.array([table[a, b] for a, b in joints])

    qeval = QEvaluator(q_fn, n_states=2, n_agents=2, n_actions=2)
    rows = simplex_grid(2, 11)
    base = JointPolicy.uniform(2, 2)
    deltas = {
        s: estimate_delta_exhaustive(qeval, s, base, rows) for s in (0, 1)
    }
    max_delta = max(deltas.values())
    worst = -np.inf
    from .learner import policy_value

    for s in (0, 1):
        v0 = policy_value(qeval, s, base)
        for row in rows:
            gain = policy_value(qeval, s, base.replace_row(0, row)) - v0
            worst = max(worst, gain - max_delta)
    return {
        "name": "small_game_delta_bound",
        "max_gain_minus_max_delta": float(worst),
        "passed": worst <= 1e-6,
    }


def cmd_verify(args) -> int:
    scenario = get_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checks = [
        _verify_gain_equivalence(scenario),
        _verify_dstar(scenario),
        _verify_small_game(),
    ]
    report = {"scenario": scenario.name, "checks": checks,
              "all_passed": all(c["passed"] for c in checks)}
    path = out / "verify.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if report["all_passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nashpricing",
        description="Dynamic-pricing Markov game laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("surface", help="export the deviation-advantage surface")
    p.add_argument("--scenario", required=True)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--resolution", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("train", help="run a training seed sweep")
    p.add_argument("--scenario", required=True)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--seeds", default="0")
    p.add_argument("--mode", choices=["nash", "baseline"], default="nash")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="paired nash vs baseline sweep")
    p.add_argument("--scenario", required=True)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="run the oracle self-check suite")
    p.add_argument("--scenario", default="2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
