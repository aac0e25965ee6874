"""Desk-scale experiment suite with pass/fail criteria.

Each entry builds its configs, runs them, and returns a JSON-ready report
whose ``criteria`` list records the measured value next to its threshold.
Trials that pool several runs use consecutive seeds starting at ``seed``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .config import DataSource, ExperimentConfig, StrategySpec
from .contract import gas_estimate
from .scoring import UNIT
from .sim import run_experiment
from .stats import pearson_correlation, rank_percentile, significance_test

log = logging.getLogger(__name__)

EXPERIMENTS = ("exp1", "exp2", "exp3", "exp4", "gas")


@dataclass(frozen=True)
class SuiteParams:
    rows: int = 10_000
    trials: int = 5
    epsilon: float = 0.1
    n_agents: int = 20
    n_adversaries: int = 6
    exp1_agents: tuple[int, ...] = (1, 5, 10, 25)
    exp1_epsilons: tuple[float, ...] = (0.01, 0.1, 1.0)
    size_span: float = 16.0
    gas_agents: tuple[int, ...] = (1, 5, 10, 25, 50, 100)
    gas_rounds: tuple[int, ...] = (1, 3, 5, 10)


def _criterion(name: str, value, threshold, op: str) -> dict:
    ok = {"<": value < threshold, ">": value > threshold, ">=": value >= threshold,
          "==": value == threshold}[op]
    return {"name": name, "value": value, "op": op, "threshold": threshold, "passed": bool(ok)}


def _config(p: SuiteParams, name: str, seed: int, **kw) -> ExperimentConfig:
    kw.setdefault("n_agents", p.n_agents)
    kw.setdefault("epsilon", p.epsilon)
    return ExperimentConfig(name=name, seed=seed, dataset=DataSource(rows=p.rows), **kw)


def _first_round(report: dict) -> dict:
    return report["rounds"][0]


def exp1(seed: int, p: SuiteParams) -> tuple[dict, list[dict], dict]:
    runs, table = {}, []
    for n in p.exp1_agents:
        for eps in p.exp1_epsilons:
            name = f"n{n}_eps{eps:g}"
            rep = run_experiment(_config(p, name, seed, n_agents=n, epsilon=eps))
            rec = _first_round(rep)
            per_agent = np.abs(np.asarray(rec["m"]) / UNIT - np.asarray(rec["test_f1"]))
            table.append({
                "n_agents": n, "epsilon": eps,
                "median_f1_mean": rec["median_f1_mean"], "test_f1_mean": rec["test_f1_mean"],
                "abs_diff": abs(rec["median_f1_mean"] - rec["test_f1_mean"]),
                "per_agent_abs_diff_mean": float(per_agent.mean()),
            })
            runs[name] = rep
    mean_diff = float(np.mean([row["abs_diff"] for row in table]))
    criteria = [_criterion("mean |median F1 - test F1|", mean_diff, 0.02, "<")]
    return {"configs": table}, criteria, runs


def size_ladder(n: int, span: float) -> list[float]:
    """Geometric relative sizes from 1 to ``span``."""
    return [float(span ** (i / (n - 1))) for i in range(n)] if n > 1 else [1.0]


def exp2(seed: int, p: SuiteParams) -> tuple[dict, list[dict], dict]:
    sizes = size_ladder(p.n_agents, p.size_span)
    log_size = np.log(sizes)
    runs, pct = {}, {"m": [], "d": [], "p": []}
    for t in range(p.trials):
        name = f"trial{t}"
        rep = run_experiment(_config(p, name, seed + t, relative_sizes=sizes))
        rec = _first_round(rep)
        for key in pct:
            pct[key].append(rank_percentile(rec[key]))
        runs[name] = rep
    corr = {key: pearson_correlation(log_size, np.mean(v, axis=0)) for key, v in pct.items()}
    per_trial = [pearson_correlation(log_size, v) for v in pct["p"]]
    result = {
        "relative_sizes": sizes,
        "mean_percentile": {k: np.mean(v, axis=0).tolist() for k, v in pct.items()},
        "correlation": corr,
        "per_trial_overall_correlation": per_trial,
    }
    return result, [_criterion("pearson r(log size, overall-score percentile)", corr["p"], 0.8, ">")], runs


def _split_scores(rec: dict, field: str = "p") -> tuple[np.ndarray, np.ndarray]:
    kinds = np.asarray(rec["kinds"])
    vals = np.asarray(rec[field], dtype=np.float64) / UNIT
    return vals[kinds != "honest"], vals[kinds == "honest"]


def _adversary_trials(p: SuiteParams, kind: str, seed: int):
    runs, recs = {}, []
    for t in range(p.trials):
        name = f"{kind}_trial{t}"
        rep = run_experiment(_config(p, name, seed + t, strategies=[StrategySpec(kind, p.n_adversaries)]))
        runs[name] = rep
        recs.append(_first_round(rep))
    return runs, recs


def _group_means(recs: list[dict]) -> dict:
    out = {}
    for field in ("m", "d", "p"):
        bad = np.concatenate([_split_scores(r, field)[0] for r in recs])
        good = np.concatenate([_split_scores(r, field)[1] for r in recs])
        out[field] = {"adversary_mean": float(bad.mean()), "honest_mean": float(good.mean())}
    return out


def _lower_criterion(label: str, recs: list[dict]) -> tuple[float, list[dict]]:
    bad = np.concatenate([_split_scores(r)[0] for r in recs])
    good = np.concatenate([_split_scores(r)[1] for r in recs])
    pval = significance_test(bad, good)
    return pval, [
        _criterion(f"{label} mean overall score below honest", float(good.mean() - bad.mean()), 0.0, ">"),
        _criterion(f"{label} vs honest Welch p-value", pval, 0.01, "<"),
    ]


def exp3(seed: int, p: SuiteParams) -> tuple[dict, list[dict], dict]:
    runs, recs = _adversary_trials(p, "fabricator", seed)
    pval, criteria = _lower_criterion("colluder", recs)
    violations = 0
    for rec in recs:
        s = np.asarray(rec["scores"], dtype=np.int64)
        m = np.asarray(rec["m"], dtype=np.int64)
        for i, kind in enumerate(rec["kinds"]):
            worst = np.max(np.abs(s[i] - m))
            if kind == "fabricator" and 2 * worst >= UNIT and rec["p"][i] != 0:
                violations += 1
    criteria.append(_criterion("colluders with worst deviation >= 0.5 and p != 0", violations, 0, "=="))
    return {"groups": _group_means(recs), "p_value": pval}, criteria, runs


def exp4(seed: int, p: SuiteParams) -> tuple[dict, list[dict], dict]:
    runs, criteria, result = {}, [], {}
    for kind in ("random", "inverted"):
        kind_runs, recs = _adversary_trials(p, kind, seed)
        runs.update(kind_runs)
        pval, crit = _lower_criterion(kind, recs)
        criteria += crit
        weighted = float(np.mean([r["global_test_f1"] for r in recs]))
        unweighted = float(np.mean([r["unweighted_test_f1"] for r in recs]))
        result[kind] = {"groups": _group_means(recs), "p_value": pval,
                        "weighted_test_f1_mean": weighted, "unweighted_test_f1_mean": unweighted}
        if kind == "inverted":
            criteria.append(_criterion("inverted: weighted minus unweighted global test F1",
                                       weighted - unweighted, 0.0, ">="))
    return result, criteria, runs


def gas(seed: int, p: SuiteParams) -> tuple[dict, list[dict], dict]:
    table = [{"n_agents": n, "rounds": r, "gas_per_agent": gas_estimate(n, r)}
             for n in p.gas_agents for r in p.gas_rounds]
    criteria = [_criterion("gas(1,1)", gas_estimate(1, 1), 1_051_008, "=="),
                _criterion("gas(50,5)", gas_estimate(50, 5), 123_568_375, "==")]
    return {"table": table}, criteria, {}


_RUNNERS = {"exp1": exp1, "exp2": exp2, "exp3": exp3, "exp4": exp4, "gas": gas}


def run_suite(experiment: str, seed: int = 0, params: SuiteParams | None = None) -> dict:
    if experiment not in _RUNNERS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    params = params or SuiteParams()
    start = time.perf_counter()
    result, criteria, runs = _RUNNERS[experiment](seed, params)
    log.info("%s finished in %.1fs", experiment, time.perf_counter() - start)
    return {
        "experiment": experiment,
        "seed": seed,
        "params": {k: list(v) if isinstance(v, tuple) else v for k, v in params.__dict__.items()},
        "result": result,
        "criteria": criteria,
        "passed": all(c["passed"] for c in criteria),
        "runs": runs,
    }
