"""Drive a full protocol run: data, agents, store and contract on one clock."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .agent import Agent, Kind
from .config import ExperimentConfig
from .contract import Contract, ContractConfig, Stage, gas_estimate
from .dataset import Dataset
from .model import HyperParams, ModelWeights, f1_eval
from .scoring import UNIT, weighted_average
from .store import BlobStore, Keyring, Reachability

log = logging.getLogger(__name__)

# spawn-key namespaces for the master seed
SEED_DATA, SEED_PARTITION, SEED_AGENT, SEED_KEYRING, SEED_TOPOLOGY = range(5)


def sub_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Counter-based child seed; independent of how many siblings exist."""
    return np.random.SeedSequence(master, spawn_key=tuple(key))


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    src = cfg.dataset
    if src.source == "synthetic":
        data = ds_mod.make_synthetic(src.rows, sub_seed(cfg.seed, SEED_DATA))
    elif src.source == "adult":
        data = ds_mod.preprocess(ds_mod.load_adult(src.path))
    else:
        raw = ds_mod.read_csv(src.path, src.schema, positive_label=src.positive_label)
        data = ds_mod.preprocess(raw)
    if len(data) > src.max_rows:
        rng = np.random.default_rng(sub_seed(cfg.seed, SEED_DATA, 1))
        data = data.take(np.sort(rng.choice(len(data), src.max_rows, replace=False)))
    return data


def build_reachability(cfg: ExperimentConfig, honest: list[bool]) -> Reachability:
    reach = Reachability()
    accounts = cfg.accounts
    topo = cfg.reachability
    for a, b in topo.blocked:
        reach.block(accounts[a], accounts[b])
    if topo.block_prob > 0:
        rng = np.random.default_rng(sub_seed(cfg.seed, SEED_TOPOLOGY))
        for i, a in enumerate(accounts):
            for j, b in enumerate(accounts):
                draw = rng.random()
                if i == j or (topo.protect_honest and honest[i] and honest[j]):
                    continue
                if draw < topo.block_prob:
                    reach.block(a, b)
    return reach


@dataclass
class Simulation:
    """Everything one run needs, wired together and ready to step."""

    cfg: ExperimentConfig
    agents: list[Agent]
    contract: Contract
    store: BlobStore
    test: Dataset

    @classmethod
    def build(cls, cfg: ExperimentConfig, data: Dataset | None = None) -> Simulation:
        data = load_dataset(cfg) if data is None else data
        part_seed = sub_seed(cfg.seed, SEED_PARTITION)
        if cfg.relative_sizes:
            shards, test = ds_mod.weighted_partition(data, cfg.relative_sizes, part_seed)
        else:
            shards, test = ds_mod.partition(data, cfg.n_agents, part_seed)
        strategies = cfg.assign_strategies()
        hp = HyperParams(alpha=cfg.alpha, eta=cfg.eta, epochs=cfg.epochs, epsilon=cfg.epsilon)
        secret = sub_seed(cfg.seed, SEED_KEYRING).generate_state(8).tobytes()
        keyring = Keyring(secret)
        agents = [
            Agent(acct, shard, hp, keyring, strat, seed=sub_seed(cfg.seed, SEED_AGENT, i))
            for i, (acct, shard, strat) in enumerate(zip(cfg.accounts, shards, strategies))
        ]
        store = BlobStore(build_reachability(cfg, [s.honest for s in strategies]))
        contract = Contract(ContractConfig(
            rounds=cfg.rounds, allowlist=tuple(cfg.accounts), bond_amount=cfg.bond,
            stage_durations=tuple(cfg.stage_durations), refund_fraction=cfg.refund(),
        ))
        for a in agents:
            contract.enroll(a.account, cfg.bond)
        return cls(cfg, agents, contract, store, test)

    def active_agents(self) -> list[Agent]:
        active = set(self.contract.state.active)
        return [a for a in self.agents if a.account in active]

    def _close(self, stage: Stage) -> None:
        self.contract.advance_clock(self.contract.state.deadlines[stage])

    def step_round(self) -> dict:
        c, store = self.contract, self.store
        r = c.state.round
        eliminated_before = set(c.state.eliminated)

        for a in self.active_agents():
            a.act_train(c, store)
        submitted = {a.account: a.submitted for a in self.active_agents()}
        self._close(Stage.TRAIN)

        agents = self.active_agents()
        for a in agents:
            a.prefetch(c, store)
        for a in agents:
            a.act_retrieve(c, store, peers=agents)
        self._close(Stage.RETRIEVE)

        agents = self.active_agents()
        for a in agents:
            a.act_evaluate(c, store, peers=agents)
        self._close(Stage.EVAL_COMMIT)

        for a in self.active_agents():
            a.act_reveal(c)
        self._close(Stage.EVAL_REVEAL)

        result = c.state.results.get(r)
        survivors = self.active_agents()
        models = [a.act_aggregate(c, r) for a in survivors] if result else []
        return self._round_record(r, result, submitted, models, eliminated_before)

    def _round_record(self, r, result, submitted, models, eliminated_before) -> dict:
        c = self.contract
        newly = {a: {"stage": e.stage.value, "reason": e.reason}
                 for a, e in sorted(c.state.eliminated.items()) if a not in eliminated_before}
        rec = {"round": r, "eliminated": newly}
        if result is None:
            return rec
        accounts = list(result.accounts)
        bd = result.breakdown
        test_f1 = {a: f1_eval(submitted[a], self.test) for a in accounts}
        strategies = {a.account: a.strategy for a in self.agents}
        unweighted = weighted_average([submitted[a] for a in accounts], [0] * len(accounts))
        rec.update({
            "accounts": accounts,
            "kinds": [strategies[a].kind.value for a in accounts],
            "scores": result.scores.s.tolist(),
            "m": bd.m.tolist(),
            "m_scaled": bd.m_scaled.tolist(),
            "d": bd.d.tolist(),
            "d_scaled": bd.d_scaled.tolist(),
            "p": bd.p.tolist(),
            "pool": result.pool,
            "payouts": [result.payouts[a] for a in accounts],
            "test_f1": [test_f1[a] for a in accounts],
            "median_f1_mean": float(np.mean(bd.m)) / UNIT,
            "test_f1_mean": float(np.mean([test_f1[a] for a in accounts])),
            "global_test_f1": f1_eval(models[0], self.test) if models else None,
            "unweighted_test_f1": f1_eval(unweighted, self.test),
            "models_identical": all(m == models[0] for m in models),
            "shard_sizes": [self._agent(a).shard.d for a in accounts],
        })
        return rec

    def _agent(self, account: str) -> Agent:
        return next(a for a in self.agents if a.account == account)

    def run(self) -> dict:
        rounds = []
        while self.contract.state.stage != Stage.FINISHED:
            rounds.append(self.step_round())
        return self.report(rounds)

    def report(self, rounds: list[dict]) -> dict:
        st = self.contract.state
        strategies = {a.account: a.strategy for a in self.agents}
        honest = [a for a in st.enrolled if strategies[a].honest]
        adversaries = [a for a in st.enrolled if not strategies[a].honest]
        n, r = self.cfg.n_agents, self.cfg.rounds
        return {
            "config": self.cfg.to_dict(),
            "rounds": rounds,
            "agents": {
                a: {"kind": strategies[a].kind.value, "bond": st.bonds[a],
                    "payout": st.payouts.get(a, 0),
                    "eliminated": (None if a not in st.eliminated else
                                   {"round": st.eliminated[a].round, "stage": st.eliminated[a].stage.value,
                                    "reason": st.eliminated[a].reason})}
                for a in st.enrolled
            },
            "summary": {
                "survivors": len(st.active),
                "eliminated": len(st.eliminated),
                "honest_payout": sum(st.payouts.get(a, 0) for a in honest),
                "adversary_payout": sum(st.payouts.get(a, 0) for a in adversaries),
                "contract_balance": st.balance,
                "total_bonds": st.total_bonds,
                "conserved": st.conserved(),
                "gas_metered_per_agent": st.gas_used // n,
                "gas_formula_per_agent": gas_estimate(n, r),
                "state_digest": st.digest(),
            },
        }


def run_experiment(cfg: ExperimentConfig, data: Dataset | None = None) -> dict:
    return Simulation.build(cfg, data).run()


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_outputs(report: dict, out, contract: Contract | None = None) -> Path:
    """report.json, scores.csv and summary.csv (plus transaction log and ledger if given)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps_report(report))
    runs = report["runs"] if "runs" in report else {"": report}
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "round", "agent", "kind", "m", "m_scaled", "d", "d_scaled", "p", "payout", "test_f1"])
        for name, run in runs.items():
            for rec in run.get("rounds", []):
                for i, a in enumerate(rec.get("accounts", [])):
                    w.writerow([name, rec["round"], a, rec["kinds"][i], rec["m"][i], rec["m_scaled"][i],
                                rec["d"][i], rec["d_scaled"][i], rec["p"][i], rec["payouts"][i],
                                repr(rec["test_f1"][i])])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "key", "value"])
        for name, run in runs.items():
            for k, v in sorted(run.get("summary", {}).items()):
                w.writerow([name, k, v])
    if contract is not None:
        contract.write_log(out / "transactions.jsonl")
        contract.write_ledger(out / "ledger.csv")
    return out
