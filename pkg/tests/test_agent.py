import numpy as np
import pytest

from fedaudit.agent import Agent, Kind, Strategy
from fedaudit.config import ExperimentConfig
from fedaudit.contract import Stage
from fedaudit.model import ModelWeights
from fedaudit.scoring import UNIT
from fedaudit.sim import Simulation
from fedaudit.store import ContentAddress


def build(n=5, rounds=1, strategies=(), blocked=(), **kw) -> Simulation:
    cfg = ExperimentConfig(n_agents=n, rounds=rounds, dataset={"rows": 600}, epochs=30,
                           strategies=list(strategies), reachability={"blocked": [list(b) for b in blocked]},
                           **kw)
    return Simulation.build(cfg)


def train_all(sim):
    for a in sim.active_agents():
        a.act_train(sim.contract, sim.store)


def test_honest_submission_recorded():
    sim = build()
    train_all(sim)
    addrs = sim.contract.round_addresses()
    assert set(addrs) == {a.account for a in sim.agents}
    for a in sim.agents:
        assert addrs[a.account] in sim.store


def test_train_misser_eliminated():
    sim = build(strategies=[{"kind": "misser", "agents": [2], "stage": "Train"}])
    train_all(sim)
    sim._close(Stage.TRAIN)
    assert list(sim.contract.state.eliminated) == ["agent-002"]


def test_inverted_only_changes_training_labels():
    sim = build(strategies=[{"kind": "inverted", "agents": [0]}])
    bad, good = sim.agents[0], sim.agents[1]
    assert np.array_equal(bad.training_shard.train.labels, 1 - bad.shard.train.labels)
    assert np.array_equal(bad.training_shard.train.features, bad.shard.train.features)
    assert good.training_shard is good.shard


def test_random_agent_uses_synthesized_data():
    sim = build(strategies=[{"kind": "random", "agents": [0]}])
    a = sim.agents[0]
    assert a.training_shard.d == a.shard.d
    assert not np.array_equal(a.training_shard.train.features, a.shard.train.features)


def retrieve(sim):
    train_all(sim)
    sim._close(Stage.TRAIN)
    agents = sim.active_agents()
    for a in agents:
        a.prefetch(sim.contract, sim.store)
    return {a.account: a.act_retrieve(sim.contract, sim.store, peers=agents) for a in agents}


def test_full_reachability_all_valid():
    valid = retrieve(build())
    everyone = {f"agent-{i:03d}" for i in range(5)}
    assert all(v == everyone for v in valid.values())


def test_reshared_model_still_valid():
    sim = build(blocked=[(1, 0)])
    valid = retrieve(sim)
    assert "agent-000" in valid["agent-001"]
    assert sim.store.providers(sim.contract.round_addresses()["agent-000"]) > {"agent-000"}


def test_malformed_blob_reported_invalid():
    sim = build()
    train_all(sim)
    junk = sim.store.put("agent-003", b"not a bundle")
    sim.contract.state.addresses[(1, "agent-003")] = junk
    sim.agents[3].blobs.clear()
    sim._close(Stage.TRAIN)
    valid = sim.agents[0].act_retrieve(sim.contract, sim.store, peers=sim.agents)
    assert "agent-003" not in valid


def test_foreign_envelope_rejected():
    sim = build()
    train_all(sim)
    a0 = sim.agents[0]
    addr = sim.contract.round_addresses()["agent-001"]
    # agent-001's bundle opened as if it came from agent-002
    assert a0.obtain(sim.store, "agent-002", addr) is None


def evaluate(sim):
    retrieve(sim)
    sim._close(Stage.RETRIEVE)
    agents = sim.active_agents()
    return {a.account: a.act_evaluate(sim.contract, sim.store, peers=agents) for a in agents}


def test_honest_scores_consistent():
    sim = build()
    scores = evaluate(sim)
    for a, row in scores.items():
        assert all(0 <= s <= UNIT for s in row.values())
    a = sim.agents[0]
    model = a.retrieved["agent-001"]
    assert a._score("x", model) == a._score("y", ModelWeights.from_bytes(model.to_bytes()))


def test_fabricator_pattern():
    sim = build(strategies=[{"kind": "fabricator", "agents": [0, 1]}])
    scores = evaluate(sim)["agent-000"]
    assert scores == {a: (UNIT if a in ("agent-000", "agent-001") else 0) for a in scores}


def test_salts_are_fresh():
    sim = build(rounds=2)
    seen = set()
    for _ in range(2):
        evaluate(sim)
        for a in sim.active_agents():
            for _, salt in a.salts.values():
                assert salt not in seen
                seen.add(salt)
        sim._close(Stage.EVAL_COMMIT)
        for a in sim.active_agents():
            a.act_reveal(sim.contract)
        sim._close(Stage.EVAL_REVEAL)
        for a in sim.active_agents():
            a.act_aggregate(sim.contract, sim.contract.state.round - 1)


def test_reveal_misser_forfeits_bond():
    sim = build(strategies=[{"kind": "misser", "agents": [4], "stage": "EvalReveal"}])
    sim.run()
    st = sim.contract.state
    assert st.eliminated["agent-004"].stage == Stage.EVAL_REVEAL
    assert st.payouts.get("agent-004", 0) == 0
    assert not any("error" in e for e in sim.contract.log if e["op"] == "reveal_score")


def test_aggregation_identical_and_zero_weight():
    sim = build(strategies=[{"kind": "fabricator", "agents": [0, 1]}])
    rec = sim.step_round()
    assert rec["models_identical"]
    models = [a.model for a in sim.active_agents()]
    assert all(m == models[0] for m in models)
    # fabricators get p = 0, so perturbing their models leaves the average unchanged
    res = sim.contract.state.results[1]
    assert res.p_of("agent-000") == 0
    a = sim.agents[2]
    a.retrieved["agent-000"] = ModelWeights(a.retrieved["agent-000"].w + 1.0, 0.0)
    assert a.act_aggregate(sim.contract, 1) == models[0]


def test_single_survivor_keeps_own_model():
    sim = build(n=1)
    sim.step_round()
    a = sim.agents[0]
    assert a.model == a.submitted


def test_strategy_validation():
    with pytest.raises(ValueError):
        Strategy(Kind.SCORE_FABRICATOR)
    with pytest.raises(ValueError):
        Strategy(Kind.DEADLINE_MISSER, stage=Stage.FINISHED)
    assert Strategy().honest and not Strategy(Kind.RANDOM_DATA).honest
