"""Client-side protocol logic for one participant.

An :class:`Agent` trains, shares, validates, evaluates, commits, reveals and
averages, one method per contract stage.  Its :class:`Strategy` decides which
of those steps it does honestly:

* ``RANDOM_DATA`` / ``INVERTED_LABELS`` only change the shard used for training;
* ``SCORE_FABRICATOR`` only changes the scores it reports;
* ``DEADLINE_MISSER`` skips the action of one stage.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .contract import Contract, Stage, commitment_digest
from .dataset import Shard, split_shard, invert_labels, synthesize_random
from .model import HyperParams, ModelError, ModelWeights, add_dp_noise, f1_micro, train_logistic
from .scoring import UNIT, weighted_average
from .store import BlobStore, ContentAddress, Keyring, StoreError, pack_bundle, unpack_bundle

log = logging.getLogger(__name__)


class Kind(str, Enum):
    HONEST = "honest"
    RANDOM_DATA = "random"
    INVERTED_LABELS = "inverted"
    SCORE_FABRICATOR = "fabricator"
    DEADLINE_MISSER = "misser"


@dataclass(frozen=True)
class Strategy:
    kind: Kind = Kind.HONEST
    colluding: frozenset[str] = frozenset()
    stage: Stage | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "colluding", frozenset(self.colluding))
        if self.stage is not None:
            object.__setattr__(self, "stage", Stage(self.stage))
        if self.kind == Kind.SCORE_FABRICATOR and not self.colluding:
            raise ValueError("a score fabricator needs a non-empty colluding set")
        if self.kind == Kind.DEADLINE_MISSER and self.stage not in (
                Stage.TRAIN, Stage.RETRIEVE, Stage.EVAL_COMMIT, Stage.EVAL_REVEAL):
            raise ValueError(f"deadline misser needs a timed stage, got {self.stage}")

    @property
    def honest(self) -> bool:
        return self.kind == Kind.HONEST

    def misses(self, stage: Stage) -> bool:
        return self.kind == Kind.DEADLINE_MISSER and self.stage == stage


HONEST = Strategy()


@dataclass
class Agent:
    account: str
    shard: Shard
    hp: HyperParams
    keyring: Keyring
    strategy: Strategy = HONEST
    seed: np.random.SeedSequence | int = 0
    model: ModelWeights | None = None
    submitted: ModelWeights | None = None
    blobs: dict[ContentAddress, bytes] = field(default_factory=dict)
    retrieved: dict[str, ModelWeights] = field(default_factory=dict)
    salts: dict[str, tuple[int, bytes]] = field(default_factory=dict)
    training_shard: Shard | None = None

    def __post_init__(self):
        if not isinstance(self.seed, np.random.SeedSequence):
            self.seed = np.random.SeedSequence(self.seed)
        if self.model is None:
            self.model = ModelWeights.zeros(self.shard.train.n_features)
        if self.training_shard is None:
            self.training_shard = self._transform_shard()

    def _rng(self, *key: int) -> np.random.Generator:
        # counter-based: (purpose, round) never collide and do not depend on other agents
        seq = np.random.SeedSequence(self.seed.entropy, spawn_key=self.seed.spawn_key + key)
        return np.random.default_rng(seq)

    def _transform_shard(self) -> Shard:
        kind = self.strategy.kind
        if kind == Kind.INVERTED_LABELS:
            return invert_labels(self.shard)
        if kind == Kind.RANDOM_DATA:
            full = self.shard.full()
            fake = synthesize_random(full, len(full), self._rng(0))
            return split_shard(fake)
        return self.shard

    # -- Train ------------------------------------------------------------

    def act_train(self, contract: Contract, store: BlobStore) -> ContentAddress | None:
        if self.strategy.misses(Stage.TRAIN):
            return None
        r = contract.state.round
        trained = train_logistic(self.training_shard, self.model, self.hp)
        noisy = add_dp_noise(trained, self.shard.d, self.hp.alpha, self.hp.epsilon, self._rng(1, r))
        self.submitted = noisy
        payload = noisy.to_bytes()
        peers = [a for a in contract.state.active if a != self.account]
        envelopes = [self.keyring.seal(self.account, k, payload) for k in peers]
        blob = pack_bundle(self.account, envelopes)
        addr = store.put(self.account, blob)
        self.blobs[addr] = blob
        self.retrieved = {self.account: noisy}
        contract.submit_model_address(self.account, addr)
        return addr

    # -- Retrieve ---------------------------------------------------------

    def _open_model(self, owner: str, blob: bytes) -> ModelWeights:
        sender, envelopes = unpack_bundle(blob)
        if sender != owner or self.account not in envelopes:
            raise StoreError(f"bundle from {sender} carries no envelope for {self.account}")
        model = ModelWeights.from_bytes(self.keyring.open(self.account, envelopes[self.account]))
        if model.dim != self.model.dim:
            raise ModelError(f"model dimension {model.dim}, expected {self.model.dim}")
        return model

    def _fetch_direct(self, store: BlobStore, addr: ContentAddress) -> bytes | None:
        if addr in self.blobs:
            return self.blobs[addr]
        try:
            blob = store.get(self.account, addr)
        except StoreError:
            return None
        self.blobs[addr] = blob
        return blob

    def serve(self, store: BlobStore, addr: ContentAddress) -> bool:
        """Re-host a blob this agent already holds, so peers can fetch it from us."""
        if self.strategy.misses(Stage.RETRIEVE) or addr not in self.blobs:
            return False
        store.put(self.account, self.blobs[addr])
        return True

    def obtain(self, store: BlobStore, owner: str, addr: ContentAddress, peers=()) -> ModelWeights | None:
        """Load and validate a model: direct fetch first, then via peers who re-host it."""
        if owner == self.account:
            return self.submitted
        blob = self._fetch_direct(store, addr)
        if blob is None:
            for peer in peers:
                if peer is not self and peer.serve(store, addr):
                    blob = self._fetch_direct(store, addr)
                    if blob is not None:
                        break
        if blob is None:
            return None
        try:
            return self._open_model(owner, blob)
        except (StoreError, ModelError, ValueError) as exc:
            log.debug("%s rejects model of %s: %s", self.account, owner, exc)
            return None

    def prefetch(self, contract: Contract, store: BlobStore) -> None:
        if self.strategy.misses(Stage.RETRIEVE):
            return
        for owner, addr in contract.round_addresses().items():
            if owner != self.account:
                self._fetch_direct(store, addr)

    def act_retrieve(self, contract: Contract, store: BlobStore, peers=()) -> set[str]:
        if self.strategy.misses(Stage.RETRIEVE):
            return set()
        valid = set()
        for owner, addr in sorted(contract.round_addresses().items()):
            if owner not in contract.state.active:
                continue
            model = self.obtain(store, owner, addr, peers)
            if model is not None:
                self.retrieved[owner] = model
                valid.add(owner)
        contract.report_valid(self.account, valid)
        return valid

    # -- EvalCommit / EvalReveal -----------------------------------------

    def _score(self, target: str, model: ModelWeights | None) -> int:
        if self.strategy.kind == Kind.SCORE_FABRICATOR:
            return UNIT if target in self.strategy.colluding else 0
        if model is None:
            return 0
        return f1_micro(model, self.shard.full())

    def act_evaluate(self, contract: Contract, store: BlobStore, peers=()) -> dict[str, int]:
        r = contract.state.round
        addresses = contract.round_addresses()
        scores = {}
        for target in contract.state.active:
            if target not in self.retrieved:
                model = self.obtain(store, target, addresses[target], peers)
                if model is not None:
                    self.retrieved[target] = model
            scores[target] = self._score(target, self.retrieved.get(target))
        if self.strategy.misses(Stage.EVAL_COMMIT):
            return scores
        rng = self._rng(2, r)
        self.salts = {}
        for target, score in scores.items():
            salt = rng.bytes(32)
            self.salts[target] = (score, salt)
            contract.commit_score(self.account, target, commitment_digest(score, salt))
        return scores

    def act_reveal(self, contract: Contract) -> None:
        if self.strategy.misses(Stage.EVAL_REVEAL):
            return
        active = set(contract.state.active)
        for target, (score, salt) in sorted(self.salts.items()):
            if target in active:
                contract.reveal_score(self.account, target, score, salt)

    # -- after ComputeScore ---------------------------------------------

    def act_aggregate(self, contract: Contract, round_: int) -> ModelWeights:
        result = contract.state.results[round_]
        models = [self.retrieved[a] for a in result.accounts]
        self.model = weighted_average(models, [int(p) for p in result.breakdown.p])
        self.salts = {}
        return self.model
