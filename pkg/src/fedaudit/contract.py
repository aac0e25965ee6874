"""Emulated smart contract that holds bonds and referees each round.

A state machine driven by a logical integer clock; calls are serialized.  Each
round walks Train -> Retrieve -> EvalCommit -> EvalReveal -> ComputeScore;
crossing a stage deadline (via :meth:`Contract.advance_clock`) eliminates
every active account that failed that stage's obligation.  Eliminated
bonds stay in the contract balance and are redistributed through later
payouts.

Every public call is appended to a transaction log so a run can be audited
or replayed bit-for-bit.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path

from .scoring import UNIT, ScoreBreakdown, ScoreMatrix, contract_scores_fixed_point
from .store import ContentAddress

SALT_BYTES = 32


class Stage(str, Enum):
    TRAIN = "Train"
    RETRIEVE = "Retrieve"
    EVAL_COMMIT = "EvalCommit"
    EVAL_REVEAL = "EvalReveal"
    COMPUTE_SCORE = "ComputeScore"
    FINISHED = "Finished"


TIMED_STAGES = (Stage.TRAIN, Stage.RETRIEVE, Stage.EVAL_COMMIT, Stage.EVAL_REVEAL)


class ContractError(Exception):
    pass


class WrongStage(ContractError):
    pass


class NotAllowed(ContractError):
    pass


class DeadlinePassed(ContractError):
    pass


class CommitmentMismatch(ContractError):
    pass


def encode_score(score: int) -> bytes:
    return str(int(score)).encode()


def commitment_digest(score: int, salt: bytes) -> bytes:
    """SHA-256 over the decimal micro-unit score, a ``|`` separator and the salt."""
    return hashlib.sha256(encode_score(score) + b"|" + salt).digest()


@dataclass(frozen=True)
class GasSchedule:
    tx_base: int = 21_000
    per_byte: int = 16
    storage_write: int = 20_000
    per_score_cell: int = 2_500
    per_transfer: int = 9_000


@dataclass(frozen=True)
class ContractConfig:
    rounds: int
    allowlist: tuple[str, ...]
    bond_amount: int
    stage_durations: tuple[int, int, int, int] = (10, 10, 10, 10)
    refund_fraction: Fraction | None = None
    gas: GasSchedule = field(default_factory=GasSchedule)

    def __post_init__(self):
        if self.rounds < 1:
            raise ContractError("rounds must be >= 1")
        if not self.allowlist:
            raise ContractError("allowlist is empty")
        if len(set(self.allowlist)) != len(self.allowlist):
            raise ContractError("allowlist has duplicates")
        if self.bond_amount <= 0:
            raise ContractError("bond must be positive")
        if len(self.stage_durations) != 4 or min(self.stage_durations) <= 0:
            raise ContractError("four positive stage durations required")
        object.__setattr__(self, "allowlist", tuple(self.allowlist))
        object.__setattr__(self, "stage_durations", tuple(int(d) for d in self.stage_durations))
        rf = Fraction(1, self.rounds + 1) if self.refund_fraction is None else Fraction(self.refund_fraction)
        if not 0 <= rf <= 1:
            raise ContractError("refund_fraction must be within [0, 1]")
        object.__setattr__(self, "refund_fraction", rf)


@dataclass
class RoundResult:
    round: int
    accounts: tuple[str, ...]
    scores: ScoreMatrix
    breakdown: ScoreBreakdown
    pool: int
    payouts: dict[str, int]

    def p_of(self, account: str) -> int:
        return int(self.breakdown.p[self.accounts.index(account)])


@dataclass
class Elimination:
    round: int
    stage: Stage
    reason: str


@dataclass
class ContractState:
    round: int = 1
    stage: Stage = Stage.TRAIN
    clock: int = 0
    deadlines: dict[Stage, int] = field(default_factory=dict)
    enrolled: list[str] = field(default_factory=list)
    bonds: dict[str, int] = field(default_factory=dict)
    balance: int = 0
    addresses: dict[tuple[int, str], ContentAddress] = field(default_factory=dict)
    validity_reports: dict[tuple[int, str], frozenset[str]] = field(default_factory=dict)
    commitments: dict[tuple[int, str, str], bytes] = field(default_factory=dict)
    revealed: dict[tuple[int, str, str], int] = field(default_factory=dict)
    reveal_violations: set[tuple[int, str]] = field(default_factory=set)
    eliminated: dict[str, Elimination] = field(default_factory=dict)
    payouts: dict[str, int] = field(default_factory=dict)
    results: dict[int, RoundResult] = field(default_factory=dict)
    retrieval_tally: dict[int, dict[str, tuple[int, int]]] = field(default_factory=dict)
    gas_used: int = 0

    @property
    def active(self) -> list[str]:
        return [a for a in self.enrolled if a not in self.eliminated]

    @property
    def total_bonds(self) -> int:
        return sum(self.bonds.values())

    def conserved(self) -> bool:
        return self.balance + sum(self.payouts.values()) == self.total_bonds

    def to_json(self) -> dict:
        """Canonical JSON-compatible view of the whole state."""
        def key(k):
            return "|".join(str(x) for x in k)
        return {
            "round": self.round,
            "stage": self.stage.value,
            "clock": self.clock,
            "deadlines": {s.value: t for s, t in self.deadlines.items()},
            "enrolled": list(self.enrolled),
            "bonds": dict(self.bonds),
            "balance": self.balance,
            "addresses": {key(k): v.hex for k, v in sorted(self.addresses.items())},
            "validity_reports": {key(k): sorted(v) for k, v in sorted(self.validity_reports.items())},
            "commitments": {key(k): v.hex() for k, v in sorted(self.commitments.items())},
            "revealed": {key(k): v for k, v in sorted(self.revealed.items())},
            "reveal_violations": sorted(key(v) for v in self.reveal_violations),
            "eliminated": {a: [e.round, e.stage.value, e.reason] for a, e in sorted(self.eliminated.items())},
            "payouts": dict(sorted(self.payouts.items())),
            "results": {
                str(r): {"accounts": list(res.accounts), "p": res.breakdown.p.tolist(),
                         "pool": res.pool, "payouts": res.payouts}
                for r, res in sorted(self.results.items())
            },
            "retrieval_tally": {str(r): {a: list(vz) for a, vz in sorted(t.items())}
                                for r, t in sorted(self.retrieval_tally.items())},
            "gas_used": self.gas_used,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def gas_estimate(n_agents: int, n_rounds: int) -> int:
    """Fitted per-agent gas for N agents over R rounds."""
    if n_agents < 1 or n_rounds < 1:
        raise ValueError("n_agents and n_rounds must be >= 1")
    return 31913 * n_agents + 542045 * n_rounds + 477050 * n_agents * n_rounds


class Contract:
    """The contract instance; all mutation is serialized through one lock."""

    def __init__(self, config: ContractConfig):
        self.config = config
        self.state = ContractState()
        self.log: list[dict] = []
        self._lock = threading.RLock()
        self._open_round(start=0)

    # -- helpers -------------------------------------------------------

    def _open_round(self, start: int) -> None:
        st = self.state
        st.stage = Stage.TRAIN
        t = start
        st.deadlines = {}
        for stage, dur in zip(TIMED_STAGES, self.config.stage_durations):
            t += dur
            st.deadlines[stage] = t

    def _charge(self, nbytes: int = 0, writes: int = 0) -> int:
        g = self.config.gas
        cost = g.tx_base + g.per_byte * nbytes + g.storage_write * writes
        self.state.gas_used += cost
        return cost

    def _record(self, op: str, args: dict, gas: int, error: Exception | None = None,
                internal: bool = False) -> None:
        entry = {"op": op, "args": args, "stage": self.state.stage.value,
                 "round": self.state.round, "clock": self.state.clock, "gas": gas}
        if error is not None:
            entry["error"] = f"{type(error).__name__}: {error}"
        if internal:
            entry["internal"] = True
        self.log.append(entry)

    def _tx(self, op: str, args: dict, body, nbytes: int = 0, writes: int = 1):
        with self._lock:
            try:
                body()
            except ContractError as exc:
                self._record(op, args, self._charge(nbytes), exc)
                raise
            self._record(op, args, self._charge(nbytes, writes))

    def _require_stage(self, stage: Stage) -> None:
        st = self.state
        if st.stage != stage:
            raise WrongStage(f"expected stage {stage.value}, contract is in {st.stage.value}")
        if st.clock >= st.deadlines[stage]:
            raise DeadlinePassed(f"{stage.value} deadline {st.deadlines[stage]} has passed")

    def _require_active(self, account: str) -> None:
        if account in self.state.eliminated:
            raise NotAllowed(f"{account} has been eliminated")
        if account not in self.state.bonds:
            raise NotAllowed(f"{account} is not enrolled")

    def _eliminate(self, account: str, reason: str) -> None:
        st = self.state
        if account not in st.eliminated:
            st.eliminated[account] = Elimination(st.round, st.stage, reason)

    # -- participant operations ----------------------------------------

    def enroll(self, account: str, amount: int) -> None:
        def body():
            st = self.state
            if account not in self.config.allowlist:
                raise NotAllowed(f"{account} is not on the allowlist")
            if account in st.bonds:
                raise NotAllowed(f"{account} is already enrolled")
            if amount != self.config.bond_amount:
                raise NotAllowed(f"bond must be exactly {self.config.bond_amount}, got {amount}")
            if st.round != 1:
                raise DeadlinePassed("enrollment closed")
            self._require_stage(Stage.TRAIN)
            st.enrolled.append(account)
            st.bonds[account] = amount
            st.balance += amount
        self._tx("enroll", {"account": account, "amount": amount}, body)

    def submit_model_address(self, account: str, addr: ContentAddress) -> None:
        def body():
            self._require_active(account)
            self._require_stage(Stage.TRAIN)
            self.state.addresses[(self.state.round, account)] = addr
        self._tx("submit_model_address", {"account": account, "addr": addr.hex}, body, nbytes=32)

    def report_valid(self, account: str, valid_set) -> None:
        valid = frozenset(valid_set)

        def body():
            self._require_active(account)
            self._require_stage(Stage.RETRIEVE)
            unknown = valid - set(self.state.bonds)
            if unknown:
                raise NotAllowed(f"unknown accounts in validity report: {sorted(unknown)}")
            self.state.validity_reports[(self.state.round, account)] = valid | {account}
        self._tx("report_valid", {"account": account, "valid_set": sorted(valid)}, body,
                 nbytes=20 * len(valid))

    def commit_score(self, evaluator: str, target: str, digest: bytes) -> None:
        def body():
            self._require_active(evaluator)
            self._require_active(target)
            self._require_stage(Stage.EVAL_COMMIT)
            if len(digest) != 32:
                raise NotAllowed("commitment must be a 32-byte digest")
            self.state.commitments[(self.state.round, evaluator, target)] = bytes(digest)
        self._tx("commit_score", {"evaluator": evaluator, "target": target, "digest": digest.hex()},
                 body, nbytes=32)

    def reveal_score(self, evaluator: str, target: str, score: int, salt: bytes) -> None:
        """Verify and store a revealed score.

        A mismatching reveal is recorded as a violation before the error is
        raised; the evaluator is eliminated when the reveal stage closes.
        """
        def body():
            st = self.state
            self._require_active(evaluator)
            self._require_stage(Stage.EVAL_REVEAL)
            key = (st.round, evaluator, target)
            if key not in st.commitments:
                raise NotAllowed(f"no commitment from {evaluator} for {target}")
            if not (0 <= score <= UNIT) or commitment_digest(score, salt) != st.commitments[key]:
                st.reveal_violations.add((st.round, evaluator))
                raise CommitmentMismatch(f"reveal by {evaluator} for {target} does not match commitment")
            st.revealed[key] = int(score)
        self._tx("reveal_score", {"evaluator": evaluator, "target": target, "score": int(score),
                                  "salt": salt.hex()}, body, nbytes=32 + 8)

    # -- deadline processing --------------------------------------------

    def advance_clock(self, now: int) -> None:
        with self._lock:
            st = self.state
            if now < st.clock:
                raise ContractError(f"clock cannot move backwards ({now} < {st.clock})")
            gas_before = st.gas_used
            while st.stage in TIMED_STAGES and now >= st.deadlines[st.stage]:
                st.clock = st.deadlines[st.stage]
                self._close_stage()
            st.clock = now
            self._record("advance_clock", {"now": now}, st.gas_used - gas_before)

    def _close_stage(self) -> None:
        st = self.state
        r = st.round
        if st.stage == Stage.TRAIN:
            for a in st.active:
                if (r, a) not in st.addresses:
                    self._eliminate(a, "missed model submission")
            st.stage = Stage.RETRIEVE
        elif st.stage == Stage.RETRIEVE:
            self.finalize_retrieval()
        elif st.stage == Stage.EVAL_COMMIT:
            active = st.active
            for a in active:
                if any((r, a, k) not in st.commitments for k in active):
                    self._eliminate(a, "missed score commitment")
            st.stage = Stage.EVAL_REVEAL
        elif st.stage == Stage.EVAL_REVEAL:
            active = st.active
            for a in active:
                if (r, a) in st.reveal_violations:
                    self._eliminate(a, "reveal did not match commitment")
                elif any((r, a, k) not in st.revealed for k in active):
                    self._eliminate(a, "missed score reveal")
            st.stage = Stage.COMPUTE_SCORE
            self.compute_round()
        if not st.active and st.stage not in (Stage.FINISHED, Stage.COMPUTE_SCORE):
            st.stage = Stage.FINISHED

    def finalize_retrieval(self) -> None:
        """Eliminate every account with v <= N/2 or z <= N/2 for this round."""
        st = self.state
        if st.stage != Stage.RETRIEVE or st.clock < st.deadlines[Stage.RETRIEVE]:
            raise WrongStage("retrieval can only be finalized at the Retrieve deadline")
        r = st.round
        active = st.active
        n = len(active)
        members = set(active)
        reports = {a: (st.validity_reports.get((r, a), frozenset()) | {a}) & members for a in active}
        tally = {}
        for k in active:
            v = len(reports[k])
            z = sum(1 for a in active if k in reports[a])
            tally[k] = (v, z)
        st.retrieval_tally[r] = tally
        for k, (v, z) in tally.items():
            # 2v <= n  <=>  v <= n/2
            if 2 * v <= n or 2 * z <= n:
                self._eliminate(k, f"retrieval majority failed (v={v}, z={z}, N={n})")
        st.stage = Stage.EVAL_COMMIT
        g = self.config.gas
        cost = g.per_score_cell * n * n
        st.gas_used += cost
        self._record("finalize_retrieval", {}, cost, internal=True)

    def compute_round(self) -> None:
        """Score the round, pay the pro-rata refund and open the next round."""
        st = self.state
        if st.stage != Stage.COMPUTE_SCORE:
            raise WrongStage("scores can only be computed after the EvalReveal deadline")
        r = st.round
        active = tuple(st.active)
        g = self.config.gas
        cost = 0
        if active:
            matrix = ScoreMatrix([[st.revealed[(r, a, k)] for k in active] for a in active])
            breakdown = contract_scores_fixed_point(matrix)
            rf = self.config.refund_fraction
            pool = st.balance * rf.numerator // rf.denominator
            total_p = int(breakdown.p.sum())
            if total_p > 0:
                paid = {a: pool * int(p) // total_p for a, p in zip(active, breakdown.p)}
            else:
                paid = {a: pool // len(active) for a in active}
            self._pay(paid)
            st.results[r] = RoundResult(r, active, matrix, breakdown, pool, paid)
            cost = g.per_score_cell * len(active) ** 2 + g.per_transfer * len(active)
        if r == self.config.rounds or not active:
            if active:
                share, dust = divmod(st.balance, len(active))
                final = {a: share + (1 if i < dust else 0) for i, a in enumerate(active)}
                self._pay(final)
                cost += g.per_transfer * len(active)
            st.stage = Stage.FINISHED
        else:
            st.round += 1
            self._open_round(start=st.clock)
        st.gas_used += cost
        self._record("compute_round", {"round": r}, cost, internal=True)

    def _pay(self, amounts: dict[str, int]) -> None:
        st = self.state
        total = sum(amounts.values())
        if total > st.balance:
            raise ContractError("payout exceeds contract balance")
        for a, x in amounts.items():
            st.payouts[a] = st.payouts.get(a, 0) + x
        st.balance -= total

    # -- views / export --------------------------------------------------

    def snapshot(self) -> ContractState:
        with self._lock:
            return copy.deepcopy(self.state)

    def round_addresses(self, round_: int | None = None) -> dict[str, ContentAddress]:
        r = self.state.round if round_ is None else round_
        return {a: addr for (rr, a), addr in self.state.addresses.items() if rr == r}

    def write_log(self, path) -> None:
        with open(Path(path), "w") as fh:
            for entry in self.log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def write_ledger(self, path) -> None:
        st = self.state
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["account", "bond", "payout", "eliminated_round", "eliminated_stage", "reason"])
            for a in st.enrolled:
                e = st.eliminated.get(a)
                w.writerow([a, st.bonds[a], st.payouts.get(a, 0),
                            e.round if e else "", e.stage.value if e else "", e.reason if e else ""])
            w.writerow(["<contract>", "", st.balance, "", "", "remaining balance"])


def _decode_args(op: str, args: dict) -> dict:
    args = dict(args)
    if op == "submit_model_address":
        args["addr"] = ContentAddress.from_hex(args["addr"])
    elif op == "commit_score":
        args["digest"] = bytes.fromhex(args["digest"])
    elif op == "reveal_score":
        args["salt"] = bytes.fromhex(args["salt"])
    return args


def replay(config: ContractConfig, entries) -> Contract:
    """Rebuild a contract by re-applying a transaction log."""
    contract = Contract(config)
    for entry in entries:
        if entry.get("internal"):
            continue
        method = getattr(contract, entry["op"])
        try:
            method(**_decode_args(entry["op"], entry["args"]))
        except ContractError:
            if "error" not in entry:
                raise
    return contract


def read_log(path) -> list[dict]:
    with open(Path(path)) as fh:
        return [json.loads(line) for line in fh if line.strip()]
