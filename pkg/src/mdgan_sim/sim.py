"""Round-based simulation of one generator and N discriminator clients.

Execution is bulk-synchronous: every generator step waits for exactly one
feedback message from every client for the current (round, batch), reduced in
ascending client id order. Message delivery is instantaneous and reliable.
All randomness is drawn from streams keyed by (seed, purpose, client, round, batch),
so the whole trace is a function of the config.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import defense as dfn
from .config import ExperimentConfig
from .data import ClientShard, make_ring_dataset, partition_shards, round_batches, sample_latent, stream
from .gan import LossMode, discriminator_step, generator_feedback, generator_update
from .metrics import MetricsRecord, PhaseTimer, SwapRecord, frechet_distance, precision_recall
from .metrics import swap_action_stats
from .nn import Mlp, NonFiniteError, OptimizerState, forward, kaiming_init

log = logging.getLogger(__name__)

# stream tags
_DATA, _GEN_INIT, _D_INIT, _FR_INIT, _BATCH, _LATENT, _PROBE, _PAIR, _EVAL, _GP, _ROLES = range(11)


class SimulationError(RuntimeError):
    """A run aborted; the message names the round and batch."""


@dataclass
class Client:
    cid: int
    role: str  # "benign" or "free_rider"
    model: Mlp | None = None  # benign: its discriminator
    opt: OptimizerState | None = None
    shard: ClientShard | None = None
    fake_model: Mlp | None = None  # free-rider: random network it pretends with
    swapped_model: Mlp | None = None  # free-rider: latest model obtained by swapping
    gate: frozenset[int] | None = None  # benign under dfg_plus: peers it will swap with

    @property
    def benign(self) -> bool:
        return self.role == "benign"

    def current_model(self) -> Mlp:
        if self.benign:
            return self.model
        return self.swapped_model if self.swapped_model is not None else self.fake_model

    def feedback(self, fake: np.ndarray) -> np.ndarray:
        """Gradient of the generator loss w.r.t. ``fake`` through this client's current model."""
        return generator_feedback(self.current_model(), fake)

    def train_step(self, real: np.ndarray, fake: np.ndarray, mode: LossMode, rng) -> float:
        assert self.benign and self.shard is not None, "free-riders never train on real data"
        self.model, self.opt, loss = discriminator_step(self.model, real, fake, mode, self.opt, rng)
        return loss

    def receive(self, weights: Mlp, fresh_opt: OptimizerState) -> None:
        if self.benign:
            self.model = weights
            self.opt = fresh_opt
        else:
            self.swapped_model = weights


@dataclass
class RoundLog:
    round: int
    d_loss: dict[int, float] = field(default_factory=dict)
    flagged: list[int] = field(default_factory=list)
    detection: dict | None = None
    swaps: list[SwapRecord] = field(default_factory=list)
    gates: dict[int, list[int]] | None = None
    defense_ms: float = 0.0
    train_ms: float = 0.0

    def to_json(self, timing: bool = False) -> dict:
        out = {
            "round": self.round,
            "d_loss": {str(k): v for k, v in sorted(self.d_loss.items())},
            "flagged": self.flagged,
            "detection": self.detection,
            "swaps": [s.to_json() for s in self.swaps],
            "gates": None if self.gates is None else {str(k): v for k, v in sorted(self.gates.items())},
        }
        if timing:
            out["defense_ms"] = self.defense_ms
            out["train_ms"] = self.train_ms
        return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    generator: Mlp
    initial_generator: Mlp
    round_logs: list[RoundLog]
    metrics: list[MetricsRecord]
    freeriders: frozenset[int]
    detections: dict[int, dfn.DetectionResult] = field(default_factory=dict)
    adj_detections: dict[int, dfn.DetectionResult] = field(default_factory=dict)
    real_points: np.ndarray | None = None

    @property
    def final_fd(self) -> float:
        return self.metrics[-1].frechet_distance

    @property
    def swap_records(self) -> list[SwapRecord]:
        return [s for r in self.round_logs for s in r.swaps]

    def write_roundlog(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for r in self.round_logs:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")

    def write_metrics(self, path: str | Path, timing: bool = False) -> None:
        import csv

        from .metrics import METRICS_COLUMNS

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRICS_COLUMNS)
            for m in self.metrics:
                w.writerow(m.row(timing))

    def write_timing(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("round,defense_ms,train_ms\n")
            for r in self.round_logs:
                fh.write(f"{r.round},{r.defense_ms:.4f},{r.train_ms:.4f}\n")


def random_pairing(ids: list[int], rng: np.random.Generator) -> list[tuple[int, int]]:
    """Shuffle and pair neighbours; with an odd count the last one sits out."""
    ids = list(ids)
    if len(ids) < 2:
        raise ValueError("pairing needs at least 2 clients")
    order = [ids[k] for k in rng.permutation(len(ids))]
    return [(order[k], order[k + 1]) for k in range(0, len(order) - 1, 2)]


def swap_phase(
    pairs: list[tuple[int, int]],
    clients: dict[int, Client],
    gated: bool,
    make_opt,
    round_: int = 0,
) -> list[SwapRecord]:
    """Exchange current models within each pair, subject to benign clients' gates.

    Without gating every pair swaps. With gating a benign client only accepts
    peers in its allowed set, and a benign client with no gate yet refuses.
    Free-riders always accept.
    """
    seen: set[int] = set()
    for a, b in pairs:
        if a == b or a in seen or b in seen:
            raise ValueError(f"pairs overlap at ({a}, {b})")
        seen.update((a, b))
    records = []
    for a, b in pairs:
        ca, cb = clients[a], clients[b]
        decided = True
        ok = True
        if gated:
            for me, peer in ((ca, b), (cb, a)):
                if not me.benign:
                    continue
                if me.gate is None:
                    decided = False
                    ok = False
                elif peer not in me.gate:
                    ok = False
        if ok:
            wa, wb = ca.current_model(), cb.current_model()
            ca.receive(wb.copy(), make_opt())
            cb.receive(wa.copy(), make_opt())
        records.append(SwapRecord(round_, a, b, ca.role, cb.role, ok, gated and decided))
    return records


def assign_roles(cfg: ExperimentConfig) -> frozenset[int]:
    """Ids of the free-riders, drawn uniformly among all client ids."""
    if cfg.n_freeriders == 0:
        return frozenset()
    rng = stream(cfg.seed, _ROLES)
    return frozenset(int(i) for i in rng.choice(cfg.n_clients, size=cfg.n_freeriders, replace=False))


class Simulation:
    """Mutable state of one experiment; :func:`run_experiment` is the entry point."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.mode = LossMode(cfg.loss, cfg.clip, cfg.gp_weight)
        total = cfg.shard_size * cfg.n_benign
        self.dataset = make_ring_dataset(cfg.n_modes, cfg.radius, cfg.noise_std, total, stream(cfg.seed, _DATA))
        shards = partition_shards(self.dataset, cfg.n_benign)
        self.freeriders = assign_roles(cfg)
        self.clients: dict[int, Client] = {}
        benign_ids = [i for i in range(cfg.n_clients) if i not in self.freeriders]
        for cid in range(cfg.n_clients):
            if cid in self.freeriders:
                self.clients[cid] = Client(cid, "free_rider", fake_model=self._random_d(stream(cfg.seed, _FR_INIT, cid)))
            else:
                shard = shards[benign_ids.index(cid)]
                self.clients[cid] = Client(
                    cid, "benign", model=self._random_d(stream(cfg.seed, _D_INIT, cid)),
                    opt=self._opt(cfg.d_lr), shard=shard,
                )
        self.g = kaiming_init(cfg.g_shape, stream(cfg.seed, _GEN_INIT), "relu", "identity")
        self.g_opt = self._opt(cfg.g_lr)
        self.flagged: frozenset[int] = frozenset()
        self.timer = PhaseTimer()
        self.logs: list[RoundLog] = []
        self.metrics: list[MetricsRecord] = []
        self.detections: dict[int, dfn.DetectionResult] = {}
        self.adj_detections: dict[int, dfn.DetectionResult] = {}
        self.last_detection: dict[int, dfn.DetectionResult] = {}
        self.last_responses: dict[int, np.ndarray] = {}

    def _random_d(self, rng) -> Mlp:
        return kaiming_init(self.cfg.d_shape, rng, "leaky_relu", self.mode.output_activation)

    def _opt(self, lr: float) -> OptimizerState:
        return OptimizerState(self.cfg.optimizer, lr, self.cfg.beta1, self.cfg.beta2)

    # -- phases -----------------------------------------------------------

    def defend(self, t: int, entry: RoundLog) -> None:
        cfg = self.cfg
        current = {cid: c.current_model() for cid, c in self.clients.items()}
        rng = stream(cfg.seed, _PROBE, t)
        result, responses, det_resp = dfn.run_dfg(
            self.g, current, rng, cfg.probe_size, cfg.latent_dim, cfg.d_shape,
            "leaky_relu", self.mode.output_activation,
        )
        self.detections[t] = result
        self.last_responses = responses
        chosen = result
        if cfg.defense == "dfg_adj" and len(responses) >= 2:
            chosen = self.adj_detections[t] = dfn.run_dfg_adj(responses)
        self.flagged = chosen.flagged
        self.last_detection[t] = chosen
        entry.detection = chosen.to_json()
        if cfg.defense == "dfg_plus":
            ids, v = dfn.distance_rows(responses, det_resp)
            peer_ids: list[int | None] = [*ids, None]
            gates = {}
            for k, cid in enumerate(ids):
                c = self.clients[cid]
                if c.benign:
                    c.gate = dfn.client_swap_gate(k, v[k], peer_ids)
                    gates[cid] = sorted(c.gate)
            entry.gates = gates

    def train_round(self, t: int, entry: RoundLog, probe_now: bool) -> None:
        cfg = self.cfg
        ids = sorted(self.clients)
        n_batches = cfg.shard_size // cfg.batch_size
        with self.timer.measure("train"):
            batches = {
                cid: round_batches(c.shard, cfg.batch_size, stream(cfg.seed, _BATCH, cid, t))
                for cid, c in self.clients.items() if c.benign
            }
        losses: dict[int, list[float]] = {cid: [] for cid in batches}
        defended = False
        for j in range(n_batches):
            with self.timer.measure("train"):
                latents = {cid: sample_latent(cfg.batch_size, cfg.latent_dim, stream(cfg.seed, _LATENT, cid, t, j))
                           for cid in ids}
                fakes = {cid: forward(self.g, latents[cid]) for cid in ids}
                for cid in batches:
                    try:
                        losses[cid].append(self.clients[cid].train_step(
                            batches[cid][j], fakes[cid], self.mode, stream(cfg.seed, _GP, cid, t, j)))
                    except (NonFiniteError, FloatingPointError) as exc:
                        raise SimulationError(f"round {t}, batch {j}, client {cid}: {exc}") from exc
            if (j + 1) % cfg.d_steps_per_g_step:
                continue
            if probe_now and not defended:
                with self.timer.measure("defense"):
                    self.defend(t, entry)
                defended = True
                # the ablation is also scored on the same responses, off the clock,
                # so every trace can be compared against it
                if cfg.defense != "dfg_adj" and len(self.last_responses) >= 2:
                    self.adj_detections[t] = dfn.run_dfg_adj(self.last_responses)
            with self.timer.measure("train"):
                feedback = [(cid, self.clients[cid].feedback(fakes[cid]), latents[cid]) for cid in ids]
                included = set(ids) - set(self.flagged)
                try:
                    self.g, self.g_opt = generator_update(self.g, feedback, self.g_opt, included, cfg.aggregation)
                except (NonFiniteError, FloatingPointError) as exc:
                    raise SimulationError(f"round {t}, batch {j}, generator: {exc}") from exc
        entry.d_loss = {cid: float(np.mean(v)) for cid, v in losses.items() if v}

    def evaluate(self, t: int) -> MetricsRecord:
        cfg = self.cfg
        z = stream(cfg.seed, _EVAL, t).standard_normal((cfg.eval_samples, cfg.latent_dim))
        fd = frechet_distance(self.dataset.points, forward(self.g, z))
        rec = MetricsRecord(t, fd)
        det = self.last_detection.get(t)
        if det is not None:
            rec.precision, rec.recall = precision_recall(det.flagged, self.freeriders)
        stats = swap_action_stats(self.decision_records())
        if stats is not None:
            rec.correct_frac = stats["correct"]
            rec.wrong_prevention_frac = stats["wrong_prevention"]
            rec.wrong_permission_frac = stats["wrong_permission"]
        return rec

    def decision_records(self) -> list[SwapRecord]:
        """Swap attempts attributable to the configured policy.

        Under dfg_plus only attempts decided by a clustering gate count;
        otherwise every attempt does.
        """
        recs = [s for r in self.logs for s in r.swaps]
        if self.cfg.defense == "dfg_plus":
            return [s for s in recs if s.gated]
        return recs

    def run(self, log_path: str | Path | None = None) -> ExperimentResult:
        cfg = self.cfg
        initial = self.g.copy()
        self.metrics.append(self.evaluate(0))
        fh = open(log_path, "w") if log_path else None
        try:
            for t in range(1, cfg.rounds + 1):
                self.timer.reset()
                entry = RoundLog(t)
                if cfg.freerider_reinit_every_round:
                    for cid in sorted(self.freeriders):
                        c = self.clients[cid]
                        c.fake_model = self._random_d(stream(cfg.seed, _FR_INIT, cid, t))
                        c.swapped_model = None
                probe_now = cfg.defense != "none" and t % cfg.probe_period == 0
                self.train_round(t, entry, probe_now)
                if cfg.protocol == "swap" and t % cfg.swap_period == 0 and cfg.n_clients >= 2:
                    with self.timer.measure("train"):
                        pairs = random_pairing(sorted(self.clients), stream(cfg.seed, _PAIR, t))
                        entry.swaps = swap_phase(
                            pairs, self.clients, cfg.defense == "dfg_plus",
                            lambda: self._opt(cfg.d_lr), t,
                        )
                entry.flagged = sorted(self.flagged)
                entry.defense_ms = self.timer.get("defense")
                entry.train_ms = self.timer.get("train")
                self.logs.append(entry)
                if fh:
                    fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
                if t % cfg.metrics_period == 0 or t % cfg.probe_period == 0 or t == cfg.rounds:
                    rec = self.evaluate(t)
                    rec.defense_ms, rec.train_ms = entry.defense_ms, entry.train_ms
                    self.metrics.append(rec)
        finally:
            if fh:
                fh.close()
        return ExperimentResult(
            cfg, self.g, initial, self.logs, self.metrics, self.freeriders,
            self.detections, self.adj_detections, self.dataset.points,
        )


def run_experiment(cfg: ExperimentConfig, log_path: str | Path | None = None) -> ExperimentResult:
    """Run ``cfg.rounds`` rounds and return the generator, round logs and metrics."""
    return Simulation(cfg).run(log_path)
