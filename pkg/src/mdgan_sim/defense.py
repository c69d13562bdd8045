"""Free-rider detection by probing discriminators and clustering their responses.

Generator side: every probe round the generator sends one shared probe set to
all clients, adds the response of a freshly initialised reference network (the
"detector") that behaves exactly like a free-rider, and 2-means clusters the
response vectors. Whoever lands with the detector is excluded.

Client side (swap protocol only): each benign client receives its row of the
pairwise distance matrix, clusters those distances, and only swaps with peers
in its low-distance cluster.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .nn import Mlp, forward, kaiming_init

log = logging.getLogger(__name__)

DEGENERATE_EPS = 1e-9
MAX_ITER = 100


def two_means(points: np.ndarray, max_iter: int = MAX_ITER) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k=2 under squared Euclidean distance.

    Seeds are the two points furthest apart (lowest index pair on ties), so
    the result is deterministic. Scalars may be passed as a 1-D array.
    Returns ``(assignment, centers)`` with assignment values in {0, 1}.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("two_means needs at least 2 points")
    d2 = _sq_dists(x)
    flat = int(np.argmax(np.triu(d2, k=1)))
    i, j = divmod(flat, len(x))
    if d2[i, j] == 0:
        i, j = 0, 1
    centers = x[[i, j]].copy()
    assign = None
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = (dist[:, 1] < dist[:, 0]).astype(int)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for c in (0, 1):
            if np.any(assign == c):
                centers[c] = x[assign == c].mean(axis=0)
    return assign, centers


def _sq_dists(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return (diff * diff).sum(axis=2)


def within_cluster_ss(points: np.ndarray, assign: np.ndarray) -> float:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    total = 0.0
    for c in np.unique(assign):
        members = x[assign == c]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def pairwise_distance_matrix(responses: np.ndarray) -> np.ndarray:
    """Symmetric matrix of plain L2 distances between response vectors (rows)."""
    r = np.asarray(responses, dtype=float)
    if r.ndim != 2:
        raise ValueError("responses must be a 2-D array with one vector per row")
    v = np.sqrt(np.maximum(_sq_dists(r), 0.0))
    np.fill_diagonal(v, 0.0)
    return v


@dataclass(frozen=True)
class DetectionResult:
    flagged: frozenset[int]
    assignment: dict[int, int] = field(default_factory=dict)
    detector_cluster: int | None = None
    degenerate: bool = False

    def to_json(self) -> dict:
        return {
            "flagged": sorted(self.flagged),
            "degenerate": self.degenerate,
            "assignments": {str(k): v for k, v in sorted(self.assignment.items())},
            "detector_cluster": self.detector_cluster,
        }


def probe_responses(discriminators: dict[int, Mlp], probe: np.ndarray) -> dict[int, np.ndarray]:
    """Each discriminator's outputs on the shared probe set, flattened."""
    return {cid: forward(d, probe).ravel() for cid, d in discriminators.items()}


def classify_with_detector(responses: dict[int, np.ndarray], detector_response: np.ndarray) -> DetectionResult:
    """Cluster client responses together with the detector's; flag the detector's cluster."""
    ids = sorted(responses)
    lengths = {len(responses[c]) for c in ids} | {len(detector_response)}
    if len(lengths) != 1:
        raise ValueError("all response vectors must have the same length")
    pts = np.stack([responses[c] for c in ids] + [np.asarray(detector_response, dtype=float)])
    if np.max(np.abs(pts - pts[0])) <= DEGENERATE_EPS:
        log.warning("all probe responses coincide; flagging nobody")
        return DetectionResult(frozenset(), {c: 0 for c in ids}, 0, degenerate=True)
    assign, _ = two_means(pts)
    det = int(assign[-1])
    mapping = {c: int(a) for c, a in zip(ids, assign[:-1])}
    flagged = frozenset(c for c in ids if mapping[c] == det)
    if len(flagged) == len(ids):
        log.warning("every client clusters with the detector; flagging nobody")
        return DetectionResult(frozenset(), mapping, det, degenerate=True)
    return DetectionResult(flagged, mapping, det)


def run_dfg(
    generator: Mlp,
    discriminators: dict[int, Mlp],
    rng: np.random.Generator,
    probe_size: int,
    latent_dim: int,
    detector_shape: tuple[int, ...],
    hidden_activation: str = "leaky_relu",
    output_activation: str = "sigmoid",
) -> tuple[DetectionResult, dict[int, np.ndarray], np.ndarray]:
    """Full generator-side round: probe, detector reference, 2-means.

    Returns the detection result, the client responses and the detector response.
    """
    probe = forward(generator, rng.standard_normal((probe_size, latent_dim)))
    responses = probe_responses(discriminators, probe)
    detector = kaiming_init(detector_shape, rng, hidden_activation, output_activation)
    det_resp = forward(detector, probe).ravel()
    return classify_with_detector(responses, det_resp), responses, det_resp


def distance_rows(responses: dict[int, np.ndarray], detector_response: np.ndarray) -> tuple[list[int], np.ndarray]:
    """Distance matrix over clients (sorted ids) plus the detector as last index."""
    ids = sorted(responses)
    pts = np.stack([responses[c] for c in ids] + [np.asarray(detector_response, dtype=float)])
    return ids, pairwise_distance_matrix(pts)


def client_swap_gate(own_index: int, row: np.ndarray, peer_ids: list[int | None]) -> frozenset[int]:
    """Peers a benign client is willing to swap with.

    ``row`` is the client's row of the distance matrix; ``peer_ids[k]`` names the
    party at column ``k`` (``None`` for the detector, which can never be a swap
    partner). The client's own column is dropped before clustering.
    """
    row = np.asarray(row, dtype=float)
    if len(row) != len(peer_ids):
        raise ValueError("distance row and peer list differ in length")
    cols = [k for k in range(len(row)) if k != own_index]
    peers = frozenset(p for k, p in enumerate(peer_ids) if k != own_index and p is not None)
    if len(cols) < 2:
        return peers
    d = row[cols]
    if np.max(d) - np.min(d) <= DEGENERATE_EPS:
        return peers
    assign, centers = two_means(d)
    if abs(centers[0, 0] - centers[1, 0]) <= DEGENERATE_EPS:
        log.warning("client %s: both distance clusters have equal mean; allowing all peers", own_index)
        return peers
    low = int(np.argmin(centers[:, 0]))
    return frozenset(
        peer_ids[k] for k, a in zip(cols, assign) if a == low and peer_ids[k] is not None
    )


def run_dfg_adj(responses: dict[int, np.ndarray]) -> DetectionResult:
    """Detector-free ablation: flag the cluster with the larger summed distance."""
    ids = sorted(responses)
    if len(ids) < 2:
        raise ValueError("need at least 2 clients")
    v = pairwise_distance_matrix(np.stack([responses[c] for c in ids]))
    sums = v.sum(axis=1)
    if np.max(sums) - np.min(sums) <= DEGENERATE_EPS:
        log.warning("summed distances coincide; flagging nobody")
        return DetectionResult(frozenset(), {c: 0 for c in ids}, None, degenerate=True)
    assign, centers = two_means(sums)
    high = int(np.argmax(centers[:, 0]))
    mapping = {c: int(a) for c, a in zip(ids, assign)}
    return DetectionResult(frozenset(c for c in ids if mapping[c] == high), mapping, None)
