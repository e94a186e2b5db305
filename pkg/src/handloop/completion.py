"""Event-local completion: scoring, refinement, and lock-constrained decoding.

Pipeline per event: the partial state, optional onset band, and backbone
features are packed into a fixed-layout vector; a per-head affine adapter
maps it to onset and label scores; the scores are blended with empirical
statistics in dependency order (noun existence, noun, verb, onset); and an
exact argmax over the feasible completions, with every human-locked
variable clamped, yields the decoded hypothesis.  A feedback pass may
re-run the adapter with the first hypothesis injected into the state slots
and keeps the result only when the structured joint score strictly
improves.

The adapter is an interface: the affine reference implementation can be
swapped for precomputed per-event score files.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .config import AdapterConfig, RefineConfig
from .events import (
    FIELDS,
    NO_NOUN,
    EventState,
    FieldStatus,
    HandloopError,
    LockSet,
    Ontology,
)
from .ingest import FeatureTable, StatisticsBundle, normalized_position, onset_bin

ADAPTER_MAGIC = b"LFAD"
ADAPTER_VERSION = 1

_STATUS_ORDER = (FieldStatus.EMPTY, FieldStatus.SUGGESTED, FieldStatus.CONFIRMED)


class MissingWindow(HandloopError):
    pass


class DimensionMismatch(HandloopError):
    pass


class EmptyBatch(HandloopError):
    pass


class InfeasibleLocks(HandloopError):
    pass


@dataclass(frozen=True)
class RepresentationLayout:
    """Slot layout of the assembled event vector, fixed per ontology and D."""

    n_verbs: int
    n_nouns: int
    feature_dim: int

    @property
    def status_offset(self) -> int:
        return 0

    @property
    def temporal_offset(self) -> int:
        return len(FIELDS) * 3

    @property
    def verb_offset(self) -> int:
        return self.temporal_offset + 3

    @property
    def noun_offset(self) -> int:
        return self.verb_offset + self.n_verbs

    @property
    def q_offset(self) -> int:
        return self.noun_offset + self.n_nouns + 1

    @property
    def u_offset(self) -> int:
        return self.q_offset + self.n_verbs

    @property
    def z_offset(self) -> int:
        return self.u_offset + self.n_nouns + 1

    @property
    def size(self) -> int:
        return self.z_offset + 2 * self.feature_dim


@dataclass(frozen=True)
class EventRepresentation:
    """Assembled adapter input plus the metadata needed to interpret it."""

    vector: np.ndarray
    layout: RepresentationLayout
    window: tuple[int, int]
    hand: str
    clip_id: str
    clip_len: int

    @property
    def window_len(self) -> int:
        return self.window[1] - self.window[0] + 1


@dataclass(frozen=True)
class ScoreBundle:
    """Adapter outputs: onset Gaussian parameters plus raw per-head scores.

    ``refined`` marks statistics-refined bundles, whose onset scores already
    absorbed the Gaussian head; raw bundles get the Gaussian tilt applied
    when converted to probabilities.
    """

    mu: float
    var: float
    onset_scores: np.ndarray
    verb_scores: np.ndarray
    b_scores: np.ndarray
    noun_scores: np.ndarray
    window: tuple[int, int]
    refined: bool = False

    def __post_init__(self) -> None:
        if self.var <= 0:
            raise HandloopError(f"onset variance must be positive, got {self.var}")
        expected = self.window[1] - self.window[0] + 1
        if len(self.onset_scores) != expected:
            raise DimensionMismatch(
                f"onset scores cover {len(self.onset_scores)} frames, window has {expected}"
            )
        if len(self.b_scores) != 2:
            raise DimensionMismatch("noun-existence head must have exactly 2 scores")


@dataclass(frozen=True)
class FieldMarginals:
    """Exact per-field marginals of the feasible-set posterior."""

    onset: np.ndarray  # (W,)
    verb: np.ndarray  # (V,)
    presence: np.ndarray  # (2,): [b=0, b=1]
    noun_slots: np.ndarray  # (N+1,): nouns then NO_NOUN


@dataclass(frozen=True)
class DecodedHypothesis:
    t_o: int
    v: str
    b: int
    n: str
    joint_score: float
    marginals: FieldMarginals


class Adapter(Protocol):
    def forward(self, rep: EventRepresentation) -> ScoreBundle: ...


def assemble_representation(
    state: EventState,
    prior,
    features: FeatureTable,
    ontology: Ontology,
    verb_cues: Optional[np.ndarray] = None,
    noun_cues: Optional[np.ndarray] = None,
) -> EventRepresentation:
    """Pack state, cues, and pooled features into the fixed-layout vector.

    The onset-band feature slot is the mean of per-frame features over the
    prior's band, and stays zero when no prior was emitted.
    """
    try:
        window = state.window
    except HandloopError as exc:
        raise MissingWindow(str(exc)) from exc

    layout = RepresentationLayout(
        n_verbs=len(ontology.verbs),
        n_nouns=len(ontology.nouns),
        feature_dim=features.dim,
    )
    vec = np.zeros(layout.size, dtype=float)

    for i, f in enumerate(FIELDS):
        vec[layout.status_offset + 3 * i + _STATUS_ORDER.index(state.status[f])] = 1.0

    clip_len = max(features.frame_count, 1)
    for j, f in enumerate(("t_s", "t_o", "t_e")):
        val = state.values.get(f)
        if val is not None:
            vec[layout.temporal_offset + j] = val / clip_len

    v = state.values.get("v")
    if v is not None:
        vec[layout.verb_offset + ontology.verb_index(v)] = 1.0
    n = state.values.get("n")
    if n is not None:
        slot = layout.n_nouns if n == NO_NOUN else ontology.noun_index(n)
        vec[layout.noun_offset + slot] = 1.0

    if verb_cues is not None:
        if len(verb_cues) != layout.n_verbs:
            raise DimensionMismatch("verb cue vector has wrong length")
        vec[layout.q_offset : layout.q_offset + layout.n_verbs] = verb_cues
    if noun_cues is not None:
        if len(noun_cues) != layout.n_nouns + 1:
            raise DimensionMismatch("noun cue vector has wrong length")
        vec[layout.u_offset : layout.u_offset + layout.n_nouns + 1] = noun_cues

    vec[layout.z_offset : layout.z_offset + features.dim] = features.pooled
    if prior is not None:
        band = prior.band
        vec[layout.z_offset + features.dim : layout.z_offset + 2 * features.dim] = (
            features.pooled_band(band)
        )

    return EventRepresentation(
        vector=vec,
        layout=layout,
        window=window,
        hand=state.hand,
        clip_id=features.clip_id,
        clip_len=clip_len,
    )


# ---------------------------------------------------------------------------
# Reference affine adapter


@dataclass
class AdapterParams:
    """Per-head affine parameters over the assembled representation."""

    w_mu: np.ndarray
    b_mu: float
    w_var: np.ndarray
    b_var: float
    w_grid: np.ndarray  # (G, R)
    b_grid: np.ndarray  # (G,)
    w_verb: np.ndarray  # (V, R)
    b_verb: np.ndarray  # (V,)
    w_b: np.ndarray  # (2, R)
    b_b: np.ndarray  # (2,)
    w_noun: np.ndarray  # (N, R)
    b_noun: np.ndarray  # (N,)

    @property
    def input_dim(self) -> int:
        return len(self.w_mu)

    @property
    def grid(self) -> int:
        return len(self.b_grid)

    @property
    def n_verbs(self) -> int:
        return len(self.b_verb)

    @property
    def n_nouns(self) -> int:
        return len(self.b_noun)

    @staticmethod
    def zeros(input_dim: int, grid: int, n_verbs: int, n_nouns: int) -> "AdapterParams":
        return AdapterParams(
            w_mu=np.zeros(input_dim),
            b_mu=0.0,
            w_var=np.zeros(input_dim),
            b_var=0.0,
            w_grid=np.zeros((grid, input_dim)),
            b_grid=np.zeros(grid),
            w_verb=np.zeros((n_verbs, input_dim)),
            b_verb=np.zeros(n_verbs),
            w_b=np.zeros((2, input_dim)),
            b_b=np.zeros(2),
            w_noun=np.zeros((n_nouns, input_dim)),
            b_noun=np.zeros(n_nouns),
        )

    @staticmethod
    def random(
        rng: np.random.Generator, input_dim: int, grid: int, n_verbs: int, n_nouns: int, scale: float = 0.1
    ) -> "AdapterParams":
        p = AdapterParams.zeros(input_dim, grid, n_verbs, n_nouns)
        for name, value in vars(p).items():
            if isinstance(value, np.ndarray):
                setattr(p, name, rng.normal(0.0, scale, size=value.shape))
            else:
                setattr(p, name, float(rng.normal(0.0, scale)))
        return p

    def _parts(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, value in vars(self).items():
            arr = np.atleast_1d(np.asarray(value, dtype=float))
            out.append((name, arr))
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self._parts()])

    def with_flat(self, flat: np.ndarray) -> "AdapterParams":
        out = AdapterParams.zeros(self.input_dim, self.grid, self.n_verbs, self.n_nouns)
        pos = 0
        for name, arr in self._parts():
            size = arr.size
            chunk = flat[pos : pos + size]
            template = vars(self)[name]
            if isinstance(template, np.ndarray):
                setattr(out, name, chunk.reshape(template.shape).copy())
            else:
                setattr(out, name, float(chunk[0]))
            pos += size
        return out

    def save(self, path: str | Path) -> None:
        header = ADAPTER_MAGIC + struct.pack(
            "<HHIIII", ADAPTER_VERSION, 0, self.input_dim, self.grid, self.n_verbs, self.n_nouns
        )
        Path(path).write_bytes(header + self.flatten().astype("<f4").tobytes())

    @staticmethod
    def load(path: str | Path) -> "AdapterParams":
        raw = Path(path).read_bytes()
        if len(raw) < 24 or raw[:4] != ADAPTER_MAGIC:
            raise HandloopError(f"{path}: not an adapter container")
        version, _, input_dim, grid, n_verbs, n_nouns = struct.unpack_from("<HHIIII", raw, 4)
        if version != ADAPTER_VERSION:
            raise HandloopError(f"{path}: unsupported adapter version {version}")
        flat = np.frombuffer(raw, dtype="<f4", offset=24).astype(float)
        template = AdapterParams.zeros(input_dim, grid, n_verbs, n_nouns)
        if flat.size != template.flatten().size:
            raise HandloopError(f"{path}: parameter blob has wrong size")
        return template.with_flat(flat)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softplus(x: float) -> float:
    if x > 30:
        return x
    return math.log1p(math.exp(x))


def _grid_cells(window_len: int, grid: int) -> np.ndarray:
    """Map each window frame onto an onset-grid cell."""
    idx = np.arange(window_len)
    return np.minimum(idx * grid // window_len, grid - 1)


class AffineAdapter:
    """Reference adapter: one affine layer per head over the representation."""

    def __init__(self, params: AdapterParams, cfg: AdapterConfig = AdapterConfig()):
        self.params = params
        self.cfg = cfg

    def forward(self, rep: EventRepresentation) -> ScoreBundle:
        return adapter_forward(rep, self.params, self.cfg)


def adapter_forward(
    rep: EventRepresentation, params: AdapterParams, cfg: AdapterConfig = AdapterConfig()
) -> ScoreBundle:
    """Run the affine heads; onset support comes from a fixed grid spread
    over the window frames."""
    r = rep.vector
    if params.input_dim != r.size:
        raise DimensionMismatch(
            f"adapter expects input of size {params.input_dim}, representation has {r.size}"
        )
    mu = _sigmoid(float(params.w_mu @ r) + params.b_mu)
    var = _softplus(float(params.w_var @ r) + params.b_var) + cfg.var_floor
    grid_scores = params.w_grid @ r + params.b_grid
    cells = _grid_cells(rep.window_len, params.grid)
    return ScoreBundle(
        mu=mu,
        var=var,
        onset_scores=grid_scores[cells],
        verb_scores=params.w_verb @ r + params.b_verb,
        b_scores=params.w_b @ r + params.b_b,
        noun_scores=params.w_noun @ r + params.b_noun,
        window=rep.window,
    )


@dataclass(frozen=True)
class GoldTarget:
    """Training target: onset frame plus semantic labels."""

    t_o: int
    verb_index: int
    b: int
    noun_index: Optional[int] = None

    def __post_init__(self) -> None:
        if self.b == 1 and self.noun_index is None:
            raise HandloopError("gold target with b=1 needs a noun index")


def _softmax_vec(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def adapter_loss_and_grads(
    params: AdapterParams,
    batch: Sequence[tuple[EventRepresentation, GoldTarget]],
    cfg: AdapterConfig = AdapterConfig(),
) -> tuple[float, AdapterParams]:
    """Mean loss over the batch and its analytic gradient.

    Loss: Gaussian NLL on the normalized onset position, plus cross-entropy
    on onset support, verb, noun existence, and (when b=1) noun.
    """
    if not batch:
        raise EmptyBatch("adapter training batch is empty")
    grads = AdapterParams.zeros(params.input_dim, params.grid, params.n_verbs, params.n_nouns)
    total = 0.0
    scale = 1.0 / len(batch)

    for rep, gold in batch:
        r = rep.vector
        t_s, t_e = rep.window
        if not (t_s <= gold.t_o <= t_e):
            raise HandloopError(f"gold onset {gold.t_o} outside window {rep.window}")
        pos = normalized_position(gold.t_o, rep.window)

        # Gaussian NLL head
        a_mu = float(params.w_mu @ r) + params.b_mu
        a_var = float(params.w_var @ r) + params.b_var
        mu = _sigmoid(a_mu)
        var = _softplus(a_var) + cfg.var_floor
        nll = 0.5 * math.log(2.0 * math.pi * var) + (pos - mu) ** 2 / (2.0 * var)
        d_mu = (mu - pos) / var
        d_a_mu = d_mu * mu * (1.0 - mu)
        d_var = 0.5 / var - (pos - mu) ** 2 / (2.0 * var * var)
        d_a_var = d_var * _sigmoid(a_var)
        grads.w_mu += scale * d_a_mu * r
        grads.b_mu += scale * d_a_mu
        grads.w_var += scale * d_a_var * r
        grads.b_var += scale * d_a_var

        # onset support cross-entropy through the grid mapping
        window_len = t_e - t_s + 1
        cells = _grid_cells(window_len, params.grid)
        grid_scores = params.w_grid @ r + params.b_grid
        frame_scores = grid_scores[cells]
        p_frames = _softmax_vec(frame_scores)
        target_frame = gold.t_o - t_s
        ce_o = -math.log(max(p_frames[target_frame], 1e-300))
        d_frames = p_frames.copy()
        d_frames[target_frame] -= 1.0
        d_grid = np.zeros(params.grid)
        np.add.at(d_grid, cells, d_frames)
        grads.w_grid += scale * np.outer(d_grid, r)
        grads.b_grid += scale * d_grid

        def head_ce(w: np.ndarray, b: np.ndarray, target: int) -> tuple[float, np.ndarray]:
            logits = w @ r + b
            p = _softmax_vec(logits)
            d = p.copy()
            d[target] -= 1.0
            return -math.log(max(p[target], 1e-300)), d

        ce_v, d_v = head_ce(params.w_verb, params.b_verb, gold.verb_index)
        grads.w_verb += scale * np.outer(d_v, r)
        grads.b_verb += scale * d_v

        ce_b, d_b = head_ce(params.w_b, params.b_b, gold.b)
        grads.w_b += scale * np.outer(d_b, r)
        grads.b_b += scale * d_b

        ce_n = 0.0
        if gold.b == 1:
            ce_n, d_n = head_ce(params.w_noun, params.b_noun, gold.noun_index)
            grads.w_noun += scale * np.outer(d_n, r)
            grads.b_noun += scale * d_n

        total += nll + ce_o + ce_v + ce_b + ce_n

    return total * scale, grads


def adapter_train_step(
    params: AdapterParams,
    batch: Sequence[tuple[EventRepresentation, GoldTarget]],
    learning_rate: float,
    cfg: AdapterConfig = AdapterConfig(),
) -> tuple[AdapterParams, float]:
    """One gradient-descent step; returns the updated parameters and loss."""
    loss, grads = adapter_loss_and_grads(params, batch, cfg)
    flat = params.flatten() - learning_rate * grads.flatten()
    return params.with_flat(flat), loss


# ---------------------------------------------------------------------------
# Score-file adapter: precomputed per-event bundles


class ScoreFileAdapter:
    """Adapter substitute backed by precomputed per-event score documents.

    One JSON line per event: {"hand", "t_s", "t_e", "mu", "var",
    "onset": [...], "verb": [...], "b": [lo, hi], "noun": [...]}.
    """

    def __init__(self, bundles: Mapping[tuple[str, int, int], ScoreBundle]):
        self._bundles = dict(bundles)

    @staticmethod
    def load(path: str | Path) -> "ScoreFileAdapter":
        bundles = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            doc = json.loads(line)
            key = (doc["hand"], int(doc["t_s"]), int(doc["t_e"]))
            bundles[key] = ScoreBundle(
                mu=float(doc["mu"]),
                var=float(doc["var"]),
                onset_scores=np.asarray(doc["onset"], dtype=float),
                verb_scores=np.asarray(doc["verb"], dtype=float),
                b_scores=np.asarray(doc["b"], dtype=float),
                noun_scores=np.asarray(doc["noun"], dtype=float),
                window=(int(doc["t_s"]), int(doc["t_e"])),
            )
        return ScoreFileAdapter(bundles)

    @staticmethod
    def save(bundles: Iterable[ScoreBundle], hands: Iterable[str], path: str | Path) -> None:
        lines = []
        for bundle, hand in zip(bundles, hands):
            lines.append(
                json.dumps(
                    {
                        "hand": hand,
                        "t_s": bundle.window[0],
                        "t_e": bundle.window[1],
                        "mu": bundle.mu,
                        "var": bundle.var,
                        "onset": list(map(float, bundle.onset_scores)),
                        "verb": list(map(float, bundle.verb_scores)),
                        "b": list(map(float, bundle.b_scores)),
                        "noun": list(map(float, bundle.noun_scores)),
                    }
                )
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def forward(self, rep: EventRepresentation) -> ScoreBundle:
        key = (rep.hand, rep.window[0], rep.window[1])
        if key not in self._bundles:
            raise HandloopError(f"score file has no bundle for event {key}")
        return self._bundles[key]


# ---------------------------------------------------------------------------
# Statistics-guided refinement


def bundle_probabilities(
    bundle: ScoreBundle,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-head probability view of a bundle: (onset, verb, presence, noun).

    For raw bundles the onset distribution is softmax(onset scores) tilted
    by the Gaussian head density over normalized positions; refined bundles
    already absorbed the tilt.
    """
    p_o = _softmax_vec(np.asarray(bundle.onset_scores, dtype=float))
    if not bundle.refined:
        t_s, t_e = bundle.window
        positions = np.array(
            [normalized_position(t, (t_s, t_e)) for t in range(t_s, t_e + 1)]
        )
        density = np.exp(-((positions - bundle.mu) ** 2) / (2.0 * bundle.var))
        p_o = p_o * density
        p_o = p_o / p_o.sum()
    p_v = _softmax_vec(np.asarray(bundle.verb_scores, dtype=float))
    p_b = _softmax_vec(np.asarray(bundle.b_scores, dtype=float))
    p_n = _softmax_vec(np.asarray(bundle.noun_scores, dtype=float))
    return p_o, p_v, p_b, p_n


def refine_scores(
    bundle: ScoreBundle,
    stats: StatisticsBundle,
    ontology: Ontology,
    weights: RefineConfig = RefineConfig(),
) -> ScoreBundle:
    """Blend adapter distributions with empirical priors, in dependency
    order: noun existence, noun, verb, then onset.

    Each refined distribution is a convex mix of the adapter distribution
    and a statistics-derived prior, so probability mass is conserved by
    construction.  Scores are re-expressed as log-probabilities.
    """
    _check_stats_cover(stats, ontology)
    p_o, p_v, p_b, p_n = bundle_probabilities(bundle)
    verbs, nouns = ontology.verbs, ontology.nouns

    top_verb = verbs[int(np.argmax(p_v))]

    no_noun = stats.no_noun_rate[top_verb]
    p_b_ref = (1.0 - weights.w_b) * p_b + weights.w_b * np.array([no_noun, 1.0 - no_noun])

    row = np.array([stats.cooccurrence[top_verb][n] for n in nouns])
    p_n_ref = (1.0 - weights.w_n) * p_n + weights.w_n * row / row.sum()

    top_noun = nouns[int(np.argmax(p_n_ref))]
    if p_b_ref[1] < 1e-9:
        verb_prior = np.full(len(verbs), 1.0 / len(verbs))
    else:
        column = np.array([stats.cooccurrence[v][top_noun] for v in verbs])
        verb_prior = column / column.sum()
    p_v_ref = (1.0 - weights.w_v) * p_v + weights.w_v * verb_prior

    refined_verb = verbs[int(np.argmax(p_v_ref))]
    t_s, t_e = bundle.window
    hist = stats.verb_onset_prior[refined_verb]
    frame_weights = np.array([hist[onset_bin(t, (t_s, t_e), stats.bins)] for t in range(t_s, t_e + 1)])
    onset_prior = frame_weights / frame_weights.sum()
    p_o_ref = (1.0 - weights.w_o) * p_o + weights.w_o * onset_prior

    with np.errstate(divide="ignore"):  # zero mass legitimately maps to -inf
        return replace(
            bundle,
            onset_scores=np.log(p_o_ref),
            verb_scores=np.log(p_v_ref),
            b_scores=np.log(p_b_ref),
            noun_scores=np.log(p_n_ref),
            refined=True,
        )


def _check_stats_cover(stats: StatisticsBundle, ontology: Ontology) -> None:
    for v in ontology.verbs:
        if v not in stats.verb_onset_prior or v not in stats.cooccurrence or v not in stats.no_noun_rate:
            raise HandloopError(f"statistics bundle does not cover verb {v!r}")
        missing = set(ontology.nouns) - set(stats.cooccurrence[v])
        if missing:
            raise HandloopError(f"statistics bundle misses nouns {sorted(missing)} for verb {v!r}")


# ---------------------------------------------------------------------------
# Lock-constrained exact decoding


def decode(
    bundle: ScoreBundle,
    locks: LockSet,
    ontology: Ontology,
    stats: StatisticsBundle,
) -> DecodedHypothesis:
    """Exact argmax of the structured joint score over the feasible set.

    The joint score sums per-head log-probabilities with a compatibility
    term: log cooccurrence(v, n) (or log no-noun rate for b=0) plus the
    verb-conditioned onset-prior mass at the onset's bin.  Locked variables
    are clamped; ontology-invalid assignments are excluded.  Enumeration is
    exhaustive over frames x verbs x (nouns + none).
    """
    _check_stats_cover(stats, ontology)
    t_s, t_e = bundle.window
    W = t_e - t_s + 1
    verbs, nouns = ontology.verbs, ontology.nouns
    V, N = len(verbs), len(nouns)
    none_slot = N

    p_o, p_v, p_b, p_n = bundle_probabilities(bundle)
    log_o = np.log(np.maximum(p_o, 1e-300))
    log_v = np.log(np.maximum(p_v, 1e-300))
    log_b = np.log(np.maximum(p_b, 1e-300))
    log_n = np.log(np.maximum(p_n, 1e-300))

    # onset-bin prior per (frame, verb)
    bins = np.array([onset_bin(t, (t_s, t_e), stats.bins) for t in range(t_s, t_e + 1)])
    onset_prior = np.array([stats.verb_onset_prior[v] for v in verbs])  # (V, B)
    log_onset_prior = np.log(onset_prior[:, bins]).T  # (W, V)

    coocc = np.array([[stats.cooccurrence[v][n] for n in nouns] for v in verbs])  # (V, N)
    no_noun = np.array([stats.no_noun_rate[v] for v in verbs])  # (V,)

    # joint score tensor over (frame, verb, noun slot); slot N means b=0
    score = np.empty((W, V, N + 1))
    score[:, :, :N] = (
        log_o[:, None, None]
        + log_v[None, :, None]
        + log_b[1]
        + log_n[None, None, :]
        + np.log(coocc)[None, :, :]
        + log_onset_prior[:, :, None]
    )
    score[:, :, N] = (
        log_o[:, None] + log_v[None, :] + log_b[0] + np.log(no_noun)[None, :] + log_onset_prior
    )

    feasible = np.ones((W, V, N + 1), dtype=bool)
    pair_ok = np.array([[ontology.pair_valid(v, n) for n in nouns] for v in verbs])
    feasible[:, :, :N] &= pair_ok[None, :, :]
    no_noun_ok = np.array([ontology.allows_no_noun(v) for v in verbs])
    feasible[:, :, N] &= no_noun_ok[None, :]

    if locks.is_locked("t_o"):
        t_lock = locks.value("t_o")
        mask = np.zeros(W, dtype=bool)
        if t_s <= t_lock <= t_e:
            mask[t_lock - t_s] = True
        feasible &= mask[:, None, None]
    if locks.is_locked("v"):
        mask = np.zeros(V, dtype=bool)
        mask[ontology.verb_index(locks.value("v"))] = True
        feasible &= mask[None, :, None]
    if locks.is_locked("b"):
        mask = np.zeros(N + 1, dtype=bool)
        if locks.value("b") == 0:
            mask[none_slot] = True
        else:
            mask[:N] = True
        feasible &= mask[None, None, :]
    if locks.is_locked("n"):
        mask = np.zeros(N + 1, dtype=bool)
        n_lock = locks.value("n")
        mask[none_slot if n_lock == NO_NOUN else ontology.noun_index(n_lock)] = True
        feasible &= mask[None, None, :]

    if not feasible.any():
        raise InfeasibleLocks("locked values admit no valid completion")

    masked = np.where(feasible, score, -np.inf)
    flat_best = int(np.argmax(masked))  # C order: earliest (t, v, slot) wins ties
    t_idx, v_idx, slot = np.unravel_index(flat_best, masked.shape)

    logZ = _logsumexp(masked[feasible])
    marg_t = np.exp(_logsumexp_axis(masked.reshape(W, -1)) - logZ)
    marg_v = np.exp(_logsumexp_axis(np.transpose(masked, (1, 0, 2)).reshape(V, -1)) - logZ)
    marg_slot = np.exp(_logsumexp_axis(np.transpose(masked, (2, 0, 1)).reshape(N + 1, -1)) - logZ)
    marg_b = np.array([marg_slot[none_slot], marg_slot[:N].sum()])

    b = 0 if slot == none_slot else 1
    return DecodedHypothesis(
        t_o=t_s + int(t_idx),
        v=verbs[v_idx],
        b=b,
        n=NO_NOUN if b == 0 else nouns[slot],
        joint_score=float(masked[t_idx, v_idx, slot]),
        marginals=FieldMarginals(onset=marg_t, verb=marg_v, presence=marg_b, noun_slots=marg_slot),
    )


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(x - m).sum()))


def _logsumexp_axis(rows: np.ndarray) -> np.ndarray:
    m = np.max(rows, axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):  # all-masked rows sum to exp(-inf)
        out = safe + np.log(np.exp(rows - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(m), out, m)


# ---------------------------------------------------------------------------
# Feature-feedback re-decoding


def inject_hypothesis(rep: EventRepresentation, hypothesis: DecodedHypothesis, locks: LockSet, ontology: Ontology) -> EventRepresentation:
    """Write the hypothesis's onset/verb/noun into the state slots of the
    representation, marking injected fields as suggested.  Locked fields
    keep their confirmed encoding."""
    vec = rep.vector.copy()
    layout = rep.layout

    def set_status(field: str, status: FieldStatus) -> None:
        i = FIELDS.index(field)
        vec[layout.status_offset + 3 * i : layout.status_offset + 3 * (i + 1)] = 0.0
        vec[layout.status_offset + 3 * i + _STATUS_ORDER.index(status)] = 1.0

    if not locks.is_locked("t_o"):
        vec[layout.temporal_offset + 1] = hypothesis.t_o / rep.clip_len
        set_status("t_o", FieldStatus.SUGGESTED)
    if not locks.is_locked("v"):
        vec[layout.verb_offset : layout.verb_offset + layout.n_verbs] = 0.0
        vec[layout.verb_offset + ontology.verb_index(hypothesis.v)] = 1.0
        set_status("v", FieldStatus.SUGGESTED)
    if not locks.is_locked("n"):
        vec[layout.noun_offset : layout.noun_offset + layout.n_nouns + 1] = 0.0
        slot = layout.n_nouns if hypothesis.n == NO_NOUN else ontology.noun_index(hypothesis.n)
        vec[layout.noun_offset + slot] = 1.0
        set_status("n", FieldStatus.SUGGESTED)

    return replace(rep, vector=vec)


def feedback_redecode(
    rep: EventRepresentation,
    adapter: Adapter,
    first_pass: DecodedHypothesis,
    locks: LockSet,
    ontology: Ontology,
    stats: StatisticsBundle,
    weights: RefineConfig = RefineConfig(),
    passes: int = 1,
) -> DecodedHypothesis:
    """Consistency-correction passes: re-run the adapter with the current
    best hypothesis injected, keep the re-decode only on strict joint-score
    improvement."""
    best = first_pass
    current = rep
    for _ in range(max(passes, 0)):
        current = inject_hypothesis(current, best, locks, ontology)
        bundle = adapter.forward(current)
        refined = refine_scores(bundle, stats, ontology, weights)
        candidate = decode(refined, locks, ontology, stats)
        if candidate.joint_score > best.joint_score:
            best = candidate
        else:
            break
    return best
