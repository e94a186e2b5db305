import numpy as np
import pytest

from handloop.events import Ontology
from handloop.ingest import FeatureTable, HandFrameState, HandTrack


@pytest.fixture
def ontology() -> Ontology:
    return toy_ontology()


def toy_ontology() -> Ontology:
    return Ontology(
        verbs=("grasp", "insert", "hold", "release", "tighten"),
        nouns=("bolt", "screw", "panel", "wrench", "block"),
        valid_pairs={
            "grasp": frozenset({"bolt", "screw", "wrench"}),
            "insert": frozenset({"bolt", "screw"}),
            "hold": frozenset({"panel", "block"}),
            "release": frozenset({"bolt", "panel"}),
            "tighten": frozenset({"screw", "wrench"}),
        },
        noun_required={
            "grasp": True,
            "insert": True,
            "hold": False,
            "release": False,
            "tighten": True,
        },
        phase_family={
            "grasp": "early",
            "insert": "mid",
            "hold": "boundary",
            "release": "late",
            "tighten": "mid",
        },
        family_template_ratio={"boundary": 0.0, "early": 0.25, "mid": 0.5, "late": 0.85},
    )


def make_track(
    motion,
    hand: str = "Left",
    start: int = 0,
    handedness: float = 0.95,
    skip=(),
) -> HandTrack:
    """Track with the given per-frame motion values, boxes centered sanely."""
    frames = []
    for i, m in enumerate(motion):
        t = start + i
        if t in skip:
            continue
        frames.append(
            HandFrameState(
                t=t,
                box=(10.0, 10.0, 20.0, 20.0),
                center=(20.0, 20.0),
                area=400.0,
                motion=float(m),
                handedness=handedness,
            )
        )
    return HandTrack(hand=hand, frames=tuple(frames))


def make_features(frame_count: int = 128, dim: int = 8, seed: int = 0, clip_id: str = "clip") -> FeatureTable:
    rng = np.random.default_rng(seed)
    return FeatureTable(clip_id=clip_id, vectors=rng.normal(size=(frame_count, dim)).astype("float32"))
