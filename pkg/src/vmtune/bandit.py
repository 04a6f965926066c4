"""Disjoint-arm LinUCB with cached inverses and JSON checkpoints.

Each arm keeps its own ridge regression: ``A = lambda*I + sum x x^T`` and
``b = sum r x``.  The score of an arm for context ``x`` is
``theta^T x + alpha * sqrt(x^T A^{-1} x)`` with ``theta = A^{-1} b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import NUM_ACTIONS, Action

CHECKPOINT_FORMAT = "linucb-checkpoint"
CHECKPOINT_VERSION = 1
# Dense re-inversion cadence; bounds Sherman-Morrison round-off drift.
REINVERT_EVERY = 256


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ArmScore:
    estimate: float
    width: float

    @property
    def score(self) -> float:
        return self.estimate + self.width


class ArmModel:
    """Ridge state for a single arm."""

    def __init__(self, d: int, lam: float) -> None:
        self.A = lam * np.eye(d)
        self.b = np.zeros(d)
        self.A_inv = np.eye(d) / lam
        self.n_updates = 0

    @property
    def theta(self) -> np.ndarray:
        return self.A_inv @ self.b

    def update(self, x: np.ndarray, r: float) -> None:
        self.A += np.outer(x, x)
        self.b += r * x
        self.n_updates += 1
        if self.n_updates % REINVERT_EVERY == 0:
            self.A_inv = np.linalg.inv(self.A)
            self.A_inv = 0.5 * (self.A_inv + self.A_inv.T)
            return
        u = self.A_inv @ x
        self.A_inv -= np.outer(u, u) / (1.0 + x @ u)


class LinUcbModel:
    """Nine-arm disjoint LinUCB.

    Parameters
    ----------
    d : int
        Context dimension.
    alpha : float
        Exploration constant scaling the confidence width.
    lam : float
        Ridge regularization; every arm starts at ``A = lam * I``.
    layout_version : str
        Identifier of the feature layout the model was trained on.
    """

    def __init__(self, d: int, alpha: float = 0.5, lam: float = 0.01,
                 layout_version: str = "", n_arms: int = NUM_ACTIONS) -> None:
        if d < 1:
            raise ValueError("d must be >= 1")
        if lam <= 0:
            raise ValueError("lambda must be > 0")
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.d = d
        self.alpha = float(alpha)
        self.lam = float(lam)
        self.layout_version = layout_version
        self.arms = [ArmModel(d, lam) for _ in range(n_arms)]
        self.rounds = 0

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"context has shape {x.shape}, expected ({self.d},)")
        return x

    def predict(self, x: np.ndarray) -> list[ArmScore]:
        x = self._check(x)
        scores = []
        for arm in self.arms:
            estimate = float(arm.theta @ x)
            # Round-off can push the quadratic form a hair below zero.
            width = self.alpha * float(np.sqrt(max(0.0, x @ arm.A_inv @ x)))
            scores.append(ArmScore(estimate, width))
        return scores

    def learn(self, x: np.ndarray, a: Action | int, r: float) -> None:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"reward {r} outside [0, 1]")
        self.arms[int(a)].update(self._check(x), float(r))

    # -- checkpoints -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layout_version": self.layout_version,
            "d": self.d,
            "alpha": self.alpha,
            "lambda": self.lam,
            "rounds": self.rounds,
            "arms": [
                {
                    "A": arm.A.ravel().tolist(),
                    "b": arm.b.tolist(),
                    "A_inv": arm.A_inv.ravel().tolist(),
                    "n_updates": arm.n_updates,
                }
                for arm in self.arms
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict, d: int | None = None,
                  layout_version: str | None = None) -> LinUcbModel:
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError("not a supported LinUCB checkpoint")
        if d is not None and doc["d"] != d:
            raise CheckpointError(f"checkpoint has d={doc['d']}, expected {d}")
        if layout_version is not None and doc["layout_version"] != layout_version:
            raise CheckpointError(
                f"checkpoint layout {doc['layout_version']!r}, expected {layout_version!r}")
        n = doc["d"]
        model = cls(n, doc["alpha"], doc["lambda"], doc["layout_version"], len(doc["arms"]))
        model.rounds = doc["rounds"]
        for arm, raw in zip(model.arms, doc["arms"]):
            arm.A = np.array(raw["A"], dtype=float).reshape(n, n)
            arm.b = np.array(raw["b"], dtype=float)
            arm.A_inv = np.array(raw["A_inv"], dtype=float).reshape(n, n)
            arm.n_updates = int(raw["n_updates"])
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path, d: int | None = None,
             layout_version: str | None = None) -> LinUcbModel:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_dict(doc, d, layout_version)


def new_model(d: int, alpha: float = 0.5, lam: float = 0.01,
              layout_version: str = "") -> LinUcbModel:
    return LinUcbModel(d, alpha, lam, layout_version)


def argmax_action(scores: Sequence[ArmScore]) -> Action:
    """Highest score, ties to the lowest action index."""
    best = 0
    for i, s in enumerate(scores):
        if s.score > scores[best].score:
            best = i
    return Action(best)
