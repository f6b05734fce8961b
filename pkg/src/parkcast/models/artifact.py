"""Trained-model container with schema verification and a deterministic file format.

An artifact file is a zip archive holding ``meta.json`` and one ``.npy`` member
per parameter array (see :mod:`parkcast.store`). Saving the same model twice
yields identical bytes.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .. import store
from ..errors import CorruptArtifact, DigestMismatch, SchemaMismatch
from ..features import FeatureSchema, HorizonGrid
from .mlp import FFNNRegressor
from .tree import RandomForestRegressor

FORMAT_VERSION = 1
MODEL_KINDS = {"ffnn": FFNNRegressor, "forest": RandomForestRegressor}


@dataclass
class ModelArtifact:
    kind: str
    model: object
    schema: FeatureSchema
    target: str
    horizons: HorizonGrid
    metadata: dict = field(default_factory=dict)
    schema_digest: str = ""

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not isinstance(self.horizons, HorizonGrid):
            self.horizons = HorizonGrid(tuple(self.horizons))
        if not self.schema_digest:
            self.schema_digest = self.schema.digest()

    def check_schema(self, digest: str):
        if digest != self.schema_digest:
            raise SchemaMismatch(f"feature schema {digest[:12]} does not match "
                                 f"artifact schema {self.schema_digest[:12]}")

    def predict(self, X, schema_digest: str | None = None) -> np.ndarray:
        """Predictions for rows of ``X`` (or one vector), one column per horizon."""
        if schema_digest is not None:
            self.check_schema(schema_digest)
        if self.schema.digest() != self.schema_digest:
            raise DigestMismatch("artifact schema was modified after training")
        return self.model.predict(X)

    def to_bytes(self) -> bytes:
        config, arrays = self.model.get_state()
        meta = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "target": self.target,
            "horizons": list(self.horizons),
            "schema": self.schema.to_dict(),
            "schema_digest": self.schema_digest,
            "model_config": config,
            "metadata": self.metadata,
        }
        return store.pack(meta, arrays)

    def content_digest(self) -> str:
        """sha256 of the serialized artifact; identifies the exact model."""
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelArtifact":
        try:
            meta, arrays = store.unpack(data)
        except store.StoreError as exc:
            raise CorruptArtifact(f"cannot read artifact: {exc}") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise CorruptArtifact(f"unsupported artifact version {meta.get('format_version')}")
        try:
            schema = FeatureSchema.from_dict(meta["schema"])
        except (KeyError, TypeError) as exc:
            raise CorruptArtifact(f"bad schema section: {exc}") from exc
        if schema.digest() != meta["schema_digest"]:
            raise DigestMismatch("stored schema digest does not match the stored schema")
        kind = meta["kind"]
        if kind not in MODEL_KINDS:
            raise CorruptArtifact(f"unknown model kind {kind!r}")
        try:
            model = MODEL_KINDS[kind].from_state(meta["model_config"], arrays)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptArtifact(f"bad model parameters: {exc}") from exc
        art = cls(kind, model, schema, meta["target"], HorizonGrid(tuple(meta["horizons"])),
                  meta["metadata"], meta["schema_digest"])
        art._content_digest = hashlib.sha256(data).hexdigest()
        return art


def save_artifact(artifact: ModelArtifact, path) -> str:
    """Write the artifact; returns its content digest."""
    data = artifact.to_bytes()
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_artifact(path) -> ModelArtifact:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CorruptArtifact(f"cannot open artifact {path}: {exc}") from exc
    return ModelArtifact.from_bytes(data)


def train_artifact(kind: str, train_set, validation_set, schema: FeatureSchema,
                   metadata: dict | None = None, **model_kw) -> ModelArtifact:
    """Fit a model of ``kind`` on supervised sets and wrap it as an artifact."""
    for s in (train_set, validation_set):
        if s.schema_digest != schema.digest():
            raise SchemaMismatch("supervised set was encoded with a different schema")
    model = MODEL_KINDS[kind](**model_kw)
    model.fit(train_set.X, train_set.Y, validation_set.X, validation_set.Y)
    meta = dict(metadata or {})
    val_pred = model.predict(validation_set.X)
    meta["validation_mse"] = float(np.mean((val_pred - validation_set.Y) ** 2))
    meta["n_train"] = int(len(train_set))
    return ModelArtifact(kind, model, schema, train_set.target, train_set.horizons, meta)
