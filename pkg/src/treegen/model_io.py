"""Self-contained binary model files.

Layout: one ASCII header line ``treegen-model <format_version> <kind>``,
then length-prefixed sections. Section 0 is a JSON manifest (schema
structure, config snapshot, seed); the remaining sections are numpy arrays
in ``.npy`` encoding, one per manifest entry, so floats round-trip
bit-for-bit.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .boosting import BoostConfig, EnergyModel, InitialModel
from .data import FeatureSpec, Schema
from .density import DefEnsemble, DensityTree
from .tree import Tree

FORMAT_VERSION = 1

KIND_BOOST = "nrgboost"
KIND_DEF = "def"


def _write_header(fh, kind: str) -> None:
    fh.write(f"treegen-model {FORMAT_VERSION} {kind}\n".encode("ascii"))


def _read_header(fh) -> tuple[int, str]:
    line = fh.readline(64)
    parts = line.decode("ascii", errors="replace").split()
    if len(parts) != 3 or parts[0] != "treegen-model":
        raise ValueError("not a treegen model file")
    try:
        version = int(parts[1])
    except ValueError as exc:
        raise ValueError("not a treegen model file") from exc
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    return version, parts[2]


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def _schema_manifest(schema: Schema) -> dict:
    feats = []
    for f in schema.features:
        feats.append({
            "name": f.name,
            "kind": f.kind,
            "cardinality": int(f.cardinality),
            "categories": [_jsonable(c) for c in f.categories] if f.categories else None,
        })
    return {"features": feats, "target_index": schema.target_index}


def _schema_arrays(schema: Schema) -> dict[str, np.ndarray]:
    arrays = {}
    for j, f in enumerate(schema.features):
        if f.kind == "numeric":
            arrays[f"edges_{j}"] = f.bin_edges
            arrays[f"range_{j}"] = np.array(f.value_range, dtype=np.float64)
    return arrays


def _schema_restore(manifest: dict, arrays: dict[str, np.ndarray]) -> Schema:
    feats = []
    for j, fm in enumerate(manifest["features"]):
        if fm["kind"] == "numeric":
            feats.append(FeatureSpec(
                name=fm["name"], kind="numeric", cardinality=fm["cardinality"],
                bin_edges=arrays[f"edges_{j}"],
                value_range=tuple(arrays[f"range_{j}"])))
        else:
            feats.append(FeatureSpec(
                name=fm["name"], kind="categorical", cardinality=fm["cardinality"],
                categories=list(fm["categories"])))
    return Schema(features=feats, target_index=manifest["target_index"])


def _tree_arrays(trees: list[Tree]) -> dict[str, np.ndarray]:
    return {
        "node_counts": np.array([t.n_nodes for t in trees], dtype=np.int64),
        "mask_counts": np.array([t.cat_masks.shape[0] for t in trees], dtype=np.int64),
        "tf": np.concatenate([t.feature for t in trees]) if trees else np.zeros(0, np.int32),
        "tt": np.concatenate([t.threshold for t in trees]) if trees else np.zeros(0, np.int32),
        "tl": np.concatenate([t.left for t in trees]) if trees else np.zeros(0, np.int32),
        "tr": np.concatenate([t.right for t in trees]) if trees else np.zeros(0, np.int32),
        "tv": np.concatenate([t.value for t in trees]) if trees else np.zeros(0, np.float64),
        "tc": np.concatenate([t.cat_ref for t in trees]) if trees else np.zeros(0, np.int32),
        "masks": (np.vstack([t.cat_masks for t in trees])
                  if trees and sum(t.cat_masks.shape[0] for t in trees)
                  else np.zeros((0, 4), np.uint64)),
    }


def _trees_restore(arrays: dict[str, np.ndarray], cards: np.ndarray) -> list[Tree]:
    trees = []
    node_off = 0
    mask_off = 0
    for n, k in zip(arrays["node_counts"], arrays["mask_counts"]):
        n, k = int(n), int(k)
        sl = slice(node_off, node_off + n)
        trees.append(Tree(
            feature=arrays["tf"][sl].copy(), threshold=arrays["tt"][sl].copy(),
            left=arrays["tl"][sl].copy(), right=arrays["tr"][sl].copy(),
            value=arrays["tv"][sl].copy(), cat_ref=arrays["tc"][sl].copy(),
            cat_masks=arrays["masks"][mask_off:mask_off + k].copy(),
            cardinalities=cards))
        node_off += n
        mask_off += k
    return trees


def _write_section(fh, payload: bytes) -> None:
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _read_section(fh) -> bytes:
    raw = fh.read(8)
    if len(raw) != 8:
        raise ValueError("truncated model file")
    (length,) = struct.unpack("<Q", raw)
    payload = fh.read(length)
    if len(payload) != length:
        raise ValueError("truncated model file")
    return payload


def _array_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_model(path: str | Path, model: EnergyModel | DefEnsemble,
               config: BoostConfig | dict | None = None,
               seed: int | None = None) -> None:
    """Serialize a fitted model (either kind) into one self-describing file."""
    manifest: dict = {"format_version": FORMAT_VERSION, "seed": seed}
    if config is not None:
        cfg = config.__dict__ if isinstance(config, BoostConfig) else dict(config)
        manifest["config"] = {k: _jsonable(v) if not isinstance(v, tuple) else list(v)
                              for k, v in cfg.items()}
    else:
        manifest["config"] = None

    if isinstance(model, EnergyModel):
        manifest["kind"] = KIND_BOOST
        manifest["schema"] = _schema_manifest(model.schema)
        manifest["n_stages"] = model.n_stages
        arrays = _schema_arrays(model.schema)
        arrays["uniform_mix"] = np.array([model.initial.uniform_mix])
        for j, m in enumerate(model.initial.marginals):
            arrays[f"marg_{j}"] = m
        arrays["steps"] = np.array([s for _t, s in model.stages], dtype=np.float64)
        arrays.update(_tree_arrays([t for t, _s in model.stages]))
    elif isinstance(model, DefEnsemble):
        manifest["kind"] = KIND_DEF
        manifest["schema"] = _schema_manifest(model.schema)
        manifest["n_trees"] = len(model.trees)
        manifest["criterion"] = model.criterion
        manifest["feature_fraction"] = model.feature_fraction
        arrays = _schema_arrays(model.schema)
        arrays["leaf_counts"] = np.array([len(t.leaf_mass) for t in model.trees],
                                         dtype=np.int64)
        arrays["leaf_mass"] = np.concatenate([t.leaf_mass for t in model.trees])
        arrays["leaf_volume"] = np.concatenate([t.leaf_volume for t in model.trees])
        arrays.update(_tree_arrays([t.tree for t in model.trees]))
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")

    manifest["arrays"] = sorted(arrays)
    with open(path, "wb") as fh:
        _write_header(fh, manifest["kind"])
        _write_section(fh, json.dumps(manifest, sort_keys=True).encode("utf-8"))
        for name in manifest["arrays"]:
            _write_section(fh, _array_bytes(arrays[name]))


def load_model(path: str | Path) -> EnergyModel | DefEnsemble:
    """Load a model file written by ``save_model``."""
    with open(path, "rb") as fh:
        _version, kind = _read_header(fh)
        manifest = json.loads(_read_section(fh).decode("utf-8"))
        if manifest["kind"] != kind:
            raise ValueError("header/manifest kind mismatch")
        arrays = {}
        for name in manifest["arrays"]:
            arrays[name] = np.load(io.BytesIO(_read_section(fh)), allow_pickle=False)

    schema = _schema_restore(manifest["schema"], arrays)
    cards = schema.cardinalities
    trees = _trees_restore(arrays, cards)
    if manifest["kind"] == KIND_BOOST:
        marginals = [arrays[f"marg_{j}"] for j in range(len(schema))]
        initial = InitialModel(marginals=marginals,
                               uniform_mix=float(arrays["uniform_mix"][0]))
        stages = list(zip(trees, arrays["steps"].tolist()))
        return EnergyModel(schema=schema, initial=initial, stages=stages)
    if manifest["kind"] == KIND_DEF:
        dtrees = []
        off = 0
        for t, k in zip(trees, arrays["leaf_counts"]):
            k = int(k)
            dtrees.append(DensityTree(
                tree=t, leaf_mass=arrays["leaf_mass"][off:off + k].copy(),
                leaf_volume=arrays["leaf_volume"][off:off + k].copy()))
            off += k
        return DefEnsemble(schema=schema, trees=dtrees,
                           criterion=manifest["criterion"],
                           feature_fraction=manifest["feature_fraction"])
    raise ValueError(f"unknown model kind {manifest['kind']!r}")


def model_config(path: str | Path) -> dict | None:
    """Config snapshot stored in a model file, if any."""
    with open(path, "rb") as fh:
        _read_header(fh)
        return json.loads(_read_section(fh).decode("utf-8")).get("config")
