"""Versioned ``.ckpt.json`` files for networks and latent models.

The JSON envelope carries a human-readable header; array payloads are
base64 of little-endian float64 so round trips are bit-exact.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any

import numpy as np

from obstransfer.dynamics import LatentModel
from obstransfer.nn.layers import Conv2d, Dense, Flatten, Network, UnitNormalize

FORMAT = "obstransfer-ckpt"
VERSION = 1
SUFFIX = ".ckpt.json"


class CheckpointError(ValueError):
    """Malformed, incompatible or mismatched checkpoint."""


def encode_array(a: np.ndarray) -> dict[str, Any]:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(blob: dict[str, Any]) -> np.ndarray:
    try:
        raw = base64.b64decode(blob["data"], validate=True)
        shape = tuple(int(s) for s in blob["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt array payload: {exc}") from exc
    if len(raw) % 8:
        raise CheckpointError(f"array payload of {len(raw)} bytes is not float64 data")
    a = np.frombuffer(raw, dtype="<f8")
    if a.size != int(np.prod(shape)):
        raise CheckpointError(f"array payload has {a.size} values, header says {shape}")
    return a.reshape(shape).astype(np.float64)


def _layer_to_dict(layer) -> dict[str, Any]:
    if isinstance(layer, Dense):
        return {"type": "Dense", "in_dim": layer.in_dim, "out_dim": layer.out_dim,
                "activation": layer.activation}
    if isinstance(layer, Conv2d):
        return {"type": "Conv2d", "in_ch": layer.in_ch, "out_ch": layer.out_ch,
                "kernel": layer.kernel, "stride": layer.stride, "activation": layer.activation}
    if isinstance(layer, Flatten):
        return {"type": "Flatten"}
    return {"type": "UnitNormalize"}


def _layer_from_dict(d: dict[str, Any]):
    kind = d.get("type")
    args = {k: v for k, v in d.items() if k != "type"}
    try:
        return {"Dense": Dense, "Conv2d": Conv2d, "Flatten": Flatten,
                "UnitNormalize": UnitNormalize}[kind](**args)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"bad layer descriptor {d}") from exc


def network_component(net: Network) -> dict[str, Any]:
    return {"type": "network", "input_shape": list(net.input_shape),
            "layers": [_layer_to_dict(l) for l in net.layers],
            "arrays": [encode_array(w) for w in net.get_weights()]}


def latent_component(model: LatentModel) -> dict[str, Any]:
    return {"type": "latent_model", "use_bias": model.use_bias,
            "arrays": {k: encode_array(v) for k, v in model.arrays().items()}}


def save_checkpoint(path: str | Path, kind: str, components: dict[str, Any],
                    encoding_dim: int | None = None, num_actions: int | None = None) -> Path:
    """Write components (Network or LatentModel objects) under one envelope."""
    body = {}
    for name, obj in components.items():
        if isinstance(obj, Network):
            body[name] = network_component(obj)
        elif isinstance(obj, LatentModel):
            body[name] = latent_component(obj)
        else:
            raise TypeError(f"cannot checkpoint {type(obj).__name__}")
    envelope = {"format": FORMAT, "version": VERSION, "kind": kind,
                "encoding_dim": encoding_dim, "num_actions": num_actions, "components": body}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(envelope, indent=1), encoding="utf-8")
    return path


def read_envelope(path: str | Path, kind: str | None = None) -> dict[str, Any]:
    try:
        envelope = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(envelope, dict) or envelope.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not an {FORMAT} file")
    if envelope.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {envelope.get('version')} != {VERSION}")
    if kind is not None and envelope.get("kind") != kind:
        raise CheckpointError(f"expected a {kind!r} checkpoint, found {envelope.get('kind')!r}")
    if not isinstance(envelope.get("components"), dict):
        raise CheckpointError("checkpoint has no components")
    return envelope


def build_component(comp: dict[str, Any]):
    if comp.get("type") == "network":
        layers = [_layer_from_dict(d) for d in comp["layers"]]
        try:
            net = Network(layers, tuple(comp["input_shape"]), np.random.default_rng(0))
            net.set_weights([decode_array(b) for b in comp["arrays"]])
        except ValueError as exc:
            raise CheckpointError(f"network does not match its layer spec: {exc}") from exc
        return net
    if comp.get("type") == "latent_model":
        arrays = {k: decode_array(v) for k, v in comp.get("arrays", {}).items()}
        try:
            A, d, _ = arrays["P"].shape
            model = LatentModel(d, A, None, bool(comp.get("use_bias", True)))
            model.set_arrays(arrays)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"latent model arrays inconsistent: {exc}") from exc
        return model
    raise CheckpointError(f"unknown component type {comp.get('type')!r}")


def load_checkpoint(path: str | Path, kind: str | None = None, encoding_dim: int | None = None,
                    num_actions: int | None = None) -> dict[str, Any]:
    """Load every component; enforce the consumer's expected dimensions."""
    envelope = read_envelope(path, kind)
    if encoding_dim is not None and envelope.get("encoding_dim") != encoding_dim:
        raise CheckpointError(f"checkpoint encoding_dim {envelope.get('encoding_dim')} "
                              f"does not match expected {encoding_dim}")
    if num_actions is not None and envelope.get("num_actions") != num_actions:
        raise CheckpointError(f"checkpoint num_actions {envelope.get('num_actions')} "
                              f"does not match expected {num_actions}")
    return {name: build_component(c) for name, c in envelope["components"].items()}


def save_latent_model(path, model: LatentModel) -> Path:
    return save_checkpoint(path, "latent_model", {"model": model}, model.encoding_dim,
                           model.num_actions)


def load_latent_model(path, encoding_dim: int | None = None,
                      num_actions: int | None = None) -> LatentModel:
    return load_checkpoint(path, "latent_model", encoding_dim, num_actions)["model"]
