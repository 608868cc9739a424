"""On-disk artifacts.

Every artifact is a directory holding a JSON document plus raw
little-endian float64 blobs (row-major, shapes recorded in the JSON). The
JSON records each blob's SHA-256 and a checksum of its own canonical
content. Loading verifies the format version, blob sizes and both
checksums.

Layout::

    module/    module.json, w_pe.bin, theta.bin, response.bin, totals.bin
    modular/   index.json, module_000/, module_001/, ...
    ensemble/  ensemble.json, member_000/, member_001/, ...

Matrices use ``name.json`` (header) + ``name.bin``, or plain ``.csv``.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import ArtifactError, DataError
from .modular import ModularSNN, ModuleState
from .params import SimulationParams
from .snn import SynapseState

FORMAT_VERSION = 1
_DTYPE = "<f8"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_doc(path: Path, doc: dict) -> None:
    body = dict(doc)
    body["format_version"] = FORMAT_VERSION
    body.pop("checksum", None)
    body["checksum"] = sha256_bytes(canonical_json(body).encode())
    path.write_text(json.dumps(body, sort_keys=True, indent=1) + "\n")


def _read_doc(path: Path, kind: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ArtifactError(f"missing artifact file {path}") from exc
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ArtifactError(f"unreadable artifact file {path}: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"{path}: format version {doc.get('format_version')} != {FORMAT_VERSION}")
    if doc.get("kind") != kind:
        raise ArtifactError(f"{path}: expected a {kind} artifact, found {doc.get('kind')}")
    claimed = doc.pop("checksum", None)
    if claimed != sha256_bytes(canonical_json(doc).encode()):
        raise ArtifactError(f"{path}: metadata checksum mismatch")
    return doc


def _write_blob(folder: Path, name: str, array) -> dict:
    arr = np.ascontiguousarray(np.asarray(array, dtype=_DTYPE))
    data = arr.tobytes(order="C")
    (folder / f"{name}.bin").write_bytes(data)
    return {"file": f"{name}.bin", "shape": list(arr.shape), "dtype": _DTYPE, "sha256": sha256_bytes(data)}


def _read_blob(folder: Path, entry: dict) -> np.ndarray:
    path = folder / entry["file"]
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ArtifactError(f"missing blob {path}") from exc
    shape = tuple(entry["shape"])
    if len(data) != int(np.prod(shape, dtype=np.int64)) * 8:
        raise ArtifactError(f"{path}: truncated or oversized blob")
    if sha256_bytes(data) != entry["sha256"]:
        raise ArtifactError(f"{path}: checksum mismatch")
    return np.frombuffer(data, dtype=entry["dtype"]).reshape(shape).astype(np.float64)


def _int_list(a) -> list[int]:
    return [int(x) for x in np.asarray(a).ravel()]


def _bool_list(a) -> list[bool] | None:
    return None if a is None else [bool(x) for x in np.asarray(a).ravel()]


def save_module(module: ModuleState, path: str | Path) -> Path:
    folder = Path(path)
    folder.mkdir(parents=True, exist_ok=True)
    blobs = {
        "w_pe": _write_blob(folder, "w_pe", module.syn.w_pe),
        "theta": _write_blob(folder, "theta", module.theta),
        "response": _write_blob(folder, "response", module.response_matrix),
    }
    if module.reference_totals is not None:
        blobs["totals"] = _write_blob(folder, "totals", module.reference_totals)
    doc = {
        "kind": "module",
        "blobs": blobs,
        "params": module.params.to_dict(),
        "module_index": int(module.module_index),
        "weight_seed": module.weight_seed,
        "shuffle_seed": module.shuffle_seed,
        "epochs": int(module.epochs),
        "trained_place_ids": _int_list(module.trained_place_ids),
        "assignments": _int_list(module.assignments),
        "inert": _bool_list(module.inert),
        "hyperactive_mask": _bool_list(module.hyperactive_mask),
        "theta_threshold": module.theta_threshold,
        "silent_presentations": int(module.silent_presentations),
        "retried_presentations": int(module.retried_presentations),
    }
    _write_doc(folder / "module.json", doc)
    return folder


def load_module(path: str | Path) -> ModuleState:
    folder = Path(path)
    doc = _read_doc(folder / "module.json", "module")
    blobs = doc["blobs"]
    params = SimulationParams.from_dict(doc["params"])
    w = _read_blob(folder, blobs["w_pe"])
    totals = _read_blob(folder, blobs["totals"]).astype(np.int64) if "totals" in blobs else None
    mask = doc["hyperactive_mask"]
    return ModuleState(
        syn=SynapseState(w, np.zeros(params.k_p), np.zeros(params.k_e)),
        params=params,
        theta=_read_blob(folder, blobs["theta"]),
        trained_place_ids=np.array(doc["trained_place_ids"], dtype=np.int64),
        assignments=np.array(doc["assignments"], dtype=np.int64),
        inert=np.array(doc["inert"], dtype=bool),
        response_matrix=_read_blob(folder, blobs["response"]).astype(np.int64),
        weight_seed=doc["weight_seed"],
        shuffle_seed=doc["shuffle_seed"],
        module_index=doc["module_index"],
        theta_threshold=doc["theta_threshold"],
        hyperactive_mask=None if mask is None else np.array(mask, dtype=bool),
        reference_totals=totals,
        silent_presentations=doc["silent_presentations"],
        retried_presentations=doc["retried_presentations"],
        epochs=doc["epochs"],
    )


def _estimator_params(est) -> dict:
    params = est.get_params(deep=False)
    p = params.get("params")
    if isinstance(p, SimulationParams):
        params["params"] = p.to_dict()
    if params.get("theta_range") is not None:
        params["theta_range"] = list(params["theta_range"])
    return params


def save_modular(model: ModularSNN, path: str | Path) -> Path:
    folder = Path(path)
    folder.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, module in enumerate(model.modules_):
        name = f"module_{i:03d}"
        save_module(module, folder / name)
        module_doc = json.loads((folder / name / "module.json").read_text())
        entries.append({"dir": name, "place_ids": _int_list(module.trained_place_ids),
                        "checksum": module_doc["checksum"]})
    doc = {
        "kind": "modular_snn",
        "estimator": _estimator_params(model),
        "classes": model.classes_.tolist(),
        "n_places": int(model.n_places_),
        "theta_threshold": model.theta_threshold_,
        "params": model.params_.to_dict(),
        "modules": entries,
    }
    _write_doc(folder / "index.json", doc)
    return folder


def load_modular(path: str | Path) -> ModularSNN:
    folder = Path(path)
    doc = _read_doc(folder / "index.json", "modular_snn")
    est_params = dict(doc["estimator"])
    if isinstance(est_params.get("theta_range"), list):
        est_params["theta_range"] = tuple(est_params["theta_range"])
    model = ModularSNN(**est_params)
    modules = []
    for entry in doc["modules"]:
        module = load_module(folder / entry["dir"])
        if _int_list(module.trained_place_ids) != entry["place_ids"]:
            raise ArtifactError(f"{entry['dir']}: partition does not match index")
        modules.append(module)
    model.classes_ = np.array(doc["classes"])
    model.n_places_ = doc["n_places"]
    model.params_ = SimulationParams.from_dict(doc["params"])
    model.n_features_in_ = model.params_.k_p
    model.theta_threshold_ = doc["theta_threshold"]
    model.partitions_ = [m.trained_place_ids for m in modules]
    model._set_modules(modules)
    _check_partition(model)
    return model


def _check_partition(model: ModularSNN) -> None:
    ids = np.concatenate([m.trained_place_ids for m in model.modules_])
    if not np.array_equal(np.sort(ids), np.arange(model.n_places_)):
        raise ArtifactError("module partitions do not cover the places exactly once")


def save_ensemble(ensemble, path: str | Path, extra: dict | None = None) -> Path:
    folder = Path(path)
    folder.mkdir(parents=True, exist_ok=True)
    members = []
    for i, member in enumerate(ensemble.members_):
        name = f"member_{i:03d}"
        save_modular(member, folder / name)
        members.append({"dir": name,
                        "checksum": json.loads((folder / name / "index.json").read_text())["checksum"]})
    doc = {
        "kind": "ensemble",
        "estimator": _estimator_params(ensemble),
        "config": None if ensemble.config_ is None else ensemble.config_.to_dict(),
        "members": members,
        "extra": extra or {},
    }
    _write_doc(folder / "ensemble.json", doc)
    return folder


def load_ensemble(path: str | Path):
    from .ensemble import EnsembleConfig, EnsembleModularSNN

    folder = Path(path)
    doc = _read_doc(folder / "ensemble.json", "ensemble")
    members = [load_modular(folder / m["dir"]) for m in doc["members"]]
    params = dict(doc["estimator"])
    params.pop("member_count", None)
    if isinstance(params.get("theta_range"), list):
        params["theta_range"] = tuple(params["theta_range"])
    config = None if doc["config"] is None else EnsembleConfig.from_dict(doc["config"])
    return EnsembleModularSNN.from_members(members, config, **params)


def read_ensemble_extra(path: str | Path) -> dict:
    return _read_doc(Path(path) / "ensemble.json", "ensemble")["extra"]


# -- matrices ---------------------------------------------------------------

def save_matrix(path: str | Path, matrix, method: str = "", row_axis: str = "reference",
                col_axis: str = "query", extra: dict | None = None) -> Path:
    """Write ``matrix`` as CSV (``.csv`` suffix) or JSON header plus ``.bin`` blob."""
    path = Path(path)
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2:
        raise DataError("only 2-D matrices can be saved")
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".csv":
        np.savetxt(path, M, delimiter=",", fmt="%.17g")
        return path
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    data = np.ascontiguousarray(M.astype(_DTYPE)).tobytes()
    blob = path.with_suffix(".bin")
    blob.write_bytes(data)
    header = {
        "kind": "matrix",
        "shape": list(M.shape),
        "dtype": _DTYPE,
        "order": "row-major",
        "file": blob.name,
        "sha256": sha256_bytes(data),
        "axes": {"rows": row_axis, "columns": col_axis},
        "method": method,
        "extra": extra or {},
    }
    _write_doc(path, header)
    return path


def load_matrix(path: str | Path, with_header: bool = False):
    path = Path(path)
    if path.suffix == ".csv":
        try:
            M = np.loadtxt(path, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read matrix {path}: {exc}") from exc
        header = {"shape": list(M.shape), "method": path.stem, "axes": {"rows": "reference", "columns": "query"}}
        return (M, header) if with_header else M
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    header = _read_doc(path, "matrix")
    M = _read_blob(path.parent, header)
    return (M, header) if with_header else M
