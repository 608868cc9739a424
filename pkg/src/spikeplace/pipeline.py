"""prepare / train / infer / evaluate / report steps behind the CLI."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .config import ExperimentConfig
from .data import load_datasets, load_manifest
from .ensemble import EnsembleConfig, EnsembleModularSNN, make_member
from .exceptions import ArtifactError, ConfigError, DataError
from .matching import (evaluate_distance, ground_truth_matrix, minmax_normalize, recall_at_n,
                       sequence_match, similarity_to_distance)
from .modular import _chunks, modular_similarity_column
from .persistence import (load_ensemble, load_matrix, load_module, read_ensemble_extra, save_ensemble,
                          save_matrix, save_module)

logger = logging.getLogger(__name__)

CACHE_DIR = "cache"
MODEL_DIR = "model"
INFER_DIR = "infer"


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- prepare ----------------------------------------------------------------

def cmd_prepare(config: ExperimentConfig) -> dict:
    """Preprocess every manifest image once into ``out/cache``.

    Reruns on an unchanged manifest (same file bytes, same images) are
    cache hits and recompute nothing.
    """
    if config.manifest is None:
        raise ConfigError("config has no manifest")
    manifest_path = config.resolve(config.manifest)
    manifest = load_manifest(manifest_path)
    missing = [str(p) for p in [*manifest.reference, *manifest.query] if not p.is_file()]
    if missing:
        raise DataError("missing images:\n  " + "\n  ".join(missing))
    digests = {
        "manifest": _file_digest(manifest_path),
        "reference": [_file_digest(p) for p in manifest.reference],
        "query": [_file_digest(p) for p in manifest.query],
    }
    cache = config.out_dir / CACHE_DIR
    index = cache / "cache.json"
    if index.exists():
        try:
            old = json.loads(index.read_text())
            if old.get("digests") == digests:
                load_matrix(cache / "reference.json")
                load_matrix(cache / "query.json")
                return {"cache_hit": True, "cache": str(cache), **_cache_counts(old)}
        except (json.JSONDecodeError, ArtifactError, DataError):
            logger.info("stale or corrupt cache, rebuilding")

    ref, qry = load_datasets(manifest)
    cache.mkdir(parents=True, exist_ok=True)
    save_matrix(cache / "reference.json", ref.images, method="reference", row_axis="place", col_axis="pixel")
    save_matrix(cache / "query.json", qry.images, method="query", row_axis="query", col_axis="pixel")
    doc = {
        "name": manifest.name,
        "n_reference": len(ref),
        "n_query": len(qry),
        "ground_truth": qry.ground_truth.tolist(),
        "preprocess": {"width": manifest.width, "height": manifest.height, "patch": manifest.patch},
        "digests": digests,
    }
    _write_json(index, doc)
    return {"cache_hit": False, "cache": str(cache), **_cache_counts(doc)}


def _cache_counts(doc: dict) -> dict:
    return {"n_reference": doc["n_reference"], "n_query": doc["n_query"]}


def load_cache(cache: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    doc = json.loads((cache / "cache.json").read_text())
    return (load_matrix(cache / "reference.json"), load_matrix(cache / "query.json"),
            np.array(doc["ground_truth"], dtype=np.int64), doc)


# -- train ------------------------------------------------------------------

def _ensemble_config(config: ExperimentConfig) -> EnsembleConfig:
    e = config.ensemble
    return EnsembleConfig.from_master_seed(config.seed, e.member_count, e.randomize_weights, e.shuffle_order)


def _member_kwargs(config: ExperimentConfig) -> dict:
    return dict(kappa=config.kappa, epochs=config.epochs, params=config.params or None,
                theta_range=config.theta_range_tuple(),
                hyperactive_subsample=config.hyperactive_subsample)


def _timed(task):
    func, args, kwargs = task
    t0 = time.perf_counter()
    result = func(*args, **kwargs)
    return result, time.perf_counter() - t0


def cmd_train(config: ExperimentConfig) -> dict:
    """Train all members x modules and persist the ensemble artifact.

    Finished modules are written as they complete and listed in
    ``train_state.json``; an interrupted run resumes from there.
    """
    cmd_prepare(config)
    out = config.out_dir
    X, _, _, _ = load_cache(out / CACHE_DIR)
    ens_config = _ensemble_config(config)
    chash = config.config_hash()
    members = [make_member(ens_config, m, **_member_kwargs(config)) for m in range(ens_config.member_count)]

    staging = out / "train_staging"
    state_path = out / "train_state.json"
    state = {"config_hash": chash, "completed": {}}
    if state_path.exists():
        old = json.loads(state_path.read_text())
        if old.get("config_hash") == chash:
            state = old

    jobs, keys, wall = [], [], {}
    member_tasks = [member._fit_tasks(X) for member in members]
    resumed = {}
    for m, tasks in enumerate(member_tasks):
        for k, task in enumerate(tasks):
            key = f"member_{m:03d}/module_{k:03d}"
            if key in state["completed"]:
                try:
                    resumed[key] = load_module(staging / key)
                    continue
                except ArtifactError:
                    logger.warning("discarding unreadable staged module %s", key)
            jobs.append(task)
            keys.append(key)

    t_start = time.perf_counter()
    results = Parallel(n_jobs=config.workers, return_as="generator")(
        delayed(_timed)(task) for task in jobs)
    finished = dict(resumed)
    for key, (module, seconds) in zip(keys, results):
        save_module(module, staging / key)
        finished[key] = module
        wall[key] = seconds
        state["completed"][key] = True
        _write_json(state_path, state)

    for m, member in enumerate(members):
        member._set_modules([finished[f"member_{m:03d}/module_{k:03d}"] for k in range(len(member_tasks[m]))])
    ensemble = EnsembleModularSNN.from_members(members, ens_config, seed=config.seed,
                                               randomize_weights=ens_config.randomize_weights,
                                               shuffle_order=ens_config.shuffle_order,
                                               **_member_kwargs(config))
    model_dir = save_ensemble(ensemble, out / MODEL_DIR, extra={"config_hash": chash})
    log = {
        "config_hash": chash,
        "members": [member.training_summary() for member in members],
        "module_wall_seconds": wall,
        "resumed_modules": sorted(resumed),
        "total_wall_seconds": time.perf_counter() - t_start,
    }
    _write_json(out / "training_log.json", log)
    return {"model": str(model_dir), "members": len(members),
            "modules_per_member": [m.n_modules_ for m in members]}


# -- infer ------------------------------------------------------------------

def _infer_chunk(members, X, start):
    cols, lat = [], []
    for i, x in enumerate(X):
        t0 = time.perf_counter()
        cols.append([modular_similarity_column(m.modules_, m.n_places_, x, m.query_seed, start + i)
                     for m in members])
        lat.append(time.perf_counter() - t0)
    return np.array(cols), lat


def infer_similarity(ensemble: EnsembleModularSNN, Q: np.ndarray, workers: int = 1):
    """Member similarity matrices (M, n_ref, n_query) and per-query latencies."""
    parts = Parallel(n_jobs=workers, max_nbytes=None)(
        delayed(_infer_chunk)(ensemble.members_, Q[s], s.start) for s in _chunks(len(Q), workers))
    cols = np.concatenate([p[0] for p in parts])  # (n_query, M, n_ref)
    latency = [t for p in parts for t in p[1]]
    return cols.transpose(1, 2, 0), latency


def cmd_infer(config: ExperimentConfig, model_dir: Path | None = None, cache_dir: Path | None = None) -> dict:
    out = config.out_dir
    model_dir = model_dir or out / MODEL_DIR
    cache_dir = cache_dir or out / CACHE_DIR
    ensemble = load_ensemble(model_dir)
    chash = read_ensemble_extra(model_dir).get("config_hash")
    _, Q, _, _ = load_cache(cache_dir)
    if Q.shape[1] != ensemble.n_features_in_:
        raise DataError(f"query images have {Q.shape[1]} pixels, model expects {ensemble.n_features_in_}")
    member_S, latency = infer_similarity(ensemble, Q, config.workers)
    S = member_S.sum(axis=0)
    D = similarity_to_distance(S)
    infer_dir = out / INFER_DIR
    meta = {"config_hash": chash, "member_count": len(member_S)}
    save_matrix(infer_dir / "similarity.json", S, method=config.method, extra=meta)
    save_matrix(infer_dir / "distance.json", D, method=config.method, extra=meta)
    for m, Sm in enumerate(member_S):
        extra = {"config_hash": chash, "member_count": 1, "member": m}
        save_matrix(infer_dir / "members" / f"similarity_{m:03d}.json", Sm, method=f"member_{m:03d}", extra=extra)
        save_matrix(infer_dir / "members" / f"distance_{m:03d}.json", similarity_to_distance(Sm),
                    method=f"member_{m:03d}", extra=extra)
    n_modules = sum(len(m.modules_) for m in ensemble.members_)
    _write_json(infer_dir / "latency.json", {
        "per_query_seconds": latency,
        "cumulative_count": list(range(1, len(latency) + 1)),
        "mean_seconds": float(np.mean(latency)) if latency else 0.0,
        "modules": n_modules,
    })
    return {"similarity": str(infer_dir / "similarity.json"), "distance": str(infer_dir / "distance.json"),
            "shape": list(S.shape), "queries": len(latency)}


# -- evaluate ---------------------------------------------------------------

def load_ground_truth(path: Path, n_reference: int | None = None, tolerance: int = 0) -> np.ndarray:
    """GT grid from a prepared cache (dir or cache.json) or from a matrix file."""
    path = Path(path)
    if path.is_dir():
        path = path / "cache.json"
    if path.name == "cache.json":
        doc = json.loads(path.read_text())
        return ground_truth_matrix(doc["n_reference"], doc["ground_truth"], tolerance)
    G = load_matrix(path)
    if tolerance:
        rows = [int(np.flatnonzero(c)[0]) if c.any() else -1 for c in G.T]
        return ground_truth_matrix(G.shape[0], rows, tolerance)
    return (G != 0).astype(np.uint8)


def evaluate_matrices(named: Sequence[tuple[str, np.ndarray, dict]], GT: np.ndarray,
                      seq_lengths, recall_n, boundary: str) -> dict:
    methods = {}
    for name, D, extra in named:
        if D.shape != GT.shape:
            raise DataError(f"{name}: distance shape {D.shape} does not match ground truth {GT.shape}")
        res = evaluate_distance(D, GT, seq_lengths, recall_n, boundary)
        res["member_count"] = extra.get("member_count")
        res["config_hash"] = extra.get("config_hash")
        methods[name] = res
    return methods


def metrics_csv(methods: dict, seq_lengths, recall_n) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = [f"SL{s}_R@{n}" for s in seq_lengths for n in recall_n]
    writer.writerow(["method", *cols, "sparsity_mean_gap"])
    for name, res in methods.items():
        row = [name]
        for s in seq_lengths:
            for n in recall_n:
                v = res["recall"][f"SL{s}"].get(f"R@{n}")
                row.append("" if v is None else repr(v))
        gap = res["sparsity"]["mean_gap"]
        row.append("" if gap is None else repr(gap))
        writer.writerow(row)
    return buf.getvalue()


def cmd_evaluate(config: ExperimentConfig, distance_paths: Sequence[Path], gt_path: Path,
                 out_dir: Path | None = None) -> dict:
    named = []
    for p in distance_paths:
        D, header = load_matrix(p, with_header=True)
        name = header.get("method") or Path(p).stem
        if any(name == n for n, _, _ in named):
            name = f"{name}:{Path(p).stem}"
        named.append((name, D, header.get("extra", {})))
    if not named:
        raise ConfigError("no distance matrices given")
    GT = load_ground_truth(gt_path, named[0][1].shape[0], config.gt_tolerance)
    methods = evaluate_matrices(named, GT, config.seq_lengths, config.recall_n, config.boundary)
    series = {
        "r1_by_sequence_length": {name: [res["recall"][f"SL{s}"].get("R@1") for s in config.seq_lengths]
                                  for name, res in methods.items()},
        "sequence_lengths": list(config.seq_lengths),
        "sparsity_log": {name: res["sparsity"]["log"] for name, res in methods.items()},
    }
    doc = {
        "seq_lengths": list(config.seq_lengths),
        "recall_n": list(config.recall_n),
        "boundary": config.boundary,
        "gt_tolerance": config.gt_tolerance,
        "methods": methods,
        "plot_series": series,
    }
    out = Path(out_dir) if out_dir is not None else config.out_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "metrics.csv").write_text(metrics_csv(methods, config.seq_lengths, config.recall_n))
    return doc


# -- report -----------------------------------------------------------------

def ablation_grid(single: dict, ensemble: dict, seq_len: int = 4) -> list[dict]:
    """The four Mod / Mod+Ens / Mod+Seq / Mod+Ens+Seq R@1 values and deltas."""
    def r1(res, sl):
        key = f"SL{sl}"
        if key not in res["recall"]:
            raise DataError(f"metrics lack sequence length {sl}")
        return res["recall"][key]["R@1"]

    base = r1(single, 1)
    rows = [
        ("Mod", r1(single, 1)),
        ("Mod+Ens", r1(ensemble, 1)),
        (f"Mod+Seq(SL{seq_len})", r1(single, seq_len)),
        (f"Mod+Ens+Seq(SL{seq_len})", r1(ensemble, seq_len)),
    ]
    return [{"condition": c, "R@1": v, "delta": v - base} for c, v in rows]


def commutativity_check(member_similarities: Sequence[np.ndarray], GT: np.ndarray, seq_len: int,
                        boundary: str = "truncate-rescale") -> dict:
    """R@1 of ensembling-then-sequence-matching versus the reverse order."""
    ens_then_seq = sequence_match(similarity_to_distance(np.sum(member_similarities, axis=0)), seq_len, boundary)
    seq_then_ens = np.sum([sequence_match(similarity_to_distance(S), seq_len, boundary)
                           for S in member_similarities], axis=0)
    a, b = recall_at_n(ens_then_seq, GT, 1), recall_at_n(seq_then_ens, GT, 1)
    return {"seq_len": seq_len, "ens_then_seq": a, "seq_then_ens": b, "equal": a == b}


def sparsity_scatter(metrics_docs: Sequence[tuple[str, dict]], seq_len: int = 4) -> list[dict]:
    """Fig. 5-style points: normalized log sparsity versus the SL/SL1 R@1 ratio.

    Normalization runs over all methods sharing a dataset label.
    """
    points = []
    for dataset, doc in metrics_docs:
        for name, res in doc["methods"].items():
            r1 = res["recall"]["SL1"]["R@1"]
            rs = res["recall"].get(f"SL{seq_len}", {}).get("R@1")
            points.append({"dataset": dataset, "method": name, "log_sparsity": res["sparsity"]["log"],
                           "ratio": None if (rs is None or r1 == 0) else rs / r1})
    for dataset in {p["dataset"] for p in points}:
        group = [p for p in points if p["dataset"] == dataset and p["log_sparsity"] is not None]
        for p, v in zip(group, minmax_normalize([p["log_sparsity"] for p in group])):
            p["normalized_sparsity"] = float(v)
    return points


def cmd_report(metrics_paths: Sequence[Path], out_dir: Path, single: str | None = None,
               ensemble: str | None = None, seq_len: int = 4, commutativity: dict | None = None) -> dict:
    docs = []
    for p in metrics_paths:
        p = Path(p)
        docs.append((p.parent.name or p.stem, json.loads(p.read_text())))
    rows = []
    for dataset, doc in docs:
        for name, res in doc["methods"].items():
            rows.append({"dataset": dataset, "method": name,
                         **{sl: v.get("R@1") for sl, v in res["recall"].items()}})
    grid = None
    if single and ensemble:
        merged = {name: res for _, doc in docs for name, res in doc["methods"].items()}
        if single not in merged or ensemble not in merged:
            raise DataError(f"report needs metrics for {single!r} and {ensemble!r}")
        grid = ablation_grid(merged[single], merged[ensemble], seq_len)

    lines = ["# Evaluation report", "", "## R@1 by sequence length", ""]
    sls = sorted({k for r in rows for k in r if k.startswith("SL")}, key=lambda s: int(s[2:]))
    lines.append("| dataset | method | " + " | ".join(sls) + " |")
    lines.append("|---|---|" + "---|" * len(sls))
    for r in rows:
        cells = ["" if r.get(s) is None else f"{r[s]:.3f}" for s in sls]
        lines.append(f"| {r['dataset']} | {r['method']} | " + " | ".join(cells) + " |")
    if grid:
        lines += ["", "## Component ablation", "", "| condition | R@1 | delta vs Mod |", "|---|---|---|"]
        lines += [f"| {g['condition']} | {g['R@1']:.3f} | {g['delta']:+.3f} |" for g in grid]
    if commutativity:
        lines += ["", f"Ens->Seq R@1 {commutativity['ens_then_seq']:.3f}, "
                      f"Seq->Ens R@1 {commutativity['seq_then_ens']:.3f} "
                      f"({'equal' if commutativity['equal'] else 'DIFFERENT'})"]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.md").write_text("\n".join(lines) + "\n")
    scatter = sparsity_scatter(docs, seq_len)
    result = {"rows": rows, "ablation": grid, "sparsity_scatter": scatter, "commutativity": commutativity}
    _write_json(out_dir / "report.json", result)
    if grid:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "R@1", "delta"])
        for g in grid:
            w.writerow([g["condition"], repr(g["R@1"]), repr(g["delta"])])
        (out_dir / "ablation.csv").write_text(buf.getvalue())
    return result
