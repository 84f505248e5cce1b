"""Dataset directories, checkpoints, and sweep traces on disk.

Matrices travel as comma-separated text with shortest round-trip decimal
formatting, so writing and re-reading reproduces every float64 bitwise.
Metadata is versioned JSON; loaders check the format tag and version and
cross-validate array shapes so a stale or hand-edited file fails loudly
instead of corrupting a run.
"""

import json
import os

import numpy as np

from .errors import DataError, UsageError
from .model import GroupedDataset, Hyperparameters, VariationalState
from .simdata import SparsityPattern

DATASET_FORMAT = "cvgfa-dataset"
CHECKPOINT_FORMAT = "cvgfa-checkpoint"
FORMAT_VERSION = 1
TRACE_HEADER = "sweep,objective,train_mse,k_active"

HYPER_FIELDS = ("K", "kappa0", "c0", "d0", "e0", "f0", "g0", "h0")


def write_matrix_csv(path, array):
    a = np.atleast_2d(np.asarray(array, dtype=float))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in a:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_matrix_csv(path):
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except (OSError, ValueError) as err:
        raise DataError(f"cannot read matrix file {path}: {err}") from None


def read_vector_csv(path):
    """One value per line (or one row of comma-separated values)."""
    m = read_matrix_csv(path)
    if 1 not in m.shape:
        raise DataError(f"{path} does not hold a single row or column")
    return m.ravel()


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path, expected_format):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise DataError(f"{path} is not valid JSON: {err}") from None
    if not isinstance(obj, dict) or obj.get("format") != expected_format:
        raise DataError(f"{path} is not a {expected_format} file")
    if obj.get("version") != FORMAT_VERSION:
        raise DataError(
            f"{path} has schema version {obj.get('version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    return obj


def group_data_filename(name: str) -> str:
    return f"group_{name}.csv"


def truth_filename(name: str) -> str:
    return f"truth_{name}.csv"


def write_pattern(path, pattern: SparsityPattern):
    write_json(
        path,
        {
            "format": DATASET_FORMAT,
            "version": FORMAT_VERSION,
            "entries": pattern.entries,
        },
    )


def read_pattern(path) -> SparsityPattern:
    obj = _read_json(path, DATASET_FORMAT)
    entries = obj.get("entries")
    if not isinstance(entries, list):
        raise DataError(f"{path} has no pattern entries")
    pattern = SparsityPattern(entries=[list(row) for row in entries])
    try:
        pattern.validate()
    except UsageError as err:
        # a bad file is a data problem, not a caller mistake
        raise DataError(f"{path}: {err}") from None
    return pattern


def write_dataset(out_dir, data: GroupedDataset, truth=None, generator=None):
    """Write manifest.json plus one data CSV per group.

    With a SimulationTruth, also writes per-group true-loading CSVs, the
    shared factor matrix, and pattern.json; generator metadata (seed and
    variance conventions) lands in the manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    groups_meta = []
    for m, name in enumerate(data.group_names):
        fname = group_data_filename(name)
        write_matrix_csv(os.path.join(out_dir, fname), data.groups[m])
        entry = {
            "name": name,
            "n_columns": int(data.groups[m].shape[1]),
            "data_file": fname,
            "truth_file": None,
        }
        if truth is not None:
            tname = truth_filename(name)
            write_matrix_csv(os.path.join(out_dir, tname), truth.loadings[m])
            entry["truth_file"] = tname
        groups_meta.append(entry)

    manifest = {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "n_samples": int(data.n_samples),
        "groups": groups_meta,
        "generator": None,
    }
    if truth is not None:
        write_pattern(os.path.join(out_dir, "pattern.json"), truth.pattern)
        write_matrix_csv(os.path.join(out_dir, "truth_factors.csv"), truth.factors)
        gen = dict(generator or {})
        gen.setdefault("n_factors", int(truth.factors.shape[1]))
        gen["pattern_file"] = "pattern.json"
        gen["factors_file"] = "truth_factors.csv"
        manifest["generator"] = gen
    elif generator is not None:
        manifest["generator"] = dict(generator)
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return os.path.join(out_dir, "manifest.json")


def read_dataset(path):
    """Load a dataset directory; returns (GroupedDataset, manifest dict)."""
    manifest = _read_json(os.path.join(path, "manifest.json"), DATASET_FORMAT)
    n = manifest.get("n_samples")
    entries = manifest.get("groups")
    if not isinstance(entries, list) or not entries:
        raise DataError(f"{path}: manifest lists no groups")
    groups, names = [], []
    for entry in entries:
        name = entry.get("name")
        fname = entry.get("data_file")
        if not name or not fname:
            raise DataError(f"{path}: malformed group entry in manifest")
        x = read_matrix_csv(os.path.join(path, fname))
        if x.shape != (int(n), int(entry.get("n_columns", -1))):
            raise DataError(
                f"{path}: {fname} is {x.shape[0]}x{x.shape[1]}, manifest "
                f"says {n}x{entry.get('n_columns')}"
            )
        groups.append(x)
        names.append(str(name))
    data = GroupedDataset(groups, names).validate()
    return data, manifest


def read_truth(path, manifest=None):
    """True loadings, pattern, and factors for a simulated dataset directory.

    Returns (loadings list, SparsityPattern, factors array); raises
    DataError when the directory was not written with truth files.
    """
    if manifest is None:
        manifest = _read_json(os.path.join(path, "manifest.json"), DATASET_FORMAT)
    gen = manifest.get("generator")
    if not gen or not gen.get("pattern_file"):
        raise DataError(f"{path} holds no simulation truth")
    pattern = read_pattern(os.path.join(path, gen["pattern_file"]))
    factors = read_matrix_csv(os.path.join(path, gen["factors_file"]))
    loadings = []
    for entry in manifest["groups"]:
        tname = entry.get("truth_file")
        if not tname:
            raise DataError(f"{path}: group {entry.get('name')} has no truth file")
        loadings.append(read_matrix_csv(os.path.join(path, tname)))
    return loadings, pattern, factors


def _state_to_jsonable(state: VariationalState):
    def per_group(arrs):
        return [a.tolist() for a in arrs]

    return {
        "rho": per_group(state.rho),
        "w_mean": per_group(state.w_mean),
        "w_var": per_group(state.w_var),
        "f_mean": state.f_mean.tolist(),
        "f_var": state.f_var.tolist(),
        "beta_a": state.beta_a.tolist(),
        "beta_b": state.beta_b.tolist(),
        "lambda_shape": per_group(state.lambda_shape),
        "lambda_rate": per_group(state.lambda_rate),
        "tau_shape": per_group(state.tau_shape),
        "tau_rate": per_group(state.tau_rate),
        "alpha_shape": state.alpha_shape.tolist(),
        "alpha_rate": state.alpha_rate.tolist(),
        "aux_s_mean": state.aux_s_mean.tolist(),
        "aux_t_mean": state.aux_t_mean.tolist(),
        "eta_log_mean": state.eta_log_mean.tolist(),
    }


def _state_from_jsonable(obj) -> VariationalState:
    def lists(key):
        return [np.array(a, dtype=float) for a in obj[key]]

    def arr(key):
        return np.array(obj[key], dtype=float)

    try:
        state = VariationalState(
            rho=lists("rho"),
            w_mean=lists("w_mean"),
            w_var=lists("w_var"),
            f_mean=arr("f_mean"),
            f_var=arr("f_var"),
            beta_a=arr("beta_a"),
            beta_b=arr("beta_b"),
            lambda_shape=lists("lambda_shape"),
            lambda_rate=lists("lambda_rate"),
            tau_shape=lists("tau_shape"),
            tau_rate=lists("tau_rate"),
            alpha_shape=arr("alpha_shape"),
            alpha_rate=arr("alpha_rate"),
            aux_s_mean=arr("aux_s_mean"),
            aux_t_mean=arr("aux_t_mean"),
            eta_log_mean=arr("eta_log_mean"),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise DataError(f"malformed checkpoint state: {err}") from None
    return state


def write_checkpoint(path, state, hyper: Hyperparameters, fit_info=None, group_names=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "hyperparameters": {f: getattr(hyper, f) for f in HYPER_FIELDS},
        "group_names": list(group_names) if group_names else None,
        "fit": dict(fit_info or {}),
        "state": _state_to_jsonable(state),
    }
    payload["hyperparameters"]["K"] = int(hyper.K)
    write_json(path, payload)


def read_checkpoint(path):
    """Returns (VariationalState, Hyperparameters, info dict)."""
    obj = _read_json(path, CHECKPOINT_FORMAT)
    hp = obj.get("hyperparameters")
    if not isinstance(hp, dict) or any(f not in hp for f in HYPER_FIELDS):
        raise DataError(f"{path}: incomplete hyperparameters")
    hyper = Hyperparameters(**{f: hp[f] for f in HYPER_FIELDS})
    if not isinstance(obj.get("state"), dict):
        raise DataError(f"{path}: missing state block")
    state = _state_from_jsonable(obj["state"])
    state.validate()
    info = {
        "fit": obj.get("fit") or {},
        "group_names": obj.get("group_names"),
    }
    return state, hyper, info


def write_trace(path, trace):
    """trace.csv from fit trace rows; sweep numbering starts at 1."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for sweep, (objective, mse, k_active) in enumerate(trace, start=1):
            fh.write(
                f"{sweep},{repr(float(objective))},"
                f"{repr(float(mse))},{int(k_active)}\n"
            )


def read_trace(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from None
    if not lines or lines[0] != TRACE_HEADER:
        raise DataError(f"{path} lacks the expected trace header")
    rows = []
    for line in lines[1:]:
        sweep, objective, mse, k_active = line.split(",")
        rows.append((int(sweep), float(objective), float(mse), int(k_active)))
    return rows
