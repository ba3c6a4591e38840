"""INI-style experiment configuration files.

Layout::

    [experiment]
    n_nodes = 20          dim = 5          rounds = 2000    trials = 100
    seed = 1              topology = circle               edge_prob = 0.3
    rule = metropolis     strategy = diffusion            eval_every = 1
    check_bounds = false  bound_g = (unset: use empirical max gradient norm)

    [loss]
    family = squared      lambda = 0.01 (or "1/T")        radius = 10 (or inf)

    [data]
    source = synthetic    noise_var = 0.1  snr_db_min = -15  snr_db_max = 10
    # source = dataset:   path, partition, normalize, positive_label, reference_iters

    [algorithm.<label>]
    kind = tvw|uw|vss|css (defaults to <label>)
    step_size = 0.05      (css only)
    strategy = diffusion|consensus (defaults to [experiment] strategy)

A ``[manifest]`` section is ignored on load, so a run manifest can be fed
back in as a config.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

from distsgd.errors import ConfigError, DistSGDError
from distsgd.losses import LossModel
from distsgd.netgraph import TOPOLOGY_KINDS
from distsgd.sim import DatasetSource, ExperimentConfig, SyntheticSource
from distsgd.strategies import ALGORITHM_KINDS, AlgorithmSpec

EXPERIMENT_KEYS = {
    "n_nodes", "dim", "rounds", "trials", "seed", "topology", "edge_prob", "rule",
    "strategy", "eval_every", "check_bounds", "bound_g",
}
LOSS_KEYS = {"family", "lambda", "radius"}
DATA_KEYS = {
    "source", "noise_var", "snr_db_min", "snr_db_max",
    "path", "partition", "normalize", "positive_label", "reference_iters",
}
ALGORITHM_KEYS = {"kind", "step_size", "strategy"}


@dataclass(frozen=True)
class RunConfig:
    """A parsed config file: one experiment per ``[algorithm.*]`` section."""

    experiments: tuple
    check_bounds: bool = False
    bound_g: float | None = None

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.experiments]


def _get(section, key: str, conv, default, where: str):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except (ValueError, DistSGDError) as exc:
        raise ConfigError(f"{where}.{key}", f"bad value {raw!r} ({exc})") from None


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _float_or_inf(raw: str) -> float:
    return math.inf if raw.lower() in ("inf", "infinity") else float(raw)


def _check_keys(section, allowed: set, where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}", "unknown key")


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None

    for name in cp.sections():
        if name not in ("experiment", "loss", "data", "manifest") and not name.startswith("algorithm."):
            raise ConfigError(name, "unknown section")
    if "experiment" not in cp:
        raise ConfigError("experiment", "missing section")

    ex = cp["experiment"]
    _check_keys(ex, EXPERIMENT_KEYS, "experiment")
    rounds = _get(ex, "rounds", int, 1000, "experiment")
    common = dict(
        n_nodes=_get(ex, "n_nodes", int, 20, "experiment"),
        dim=_get(ex, "dim", int, 5, "experiment"),
        rounds=rounds,
        trials=_get(ex, "trials", int, 1, "experiment"),
        master_seed=_get(ex, "seed", int, 0, "experiment"),
        topology=_get(ex, "topology", str, "circle", "experiment"),
        edge_prob=_get(ex, "edge_prob", float, 0.3, "experiment"),
        rule=_get(ex, "rule", str, "metropolis", "experiment"),
        eval_every=_get(ex, "eval_every", int, 1, "experiment"),
    )
    default_strategy = _get(ex, "strategy", str, "diffusion", "experiment")
    if common["topology"] not in TOPOLOGY_KINDS:
        raise ConfigError("experiment.topology", f"unknown kind {common['topology']!r}; expected {'|'.join(TOPOLOGY_KINDS)}")

    ls = cp["loss"] if "loss" in cp else {}
    _check_keys(ls, LOSS_KEYS, "loss")

    def lam_conv(raw: str) -> float:
        if raw.replace(" ", "").upper() == "1/T":
            return 1.0 / rounds
        return float(raw)

    loss = _build("loss", LossModel,
                  family=_get(ls, "family", str, "squared", "loss"),
                  lam=_get(ls, "lambda", lam_conv, 0.01, "loss"),
                  radius=_get(ls, "radius", _float_or_inf, 10.0, "loss"))

    ds = cp["data"] if "data" in cp else {}
    _check_keys(ds, DATA_KEYS, "data")
    source = _get(ds, "source", str, "synthetic", "data")
    if source == "synthetic":
        data = SyntheticSource(
            noise_var=_get(ds, "noise_var", float, 0.1, "data"),
            snr_db_range=(_get(ds, "snr_db_min", float, -15.0, "data"), _get(ds, "snr_db_max", float, 10.0, "data")),
        )
    elif source == "dataset":
        if "path" not in ds:
            raise ConfigError("data.path", "required when source = dataset")
        path = Path(ds["path"].strip())
        if base_dir is not None and not path.is_absolute():
            # absolute, so a manifest copied elsewhere still points at the file
            path = (base_dir / path).resolve()
        pos = _get(ds, "positive_label", float, None, "data")
        data = DatasetSource(
            path=str(path),
            partition=_get(ds, "partition", str, "shuffled", "data"),
            normalize=_get(ds, "normalize", str, "unit_norm", "data"),
            positive_label=pos,
            reference_iters=_get(ds, "reference_iters", int, 20_000, "data"),
        )
        if data.partition not in ("round_robin", "shuffled"):
            raise ConfigError("data.partition", f"unknown rule {data.partition!r}")
        if data.normalize not in ("none", "unit_norm", "standardize"):
            raise ConfigError("data.normalize", f"unknown mode {data.normalize!r}")
        if "eval_every" not in ex:
            common["eval_every"] = max(1, rounds // 100)
    else:
        raise ConfigError("data.source", f"unknown source {source!r}; expected synthetic or dataset")

    experiments = []
    for name in cp.sections():
        if not name.startswith("algorithm."):
            continue
        label = name.split(".", 1)[1]
        sec = cp[name]
        for key in sec:
            if key in EXPERIMENT_KEYS - {"strategy"} or key in LOSS_KEYS or key in DATA_KEYS:
                raise ConfigError(f"{name}.{key}", "shared field cannot differ between algorithms")
        _check_keys(sec, ALGORITHM_KEYS, name)
        kind = _get(sec, "kind", str, label, name)
        step = _get(sec, "step_size", float, None, name)
        if kind == "css" and (step is None or not step >= 0):
            raise ConfigError(f"{name}.step_size", "css needs a nonnegative step_size")
        spec = _build(f"{name}.kind" if "kind" in sec or kind not in ALGORITHM_KINDS else name, AlgorithmSpec,
                      kind=kind,
                      strategy=_get(sec, "strategy", str, default_strategy, name),
                      step_size=step)
        experiments.append(_build(name, ExperimentConfig, algorithm=spec, loss=loss, data=data, label=label, **common))
    if not experiments:
        raise ConfigError("algorithm", "at least one [algorithm.<label>] section is required")
    return RunConfig(
        tuple(experiments),
        check_bounds=_get(ex, "check_bounds", _bool, False, "experiment"),
        bound_g=_get(ex, "bound_g", float, None, "experiment"),
    )


def _build(where: str, cls, **kwargs):
    try:
        return cls(**kwargs)
    except DistSGDError as exc:
        raise ConfigError(where, str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config ({exc.strerror})") from None
    return parse_config(text, base_dir=path.parent)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def render_config(rc: RunConfig) -> str:
    """Canonical INI text for ``rc``; parsing it back yields an equal config."""
    first = rc.experiments[0]
    lines = ["[experiment]"]
    ex = {
        "n_nodes": first.n_nodes, "dim": first.dim, "rounds": first.rounds, "trials": first.trials,
        "seed": first.master_seed, "topology": first.topology, "edge_prob": first.edge_prob,
        "rule": first.rule, "eval_every": first.eval_every,
        "check_bounds": "true" if rc.check_bounds else "false",
    }
    if rc.bound_g is not None:
        ex["bound_g"] = rc.bound_g
    lines += [f"{k} = {_fmt(v)}" for k, v in ex.items()]
    lines += ["", "[loss]", f"family = {first.loss.family}", f"lambda = {_fmt(first.loss.lam)}",
              f"radius = {_fmt(first.loss.radius)}", "", "[data]"]
    data = first.data
    if isinstance(data, SyntheticSource):
        lines += ["source = synthetic", f"noise_var = {_fmt(data.noise_var)}",
                  f"snr_db_min = {_fmt(float(data.snr_db_range[0]))}",
                  f"snr_db_max = {_fmt(float(data.snr_db_range[1]))}"]
    else:
        lines += ["source = dataset", f"path = {data.path}", f"partition = {data.partition}",
                  f"normalize = {data.normalize}", f"reference_iters = {data.reference_iters}"]
        if data.positive_label is not None:
            lines.append(f"positive_label = {_fmt(data.positive_label)}")
    for e in rc.experiments:
        lines += ["", f"[algorithm.{e.label}]", f"kind = {e.algorithm.kind}", f"strategy = {e.algorithm.strategy}"]
        if e.algorithm.step_size is not None:
            lines.append(f"step_size = {_fmt(e.algorithm.step_size)}")
    return "\n".join(lines) + "\n"

