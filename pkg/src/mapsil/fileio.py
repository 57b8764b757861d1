"""Binary demo datasets, model checkpoints, JSON configs and CSV/SVG reports.

All integers are unsigned 32-bit little-endian, all reals 64-bit little-endian.

Demo file::

    b"MAPSDEMO" | version | state_dim | action_dim | K | n_traj
    per trajectory: task | length | length * (state_dim + action_dim) reals

Checkpoint file::

    b"MAPSCKPT" | version | len + kind (utf-8) | len + meta JSON (utf-8)
    | n_sets | per set: n_sizes | sizes... | per layer: W, b as
      (ndim | shape... | reals)
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .data import DemoDataset, Trajectory
from .errors import ConfigError, FileFormatError
from .nncore import MlpParams
from .policy import MapsModel
from .trainer import HISTORY_COLUMNS, MlpPolicy, MultiHeadPolicy, SingleTaskPolicies, TrainConfig

DEMO_MAGIC = b"MAPSDEMO"
CKPT_MAGIC = b"MAPSCKPT"
FORMAT_VERSION = 1
KINDS = ("maps", "single", "mt", "mtmh")

_U32 = struct.Struct("<I")
_F64 = np.dtype("<f8")


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FileFormatError(f"truncated {self.what} file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def reals(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype=_F64).astype(np.float64)

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise FileFormatError(f"invalid text field in {self.what} file") from None

    def done(self):
        if self.pos != len(self.data):
            raise FileFormatError(f"{len(self.data) - self.pos} trailing bytes in {self.what} file")


def _u32(n: int) -> bytes:
    return _U32.pack(int(n))


def _text(s: str) -> bytes:
    b = s.encode("utf-8")
    return _u32(len(b)) + b


# --------------------------------------------------------------------------- demos


def dump_demos(dataset: DemoDataset) -> bytes:
    parts = [
        DEMO_MAGIC,
        _u32(FORMAT_VERSION),
        _u32(dataset.state_dim),
        _u32(dataset.action_dim),
        _u32(dataset.n_tasks),
        _u32(len(dataset.trajectories)),
    ]
    for tr in dataset.trajectories:
        parts += [_u32(tr.task), _u32(len(tr))]
        parts.append(np.hstack([tr.states, tr.actions]).astype(_F64).tobytes())
    return b"".join(parts)


def parse_demos(data: bytes) -> DemoDataset:
    r = _Reader(data, "demo")
    if r.take(8) != DEMO_MAGIC:
        raise FileFormatError("not a demo file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported demo format version {version}")
    S, A, K, n = r.u32(), r.u32(), r.u32(), r.u32()
    trs = []
    for _ in range(n):
        task, length = r.u32(), r.u32()
        rows = r.reals(length * (S + A)).reshape(length, S + A)
        trs.append(Trajectory(task, rows[:, :S], rows[:, S:]))
    r.done()
    try:
        return DemoDataset(trs, S, A, K)
    except ValueError as e:
        raise FileFormatError(f"invalid demo payload: {e}") from None


def save_demos(dataset: DemoDataset, path) -> None:
    Path(path).write_bytes(dump_demos(dataset))


def load_demos(path) -> DemoDataset:
    return parse_demos(Path(path).read_bytes())


# --------------------------------------------------------------------------- checkpoints


def _param_sets(model) -> tuple[str, list[MlpParams], dict]:
    if isinstance(model, MapsModel):
        return "maps", model.param_list(), {"n_tasks": model.n_tasks}
    if isinstance(model, MultiHeadPolicy):
        return "mtmh", model.param_list(), {"n_tasks": model.n_tasks}
    if isinstance(model, MlpPolicy):
        return model.kind, [model.net], {"n_tasks": model.n_tasks}
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def dump_checkpoint(model, config: TrainConfig, extra: dict | None = None) -> bytes:
    kind, sets, meta = _param_sets(model)
    meta = {**meta, **(extra or {}), "config": config.to_dict()}
    parts = [CKPT_MAGIC, _u32(FORMAT_VERSION), _text(kind), _text(json.dumps(meta, sort_keys=True)), _u32(len(sets))]
    for p in sets:
        parts.append(_u32(len(p.layer_sizes)))
        parts += [_u32(n) for n in p.layer_sizes]
        for a in p.arrays():
            parts.append(_u32(a.ndim))
            parts += [_u32(n) for n in a.shape]
            parts.append(np.ascontiguousarray(a, dtype=_F64).tobytes())
    return b"".join(parts)


def parse_checkpoint(data: bytes, expected_kind: str | None = None, expected_config: TrainConfig | None = None):
    """Returns ``(model, config, meta)``; rejects kind or config mismatches."""
    r = _Reader(data, "checkpoint")
    if r.take(8) != CKPT_MAGIC:
        raise FileFormatError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported checkpoint version {version}")
    kind = r.text()
    if kind not in KINDS:
        raise FileFormatError(f"unknown model kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise FileFormatError(f"checkpoint holds a {kind!r} model, expected {expected_kind!r}")
    try:
        meta = json.loads(r.text())
        cfg_dict, K = meta["config"], int(meta["n_tasks"])
    except (ValueError, KeyError, TypeError) as e:
        raise FileFormatError(f"bad checkpoint metadata: {e}") from None
    config = TrainConfig.from_dict(cfg_dict)
    if expected_config is not None and expected_config.to_dict() != config.to_dict():
        raise ConfigError("checkpoint was trained with a different config")
    sets = []
    for _ in range(r.u32()):
        sizes = [r.u32() for _ in range(r.u32())]
        ws, bs = [], []
        for _ in range(len(sizes) - 1):
            for store in (ws, bs):
                shape = tuple(r.u32() for _ in range(r.u32()))
                store.append(r.reals(int(np.prod(shape))).reshape(shape))
        try:
            sets.append(MlpParams(tuple(sizes), ws, bs))
        except ValueError as e:
            raise FileFormatError(str(e)) from None
    r.done()
    try:
        if kind == "maps":
            model = MapsModel(sets[:-2], sets[-2], sets[-1], K)
        elif kind == "mtmh":
            model = MultiHeadPolicy(sets[0], sets[1:])
        else:
            model = MlpPolicy(sets[0], K, kind == "mt")
    except (ValueError, IndexError) as e:
        raise FileFormatError(f"inconsistent {kind} checkpoint: {e}") from None
    return model, config, meta


def save_checkpoint(model, config: TrainConfig, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(dump_checkpoint(model, config, extra))


def load_checkpoint(path, expected_kind: str | None = None, expected_config: TrainConfig | None = None):
    return parse_checkpoint(Path(path).read_bytes(), expected_kind, expected_config)


def load_policy(paths):
    """Load one checkpoint, or a set of per-task ``single`` checkpoints as one policy."""
    paths = [paths] if isinstance(paths, (str, Path)) else list(paths)
    loaded = [load_checkpoint(p) for p in paths]
    kinds = {model.kind for model, _, _ in loaded}
    if len(loaded) == 1 and kinds != {"single"}:
        return loaded[0][0], loaded[0][1]
    if kinds != {"single"}:
        raise FileFormatError("several checkpoints given but they are not per-task single policies")
    by_task = {meta["task"]: model for model, _, meta in loaded}
    K = loaded[0][2]["n_tasks"]
    if sorted(by_task) != list(range(K)):
        raise FileFormatError(f"need one single-task checkpoint for each of the {K} tasks")
    return SingleTaskPolicies([by_task[k] for k in range(K)]), loaded[0][1]


# --------------------------------------------------------------------------- configs


def load_config(path) -> TrainConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return TrainConfig.from_dict(d)


def save_config(config: TrainConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- reports


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, columns, rows, comment: str | None = None) -> None:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_history(path, history: list[dict], config: TrainConfig) -> None:
    write_csv(path, HISTORY_COLUMNS, history, comment=f"config_sha256={config.digest()}")


USAGE_COLUMNS = ("task", "task_name", "module", "mean_gate", "argmax_fraction", "effective_modules")


def usage_rows(report) -> list[dict]:
    eff = report.effective_counts
    rows = []
    for k in range(report.n_tasks):
        name = report.task_names[k] if report.task_names else str(k)
        for i in range(report.n_modules):
            rows.append(
                {
                    "task": k,
                    "task_name": name,
                    "module": i,
                    "mean_gate": float(report.mean_gate[k, i]),
                    "argmax_fraction": float(report.argmax_fraction[k, i]),
                    "effective_modules": float(eff[k]),
                }
            )
    return rows


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def usage_svg(report, title: str = "Module usage per task") -> str:
    """Grouped bar chart: one group per task, one bar per module."""
    K, M = report.n_tasks, report.n_modules
    width, height = 120 + K * (M * 14 + 30), 320
    left, top, plot_h = 60, 40, 220
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{width - 20}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + plot_h * (1 - tick)
        out.append(
            f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{tick:.2f}</text>'
        )
    for k in range(K):
        x0 = left + 15 + k * (M * 14 + 30)
        for i in range(M):
            v = float(report.mean_gate[k, i])
            h = plot_h * v
            out.append(
                f'<rect x="{x0 + i * 14}" y="{top + plot_h - h:.2f}" width="12" height="{h:.2f}" '
                f'fill="{_PALETTE[i % len(_PALETTE)]}"><title>task {k} module {i}: {v:.3f}</title></rect>'
            )
        name = report.task_names[k] if report.task_names else f"task {k}"
        out.append(
            f'<text x="{x0 + M * 7}" y="{top + plot_h + 16}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{escape(name)}</text>'
        )
    for i in range(M):
        x = left + i * 70
        out.append(f'<rect x="{x}" y="{height - 24}" width="10" height="10" fill="{_PALETTE[i % len(_PALETTE)]}"/>')
        out.append(f'<text x="{x + 14}" y="{height - 15}" font-family="sans-serif" font-size="10">module {i}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
