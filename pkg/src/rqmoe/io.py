"""On-disk formats: model JSON, token CSV, trace CSV and report writers.

CSV files may start with ``#`` comment lines; the writers put the provenance
block there and the readers skip them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .metrics import LayerTrace, RoutingTrace
from .model import ExpertInstance, MoeLayer, MoeModel, Router
from .numerics import Matrix
from .quantization import PrecisionScheme, QuantizedMatrix

FORMAT_VERSION = 1


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataFormatError(path, None, f"not UTF-8 text ({exc})") from None


def load_json(path):
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, exc.lineno, exc.msg) from None


# models ---------------------------------------------------------------------

def _expert_to_dict(inst: ExpertInstance) -> dict:
    q = inst.weights
    d = {"origin_id": inst.origin_id, "is_replica": inst.is_replica, "scheme": q.scheme.value,
         "shape": [q.rows, q.cols], "payload": q.payload.tolist()}
    if q.scales is not None:
        d["scales"] = q.scales.tolist()
    return d


def _expert_from_dict(d: dict) -> ExpertInstance:
    scheme = PrecisionScheme.parse(d["scheme"])
    rows, cols = (int(v) for v in d["shape"])
    dtype = {PrecisionScheme.FULL32: np.float64, PrecisionScheme.HALF16: np.uint16,
             PrecisionScheme.INT8SYM: np.int8}[scheme]
    raw = np.array(d["payload"], dtype=np.float64 if scheme is PrecisionScheme.FULL32 else np.int64)
    if raw.size != rows * cols:
        raise ValueError(f"payload holds {raw.size} values, shape says {rows}x{cols}")
    if scheme is PrecisionScheme.HALF16 and (raw.min(initial=0) < 0 or raw.max(initial=0) > 0xFFFF):
        raise ValueError("half16 codes must be unsigned 16-bit integers")
    if scheme is PrecisionScheme.INT8SYM and np.abs(raw).max(initial=0) > 127:
        raise ValueError("int8 codes must lie in [-127, 127]")
    scales = np.array(d["scales"], dtype=np.float64) if "scales" in d else None
    q = QuantizedMatrix(scheme, rows, cols, raw.reshape(rows, cols).astype(dtype), scales)
    if scheme is PrecisionScheme.FULL32 and not np.all(np.isfinite(q.payload)):
        raise ValueError("full32 payload must be finite")
    return ExpertInstance(int(d["origin_id"]), q, bool(d["is_replica"]))


def model_to_dict(model: MoeModel, provenance: dict | None = None) -> dict:
    first = model.layers[0]
    out = {
        "header": {"format_version": FORMAT_VERSION, "p": model.p, "m": first.m, "k": first.top_k,
                   "d_in": model.d_in, "d_out": model.d_out, "seed": model.seed, "name": model.name},
        "layers": [{"top_k": l.top_k,
                    "router": {"weights": l.router.weights.tolist(), "bias": l.router.bias.tolist()},
                    "experts": [_expert_to_dict(i) for i in l.instances]}
                   for l in model.layers],
    }
    if provenance is not None:
        out["provenance"] = provenance
    return out


def model_from_dict(d: dict) -> MoeModel:
    header = d["header"]
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {header.get('format_version')!r}")
    layers = []
    for ld in d["layers"]:
        router = Router(Matrix(ld["router"]["weights"]), ld["router"].get("bias"))
        layers.append(MoeLayer(router, int(ld["top_k"]), [_expert_from_dict(e) for e in ld["experts"]]))
    if len(layers) != header["p"]:
        raise ValueError(f"header says p={header['p']} but file has {len(layers)} layers")
    return MoeModel(layers, str(header.get("name", "moe")), int(header.get("seed", 0)))


def save_model(model: MoeModel, path, provenance: dict | None = None):
    Path(path).write_text(dumps_json(model_to_dict(model, provenance)), encoding="utf-8")


def load_model(path) -> MoeModel:
    d = load_json(path)
    try:
        return model_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(path, None, f"invalid model file: {exc}") from None


# CSV helpers ------------------------------------------------------------------

def _comment_lines(provenance: dict | None) -> str:
    if provenance is None:
        return ""
    return "# provenance: " + json.dumps(provenance, sort_keys=True) + "\n"


def write_csv(path_or_none, header: list[str], rows, provenance: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_comment_lines(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    text = buf.getvalue()
    if path_or_none is not None:
        Path(path_or_none).write_text(text, encoding="utf-8")
    return text


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _data_lines(path):
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        if line.strip() and not line.lstrip().startswith("#"):
            yield lineno, line


# tokens -----------------------------------------------------------------------

def save_tokens(tokens: Matrix, path, provenance: dict | None = None):
    if not isinstance(tokens, Matrix):
        tokens = Matrix(tokens)
    write_csv(path, [f"x{j}" for j in range(tokens.cols)], tokens.tolist(), provenance)


def load_tokens(path) -> Matrix:
    rows, width = [], None
    lines = list(_data_lines(path))
    start = 0
    if lines and not _is_numeric_row(lines[0][1]):
        start = 1
    for lineno, line in lines[start:]:
        try:
            vals = [float(v) for v in next(csv.reader([line]))]
        except ValueError as exc:
            raise DataFormatError(path, lineno, f"non-numeric token value ({exc})") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DataFormatError(path, lineno, f"expected {width} columns, found {len(vals)}")
        if not all(np.isfinite(vals)):
            raise DataFormatError(path, lineno, "token values must be finite")
        rows.append(vals)
    if width is None:
        raise DataFormatError(path, None, "no token rows found")
    return Matrix(np.array(rows, dtype=np.float64).reshape(-1, width))


def _is_numeric_row(line: str) -> bool:
    try:
        [float(v) for v in next(csv.reader([line]))]
        return True
    except ValueError:
        return False


# traces -----------------------------------------------------------------------

TRACE_HEADER = ["layer", "instance", "origin", "is_replica", "count"]


def trace_rows(trace: RoutingTrace):
    for li, lt in enumerate(trace.layers):
        yield [li, "n", None, None, lt.n]
        yield [li, "k", None, None, lt.k]
        for i, (o, r, c) in enumerate(zip(lt.origins, lt.is_replica, lt.instance_counts)):
            yield [li, i, o, int(r), int(c)]


def save_trace(trace: RoutingTrace, path, provenance: dict | None = None) -> str:
    return write_csv(path, TRACE_HEADER, trace_rows(trace), provenance)


def load_trace(path) -> RoutingTrace:
    lines = list(_data_lines(path))
    if not lines:
        raise DataFormatError(path, None, "empty trace file")
    lineno, first = lines[0]
    if [c.strip() for c in next(csv.reader([first]))] != TRACE_HEADER:
        raise DataFormatError(path, lineno, f"expected header {','.join(TRACE_HEADER)}")
    meta: dict[int, dict] = {}
    inst: dict[int, list] = {}
    for lineno, line in lines[1:]:
        cells = [c.strip() for c in next(csv.reader([line]))]
        if len(cells) != 5:
            raise DataFormatError(path, lineno, f"expected 5 fields, found {len(cells)}")
        try:
            layer = int(cells[0])
            if cells[1] in ("n", "k"):
                meta.setdefault(layer, {})[cells[1]] = int(cells[4])
            else:
                inst.setdefault(layer, []).append((int(cells[1]), int(cells[2]), bool(int(cells[3])), int(cells[4])))
        except ValueError as exc:
            raise DataFormatError(path, lineno, str(exc)) from None
    layers = []
    for li in range(len(inst)):
        if li not in inst or "n" not in meta.get(li, {}) or "k" not in meta.get(li, {}):
            raise DataFormatError(path, None, f"layer {li} is missing rows or its n/k metadata")
        rows = sorted(inst[li])
        if [r[0] for r in rows] != list(range(len(rows))):
            raise DataFormatError(path, None, f"layer {li} instance ids are not 0..{len(rows) - 1}")
        m = sum(1 for r in rows if not r[2])
        if any(c < 0 for *_, c in rows) or meta[li]["n"] < 0:
            raise DataFormatError(path, None, f"layer {li} has negative counts")
        layers.append(LayerTrace([r[1] for r in rows], [r[2] for r in rows], m, meta[li]["k"],
                                 meta[li]["n"], [r[3] for r in rows]))
    if not layers:
        raise DataFormatError(path, None, "trace has no instance rows")
    return RoutingTrace(layers)
