"""Config parsing, CSV/JSON output, run manifests and a small SVG emitter."""

from __future__ import annotations

import configparser
import csv
import json
import os
import tempfile
from typing import Callable, Dict, Iterable, List, Sequence

import numpy as np

from .errors import ConfigurationError


# ---------------------------------------------------------------------------
# config values


def parse_int(text):
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"expected an integer, got {text!r}") from None


def parse_seed(text):
    v = parse_int(text)
    if not 0 <= v < 2 ** 64:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    return v


def parse_float(text):
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"expected a number, got {text!r}") from None


def parse_floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    parts = [p for p in str(text).replace(";", ",").split(",") if p.strip()]
    return [parse_float(p.strip()) for p in parts]


def parse_ints(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [parse_int(p.strip()) for p in str(text).split(",") if p.strip()]


def parse_str(text):
    return str(text).strip()


def parse_grid(text):
    """``"min max count; min max count; ..."`` -> list of ``(min, max, count)``."""
    if isinstance(text, list):
        return [tuple(a) for a in text]
    axes = []
    for chunk in str(text).split(";"):
        if not chunk.strip():
            continue
        parts = chunk.replace(",", " ").split()
        if len(parts) != 3:
            raise ConfigurationError(f"malformed grid axis {chunk.strip()!r}; expected 'min max count'")
        lo, hi, cnt = parse_float(parts[0]), parse_float(parts[1]), parse_int(parts[2])
        if cnt < 1 or (cnt > 1 and not hi > lo):
            raise ConfigurationError(f"malformed grid axis {chunk.strip()!r}")
        axes.append((lo, hi, cnt))
    if not axes:
        raise ConfigurationError("empty grid")
    return axes


def read_config(path, section, schema: Dict[str, Callable]):
    """Read a flat ``key = value`` file into a dict typed by ``schema``.

    A file without section headers is one namespace; otherwise the section
    named ``section`` is used.  Unknown keys raise :class:`ConfigurationError`.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, section, schema)


def parse_config_text(text, section, schema):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    has_header = any(line.strip().startswith("[") for line in text.splitlines())
    try:
        parser.read_string(text if has_header else f"[{section}]\n{text}")
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    if not parser.has_section(section):
        raise ConfigurationError(f"config has no [{section}] section")
    return typed_config(dict(parser.items(section)), schema)


def typed_config(raw, schema):
    out = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigurationError(f"unknown config key {key!r}")
        try:
            out[key] = schema[key](value)
        except ConfigurationError as exc:
            raise ConfigurationError(f"bad value for {key!r}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for {key!r}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# output files


def _fmt(v):
    if type(v) is float:
        return repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, schema_name, header: Sequence[str], rows: Iterable[Sequence]):
    """CSV with a ``# schema: <name>/1`` comment line followed by the header."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema: {schema_name}/1\n")
        csv.writer(fh, lineterminator="\n").writerow(header)
        if isinstance(rows, np.ndarray):
            rows = rows.tolist()
        # numeric fields never need quoting
        fh.writelines(",".join(map(_fmt, row)) + "\n" for row in rows)


def read_csv(path):
    """Return ``(schema, header, rows as float array)``."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        schema = first.split(":", 1)[1].strip() if first.startswith("# schema:") else None
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader]
    return schema, header, np.array(rows).reshape(len(rows), len(header))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_atomic_json(path, doc):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".manifest", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(doc), fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# SVG


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


class SvgPlot:
    """Polylines and line segments in one box with min/max axis labels."""

    def __init__(self, width=480, height=320, margin=48, title=""):
        self.width, self.height, self.margin, self.title = width, height, margin, title
        self.items: List[tuple] = []

    def line(self, xs, ys, color="#1f77b4", width=1.5, dash=None, label=None):
        self.items.append(("line", np.asarray(xs, float), np.asarray(ys, float), color, width, dash, label))

    def segments(self, x0, y0, x1, y1, color="#333333", width=1.0):
        self.items.append(("seg", np.asarray([x0, x1], float), np.asarray([y0, y1], float), color, width))

    def _bounds(self):
        xs = np.concatenate([it[1].ravel() for it in self.items]) if self.items else np.zeros(1)
        ys = np.concatenate([it[2].ravel() for it in self.items]) if self.items else np.zeros(1)
        lo = np.array([xs.min(), ys.min()])
        hi = np.array([xs.max(), ys.max()])
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        return lo, lo + span

    def render(self):
        W, H, m = self.width, self.height, self.margin
        lo, hi = self._bounds()

        def px(x):
            return m + (x - lo[0]) / (hi[0] - lo[0]) * (W - 2 * m)

        def py(y):
            return H - m - (y - lo[1]) / (hi[1] - lo[1]) * (H - 2 * m)

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
               f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
               f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{H - 2 * m}" fill="none" stroke="black"/>']
        if self.title:
            out.append(f'<text x="{W / 2:.1f}" y="{m / 2:.1f}" text-anchor="middle" font-size="13">{self.title}</text>')
        for v, x, anchor in ((lo[0], m, "start"), (hi[0], W - m, "end")):
            out.append(f'<text x="{x:.1f}" y="{H - m + 16:.1f}" text-anchor="{anchor}" font-size="10">{v:.3g}</text>')
        for v, y in ((lo[1], H - m), (hi[1], m + 10)):
            out.append(f'<text x="{m - 4:.1f}" y="{y:.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
        ly = m + 14
        for it in self.items:
            if it[0] == "line":
                _, xs, ys, color, width, dash, label = it
                pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, ys))
                d = f' stroke-dasharray="{dash}"' if dash else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{d}/>')
                if label:
                    out.append(f'<text x="{W - m - 4:.1f}" y="{ly:.1f}" text-anchor="end" font-size="10" '
                               f'fill="{color}">{label}</text>')
                    ly += 12
            else:
                _, xs, ys, color, width = it
                for a0, a1, b0, b1 in zip(xs[0].ravel(), xs[1].ravel(), ys[0].ravel(), ys[1].ravel()):
                    out.append(f'<line x1="{px(a0):.2f}" y1="{py(b0):.2f}" x2="{px(a1):.2f}" y2="{py(b1):.2f}" '
                               f'stroke="{color}" stroke-width="{width}"/>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
