"""JSON configuration files for a :class:`HamiltonianSpec`.

Layout::

    {
      "n": 1, "T": 3.14159, "beta": 1.0, "delta": 0.5, "delta1": 2.0,
      "Q": [[-1, 1], [1, -1]],
      "blocks": [{"k": 1, "l": 1, "pieces": [{"t0": 0, "t1": 3.14159, "coeffs": [1.0]}]}],
      "hbar_blocks": [...]
    }

``coeffs`` are ascending powers of the local time ``t - t0``.  Each entry is
either a number (meaning ``number * I_n``) or an ``n x n`` nested list.
Optional keys: ``initial_state`` (chain state at time 0, 1-based).
"""

import json

import numpy as np

from .coefficients import CoefficientField, HamiltonianSpec, PiecewisePoly
from .errors import ConfigError, InputError

REQUIRED = ("n", "T", "beta", "Q", "blocks")


def _number(value, where, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {type(value).__name__}", where)
    if not np.isfinite(value):
        raise ConfigError("must be finite", where)
    if positive and value <= 0:
        raise ConfigError("must be positive", where)
    return float(value)


def _coeff(value, n, where):
    arr = np.asarray(value, dtype=float) if not isinstance(value, str) else None
    if arr is None or arr.dtype == object:
        raise ConfigError("coefficient must be a number or a matrix", where)
    if arr.ndim == 0:
        return arr * np.eye(n)
    if arr.shape != (n, n):
        raise ConfigError(f"coefficient matrix must be {n}x{n}, got {list(arr.shape)}", where)
    return arr


def _field(entries, n, T, where, name):
    if not isinstance(entries, list):
        raise ConfigError("expected a list of blocks", where)
    blocks = {}
    for i, entry in enumerate(entries):
        loc = f"{where}[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError("block entry must be an object", loc)
        for key in ("k", "l", "pieces"):
            if key not in entry:
                raise ConfigError(f"missing key {key!r}", loc)
        k, l = entry["k"], entry["l"]
        if not all(isinstance(v, int) and 1 <= v <= 4 for v in (k, l)):
            raise ConfigError("block indices must be integers in 1..4", loc)
        pieces = entry["pieces"]
        if not isinstance(pieces, list) or not pieces:
            raise ConfigError("pieces must be a non-empty list", f"{loc}.pieces")
        breaks = []
        coeffs = []
        degree = 0
        for j, piece in enumerate(pieces):
            ploc = f"{loc}.pieces[{j}]"
            if not isinstance(piece, dict):
                raise ConfigError("piece must be an object", ploc)
            for key in ("t0", "t1", "coeffs"):
                if key not in piece:
                    raise ConfigError(f"missing key {key!r}", ploc)
            t0 = _number(piece["t0"], f"{ploc}.t0")
            t1 = _number(piece["t1"], f"{ploc}.t1")
            if breaks and not np.isclose(t0, breaks[-1], rtol=0, atol=1e-12 * max(1.0, T)):
                raise ConfigError(f"pieces must be contiguous (previous t1={breaks[-1]})", f"{ploc}.t0")
            if not breaks:
                if not np.isclose(t0, 0.0, atol=1e-12 * max(1.0, T)):
                    raise ConfigError("first piece must start at 0", f"{ploc}.t0")
                breaks.append(0.0)
            if t1 <= t0:
                raise ConfigError("t1 must exceed t0", f"{ploc}.t1")
            breaks.append(t1)
            cs = piece["coeffs"]
            if not isinstance(cs, list) or not cs:
                raise ConfigError("coeffs must be a non-empty list", f"{ploc}.coeffs")
            coeffs.append([_coeff(c, n, f"{ploc}.coeffs[{m}]") for m, c in enumerate(cs)])
            degree = max(degree, len(cs) - 1)
        if not np.isclose(breaks[-1], T, rtol=0, atol=1e-12 * max(1.0, T)):
            raise ConfigError(f"last piece must end at T={T}", f"{loc}.pieces")
        breaks[-1] = T
        arr = np.zeros((len(coeffs), degree + 1, n, n))
        for j, cs in enumerate(coeffs):
            arr[j, :len(cs)] = cs
        if (k, l) in blocks or (l, k) in blocks:
            raise ConfigError(f"block ({k},{l}) given twice", loc)
        try:
            blocks[k, l] = PiecewisePoly(breaks, arr)
        except InputError as exc:
            raise ConfigError(str(exc), loc) from None
    try:
        return CoefficientField(n, T, blocks, name=name)
    except InputError as exc:
        raise ConfigError(str(exc), where) from None


def spec_from_dict(data):
    """Validate a parsed configuration and build the spec."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", "$")
    for key in REQUIRED:
        if key not in data:
            raise ConfigError(f"missing required key {key!r}", "$")
    n = data["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ConfigError("must be a positive integer", "n")
    T = _number(data["T"], "T", positive=True)
    beta = _number(data["beta"], "beta", positive=True)
    delta = _number(data["delta"], "delta", positive=True) if "delta" in data else None
    delta1 = _number(data["delta1"], "delta1", positive=True) if "delta1" in data else None
    try:
        Q = np.asarray(data["Q"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("must be a square numeric array", "Q") from None
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ConfigError("must be a square numeric array", "Q")
    H = _field(data["blocks"], n, T, "blocks", "H")
    Hbar = _field(data.get("hbar_blocks", []), n, T, "hbar_blocks", "Hbar")
    extra = {}
    if "initial_state" in data:
        s = data["initial_state"]
        if isinstance(s, bool) or not isinstance(s, int) or not 1 <= s <= Q.shape[0]:
            raise ConfigError(f"must be an integer in 1..{Q.shape[0]}", "initial_state")
        extra["initial_state"] = s
    try:
        return HamiltonianSpec(H=H, Hbar=Hbar, Q=Q, beta=beta, delta=delta, delta1=delta1, extra=extra)
    except InputError as exc:
        raise ConfigError(str(exc), "$") from None


def loads_spec(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return spec_from_dict(data)


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        return loads_spec(fh.read())


def spec_to_dict(spec):
    """Normalized, JSON-ready form (the CLI echoes this)."""
    out = {
        "n": spec.n,
        "T": spec.T,
        "beta": float(spec.beta),
        "delta": float(spec.delta),
        "delta1": float(spec.delta1),
        "Q": spec.Q.tolist(),
        "blocks": spec.H.to_blocks_dict(),
        "hbar_blocks": spec.Hbar.to_blocks_dict(),
    }
    out.update(spec.extra)
    return out
