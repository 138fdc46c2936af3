"""Flat key = value config files for the command line tools.

One assignment per line, `#` starts a comment, blank lines are skipped.
Lists are comma separated. Keys not listed in the reference below are
rejected so typos fail loudly.
"""

import dataclasses

from .experiments import ExperimentConfig
from .kernel import FAMILIES, KernelSpec
from .mesh import DomainSpec
from .quadrature import QuadConfig
from .solver import SolverControls

_PROBLEM_KEYS = {
    "kind", "domain", "a", "b", "h", "h_values", "mu",
    "s", "p", "s_values", "p_values",
    "family", "delta", "normalized",
    "forcing", "forcing_value",
    "outdir", "window", "fit_samples_2d",
    "backend", "eps_reg",
    "method", "tol", "max_iter", "continuation", "verbose",
    "sigma",
}
_QUAD_KEYS = {f.name for f in dataclasses.fields(QuadConfig)}


def parse_config_text(text):
    """Parse key = value lines into a flat string dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    unknown = set(out) - _PROBLEM_KEYS - _QUAD_KEYS
    if unknown:
        raise ValueError("unknown config keys: " + ", ".join(sorted(unknown)))
    return out


def parse_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


def _as_bool(val, key):
    low = val.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"{key}: expected a boolean, got {val!r}")


def _as_floats(val):
    return tuple(float(t) for t in val.split(",") if t.strip())


def build_domain(kv):
    kind = kv.get("domain", "interval")
    a = float(kv.get("a", -1.0))
    b = float(kv.get("b", 1.0))
    return DomainSpec(kind=kind, a=a, b=b)


def build_quad(kv):
    """QuadConfig from any quadrature keys present; None if none are."""
    hit = {k: kv[k] for k in _QUAD_KEYS if k in kv}
    if not hit:
        return None
    types = {f.name: f.type for f in dataclasses.fields(QuadConfig)}
    kwargs = {k: float(v) if types[k] in ("float", float) else int(v)
              for k, v in hit.items()}
    return QuadConfig(**kwargs)


def build_controls(kv):
    """SolverControls from solver keys present; None if none are."""
    kwargs = {}
    if "method" in kv:
        kwargs["method"] = kv["method"]
    if "tol" in kv:
        kwargs["tol"] = float(kv["tol"])
    if "max_iter" in kv:
        kwargs["max_iter"] = int(kv["max_iter"])
    if "continuation" in kv:
        kwargs["continuation"] = _as_bool(kv["continuation"], "continuation")
    if "verbose" in kv:
        kwargs["verbose"] = _as_bool(kv["verbose"], "verbose")
    return SolverControls(**kwargs) if kwargs else None


def _family_fields(kv):
    family = kv.get("family", "pure_fractional")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    delta = float(kv["delta"]) if "delta" in kv else None
    normalized = _as_bool(kv.get("normalized", "true"), "normalized")
    return family, delta, normalized


def build_problem(kv):
    """Single-solve setup: (domain, h, mu, KernelSpec, forcing, quad, controls).

    Used by the solve and norm subcommands, which run one (s, p) cell.
    """
    domain = build_domain(kv)
    h = float(kv["h"])
    mu = float(kv.get("mu", 1.0))
    s = float(kv["s"])
    p = float(kv.get("p", 2.0))
    family, delta, normalized = _family_fields(kv)
    spec = KernelSpec(d=domain.dim, s=s, p=p, family=family, delta=delta,
                      normalized=normalized)
    forcing = kv.get("forcing", "constant")
    if forcing == "constant":
        f = float(kv.get("forcing_value", 1.0))
    elif forcing == "horizon_layer":
        if delta is None:
            raise ValueError("horizon_layer forcing needs delta")
        f = delta ** (2.0 - 2.0 * s) / (1.0 - s)
    else:
        raise ValueError(f"unknown forcing {forcing!r}")
    return {
        "domain": domain, "h": h, "mu": mu, "spec": spec, "f": f,
        "quad": build_quad(kv), "controls": build_controls(kv),
        "eps_reg": float(kv.get("eps_reg", 1e-10)),
        "backend": kv.get("backend"),
        "sigma": float(kv["sigma"]) if "sigma" in kv else None,
    }


def build_experiment(kv):
    """ExperimentConfig for the experiment subcommand."""
    domain = build_domain(kv)
    family, delta, normalized = _family_fields(kv)
    s_values = _as_floats(kv["s_values"]) if "s_values" in kv \
        else (float(kv["s"]),)
    p_values = _as_floats(kv["p_values"]) if "p_values" in kv \
        else (float(kv.get("p", 2.0)),)
    h_values = _as_floats(kv["h_values"]) if "h_values" in kv \
        else (float(kv["h"]),)
    window = _as_floats(kv["window"]) if "window" in kv else None
    if window is not None and len(window) != 2:
        raise ValueError("window needs exactly two values")
    return ExperimentConfig(
        kind=kv.get("kind", "boundary_exponent"),
        domain=domain,
        s_values=s_values,
        p_values=p_values,
        h_values=h_values,
        family=family,
        delta=delta,
        normalized=normalized,
        mu=float(kv.get("mu", 1.0)),
        forcing=kv.get("forcing", "constant"),
        forcing_value=float(kv.get("forcing_value", 1.0)),
        outdir=kv.get("outdir"),
        window=window,
        fit_samples_2d=int(kv.get("fit_samples_2d", 12)),
        quad=build_quad(kv),
        controls=build_controls(kv),
        eps_reg=float(kv.get("eps_reg", 1e-10)),
        backend=kv.get("backend"),
    )
