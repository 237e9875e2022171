"""Run configuration: loading, overrides, schema validation and builders."""

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np
import yaml

from . import kernel, model
from .particle import Grid


class ConfigError(ValueError):
    """Invalid configuration; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_FN_KINDS = ["zero", "constant", "linear", "sigmoid", "sine", "tabulated"]
_FN_PARAMS = {
    "zero": [], "constant": ["value"], "linear": ["intercept", "slope"],
    "sigmoid": ["low", "high"], "sine": [], "tabulated": ["grid", "values"],
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_numlist = {"type": "array", "items": _num, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_FUNCTION = _obj({
    "kind": {"enum": _FN_KINDS},
    "value": _num, "intercept": _num, "slope": _num,
    "low": _num, "high": _num, "scale": _pos, "center": _num,
    "amplitude": _num, "frequency": _num, "phase": _num,
    "grid": _numlist, "values": _numlist,
}, ["kind"])

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "output": {"type": ["string", "null"]},
    "model": _obj({
        "drift": _FUNCTION,
        "sigma": _FUNCTION,
        "forcing": _obj({
            "kind": {"enum": ["zero", "constant", "soma", "tabulated"]},
            "value": _num, "gamma": _pos, "v0": _FUNCTION,
            "grid": _numlist, "values": _numlist,
        }, ["kind"]),
        "kernel": _obj({
            "kind": {"enum": ["zero", "cable", "tabulated"]},
            "rho": {"enum": sorted(kernel.RHO_CATALOG)},
            "gamma": _pos, "scale": _num, "order": {"type": "integer", "minimum": 40},
            "grid": _numlist, "values": _numlist,
        }, ["kind"]),
        "lambda_b": _pos,
        "lambda_sigma": _pos,
        "initial": _obj({
            "kind": {"enum": ["point", "uniform"]},
            "x0": _num, "low": _num, "high": _num, "R": {"type": "number", "minimum": 1},
        }, ["kind"]),
        "probe_grid": _numlist,
    }),
    "grid": _obj({"T": _pos, "n_steps": {"type": "integer", "minimum": 2}}),
    "simulation": _obj({"crossing": {"enum": ["grid", "bridge"]}}),
    "weights": _obj({
        "scheme": {"enum": ["uniform", "inverse-distance", "explicit"]},
        "N": {"type": "integer", "minimum": 1},
        "value": _pos,
        "matrix": {"type": "array", "items": _numlist},
    }),
    "solver": _obj({
        "evaluator": {"enum": ["mc", "renewal"]},
        "tol": {"anyOf": [_pos, {"type": "null"}]},
        "max_iter": _posint,
        "n_mc": {"type": "integer", "minimum": 2},
        "bandwidth": {"anyOf": [_pos, {"type": "null"}]},
        "warm_start": {"enum": ["zero", "envelope"]},
        "burkholder_c": _pos,
        "n_mix": _posint,
        "substeps": _posint,
    }),
    "density": _obj({
        "x": _numlist,
        "t": _numlist,
        "check_t": _numlist,
        "alpha": _FUNCTION,
        "n_mc": {"type": "integer", "minimum": 2},
        "n_times": {"type": "integer", "minimum": 3},
        "n_nodes": _posint,
        "dt": _pos,
    }),
    "diagnostics": _obj({
        "N_list": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "n_reps": {"type": "integer", "minimum": 1},
        "t_fracs": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                               "maximum": 1}, "minItems": 1},
        "n_limit": {"type": "integer", "minimum": 2},
        "functional": {"enum": ["tanh", "median"]},
        "epsilon": _pos,
    }),
})


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-12`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                   |[-+]?[0-9][0-9_]*[eE][-+]?[0-9]+
                   |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                   |[-+]?\.(?:inf|Inf|INF)
                   |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def _yaml(text):
    return yaml.load(text, Loader=_Loader)


def _load_yaml(text, source):
    try:
        data = _yaml(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source} must contain a mapping")
    return data


def defaults():
    text = resources.files("cablemf").joinpath("benchmark.yaml").read_text()
    return _load_yaml(text, "built-in benchmark")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and "kind" not in v:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        nxt = cur.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError("cannot descend into a non-mapping", dotted)
        cur = nxt
    cur[keys[-1]] = value


def parse_override(item):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    try:
        value = _yaml(raw)
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def _validate(data):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(e.message, path)


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def load(cls, path=None, overrides=(), seed=None, output=None):
        """Read ``path`` (``None`` or ``"benchmark"`` for the built-in) and apply overrides.

        A run manifest is accepted as well; its embedded config is used.
        """
        if path is None or path == "benchmark":
            user = {}
        else:
            try:
                with open(path) as fh:
                    user = _load_yaml(fh.read(), path)
            except OSError as exc:
                raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
            if "config" in user and "config_hash" in user:
                user = user["config"]
        for item in overrides:
            key, value = parse_override(item) if isinstance(item, str) else item
            _set_path(user, key, value)
        if seed is not None:
            user["seed"] = int(seed)
        if output is not None:
            user["output"] = output
        data = _merge(defaults(), user)
        _validate(data)
        return cls(data)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self):
        return int(self.data["seed"])

    def hash(self):
        """SHA-256 of the canonical config; the output location is excluded."""
        data = {k: v for k, v in self.data.items() if k != "output"}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # builders -------------------------------------------------------------

    def grid(self):
        g = self.data["grid"]
        return Grid(float(g["T"]), int(g["n_steps"]))

    def coefficients(self):
        m = self.data["model"]
        b = build_function(m["drift"], "model.drift")
        sig = build_function(m["sigma"], "model.sigma")
        return model.CoefficientSet(b, sig, build_forcing(m["forcing"]), build_kernel(m["kernel"]),
                                    float(m["lambda_b"]), float(m["lambda_sigma"]))

    def initial_law(self):
        block = self.data["model"]["initial"]
        try:
            if block["kind"] == "point":
                return model.point_mass(_need(block, "x0", "model.initial"), block.get("R", 1.0))
            return model.uniform_law(_need(block, "low", "model.initial"),
                                     _need(block, "high", "model.initial"), block.get("R"))
        except model.ModelError as exc:
            raise ConfigError(str(exc), "model.initial") from None

    def probe_grid(self):
        return np.asarray(self.data["model"]["probe_grid"], dtype=float)

    def kernel_table(self, cs=None, grid=None):
        cs = cs or self.coefficients()
        grid = grid or self.grid()
        return kernel.tabulate_kernel(cs.G, grid.T, grid.n_steps)

    def weights(self):
        w = self.data["weights"]
        if w["scheme"] == "explicit":
            if "matrix" not in w:
                raise ConfigError("explicit weights need a matrix", "weights.matrix")
            return model.explicit_weights(w["matrix"])
        if w["scheme"] == "uniform":
            return model.uniform_weights(w["N"], w.get("value", 1.0))
        return model.inverse_distance_weights(w["N"])

    def weight_family(self):
        w = self.data["weights"]
        if w["scheme"] == "explicit":
            raise ConfigError("explicit weights have no size family", "weights.scheme")
        return model.scheme_family(w["scheme"], w.get("value", 1.0))


def _need(block, key, path):
    if key not in block:
        raise ConfigError(f"missing required field {key!r}", path)
    return block[key]


def build_function(block, path="function"):
    kind = block["kind"]
    for key in _FN_PARAMS[kind]:
        _need(block, key, path)
    if kind == "zero":
        return model.zero_function()
    if kind == "constant":
        return model.constant(block["value"])
    if kind == "linear":
        return model.linear(block["intercept"], block["slope"])
    if kind == "sigmoid":
        return model.sigmoid(block["low"], block["high"], block.get("scale", 1.0), block.get("center", 0.0))
    if kind == "sine":
        return model.sine(block.get("amplitude", 1.0), block.get("frequency", 1.0), block.get("phase", 0.0))
    if len(block["grid"]) != len(block["values"]) or len(block["grid"]) < 4:
        raise ConfigError("tabulated function needs >= 4 matching grid/values entries", path)
    return model.tabulated(block["grid"], block["values"])


def build_forcing(block):
    kind = block["kind"]
    if kind == "zero":
        return model.zero_function()
    if kind == "constant":
        return model.constant(_need(block, "value", "model.forcing"))
    if kind == "soma":
        v0 = build_function(_need(block, "v0", "model.forcing"), "model.forcing.v0")
        return kernel.soma_forcing_function(v0, _need(block, "gamma", "model.forcing"))
    return build_function(dict(block, kind="tabulated"), "model.forcing")


def build_kernel(block):
    kind = block["kind"]
    if kind == "zero":
        return model.zero_function()
    if kind == "cable":
        rho = kernel.synapse_density(_need(block, "rho", "model.kernel"))
        return kernel.cable_kernel_function(rho, _need(block, "gamma", "model.kernel"),
                                            block.get("scale", 1.0),
                                            block.get("order", kernel.DEFAULT_ORDER))
    return build_function(dict(block, kind="tabulated"), "model.kernel")
