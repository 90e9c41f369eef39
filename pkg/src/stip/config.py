"""JSON experiment configuration with benchmark defaults and dotted overrides.

A configuration is a nested dictionary. :func:`load_config` merges a user
file (and ``--set`` overrides) onto the defaults of the chosen benchmark,
validates it, and returns an :class:`ExperimentConfig` whose ``to_json``
output reloads to the same object.
"""

import copy
import json

import numpy as np

from .calibrate import METHODS
from .dynamics import ObservationConfig
from .exceptions import ConfigurationError
from .likelihood import KINDS
from .prior import LogNormalPrior
from .problems import BENCHMARKS, INITIAL_STATE_MODES, get_benchmark
from .sample import SAMPLERS

TRAINING_SELECTIONS = ("lowest_potential", "fps")
SWEEP_AXES = ("t0", "T", "J_ensemble")

# Per-method EnK step defaults used when ``calibration.dt`` is null.
ENK_DEFAULTS = {
    "eki": {"dt": 2.0, "adaptive": True, "dt_max": 0.1},
    "eks": {"dt": 2.0, "adaptive": True, "dt_max": 0.1},
}


def default_config(system="lorenz63"):
    """Fully materialized default configuration for a benchmark."""
    b = get_benchmark(system)
    return {
        "system": b.name,
        "truth": list(b.truth),
        "observation": {
            "t0": b.t0,
            "T": b.T,
            "J": b.J,
            "h": b.h,
            "x0": list(b.x0),
            "initial_state": "first_observation",
            "noise_std": 0.0,
        },
        "likelihood": {
            "kind": "stgp",
            "ell_x": 0.4,
            "ell_t": 0.1,
            "jitter": 1e-6,
            "sigma2_eps": None,
            "augment": True,
        },
        "prior": {"param_order": list(b.prior_order), "mu0": list(b.mu0), "sigma0": list(b.sigma0)},
        "calibration": {
            "method": "eks",
            "J_ensemble": 500,
            "N": 50,
            "dt": None,
            "adaptive": None,
            "dt_max": None,
            "noisy": False,
        },
        "emulation": {
            "lengthscales": None,
            "variance": None,
            "nugget": 1e-6,
            "max_points": 2000,
            "selection": "lowest_potential",
            "calibration_method": "eki",
            "calibration_runs": 4,
        },
        "sampling": {
            "sampler": "pcn",
            "n_samples": 10000,
            "n_burnin": 2000,
            "beta": 0.2,
            "adapt": True,
        },
        "prediction": {"n_samples": 100, "horizon_factor": 1.5},
        "sweep": {"axis": "T", "values": [1.0, 2.0, 4.0, 8.0], "kinds": ["stgp", "time_averaged"]},
        "fisher": {"trials": 1000, "tol": 1e-8},
        "seed": 0,
        "repeats": 1,
        "jobs": 1,
        "output_dir": "out",
    }


def _merge(base, override, path=""):
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigurationError(f"config key {where!r} must be an object")
            _merge(base[key], val, where + ".")
        else:
            base[key] = copy.deepcopy(val)
    return base


def parse_override(text):
    """Split ``a.b=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _nest(key, value):
    out = value
    for part in reversed(key.split(".")):
        out = {part: out}
    return out


class ExperimentConfig:
    """Validated experiment configuration.

    Use :func:`load_config` to build one. Values are read with ``cfg[...]``
    on the underlying dict or through the typed accessors.
    """

    def __init__(self, data):
        self.data = data
        self._validate()

    def __getitem__(self, key):
        return self.data[key]

    def get(self, dotted):
        node = self.data
        for part in dotted.split("."):
            node = node[part]
        return node

    def replace(self, **dotted):
        """Copy with dotted-path overrides, e.g. ``replace(**{"observation.T": 4})``."""
        data = copy.deepcopy(self.data)
        for key, val in dotted.items():
            _merge(data, _nest(key, val))
        return ExperimentConfig(data)

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_json() == other.to_json()

    @property
    def benchmark(self):
        return get_benchmark(self.data["system"])

    def observation(self):
        o = self.data["observation"]
        return ObservationConfig(t0=o["t0"], T=o["T"], J=o["J"], h=o["h"], x0=tuple(o["x0"]))

    def prior(self):
        """Prior in the system's parameter order."""
        p = self.data["prior"]
        names = self.benchmark.system.param_names
        perm = [p["param_order"].index(n) for n in names]
        return LogNormalPrior(tuple(np.asarray(p["mu0"])[perm]), tuple(np.asarray(p["sigma0"])[perm]))

    def likelihood_params(self):
        return dict(self.data["likelihood"])

    def enk_params(self):
        """``run_enk`` keyword arguments with per-method defaults filled in."""
        c = self.data["calibration"]
        d = ENK_DEFAULTS[c["method"]]
        return {
            "dt": d["dt"] if c["dt"] is None else c["dt"],
            "adaptive": d["adaptive"] if c["adaptive"] is None else c["adaptive"],
            "dt_max": d["dt_max"] if c["dt_max"] is None else c["dt_max"],
            "noisy": c["noisy"],
        }

    def _validate(self):
        d = self.data
        if d["system"] not in BENCHMARKS:
            raise ConfigurationError(f"unknown system {d['system']!r}; expected one of {sorted(BENCHMARKS)}")
        system = self.benchmark.system
        p = system.n_params
        if len(d["truth"]) != p or not all(np.isfinite(d["truth"])):
            raise ConfigurationError(f"truth must hold {p} finite values")
        o = d["observation"]
        if o["initial_state"] not in INITIAL_STATE_MODES:
            raise ConfigurationError(f"observation.initial_state must be one of {INITIAL_STATE_MODES}")
        if len(o["x0"]) != system.dimension:
            raise ConfigurationError(f"observation.x0 must have {system.dimension} entries")
        if not o["noise_std"] >= 0:
            raise ConfigurationError("observation.noise_std must be >= 0")
        try:
            cfg = self.observation()
        except Exception as err:
            raise ConfigurationError(f"invalid observation block: {err}") from None
        if cfg.h > cfg.spacing:
            raise ConfigurationError(f"observation.h={cfg.h} exceeds the observation spacing {cfg.spacing}")
        lik = d["likelihood"]
        if lik["kind"] not in KINDS:
            raise ConfigurationError(f"likelihood.kind must be one of {KINDS}")
        for key in ("ell_x", "ell_t"):
            if not lik[key] > 0:
                raise ConfigurationError(f"likelihood.{key} must be positive")
        if not lik["jitter"] >= 0:
            raise ConfigurationError("likelihood.jitter must be >= 0")
        pr = d["prior"]
        if sorted(pr["param_order"]) != sorted(system.param_names):
            raise ConfigurationError(f"prior.param_order must be a permutation of {system.param_names}")
        if len(pr["mu0"]) != p or len(pr["sigma0"]) != p:
            raise ConfigurationError(f"prior.mu0 and prior.sigma0 must have {p} entries")
        try:
            self.prior()
        except Exception as err:
            raise ConfigurationError(f"invalid prior block: {err}") from None
        c = d["calibration"]
        if c["method"] not in METHODS:
            raise ConfigurationError(f"calibration.method must be one of {METHODS}")
        if int(c["J_ensemble"]) != c["J_ensemble"] or c["J_ensemble"] < 2:
            raise ConfigurationError("calibration.J_ensemble must be an integer >= 2")
        if int(c["N"]) != c["N"] or c["N"] < 0:
            raise ConfigurationError("calibration.N must be a non-negative integer")
        if c["dt"] is not None and not c["dt"] > 0:
            raise ConfigurationError("calibration.dt must be positive")
        e = d["emulation"]
        if e["selection"] not in TRAINING_SELECTIONS:
            raise ConfigurationError(f"emulation.selection must be one of {TRAINING_SELECTIONS}")
        if e["calibration_method"] not in METHODS:
            raise ConfigurationError(f"emulation.calibration_method must be one of {METHODS}")
        if int(e["calibration_runs"]) != e["calibration_runs"] or e["calibration_runs"] < 1:
            raise ConfigurationError("emulation.calibration_runs must be a positive integer")
        s = d["sampling"]
        if s["sampler"] not in SAMPLERS:
            raise ConfigurationError(f"sampling.sampler must be one of {SAMPLERS}")
        if not 0 < s["beta"] <= 1:
            raise ConfigurationError("sampling.beta must lie in (0, 1]")
        if s["n_samples"] < 1 or s["n_burnin"] < 0:
            raise ConfigurationError("sampling.n_samples must be >= 1 and n_burnin >= 0")
        if d["prediction"]["n_samples"] < 1 or not d["prediction"]["horizon_factor"] >= 1:
            raise ConfigurationError("prediction.n_samples must be >= 1 and horizon_factor >= 1")
        sw = d["sweep"]
        if sw["axis"] not in SWEEP_AXES:
            raise ConfigurationError(f"sweep.axis must be one of {SWEEP_AXES}")
        if any(k not in KINDS for k in sw["kinds"]):
            raise ConfigurationError(f"sweep.kinds entries must be in {KINDS}")
        if d["fisher"]["trials"] < 0:
            raise ConfigurationError("fisher.trials must be >= 0")
        for key in ("seed", "repeats", "jobs"):
            if int(d[key]) != d[key] or d[key] < (0 if key == "seed" else 1):
                raise ConfigurationError(f"{key} must be a {'non-negative' if key == 'seed' else 'positive'} integer")


def load_config(path=None, overrides=(), system=None):
    """Build a validated configuration.

    Parameters
    ----------
    path : str, optional
        JSON file; may be partial.
    overrides : iterable of str
        ``dotted.key=value`` strings applied after the file.
    system : str, optional
        Benchmark whose defaults are used when neither the file nor the
        overrides name one.
    """
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as err:
            raise ConfigurationError(f"cannot read config {path}: {err}") from None
        except json.JSONDecodeError as err:
            raise ConfigurationError(f"config {path} is not valid JSON: {err}") from None
        if not isinstance(user, dict):
            raise ConfigurationError(f"config {path} must hold a JSON object")
    parsed = [parse_override(o) for o in overrides]
    name = system or "lorenz63"
    name = user.get("system", name)
    for key, val in parsed:
        if key == "system":
            name = val
    if name not in BENCHMARKS:
        raise ConfigurationError(f"unknown system {name!r}; expected one of {sorted(BENCHMARKS)}")
    data = _merge(default_config(name), user)
    for key, val in parsed:
        _merge(data, _nest(key, val))
    return ExperimentConfig(data)
