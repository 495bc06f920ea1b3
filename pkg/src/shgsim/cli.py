"""Command-line front end.

    shgsim run --config cfg.json [--out series.csv] [--format csv|json]
    shgsim check --K 2 --gamma 1,0 --t-max 10 [--out report.json]

Exit codes: 0 success, 1 check failure, 2 config error, 3 numerical failure.
``SHGSIM_THREADS`` sets the number of worker threads used by ``check``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np

from . import algebra as alg
from . import verify
from .heisenberg import (
    AmplitudeSystem,
    CoverageError,
    GeneratorError,
    IntegrationError,
    realize_operators,
    solve_amplitudes,
)
from .schrodinger import PropagationError, StateVector, build_propagator, evolve

SCHEMA_VERSION = 1
CSV_TAG = f"# shgsim-timeseries schema_version={SCHEMA_VERSION}"
OBSERVABLES = ("n1", "n2", "N", "a1", "a2")
PICTURES = ("schrodinger", "heisenberg", "both")
FORMATS = ("csv", "json")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class RunConfig:
    gamma: complex
    K: int
    initial_state: tuple[tuple[int, int, complex], ...]
    t_max: float
    samples: int
    picture: str = "both"
    observables: tuple[str, ...] = ("n1", "n2")
    rtol: float = 1e-10
    atol: float = 1e-12
    output_format: str = "csv"
    seed: int | None = None

    def resolved(self) -> dict:
        """Plain-data form of every field, embedded in the output."""
        return {
            "gamma": _cplx(self.gamma),
            "K": self.K,
            "initial_state": [{"N": N, "l": l, "amplitude": _cplx(c)} for N, l, c in self.initial_state],
            "t_max": self.t_max,
            "samples": self.samples,
            "picture": self.picture,
            "observables": list(self.observables),
            "rtol": self.rtol,
            "atol": self.atol,
            "output_format": self.output_format,
            "seed": self.seed,
        }

    def times(self) -> np.ndarray:
        return np.array([i * self.t_max / (self.samples - 1) for i in range(self.samples)])


def _cplx(z: complex) -> dict:
    z = complex(z)
    return {"re": z.real, "im": z.imag}


def _parse_complex(value: Any, path: str) -> complex:
    if isinstance(value, dict):
        try:
            return complex(float(value.get("re", 0.0)), float(value.get("im", 0.0)))
        except (TypeError, ValueError):
            raise ConfigError(path, f"expected {{'re': x, 'im': y}}, got {value!r}") from None
    if isinstance(value, (list, tuple)) and len(value) == 2:
        try:
            return complex(float(value[0]), float(value[1]))
        except (TypeError, ValueError):
            pass
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    raise ConfigError(path, f"expected a complex number, got {value!r}")


def _require(doc: dict, key: str, kind, path: str = ""):
    if key not in doc:
        raise ConfigError(path + key, "missing required field")
    value = doc[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(path + key, f"expected an integer, got {value!r}")
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path + key, f"expected a number, got {value!r}")
        value = float(value)
    if kind is str and not isinstance(value, str):
        raise ConfigError(path + key, f"expected a string, got {value!r}")
    return value


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = set(RunConfig.__dataclass_fields__)
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown field")
    if "gamma" not in doc:
        raise ConfigError("gamma", "missing required field")
    gamma = _parse_complex(doc["gamma"], "gamma")
    K = _require(doc, "K", int)
    if K < 0:
        raise ConfigError("K", f"must be >= 0, got {K}")
    t_max = _require(doc, "t_max", float)
    if not t_max > 0 or not math.isfinite(t_max):
        raise ConfigError("t_max", f"must be a positive finite number, got {t_max}")
    samples = _require(doc, "samples", int)
    if samples < 2:
        raise ConfigError("samples", f"must be >= 2, got {samples}")
    picture = doc.get("picture", "both")
    if picture not in PICTURES:
        raise ConfigError("picture", f"must be one of {PICTURES}, got {picture!r}")
    observables = doc.get("observables", ["n1", "n2"])
    if not isinstance(observables, list) or not observables:
        raise ConfigError("observables", "must be a non-empty list")
    for i, name in enumerate(observables):
        if name not in OBSERVABLES:
            raise ConfigError(f"observables[{i}]", f"must be one of {OBSERVABLES}, got {name!r}")
    tols = {}
    for key, default in (("rtol", 1e-10), ("atol", 1e-12)):
        value = float(_require(doc, key, float)) if key in doc else default
        if not value > 0:
            raise ConfigError(key, f"must be > 0, got {value}")
        tols[key] = value
    fmt = doc.get("output_format", "csv")
    if fmt not in FORMATS:
        raise ConfigError("output_format", f"must be one of {FORMATS}, got {fmt!r}")
    seed = doc.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ConfigError("seed", f"expected an integer, got {seed!r}")

    initial = _parse_initial_state(doc.get("initial_state"), K, seed)
    return RunConfig(gamma, K, initial, t_max, samples, picture, tuple(observables),
                     tols["rtol"], tols["atol"], fmt, seed)


def _parse_initial_state(raw, K: int, seed: int | None) -> tuple[tuple[int, int, complex], ...]:
    basis = alg.enumerate_basis(K)
    if raw == "random":
        if seed is None:
            raise ConfigError("seed", "required when initial_state is 'random'")
        psi = StateVector.random(basis, np.random.default_rng(seed))
        return tuple((s.N, s.l, complex(c)) for s, c in zip(basis.states, psi.components))
    if not isinstance(raw, list) or not raw:
        raise ConfigError("initial_state", "must be a non-empty list or 'random'")
    comps: dict[tuple[int, int], complex] = {}
    for i, entry in enumerate(raw):
        path = f"initial_state[{i}]"
        if isinstance(entry, dict):
            N = _require(entry, "N", int, path + ".")
            l = _require(entry, "l", int, path + ".")
            amp = _parse_complex(entry.get("amplitude", 1.0), path + ".amplitude")
        elif isinstance(entry, list) and len(entry) == 3:
            N, l = entry[0], entry[1]
            if not all(isinstance(x, int) and not isinstance(x, bool) for x in (N, l)):
                raise ConfigError(path, "N and l must be integers")
            amp = _parse_complex(entry[2], path + "[2]")
        else:
            raise ConfigError(path, "expected {'N', 'l', 'amplitude'} or [N, l, amplitude]")
        if not (0 <= N <= K and 0 <= 2 * l <= N):
            raise ConfigError(path, f"|N={N}, l={l}> is not in H_K with K={K}")
        comps[(N, l)] = comps.get((N, l), 0j) + amp
    norm = math.sqrt(sum(abs(c) ** 2 for c in comps.values()))
    if norm == 0:
        raise ConfigError("initial_state", "state has zero norm")
    if abs(norm - 1) > 1e-10:
        warnings.warn(f"initial state norm {norm:.12g} != 1; normalising", stacklevel=2)
        comps = {k: c / norm for k, c in comps.items()}
    return tuple((N, l, c) for (N, l), c in sorted(comps.items()))


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(doc)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _initial_vector(cfg: RunConfig, basis: alg.SubspaceBasis) -> StateVector:
    c = np.zeros(basis.dim, dtype=complex)
    for N, l, amp in cfg.initial_state:
        c[basis.index(alg.BasisState(N, l))] = amp
    return StateVector(basis, c)


def _schrodinger_series(cfg, basis, psi0, times) -> dict[str, np.ndarray]:
    prop = build_propagator(cfg.K, cfg.gamma)
    mats = {
        "n1": alg.operator_matrix(alg.number_operator(1), basis),
        "n2": alg.operator_matrix(alg.number_operator(2), basis),
        "N": alg.operator_matrix(alg.integral_of_motion(), basis),
        "a1": alg.operator_matrix(alg.a1(), basis),
        "a2": alg.operator_matrix(alg.a2(), basis),
    }
    out = {k: np.empty(times.size, dtype=complex) for k in mats}
    out["norm"] = np.empty(times.size)
    for i, t in enumerate(times):
        c = evolve(prop, psi0, t).components
        for k, m in mats.items():
            out[k][i] = c.conj() @ (m @ c)
        out["norm"][i] = np.linalg.norm(c)
    return out


def _heisenberg_series(cfg, basis, psi0, times) -> dict[str, np.ndarray]:
    sol = solve_amplitudes(cfg.K, cfg.gamma, float(times[-1]), rtol=cfg.rtol, atol=cfg.atol)
    c = psi0.components
    out: dict[str, np.ndarray] = {}
    for osc in (1, 2):
        ops = realize_operators(osc, sol, times, basis)
        images = ops @ c
        out[f"a{osc}"] = images @ c.conj()
        # a_j(t) maps H_K into H_K, so <n_j(t)> = |a_j(t) psi|^2 exactly
        out[f"n{osc}"] = np.sum(np.abs(images) ** 2, axis=1) + 0j
    out["N"] = out["n1"] + 2 * out["n2"]
    out["norm"] = np.full(times.size, np.linalg.norm(c))
    return out


def run(cfg: RunConfig) -> dict:
    """Time series for one configuration, as a plain-data document."""
    basis = alg.enumerate_basis(cfg.K)
    psi0 = _initial_vector(cfg, basis)
    times = cfg.times()
    pictures = ("schrodinger", "heisenberg") if cfg.picture == "both" else (cfg.picture,)
    series = {}
    for pic in pictures:
        fn = _schrodinger_series if pic == "schrodinger" else _heisenberg_series
        series[pic] = fn(cfg, basis, psi0, times)
    names = list(cfg.observables) + [x for x in ("norm", "N") if x not in cfg.observables]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.resolved(),
        "t": times,
        "series": {pic: {name: series[pic][name] for name in names} for pic in pictures},
    }
    if cfg.picture == "both":
        dev = np.zeros(times.size)
        for name in cfg.observables:
            dev = np.maximum(dev, np.abs(series["schrodinger"][name] - series["heisenberg"][name]))
        doc["max_deviation"] = dev
    return doc


def _column_values(name: str, values: np.ndarray):
    """CSV columns for one observable; complex observables become re/im pairs."""
    if name in ("a1", "a2"):
        return [(f"{name}.re", values.real), (f"{name}.im", values.imag)]
    return [(name, np.real(values))]


def render_csv(doc: dict) -> str:
    cols = [("t", doc["t"])]
    for pic, obs in doc["series"].items():
        for name, values in obs.items():
            cols += [(f"{pic}.{label}", v) for label, v in _column_values(name, values)]
    if "max_deviation" in doc:
        cols.append(("max_deviation", doc["max_deviation"]))
    buf = io.StringIO()
    buf.write(CSV_TAG + "\n")
    buf.write("# config=" + json.dumps(doc["config"], separators=(",", ":")) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([c[0] for c in cols])
    for i in range(len(doc["t"])):
        writer.writerow([repr(float(c[1][i])) for c in cols])
    return buf.getvalue()


def render_json(doc: dict) -> str:
    def enc(name, values):
        if name in ("a1", "a2"):
            return [_cplx(v) for v in values]
        return [float(np.real(v)) for v in values]

    out = {
        "schema_version": doc["schema_version"],
        "config": doc["config"],
        "t": [float(x) for x in doc["t"]],
        "series": {pic: {n: enc(n, v) for n, v in obs.items()} for pic, obs in doc["series"].items()},
    }
    if "max_deviation" in doc:
        out["max_deviation"] = [float(x) for x in doc["max_deviation"]]
    return json.dumps(out, indent=1) + "\n"


def render(doc: dict, fmt: str) -> str:
    return render_csv(doc) if fmt == "csv" else render_json(doc)


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def corrupt_first_term(system: AmplitudeSystem, factor: float = 1.5) -> AmplitudeSystem:
    """Scale the structure constant of the first coupling term (fault injection)."""
    target = next(p for p in system.index_table if system.coupling_terms.get(p))
    terms = list(system.coupling_terms[target])
    terms[0] = replace(terms[0], constant=terms[0].constant * factor)
    coupling = dict(system.coupling_terms)
    coupling[target] = tuple(terms)
    return replace(system, coupling_terms=coupling)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SHGSIM_THREADS", "1")))
    except ValueError:
        return 1


def check(K: int, gamma: complex, t_max: float, samples: int = 51, seed: int = 0,
          inject_fault: bool = False) -> tuple[int, list[verify.CheckReport]]:
    hook = corrupt_first_term if inject_fault else None
    reports = verify.run_battery(K, gamma, t_max, samples, seed, hook, workers=_threads())
    status = EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED
    return status, reports


def render_reports(reports: list[verify.CheckReport], fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"schema_version": SCHEMA_VERSION,
                           "reports": [r.to_dict() for r in reports]}, indent=1) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "max_abs_error", "tolerance", "passed"])
    for r in reports:
        writer.writerow([r.name, repr(float(r.max_abs_error)), repr(r.tolerance), r.passed])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _gamma_arg(text: str) -> complex:
    parts = text.split(",")
    try:
        if len(parts) == 1:
            return complex(float(parts[0]), 0.0)
        if len(parts) == 2:
            return complex(float(parts[0]), float(parts[1]))
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected 're,im', got {text!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shgsim", description="Second-harmonic generation in both pictures.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="simulate a configuration and emit a time series")
    p_run.add_argument("--config", required=True, help="JSON run configuration")
    p_run.add_argument("--out", help="output path (default: stdout)")
    p_run.add_argument("--format", choices=FORMATS, help="overrides output_format from the config")

    p_check = sub.add_parser("check", help="run the verification battery")
    p_check.add_argument("--K", type=int, required=True)
    p_check.add_argument("--gamma", type=_gamma_arg, required=True, help="'re,im'")
    p_check.add_argument("--t-max", type=float, required=True)
    p_check.add_argument("--samples", type=int, default=51)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--format", choices=FORMATS, default="json", help="report document format")
    p_check.add_argument("--out", help="write the report document here")
    p_check.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.format:
                cfg = replace(cfg, output_format=args.format)
            _emit(render(run(cfg), cfg.output_format), args.out)
            return EXIT_OK
        if args.K < 0 or not args.t_max > 0 or args.samples < 2:
            raise ConfigError("check", "need K >= 0, t-max > 0 and samples >= 2")
        status, reports = check(args.K, args.gamma, args.t_max, args.samples, args.seed,
                                args.inject_fault)
        for r in reports:
            print(r.line())
        if args.out:
            _emit(render_reports(reports, args.format), args.out)
        return status
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, PropagationError, CoverageError, GeneratorError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
