"""Batch front end: ``evospace --config run.ini --out results/``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical blow-up.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BlowUpError, ConfigError, EvoSpaceError
from .estimates import (
    apriori_dotuN,
    apriori_sup,
    apriori_uN,
    convergence_study,
    fitted_order,
    gamma_sweep,
    inf_sup_estimate,
    ledger_entry,
    parallel_map,
    uniqueness_check,
    EstimateLedger,
)
from .galerkin import SCHEMES, INIT_MODES, StepperConfig, solve, transported_basis_check
from .instances import NAMES, InstanceSpec, Profile, make_instance, manufacture, standard_exact_solution
from .plotting import render_convergence
from .problem import validate_A, validate_L
from .space import TimeGrid, check_compatibility

COMMANDS = ("validate", "solve", "converge", "infsup", "report")
EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_BLOWUP = 0, 1, 2, 3
ORDERS = {"implicit-midpoint": 2.0, "backward-euler": 1.0}
_DECIMAL = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_INTEGER = re.compile(r"^[+-]?\d+$")


def _decimal(text):
    if not _DECIMAL.match(text):
        raise ValueError(f"{text!r} is not a decimal literal")
    return float(text)


def _integer(text):
    if not _INTEGER.match(text):
        raise ValueError(f"{text!r} is not an integer literal")
    return int(text)


def _int_list(text):
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ValueError("list must be nonempty")
    return [_integer(s) for s in items]


def _dec_list(text):
    items = [s.strip() for s in text.split(",") if s.strip()]
    return [_decimal(s) for s in items]


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text
    return parse


def _boolean(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


SCHEMA = {
    "instance": {
        "name": _choice(NAMES), "n": _integer, "T": _decimal,
        "profile": _choice(("affine", "sinusoidal")), "a": _decimal, "b": _decimal,
        "omega": _decimal, "phase": _decimal, "manufactured": _boolean,
    },
    "run": {
        "command": _choice(COMMANDS), "N": _int_list, "M": _int_list,
        "scheme": _choice(SCHEMES), "init_mode": _choice(INIT_MODES),
        "seed": _integer, "samples": _integer, "grid_M": _integer, "gamma": _dec_list,
        "infsup_N": _int_list, "infsup_M": _int_list,
    },
    "tolerances": {
        "linear": _decimal, "energy": _decimal, "order": _decimal, "infsup_drift": _decimal,
    },
}


@dataclass
class RunConfig:
    spec: InstanceSpec = field(default_factory=lambda: InstanceSpec("static-circle"))
    manufactured: bool = False
    command: str = "validate"
    N_list: list | None = None
    M_list: list = field(default_factory=lambda: [100])
    scheme: str = "implicit-midpoint"
    init_mode: str = "projection"
    seed: int = 0
    samples: int = 4
    grid_M: int = 20
    gammas: list = field(default_factory=list)
    infsup_N: list | None = None
    infsup_M: list = field(default_factory=lambda: [16])
    tol: dict = field(default_factory=lambda: {"linear": 1e-12, "energy": 1e-6, "order": 0.1, "infsup_drift": 0.1})


def _locate(lines, section, key=None):
    """1-based ``(line, column)`` of a section header or of a key inside it."""
    current = None
    for i, raw in enumerate(lines, 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return i, raw.index("[") + 1
            continue
        if key is not None and current == section:
            m = re.match(r"\s*([^=:\s][^=:]*?)\s*[=:]", raw)
            if m and m.group(1) == key:
                return i, m.start(1) + 1
    return None, None


def _value_column(line):
    m = re.match(r"[^=:]*[=:]\s*", line)
    return m.end() + 1 if m else 1


def parse_config(text):
    """Parse INI text into a :class:`RunConfig`; errors carry line and column."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        # values are single-line, so indentation never continues a value
        parser.read_string("\n".join(line.lstrip() for line in text.splitlines()))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", exc.lineno, 1) from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, 1) from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, 1) from exc
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"cannot parse {line.strip()!r}", lineno, 1) from exc
    lines = text.splitlines()
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            ln, col = _locate(lines, section)
            raise ConfigError(f"unknown section [{section}]", ln, col)
        for key, raw in parser.items(section):
            ln, col = _locate(lines, section, key)
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", ln, col)
            try:
                values[(section, key)] = SCHEMA[section][key](raw.strip())
            except ValueError as exc:
                vcol = _value_column(lines[ln - 1]) if ln else None
                raise ConfigError(f"[{section}] {key}: {exc}", ln, vcol) from exc
    return _build(values, lines)


def _build(values, lines):
    get = values.get
    name = get(("instance", "name"), "static-circle")
    prof = None
    if any(k in values for k in [("instance", p) for p in ("profile", "a", "b", "omega", "phase")]):
        prof = Profile(get(("instance", "profile"), "affine"), get(("instance", "a"), 1.0),
                       get(("instance", "b"), 0.0), get(("instance", "omega"), 1.0), get(("instance", "phase"), 0.0))
    spec = InstanceSpec(name, get(("instance", "n")), get(("instance", "T"), 1.0), prof)
    try:
        spec.resolved()
    except ValueError as exc:
        ln, col = _locate(lines, "instance")
        raise ConfigError(f"[instance] {exc}", ln, col) from exc
    cfg = RunConfig(spec=spec, manufactured=get(("instance", "manufactured"), False))
    cfg.command = get(("run", "command"), cfg.command)
    cfg.N_list = get(("run", "N"))
    cfg.M_list = get(("run", "M"), cfg.M_list)
    cfg.scheme = get(("run", "scheme"), cfg.scheme)
    cfg.init_mode = get(("run", "init_mode"), cfg.init_mode)
    cfg.seed = get(("run", "seed"), cfg.seed)
    cfg.samples = get(("run", "samples"), cfg.samples)
    cfg.grid_M = get(("run", "grid_M"), cfg.grid_M)
    cfg.gammas = get(("run", "gamma"), cfg.gammas)
    cfg.infsup_N = get(("run", "infsup_N"))
    cfg.infsup_M = get(("run", "infsup_M"), cfg.infsup_M)
    for k in cfg.tol:
        cfg.tol[k] = get(("tolerances", k), cfg.tol[k])
    _check(cfg, lines)
    return cfg


def _check(cfg, lines):
    def fail(section, key, msg):
        ln, col = _locate(lines, section, key)
        raise ConfigError(msg, ln, col)

    n, _ = cfg.spec.resolved()
    for k, v in cfg.tol.items():
        if not (v > 0 and math.isfinite(v)):
            fail("tolerances", k, f"tolerance {k} must be positive")
    if cfg.N_list is not None and any(not 1 <= N <= n for N in cfg.N_list):
        fail("run", "N", f"every N must lie in 1..{n}")
    if cfg.infsup_N is not None and any(not 1 <= N <= n for N in cfg.infsup_N):
        fail("run", "infsup_N", f"every N must lie in 1..{n}")
    for key, vals in (("M", cfg.M_list), ("infsup_M", cfg.infsup_M)):
        if any(M < 1 for M in vals):
            fail("run", key, f"every {key} must be positive")
    for key, val in (("samples", cfg.samples), ("grid_M", cfg.grid_M)):
        if val < 1:
            fail("run", key, f"{key} must be positive")
    if not 0 <= cfg.seed < 2**64:
        fail("run", "seed", "seed must be an unsigned 64-bit integer")


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


REPORT_COLUMNS = ("section", "check", "N", "M", "value", "threshold", "passed", "detail")
LEDGER_COLUMNS = ("source", "id", "N", "M", "name", "value")


class Report:
    def __init__(self):
        self.rows = []
        self.ledger = []

    def add(self, section, check, value=None, threshold=None, passed=True, N=None, M=None, detail=""):
        self.rows.append((section, check, N, M, value, threshold, bool(passed), detail))

    def note(self, source, id_, name, value, N=None, M=None):
        self.ledger.append((source, id_, N, M, name, value))

    @property
    def passed(self):
        return all(r[6] for r in self.rows)

    def write(self, out):
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, cols, rows in (("report.csv", REPORT_COLUMNS, self.rows), ("ledger.csv", LEDGER_COLUMNS, self.ledger)):
            with open(out / name, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\r\n")
                w.writerow(cols)
                for r in rows:
                    w.writerow([fmt(x) for x in r])


def build_problem(cfg):
    fam, prob = make_instance(cfg.spec)
    if cfg.manufactured:
        prob = manufacture(prob, standard_exact_solution(fam))
    return fam, prob


def _N_list(cfg, fam):
    return cfg.N_list or [fam.dim]


def cmd_validate(cfg, fam, prob, rep):
    grid = TimeGrid.uniform(fam.T, cfg.grid_M)
    comp = check_compatibility(fam, grid, seed=cfg.seed)
    for check, value, ok in comp.rows():
        rep.add("validate", check, value, None, ok)
    for report in (validate_L(prob, grid, cfg.samples, cfg.seed), validate_A(prob, grid, cfg.samples, cfg.seed)):
        for e in report.entries:
            first = next(iter(e.constants.values()))
            rep.add("validate", e.id, first, None, e.passed, detail=e.note)
            for k, v in e.constants.items():
                rep.note("assumption", e.id, k, v)
    zero = transported_basis_check(fam, grid)
    rep.add("validate", "transported_basis", zero, 0.0, zero == 0.0)


def cmd_solve(cfg, fam, prob, rep):
    Ns = _N_list(cfg, fam)
    cells = [(N, M) for N in Ns for M in cfg.M_list]
    order = ORDERS[cfg.scheme]

    def run(cell):
        N, M = cell
        sol = solve(prob, N, StepperConfig(cfg.scheme, M, cfg.tol["linear"]), init_mode=cfg.init_mode)
        return sol.discrete_residual, ledger_entry(prob, sol)

    results = parallel_map(run, cells)
    ledger = EstimateLedger()
    for (N, M), (resid, entry) in zip(cells, results):
        ledger.add(entry)
        rep.add("solve", "discrete_residual", resid, 10 * cfg.tol["linear"], resid <= 10 * cfg.tol["linear"], N, M)
        for k, v in entry.row().items():
            if isinstance(v, float):
                rep.note("estimate", "ledger", k, v, N, M)
    if len(cfg.M_list) >= 2:
        for N in Ns:
            rows = sorted((e.M, e.energy_residual) for e in ledger if e.N == N)
            p = fitted_order([m for m, _ in rows], [r for _, r in rows])
            ok = all(r <= cfg.tol["energy"] for _, r in rows) or (
                math.isfinite(p) and p >= order - cfg.tol["order"])
            rep.add("solve", "energy_identity_order", p, order, ok, N,
                    detail=f"finest residual={fmt(rows[-1][1])}")
    if len({N for N in Ns}) >= 3:
        for M in cfg.M_list:
            sub = EstimateLedger([e for e in ledger if e.M == M])
            checks = [apriori_uN(sub), apriori_sup(sub)]
            if prob.f_tag == "H" and cfg.init_mode == "truncation":
                checks.append(apriori_dotuN(sub))
            for b in checks:
                rep.add("solve", f"bounded_in_N.{b.quantity}", b.spread, 0.05, b.passed, None, M,
                        detail=f"sup/last={fmt(b.sup_over_last)}")
    return ledger


def cmd_converge(cfg, fam, prob, rep, out):
    Ns = _N_list(cfg, fam)
    if cfg.manufactured:
        reference = standard_exact_solution(fam)
    else:
        N_ref = min(fam.dim, 2 * max(Ns))
        reference = solve(prob, N_ref, StepperConfig(cfg.scheme, 4 * max(cfg.M_list)), init_mode=cfg.init_mode)
    table = convergence_study(prob, Ns, cfg.M_list, reference, cfg.scheme, cfg.init_mode)
    for row in table.rows():
        rep.add("converge", "error_L2V", row["error"], None, math.isfinite(row["error"]), row["N"], row["M"])
    expected = ORDERS[cfg.scheme]
    if len(cfg.M_list) >= 2:
        for N, p in table.orders.items():
            rep.note("converge", "temporal_order", "fitted_order", p, N)
        # truncated N carry a spatial error floor; the order gate runs at full resolution
        full = table
        if max(Ns) < fam.dim:
            if not cfg.manufactured:
                reference = solve(prob, fam.dim, StepperConfig(cfg.scheme, 4 * max(cfg.M_list)), init_mode=cfg.init_mode)
            full = convergence_study(prob, [fam.dim], cfg.M_list, reference, cfg.scheme, cfg.init_mode)
        p = full.orders[fam.dim] if max(Ns) < fam.dim else table.orders[fam.dim]
        ok = math.isfinite(p) and abs(p - expected) <= cfg.tol["order"]
        rep.add("converge", "temporal_order", p, expected, ok, fam.dim, detail=f"+-{fmt(cfg.tol['order'])}")
    render_convergence(table, Path(out) / "convergence.svg", expected, f"{fam.name}, {cfg.scheme}")
    return table


def cmd_infsup(cfg, fam, prob, rep):
    Ns = cfg.infsup_N or [min(8, fam.dim)]

    def run(cell):
        N, M = cell
        return (inf_sup_estimate(prob, N, TimeGrid.uniform(fam.T, M)),
                inf_sup_estimate(prob, N, TimeGrid.uniform(fam.T, 2 * M)))

    cells = [(N, M) for N in Ns for M in cfg.infsup_M]
    for (N, M), (s1, s2) in zip(cells, parallel_map(run, cells)):
        drift = abs(s2 - s1) / s1 if s1 > 0 else math.inf
        rep.add("infsup", "sigma_min", s1, 0.0, s1 > 0, N, M)
        rep.add("infsup", "sigma_min_drift_2M", drift, cfg.tol["infsup_drift"], drift <= cfg.tol["infsup_drift"], N, M)
    if cfg.gammas:
        N, M = Ns[0], cfg.infsup_M[0]
        sw = gamma_sweep(prob, N, TimeGrid.uniform(fam.T, M), cfg.gammas)
        for g, s in zip(sw.gammas, sw.sigmas):
            rep.note("infsup", "gamma_sweep", f"sigma(gamma={fmt(g)})", s, N, M)
        rep.add("infsup", "gamma_star", sw.gamma_star, None, sw.sigma_star > 0, N, M,
                detail=f"sigma*={fmt(sw.sigma_star)}")


def cmd_uniqueness(cfg, fam, prob, rep):
    N = max(_N_list(cfg, fam))
    u = uniqueness_check(prob, StepperConfig(cfg.scheme, cfg.M_list[0], cfg.tol["linear"]), N, cfg.seed)
    rep.add("uniqueness", "superposition_defect", u.superposition_defect, 1e-10, u.superposition_defect <= 1e-10, N)
    rep.add("uniqueness", "scaling_defect", u.scaling_defect, 1e-10, u.scaling_defect <= 1e-10, N)
    rep.add("uniqueness", "homogeneous_max", u.homogeneous_max, 0.0, u.homogeneous_max == 0.0, N)


def run(cfg, out):
    """Execute ``cfg`` and write artifacts under ``out``; returns the exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rep = Report()
    fam, prob = build_problem(cfg)
    steps = {
        "validate": [cmd_validate],
        "solve": [cmd_solve],
        "converge": [lambda *a: cmd_converge(*a, out)],
        "infsup": [cmd_infsup],
        "report": [cmd_validate, cmd_solve, lambda *a: cmd_converge(*a, out), cmd_infsup, cmd_uniqueness],
    }[cfg.command]
    code = EXIT_OK
    for step in steps:
        try:
            step(cfg, fam, prob, rep)
        except BlowUpError as exc:
            rep.add(cfg.command, "blow_up", exc.step, None, False, detail=str(exc))
            code = EXIT_BLOWUP
            break
        except EvoSpaceError as exc:
            rep.add(cfg.command, type(exc).__name__, None, None, False, detail=str(exc))
    rep.write(out)
    if code == EXIT_OK and not rep.passed:
        code = EXIT_FAIL
    return code


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def main(argv=None):
    ap = argparse.ArgumentParser(prog="evospace", description="Evolving-space parabolic problem checks.")
    ap.add_argument("--config", type=Path, help="INI run configuration")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--seed", type=_u64, help="seed for randomized validators (overrides config)")
    ap.add_argument("--command", choices=COMMANDS, help="command (overrides config)")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.seed is not None:
        cfg.seed = args.seed
    if args.command is not None:
        cfg.command = args.command
    code = run(cfg, args.out)
    print(f"{cfg.command}: {['ok', 'failed', 'parse error', 'blow-up'][code]} ({args.out / 'report.csv'})")
    return code


if __name__ == "__main__":
    sys.exit(main())
