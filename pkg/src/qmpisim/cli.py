"""Command-line front end.

Every subcommand reads an optional JSON config file of flat dotted keys
(``"machine.num_nodes"``, ``"sendq.E"``, ``"tfim.J"``, ...); flags given on
the command line override the file.  Exit codes: 0 success, 1 model or
configuration error (including bad usage and I/O), 2 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import report as rep
from .apps import ChemTermSpec, TfimSpec, bcast_bench, chem_term, epr_demo, tfim_evolve, tfim_oracle
from .apps.chem import NEEDS_AUX, block_layout
from .apps.tfim import ORACLE_MAX_SPINS
from .errors import (
    AllocationError, CapacityError, ConfigError, EprBufferError, InfeasibleScheduleError,
    ModelError, QmpiSimError,
)
from .machine import Machine, MachineConfig
from .sendq import (
    CHEM_METHODS, SendqParams, analytic_bcast_cat_delay, analytic_bcast_tree_delay,
    analytic_chem_delay, count_epr_for_terms, evaluate_trace, rotation_busy_time,
)
from .statevec import StateVector, apply_exp_multi_z_oracle, default_max_qubits, fidelity, random_state

COMMANDS = ("epr-demo", "tfim", "chem-term", "bcast-bench", "term-count", "validate")
STOCHASTIC = ("epr-demo", "tfim", "chem-term", "bcast-bench")
USER_ERRORS = (ConfigError, ModelError, CapacityError, AllocationError, EprBufferError,
               InfeasibleScheduleError)

# flag dest -> flat config key
FLAG_KEYS = {
    "seed": "seed", "output": "output", "format": "format", "jobs": "jobs",
    "nodes": "machine.num_nodes", "Q": "machine.compute_qubits_per_node",
    "S": "machine.epr_slots_per_node", "max_qubits": "machine.max_total_qubits",
    "E": "sendq.E", "DR": "sendq.D_R", "DM": "sendq.D_M", "DF": "sendq.D_F", "DG": "sendq.D_G",
    "factories": "sendq.rotation_factories_per_node",
    "spins": "tfim.n_spins", "J": "tfim.J", "Gamma": "tfim.Gamma", "time": "tfim.t",
    "trotter_steps": "tfim.trotter_steps", "annealing_steps": "tfim.annealing_steps",
    "initial": "tfim.initial",
    "k": "chem.k", "qubits": "chem.qubits", "t": "chem.t", "method": "chem.method",
    "aux_rank": "chem.aux_rank",
    "N_list": "bench.N_list",
    "terms": "terms.path", "terms_method": "terms.method",
}
KNOWN_KEYS = set(FLAG_KEYS.values()) | {
    "sendq.S", "sendq.N", "sendq.Q", "tfim.layout", "chem.layout", "terms.layout",
    "terms.num_qubits", "command",
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def _int_list(text: str) -> list:
    text = text.strip()
    if not text:
        return []
    return [int(x) for x in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run")
    g.add_argument("--config", help="JSON file with flat dotted keys")
    g.add_argument("--seed", type=int)
    g.add_argument("--output", "-o", help="report path (default: stdout)")
    g.add_argument("--format", choices=("json", "csv"))
    g.add_argument("--jobs", type=int, help="worker threads for independent sweep points")
    g.add_argument("--timestamp", help=argparse.SUPPRESS)
    m = common.add_argument_group("machine")
    m.add_argument("--nodes", type=int)
    m.add_argument("--Q", type=int)
    m.add_argument("--S", type=int)
    m.add_argument("--max-qubits", type=int)
    s = common.add_argument_group("cost model")
    for flag in ("E", "DR", "DM", "DF", "DG"):
        s.add_argument(f"--{flag}", type=str)
    s.add_argument("--factories", type=int)

    parser = _Parser(prog="qmpi-sim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("epr-demo", parents=[common], help="share and measure one EPR pair")

    p = sub.add_parser("tfim", parents=[common], help="distributed TFIM evolution")
    p.add_argument("--spins", type=int)
    p.add_argument("--J", type=float)
    p.add_argument("--Gamma", type=float)
    p.add_argument("--time", type=float)
    p.add_argument("--trotter-steps", type=int)
    p.add_argument("--annealing-steps", type=int)
    p.add_argument("--initial")

    p = sub.add_parser("chem-term", parents=[common], help="exp(-it Z..Z) on k qubits")
    p.add_argument("--k", type=int)
    p.add_argument("--qubits", type=_int_list)
    p.add_argument("--t", type=float)
    p.add_argument("--method", choices=CHEM_METHODS)
    p.add_argument("--aux-rank", type=int)

    p = sub.add_parser("bcast-bench", parents=[common], help="tree vs cat broadcast")
    p.add_argument("--N-list", dest="N_list", type=_int_list)

    p = sub.add_parser("term-count", parents=[common], help="EPR pairs per Trotter step")
    p.add_argument("--terms", help="JSON file: list of terms or {'terms': [...], 'layout': {...}}")
    p.add_argument("--method", dest="terms_method", choices=CHEM_METHODS)

    p = sub.add_parser("validate", parents=[common], help="check a configuration")
    p.add_argument("--target", choices=("tfim", "chem-term", "bcast-bench", "term-count"),
                   help=argparse.SUPPRESS)
    return parser


# -- configuration -----------------------------------------------------------

def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(data) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return data


def merge(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _get(cfg, key, default=None):
    return cfg.get(key, default)


def _tfim_spec(cfg) -> TfimSpec:
    return TfimSpec(
        n_spins=int(_get(cfg, "tfim.n_spins", 4)),
        J=float(_get(cfg, "tfim.J", 1.0)),
        Gamma=float(_get(cfg, "tfim.Gamma", 1.0)),
        t=float(_get(cfg, "tfim.t", 1.0)),
        trotter_steps=int(_get(cfg, "tfim.trotter_steps", 1)),
        annealing_steps=int(_get(cfg, "tfim.annealing_steps", 0)),
        layout=_get(cfg, "tfim.layout"),
        initial=str(_get(cfg, "tfim.initial", "zero")),
    )


def _chem_spec(cfg) -> ChemTermSpec:
    qubits = _get(cfg, "chem.qubits")
    if qubits is None:
        qubits = list(range(int(_get(cfg, "chem.k", 2))))
    elif "chem.k" in cfg and int(cfg["chem.k"]) != len(qubits):
        raise ConfigError(f"chem.k={cfg['chem.k']} but {len(qubits)} qubits listed")
    return ChemTermSpec(qubits, float(_get(cfg, "chem.t", 0.5)),
                        str(_get(cfg, "chem.method", "in_place")))


def _chem_layout(cfg, spec):
    layout = _get(cfg, "chem.layout")
    if layout is None:
        return None
    return {int(q): int(r) for q, r in layout.items()}


def _machine_defaults(command: str, cfg: dict) -> tuple:
    """(N, Q, S) used when the config leaves them open."""
    S = 2
    if command == "epr-demo":
        return 2, 1, 1
    if command == "tfim":
        spec = _tfim_spec(cfg)
        N = int(_get(cfg, "machine.num_nodes", 1))
        q = spec.n_spins // N if N >= 1 and spec.n_spins % N == 0 else spec.n_spins
        return 1, q + (1 if N > 1 else 0), S
    if command == "chem-term":
        spec = _chem_spec(cfg)
        layout = _chem_layout(cfg, spec)
        if layout is None:
            N = spec.k + (1 if spec.method in NEEDS_AUX else 0)
            return N, 2, S
        per_rank = max(list(layout.values()).count(r) for r in set(layout.values()))
        return max(layout.values()) + 2, per_rank + 1, S
    if command == "bcast-bench":
        return max(_get(cfg, "bench.N_list", [2, 4, 8]) or [1]), 1, S
    return 2, 1, S


def machine_config(command: str, cfg: dict, seed: Optional[int]) -> MachineConfig:
    N, Q, S = _machine_defaults(command, cfg)
    cap = int(_get(cfg, "machine.max_total_qubits", default_max_qubits()))
    config = MachineConfig(
        num_nodes=int(_get(cfg, "machine.num_nodes", N)),
        compute_qubits_per_node=int(_get(cfg, "machine.compute_qubits_per_node", Q)),
        epr_slots_per_node=int(_get(cfg, "machine.epr_slots_per_node", S)),
        max_total_qubits=cap,
        seed=0 if seed is None else seed,
    )
    if command == "bcast-bench":
        # the bench only sizes the sweep; oversized points fall back to closed forms
        MachineConfig(config.num_nodes, config.compute_qubits_per_node,
                      config.epr_slots_per_node, max_total_qubits=10**9).validate()
    else:
        config.validate()
    return config


def sendq_params(cfg: dict, machine: MachineConfig) -> SendqParams:
    for key, expected in (("sendq.N", machine.num_nodes), ("sendq.S", machine.epr_slots_per_node),
                          ("sendq.Q", machine.compute_qubits_per_node)):
        if key in cfg and int(cfg[key]) != expected:
            raise ConfigError(f"{key}={cfg[key]} disagrees with the machine ({expected})")
    return SendqParams(
        S=machine.epr_slots_per_node, N=machine.num_nodes, Q=machine.compute_qubits_per_node,
        E=Fraction(str(_get(cfg, "sendq.E", 1))),
        D_R=Fraction(str(_get(cfg, "sendq.D_R", 1))),
        D_M=Fraction(str(_get(cfg, "sendq.D_M", 0))),
        D_F=Fraction(str(_get(cfg, "sendq.D_F", 0))),
        D_G=Fraction(str(_get(cfg, "sendq.D_G", 0))),
        rotation_factories_per_node=int(_get(cfg, "sendq.rotation_factories_per_node", 1)),
    )


def _config_record(cfg: dict, machine: MachineConfig, params: Optional[SendqParams]) -> dict:
    out = {k: v for k, v in sorted(cfg.items()) if k not in ("output", "format", "jobs")}
    out["machine.num_nodes"] = machine.num_nodes
    out["machine.compute_qubits_per_node"] = machine.compute_qubits_per_node
    out["machine.epr_slots_per_node"] = machine.epr_slots_per_node
    out["machine.max_total_qubits"] = machine.max_total_qubits
    if params is not None:
        for key, value in params.to_dict().items():
            out[f"sendq.{key}"] = value
    return out


def _require_seed(command, seed):
    if command in STOCHASTIC and seed is None:
        raise ConfigError(f"{command} is stochastic: pass --seed (or 'seed' in the config)")


# -- commands ------------------------------------------------------------------

def cmd_epr_demo(cfg, seed):
    mc = machine_config("epr-demo", cfg, seed)
    params = sendq_params(cfg, mc)
    machine = Machine(mc)
    bits = epr_demo(machine)
    results = {"measurements": list(bits), "equal": bits[0] == bits[1]}
    return mc, params, results, evaluate_trace(machine.trace, params).to_dict()


def cmd_tfim(cfg, seed):
    spec = _tfim_spec(cfg)
    spec.spins_per_node(int(_get(cfg, "machine.num_nodes", 1)))
    mc = machine_config("tfim", cfg, seed)
    params = sendq_params(cfg, mc)
    machine = Machine(mc)
    result = tfim_evolve(machine, spec)
    report = result.cost(params)
    analytic = result.analytic(params)
    segments = len(spec.schedule()) * spec.trotter_steps
    results = {
        "spins_per_node": result.spins_per_node,
        "trotter_steps_total": segments,
        "epr_per_step_measured": result.ledger.epr_pairs_consumed / segments,
        "epr_per_step_expected": mc.num_nodes if mc.num_nodes > 1 else 0,
        "d_trotter": str(analytic.d_trotter),
        "per_step_delay_analytic": str(analytic.per_step_delay),
        "rotation_busy_time": {str(r): str(t) for r, t in
                               rotation_busy_time(result.trace, params).items()},
    }
    if spec.n_spins <= ORACLE_MAX_SPINS:
        results["fidelity"] = fidelity(result.state, tfim_oracle(spec))
    probs = np.abs(result.state) ** 2
    outcome = int(np.random.default_rng(seed).choice(probs.size, p=probs / probs.sum()))
    results["measurements"] = [(outcome >> i) & 1 for i in range(spec.n_spins)]
    return mc, params, results, report.to_dict()


def cmd_chem_term(cfg, seed):
    spec = _chem_spec(cfg)
    mc = machine_config("chem-term", cfg, seed)
    params = sendq_params(cfg, mc)
    machine = Machine(mc)
    rng = np.random.default_rng(seed)
    psi = random_state(spec.k, rng)
    result = chem_term(machine, spec, _chem_layout(cfg, spec), _get(cfg, "chem.aux_rank"), psi)
    ref = StateVector.from_amplitudes(psi, max_qubits=spec.k)
    apply_exp_multi_z_oracle(ref, spec.t, range(spec.k))
    report = result.cost(params)
    estimate = analytic_chem_delay(spec.method, len(result.ranks), params)
    results = {
        "fidelity": fidelity(result.state, ref),
        "ranks": result.ranks,
        "aux_rank": result.aux_rank,
        "analytic_delay": str(estimate.delay),
        "analytic_epr": estimate.epr,
        "min_epr_slots": estimate.min_epr_slots,
    }
    return mc, params, results, report.to_dict()


def _bench_point(N, cfg, seed, S, params):
    p = params.replace(N=N)
    tree, cat = analytic_bcast_tree_delay(N, p), analytic_bcast_cat_delay(p)
    cap = int(_get(cfg, "machine.max_total_qubits", default_max_qubits()))
    if N * (1 + S) > cap:
        # too large to simulate densely; report the closed forms only
        return {"N": N, "delay_tree": str(tree), "delay_cat": str(cat), "epr": N - 1,
                "epr_tree": N - 1, "epr_cat": N - 1, "simulated": False,
                "analytic_tree": str(tree), "analytic_cat": str(cat)}
    ss = np.random.SeedSequence([seed, N])
    mc = MachineConfig(N, 1, S, max_total_qubits=cap, seed=int(ss.generate_state(1)[0]))
    row = bcast_bench(Machine(mc), [N], p)[0]
    d = row.to_dict()
    d.update(simulated=True, analytic_tree=str(tree), analytic_cat=str(cat))
    return d


def cmd_bcast_bench(cfg, seed, jobs=1):
    N_list = [int(n) for n in _get(cfg, "bench.N_list", [2, 4, 8])]
    mc = machine_config("bcast-bench", cfg, seed)
    params = sendq_params(cfg, mc)
    for N in N_list:
        if not 1 <= N <= mc.num_nodes:
            raise ConfigError(f"N={N} outside 1..{mc.num_nodes}")
    S = mc.epr_slots_per_node
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            table = list(pool.map(lambda n: _bench_point(n, cfg, seed, S, params), N_list))
    else:
        table = [_bench_point(n, cfg, seed, S, params) for n in N_list]
    return mc, params, {"table": table}, None


def _load_terms(cfg):
    path = _get(cfg, "terms.path")
    if not path:
        raise ConfigError("term-count needs --terms FILE (or 'terms.path')")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read terms file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed terms file {path}: {exc}") from exc
    layout = _get(cfg, "terms.layout")
    if isinstance(data, dict):
        layout = data.get("layout", layout)
        data = data.get("terms")
    if not isinstance(data, list) or not all(isinstance(t, list) for t in data):
        raise ConfigError("terms must be a list of qubit-index lists")
    return [[int(q) for q in t] for t in data], layout


def cmd_term_count(cfg, seed):
    terms, layout = _load_terms(cfg)
    mc = machine_config("term-count", cfg, seed)
    qubits = sorted({q for t in terms for q in t})
    if layout is None:
        n = int(_get(cfg, "terms.num_qubits", (max(qubits) + 1) if qubits else 0))
        layout = block_layout(range(n), mc.num_nodes) if n else {}
    else:
        layout = {int(q): int(r) for q, r in layout.items()}
    counts = {m: count_epr_for_terms(terms, layout, m) for m in CHEM_METHODS}
    method = _get(cfg, "terms.method", "in_place")
    results = {"num_terms": len(terms), "epr_per_step": counts, "method": method,
               "epr": counts[method]}
    return mc, None, results, None


def diagnose(cfg: dict, target: Optional[str] = None) -> list:
    diags = []

    def add(level, message):
        diags.append({"level": level, "message": message})

    command = target or cfg.get("command")
    try:
        mc = machine_config(command or "validate", cfg, cfg.get("seed"))
    except QmpiSimError as exc:
        add("error", str(exc))
        return diags
    try:
        sendq_params(cfg, mc)
    except QmpiSimError as exc:
        add("error", str(exc))
    if any(k.startswith("tfim.") for k in cfg) or command == "tfim":
        try:
            spec = _tfim_spec(cfg)
            spec.spins_per_node(mc.num_nodes)
            need = spec.n_spins // mc.num_nodes + (1 if mc.num_nodes > 1 else 0)
            if mc.compute_qubits_per_node < need:
                add("error", f"TFIM needs Q >= {need} (spins per node plus one scratch qubit)")
            if mc.epr_slots_per_node < 1 and mc.num_nodes > 1:
                add("error", "TFIM across nodes needs S >= 1")
        except QmpiSimError as exc:
            add("error", str(exc))
    if any(k.startswith("chem.") for k in cfg) or command == "chem-term":
        try:
            spec = _chem_spec(cfg)
            if spec.method == "constant_depth" and mc.epr_slots_per_node < 2:
                add("warning", "constant_depth needs S >= 2 at internal cat-state nodes "
                               f"(have S={mc.epr_slots_per_node})")
        except QmpiSimError as exc:
            add("error", str(exc))
    if "bench.N_list" in cfg:
        for N in cfg["bench.N_list"]:
            if not 1 <= int(N) <= mc.num_nodes:
                add("error", f"bench N={N} outside 1..{mc.num_nodes}")
        if mc.epr_slots_per_node < 2:
            add("warning", "bcast_cat needs S >= 2 for N >= 3")
    return diags


def cmd_validate(cfg, seed, target=None):
    diags = diagnose(cfg, target)
    try:
        mc = machine_config(target or cfg.get("command") or "validate", cfg, seed)
    except QmpiSimError:
        mc = None
    config = dict(sorted(cfg.items()))
    return mc, None, {"diagnostics": diags, "ok": not any(d["level"] == "error" for d in diags)}, None, config


# -- entry point -----------------------------------------------------------------

def _write(text: str, output: Optional[str]):
    if output:
        try:
            with open(output, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise ConfigError(f"cannot write {output}: {exc.strerror}") from exc
    else:
        sys.stdout.write(text)


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = merge(args)
        seed = cfg.get("seed")
        fmt = cfg.get("format", "json")
        command = args.command
        _require_seed(command, seed)
        if fmt == "csv" and command != "bcast-bench":
            raise ConfigError("CSV output is only available for bcast-bench")
        if command == "validate":
            mc, params, results, cost, config = cmd_validate(cfg, seed, args.target)
        else:
            handler = {
                "epr-demo": cmd_epr_demo, "tfim": cmd_tfim, "chem-term": cmd_chem_term,
                "term-count": cmd_term_count,
            }.get(command)
            if handler is not None:
                mc, params, results, cost = handler(cfg, seed)
            else:
                mc, params, results, cost = cmd_bcast_bench(cfg, seed, int(cfg.get("jobs") or 1))
            config = _config_record(cfg, mc, params)
        if fmt == "csv":
            _write(rep.bench_csv(results["table"]), cfg.get("output"))
            return 0
        report = rep.build_report(command, config, results, cost, seed, args.timestamp)
        _write(rep.dumps(report), cfg.get("output"))
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (QmpiSimError, AssertionError, jsonschema.ValidationError) as exc:
        print(f"invariant violation: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
