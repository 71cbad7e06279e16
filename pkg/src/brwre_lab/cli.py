"""brwre-lab command line.

Every subcommand writes its artifacts plus manifest.json into --out.
Exit codes: 0 success, 2 validation failure, 3 numerical contract
failure, 4 budget exhausted.  Errors go to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .artifacts import write_csv, write_json, write_manifest
from .errors import BrwreLabError, BudgetError, InvalidConfig, NumericalContractError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_CONTRACT, EXIT_BUDGET = 0, 2, 3, 4


# ---------------------------------------------------------------- argument helpers

def _int_range(text: str) -> list[int]:
    """'0..10', '0,2,5' or '3'."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text}")
        return v
    return parse


def _threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("BRWRE_LAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InvalidConfig("BRWRE_LAB_THREADS must be an integer", value=env) from None
        if n < 1:
            raise InvalidConfig("BRWRE_LAB_THREADS must be >= 1", value=env)
        return n
    return 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidConfig(message, usage=self.format_usage().strip())


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="brwre-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, env_required=True):
        if env_required:
            sp.add_argument("--env", required=True, help="environment JSON (path or bundled name)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="brwre-out")
        sp.add_argument("--threads", type=_positive(int), default=None)
        sp.add_argument("--config", default=None, help="JSON file with parameter overrides")
        return sp

    sp = common(sub.add_parser("validate", help="boundary and moment assumptions"))
    sp.add_argument("--tol", type=_positive(float), default=1e-9)
    sp.add_argument("--delta", type=_positive(float), default=1.0)

    sp = common(sub.add_parser("harmonic", help="U(ξ, y) with certified error bars"))
    sp.add_argument("--y", type=_int_range, default=_int_range("0..10"))
    sp.add_argument("--tol", type=_positive(float), default=1e-8)
    sp.add_argument("--max-horizon", type=_positive(int), default=10000)

    sp = common(sub.add_parser("conditioned", help="walk conditioned to stay above -beta"))
    sp.add_argument("--n", type=_positive(int), default=10)
    sp.add_argument("--beta", type=int, default=0)
    sp.add_argument("--a", type=int, default=0)
    sp.add_argument("--trials", type=int, default=0, help="sampled paths (0: marginals only)")
    sp.add_argument("--tol", type=_positive(float), default=1e-10)

    sp = common(sub.add_parser("renewal", help="ladder renewal functions of the annealed walk"))
    sp.add_argument("--x-max", type=_positive(int), default=40)
    sp.add_argument("--method", choices=("exact", "monte_carlo"), default="exact")
    sp.add_argument("--trials", type=_positive(int), default=20000)
    sp.add_argument("--max-steps", type=_positive(int), default=20000)
    sp.add_argument("--max-censored", type=_positive(float), default=0.05)

    sp = common(sub.add_parser("tanaka-test", help="excursion decomposition tests"))
    sp.add_argument("--trials", type=_positive(int), default=104000)
    sp.add_argument("--permutations", type=_positive(int), default=999)
    sp.add_argument("--cap", type=_positive(int), default=2000)
    sp.add_argument("--k-max", type=_positive(int), default=4)

    sp = common(sub.add_parser("divergence-probe", help="partial sums of U(ξ,β)F(ζ_n)"))
    sp.add_argument("--beta", type=int, default=0)
    sp.add_argument("--exponents", default="2,3", help="F(x) = (1 + x_+)^-p for each p")
    sp.add_argument("--trials", type=_positive(int), default=2000)
    sp.add_argument("--horizons", type=_int_range, default=[250, 500, 1000, 2000])

    sp = common(sub.add_parser("brwre", help="simulate W_n, D_n, D_n^(beta)"))
    sp.add_argument("--trials", type=_positive(int), default=100)
    sp.add_argument("--horizon", type=_positive(int), default=30)
    sp.add_argument("--betas", type=_int_range, default=[0])
    sp.add_argument("--cap", type=_positive(int), default=10**12)
    sp.add_argument("--quenched", action="store_true", help="share one environment path across trials")

    sp = common(sub.add_parser("spine-check", help="spinal change of measure"))
    sp.add_argument("--beta", type=int, default=0)
    sp.add_argument("--a", type=int, default=0)
    sp.add_argument("--n", type=_positive(int), default=20)
    sp.add_argument("--samples", type=_positive(int), default=100000)

    sp = common(sub.add_parser("criterion", help="moment criterion and series probes"))
    sp.add_argument("--probe-trials", type=int, default=0, help="conditioned paths for the series probes")
    sp.add_argument("--probe-horizon", type=_positive(int), default=1024)
    sp.add_argument("--beta", type=int, default=0)
    sp.add_argument("--c", type=float, default=1.0)

    sp = common(sub.add_parser("acceptance", help="run the acceptance suite"), env_required=False)
    sp.add_argument("--suite", choices=("primary",), default="primary")
    sp.add_argument("--only", type=_int_range, default=None)
    return p


# ---------------------------------------------------------------- config

def _config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("config", "out")}
    if args.config:
        try:
            extra = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig("cannot read config file", error=str(exc)) from None
        if not isinstance(extra, dict):
            raise InvalidConfig("config file must hold a JSON object")
        unknown = set(extra) - set(cfg) - {"threads"}
        if unknown:
            raise InvalidConfig("unknown config keys", keys=sorted(unknown))
        cfg.update(extra)
    for k, v in cfg.items():
        if (k == "tol" or k.endswith("_tol")) and not (isinstance(v, (int, float)) and v > 0):
            raise InvalidConfig("tolerances must be positive", key=k)
        if k in ("horizon", "n", "max_horizon") and not (isinstance(v, int) and v >= 1):
            raise InvalidConfig("horizons must be >= 1", key=k)
    cfg["threads"] = _threads(cfg.get("threads"))
    return cfg


def _load(cfg):
    from .env_model import load_environment
    return load_environment(cfg["env"])


# ---------------------------------------------------------------- subcommands

def cmd_validate(cfg, out):
    from .env_model import validate_assumptions
    rep = validate_assumptions(_load(cfg), cfg["delta"], cfg["tol"])
    files = [write_json(out / "validate.json", rep.to_dict())]
    return files, rep.passed


def cmd_harmonic(cfg, out):
    from .env_model import EnvironmentPath
    from .quenched_walk import harmonic_U
    path = EnvironmentPath(_load(cfg), cfg["seed"])
    rows = []
    for y in cfg["y"]:
        hv = harmonic_U(path, y, cfg["tol"], cfg["max_horizon"])
        rows.append([y, hv.value, hv.error_bound, hv.horizon])
    return [write_csv(out / "harmonic.csv", ["y", "U", "error_bound", "horizon"], rows)], True


def cmd_conditioned(cfg, out):
    from .conditioned_walk import chained_marginal, conditioned_marginal, sample_conditioned_paths
    from .env_model import EnvironmentPath
    from .stats_harness import RngStream
    path = EnvironmentPath(_load(cfg), cfg["seed"])
    rows, dev = [], []
    for n in range(cfg["n"] + 1):
        direct = conditioned_marginal(path, n, cfg["beta"], cfg["tol"], a=cfg["a"]).to_dict()
        chained = chained_marginal(path, n, cfg["beta"], cfg["tol"], cfg["a"], max_deviation=dev).to_dict()
        for x in sorted(set(direct) | set(chained)):
            rows.append([n, x, direct.get(x, 0.0), chained.get(x, 0.0)])
    files = [write_csv(out / "conditioned_marginals.csv", ["n", "x", "direct", "chained"], rows)]
    report = {"max_row_deviation": max(dev)}
    if cfg["trials"] > 0:
        paths = sample_conditioned_paths(path, cfg["beta"], cfg["n"], cfg["trials"],
                                         RngStream(cfg["seed"]).substream("conditioned"), a=cfg["a"])
        files.append(write_csv(out / "conditioned_paths.csv", ["trial", "n", "position"],
                               ([t, n, int(paths[t, n])] for t in range(paths.shape[0])
                                for n in range(paths.shape[1]))))
    files.append(write_json(out / "conditioned.json", report))
    return files, True


def cmd_renewal(cfg, out):
    from .renewal_tanaka import harmonic_identity_Rminus, renewal_functions
    from .stats_harness import RngStream
    env = _load(cfg)
    table = renewal_functions(env, cfg["x_max"], cfg["method"], cfg["trials"],
                              RngStream(cfg["seed"]).substream("renewal"), cfg["max_steps"], cfg["max_censored"])
    rows = table.to_rows()
    header = list(rows[0])
    files = [write_csv(out / "renewal.csv", header, ([r[k] for k in header] for r in rows))]
    resid = harmonic_identity_Rminus(env, range(cfg["x_max"] + 1)) if table.exact else None
    files.append(write_json(out / "renewal.json", {
        "exact": table.exact, "censored_fraction": table.censored_fraction,
        "harmonic_identity_max_residual": None if resid is None else float(np.max(resid))}))
    return files, True


def cmd_tanaka(cfg, out):
    from .env_model import EnvironmentPath
    from .renewal_tanaka import excursion_law_test, sample_excursions, tanaka_identity_check, tanaka_independence_test
    from .stats_harness import RngStream
    env = _load(cfg)
    base = RngStream(cfg["seed"]).substream("tanaka")
    path = EnvironmentPath(env, cfg["seed"])
    ident = {k: tanaka_identity_check(path, k)[0] for k in range(1, cfg["k_max"] + 1)}
    indep = tanaka_independence_test(env, cfg["trials"], base.substream("indep"),
                                     permutations=cfg["permutations"], cap=cfg["cap"])
    law = excursion_law_test(env, cfg["trials"], base.substream("law"), cap=cfg["cap"])
    sample = sample_excursions(path, min(cfg["trials"], 10000), base.substream("sample"), cap=cfg["cap"],
                               post_steps=2, keep=0)
    feats = sample.features()
    names = sorted(feats)
    files = [write_csv(out / "excursions.csv", ["trial"] + names,
                       ([i] + [feats[k][i] for k in names] for i in range(len(feats[names[0]]))))]
    report = {"identity_residual": {str(k): v for k, v in ident.items()}, "independence": indep.to_dict(),
              "excursion_law": law.to_dict()}
    ok = max(ident.values()) <= 1e-8 and indep.passed and law.passed
    files.append(write_json(out / "tanaka.json", report))
    return files, ok


def cmd_divergence(cfg, out):
    from .renewal_tanaka import divergence_probe
    from .stats_harness import RngStream
    env = _load(cfg)
    base = RngStream(cfg["seed"]).substream("divergence")
    rows, reports = [], {}
    for p in (float(x) for x in cfg["exponents"].split(",")):
        rep = divergence_probe(env, cfg["beta"], lambda x, p=p: (1 + np.maximum(x, 0)) ** -p, cfg["trials"],
                               cfg["horizons"], base.substream(repr(p)))
        reports[repr(p)] = rep.to_dict()
        rows.extend([p, N, m] for N, m in zip(rep.horizons, rep.medians))
    files = [write_csv(out / "divergence.csv", ["exponent", "horizon", "median_partial_sum"], rows),
             write_json(out / "divergence.json", reports)]
    return files, True


def cmd_brwre(cfg, out):
    from .brwre_sim import rows_to_csv_records, run_trials
    from .env_model import EnvironmentPath
    env = _load(cfg)
    qpath = EnvironmentPath(env, cfg["seed"]) if cfg["quenched"] else None
    res = run_trials(env, cfg["trials"], cfg["horizon"], cfg["betas"], cfg["seed"], cfg["threads"], cfg["cap"],
                     quenched_path=qpath)
    header, recs = rows_to_csv_records(res, cfg["betas"])
    files = [write_csv(out / "brwre.csv", header, recs)]
    last = [rows[-1] for rows in res]
    summary = {"trials": len(res), "horizon": cfg["horizon"],
               "median_W": float(np.median([r.W for r in last])),
               "median_D": float(np.median([r.D for r in last])),
               "negative_D_fraction": float(np.mean([r.D < 0 for r in last])),
               "median_population": float(np.median([r.population for r in last]))}
    files.append(write_json(out / "brwre.json", summary))
    return files, True


def cmd_spine(cfg, out):
    from .env_model import EnvironmentPath
    from .spine import change_of_measure_check, sample_spinal_tree, spine_law_check, spine_posterior_check
    from .stats_harness import RngStream
    path = EnvironmentPath(_load(cfg), cfg["seed"])
    beta, a = cfg["beta"], cfg["a"]
    base = RngStream(cfg["seed"]).substream("spine")

    def W(tree):
        return math.fsum(math.exp(-path.law.lattice_step * x) for _, x in tree[-1])

    com = {f"{name}_n{n}": change_of_measure_check(path, beta, a, n, f)
           for n in (1, 2) for name, f in (("one", lambda t: 1.0), ("W", W))}
    report = {"change_of_measure": {k: {"lhs": lhs, "rhs": rhs} for k, (lhs, rhs) in com.items()},
              "posterior_residual": spine_posterior_check(path, beta, a, 2),
              "exact": [spine_law_check(path, beta, a, n).to_dict() for n in range(5)],
              "statistical": spine_law_check(path, beta, a, cfg["n"], "statistical", cfg["samples"],
                                             base.substream("law")).to_dict()}
    rows, rec = sample_spinal_tree(path, beta, a, cfg["n"], base.substream("tree"))
    files = [write_csv(out / "spine_path.csv", ["step", "position", "weight", "selection", "outcome_prob",
                                                "population", "D_beta"],
                       ([k, rec.positions[k], rec.weight[k], rec.selection[k - 1] if k else 1.0,
                         rec.outcome_probs[k - 1] if k else 1.0, rows[k].population, rows[k].D_beta[beta]]
                        for k in range(len(rec.positions)))),
             write_json(out / "spine.json", report)]
    return files, True


def cmd_criterion(cfg, out):
    from .criterion import moment_criterion, series_probe
    from .stats_harness import RngStream
    env = _load(cfg)
    report = moment_criterion(env).to_dict()
    if cfg["probe_trials"] > 0:
        base = RngStream(cfg["seed"]).substream("criterion")
        report["series_probes"] = {
            v: series_probe(env, cfg["beta"], cfg["probe_trials"], cfg["probe_horizon"], v, cfg["c"],
                            base.substream(v)).to_dict()
            for v in ("L1", "degenerate")}
    return [write_json(out / "criterion.json", report)], True


def cmd_acceptance(cfg, out):
    from .acceptance import run_suite
    only = set(cfg["only"]) if cfg.get("only") else None
    results = run_suite(cfg["seed"], cfg["threads"], only, echo=lambda s: print(s, file=sys.stderr))
    files = [write_csv(out / "acceptance.csv", ["criterion", "name", "passed"],
                       ([r.number, r.name, str(r.passed).lower()] for r in results)),
             write_json(out / "acceptance.json", {str(r.number): {"name": r.name, "passed": r.passed,
                                                                  "metrics": r.metrics} for r in results})]
    return files, all(r.passed for r in results)


COMMANDS = {"validate": cmd_validate, "harmonic": cmd_harmonic, "conditioned": cmd_conditioned,
            "renewal": cmd_renewal, "tanaka-test": cmd_tanaka, "divergence-probe": cmd_divergence,
            "brwre": cmd_brwre, "spine-check": cmd_spine, "criterion": cmd_criterion,
            "acceptance": cmd_acceptance}

# a failed check is a validation failure for `validate`, a contract failure elsewhere
FAILED_CHECK_EXIT = {"validate": EXIT_VALIDATION}


def _fail(payload: dict, code: int) -> int:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def run(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except InvalidConfig as exc:
        return _fail(exc.to_dict(), EXIT_VALIDATION)
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_VALIDATION
    try:
        cfg = _config(args, parser)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files, ok = COMMANDS[args.command](cfg, out)
        if "env" in cfg:
            from .artifacts import canonical_json
            from .env_model import environment_to_dict
            body = canonical_json(environment_to_dict(_load(cfg))).encode()
            cfg = {**cfg, "env_sha256": hashlib.sha256(body).hexdigest()}
        write_manifest(out, cfg, files)
    except ValidationError as exc:
        return _fail(exc.to_dict(), EXIT_VALIDATION)
    except NumericalContractError as exc:
        return _fail(exc.to_dict(), EXIT_CONTRACT)
    except BudgetError as exc:
        return _fail(exc.to_dict(), EXIT_BUDGET)
    except BrwreLabError as exc:
        return _fail(exc.to_dict(), 1)
    except ValueError as exc:
        return _fail({"error": "ValueError", "kind": "validation", "message": str(exc), "details": {}},
                     EXIT_VALIDATION)
    if not ok:
        return _fail({"error": "CheckFailed", "kind": "check", "command": args.command,
                      "message": "one or more checks failed; see the report in the output directory"},
                     FAILED_CHECK_EXIT.get(args.command, EXIT_CONTRACT))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
