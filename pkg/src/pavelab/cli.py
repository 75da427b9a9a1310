"""Batch front door: build inclusions, dispatch experiments, emit artifacts.

Subcommands: index, pave, kesten, dixmier, basis, scan.  Exit codes follow
one contract everywhere: 0 = done and verified, 1 = ran but unverified,
2 = usage or specification error.  Every file is written atomically and all
randomness is seeded, so reruns with the same flags reproduce byte-identical
payloads (modulo the isolated meta.timestamp field).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import algebra as alg
from . import families, freeness, inclusion as incl, paving, serialize
from .seeding import child_seed


class UsageError(Exception):
    pass


def _parse_grid(text: str):
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise UsageError("empty epsilon grid")
    return vals


def _parse_f_random(text: str):
    try:
        kind, count = text.rsplit(":", 1)
        count = int(count)
    except ValueError as exc:
        raise UsageError(f"bad --f-random {text!r}; expected KIND:COUNT") from exc
    theta = None
    if kind.startswith("projection@"):
        theta = float(kind.split("@", 1)[1])
        kind = alg.PROJECTION
    elif kind == "selfadjoint":
        kind = alg.SELFADJOINT
    elif kind == "positive":
        kind = alg.POSITIVE
    else:
        raise UsageError(f"unknown random kind {kind!r}")
    if count < 1:
        raise UsageError("need at least one operator")
    return kind, theta, count


def _build_inclusion(args):
    if getattr(args, "family", None):
        inc = families.parse_family(args.family)
        recipe = {"family": args.family}
    elif getattr(args, "spec", None):
        with open(args.spec) as handle:
            spec = serialize.inclusion_spec_from_obj(json.load(handle))
        embed_seed = getattr(args, "seed", 0) or 0
        inc = incl.build_inclusion(spec, seed=embed_seed, embed="haar")
        recipe = {"spec": serialize.inclusion_spec_to_obj(spec),
                  "embed_seed": embed_seed}
    else:
        raise UsageError("need --family or --spec")
    return inc, recipe


def _build_operators(inc, args):
    sources = [s for s in (getattr(args, "f_random", None),
                           getattr(args, "f_file", None)) if s]
    if len(sources) != 1:
        raise UsageError("need exactly one operator source (--f-random or --f-file)")
    if getattr(args, "f_random", None):
        kind, theta, count = _parse_f_random(args.f_random)
        ops = [alg.random_element(inc.m_shape, kind, child_seed(args.seed, 9, i),
                                  theta=theta)
               for i in range(count)]
        recipe = {"random": args.f_random, "seed": args.seed}
        return ops, recipe
    with open(args.f_file) as handle:
        payload = json.load(handle)
    ops = [serialize.element_from_obj(o) for o in payload["elements"]]
    recipe = {"file": os.path.basename(args.f_file),
              "elements": payload["elements"]}
    return ops, recipe


def _problem_from_recipe(recipe: dict) -> paving.PavingProblem:
    """Rebuild a paving problem from a certificate's embedded recipe."""
    if "family" in recipe["inclusion"]:
        inc = families.parse_family(recipe["inclusion"]["family"])
    else:
        spec = serialize.inclusion_spec_from_obj(recipe["inclusion"]["spec"])
        inc = incl.build_inclusion(spec, seed=recipe["inclusion"]["embed_seed"],
                                   embed="haar")
    fsrc = recipe["f"]
    if "random" in fsrc:
        kind, theta, count = _parse_f_random(fsrc["random"])
        ops = [alg.random_element(inc.m_shape, kind,
                                  child_seed(fsrc["seed"], 9, i), theta=theta)
               for i in range(count)]
    else:
        ops = [serialize.element_from_obj(o) for o in fsrc["elements"]]
    return paving.PavingProblem(inclusion=inc, operators=ops,
                                epsilon=recipe["epsilon"], index=recipe["index"])


def _write_json(args, name: str, obj) -> str:
    path = os.path.join(args.out, name)
    serialize.atomic_write_text(path, serialize.canonical_dumps(obj))
    return path


def cmd_index(args) -> int:
    inc, inc_recipe = _build_inclusion(args)
    est = incl.expectation_index_estimate(inc, trials=args.trials, seed=args.seed)
    print(f"inclusion       : {inc.label or 'custom'}")
    print(f"lambda estimate : {est.lambda_est:.12g}")
    print(f"index estimate  : {est.index_est:.12g}")
    if inc.known_index is not None:
        print(f"known index     : {inc.known_index:.12g}")
    print(f"trials          : {est.trials}")
    print(f"min-sample seed : trial {est.best_trial} of root {est.seed}")
    report = {"command": "index", "inclusion": inc_recipe,
              "lambda_est": est.lambda_est, "index_est": est.index_est,
              "known_index": inc.known_index, "trials": est.trials,
              "best_trial": est.best_trial, "seed": est.seed,
              "regularized": est.regularized, "meta": serialize.timestamp_meta()}
    if args.out:
        _write_json(args, "index.json", report)
    return 0


def _print_pave_table(problem, cert):
    n, m, r_bound = paving.paving_partition_bound(problem.index, problem.epsilon) \
        if problem.epsilon > 0 else (None, None, None)
    print(f"mode={cert.mode} r={cert.r} epsilon={problem.epsilon} "
          f"threshold={cert.threshold:.6g} verified={cert.verified}")
    print(f"size bound: n={n} m={m} r<={r_bound}; "
          f"count lower bound (trace->0): {math.ceil(1.0 / problem.epsilon - 1e-12)}")
    for i, ratio in enumerate(cert.per_x_ratio):
        print(f"  x[{i}]: ratio = {ratio:.12g}")


def cmd_pave(args) -> int:
    if args.mode == "verify":
        if not args.certificate:
            raise UsageError("verify mode needs --certificate")
        with open(args.certificate) as handle:
            saved = json.load(handle)
        problem = _problem_from_recipe(saved["problem"])
        base = os.path.dirname(os.path.abspath(args.certificate))
        if "partition" in saved:
            candidate = serialize.partition_from_obj(saved["partition"], base)
        elif "unitaries" in saved:
            candidate = [serialize.element_from_obj(o) for o in saved["unitaries"]]
        else:
            raise UsageError("certificate carries no candidate to verify")
        cert = paving.verify(problem, candidate, mode=saved["mode"],
                             l2_parts=saved.get("config", {}).get("n_parts"),
                             l2_slack=saved.get("config", {}).get("delta_l2", 0.05),
                             seed=saved.get("seed"), config=saved.get("config"))
        _print_pave_table(problem, cert)
        report = {"command": "pave-verify",
                  "per_x_ratio": cert.per_x_ratio,
                  "verified": cert.verified, "r": cert.r,
                  "threshold": cert.threshold,
                  "meta": serialize.timestamp_meta()}
        _write_json(args, "verify.json", report)
        return 0 if cert.verified else 1

    inc, inc_recipe = _build_inclusion(args)
    ops, f_recipe = _build_operators(inc, args)
    index = args.index if args.index is not None else inc.known_index
    if index is None:
        raise UsageError("no exact index known; pass --index")
    problem = paving.PavingProblem(inclusion=inc, operators=ops,
                                   epsilon=args.epsilon, index=index)
    if args.mode == "pipeline":
        if args.n_parts and args.m_refine:
            n, m = args.n_parts, args.m_refine
        else:
            n, m, _ = paving.paving_partition_bound(index, args.epsilon)
        cfg = paving.PipelineConfig(n_parts=n, m_refine=m, seed=args.seed,
                                    retry_budget=args.budget)
        cert = paving.pave_constructive(problem, cfg)
    elif args.mode == "search":
        r = args.n_parts or paving.paving_partition_bound(index, args.epsilon)[2]
        cert = paving.pave_search(problem, paving.SearchConfig(
            r=r, steps=args.budget * 50 if args.budget else 300, seed=args.seed))
    elif args.mode == "l2":
        if not args.n_parts:
            raise UsageError("l2 mode needs --n-parts")
        cert = paving.l2_pave(problem, args.n_parts, seed=args.seed)
    elif args.mode == "unitary":
        cert = paving.dixmier_average_run(problem, seed=args.seed)
    else:
        raise UsageError(f"unknown mode {args.mode!r}")
    recipe = {"inclusion": inc_recipe, "epsilon": args.epsilon,
              "index": index, "f": f_recipe}
    stem = os.path.join(args.out, "pave_certificate")
    obj = serialize.certificate_to_obj(cert, recipe, sidecar_stem=stem)
    _write_json(args, "pave_certificate.json", obj)
    _print_pave_table(problem, cert)
    return 0 if cert.verified else 1


def cmd_kesten(args) -> int:
    exp = freeness.KestenExperiment(n=args.n, dim=args.dim, trials=args.trials,
                                    seed=args.seed, slack=args.slack)
    result = freeness.run_kesten(exp)
    rows = []
    for t, norm in enumerate(result.norms):
        defect = None
        if args.defect_len:
            v, x = freeness.sample_pair(args.n, args.dim, child_seed(args.seed, t))
            defect = freeness.freeness_defect(v, x, args.defect_len)
        rows.append([args.n, args.dim, t, repr(float(norm)),
                     repr(result.bound), "" if defect is None else repr(defect)])
    serialize.write_csv(os.path.join(args.out, "kesten.csv"),
                        ["n", "dim", "trial", "norm", "bound", "defect"], rows)
    summary = {"command": "kesten", "n": args.n, "dim": args.dim,
               "trials": args.trials, "seed": args.seed,
               "bound": result.bound, "slack": exp.slack,
               "max": result.max_norm, "mean": result.mean_norm,
               "exceedances": result.exceedances,
               "meta": serialize.timestamp_meta()}
    _write_json(args, "kesten.json", summary)
    print(f"n={args.n} dim={args.dim} trials={args.trials}: "
          f"max={result.max_norm:.6f} mean={result.mean_norm:.6f} "
          f"bound={result.bound:.6f} (+{exp.slack}) exceedances={result.exceedances}")
    return 0 if result.exceedances == 0 else 1


def cmd_dixmier(args) -> int:
    inc, inc_recipe = _build_inclusion(args)
    ops, f_recipe = _build_operators(inc, args)
    index = args.index if args.index is not None else (inc.known_index or 1.0)
    problem = paving.PavingProblem(inclusion=inc, operators=ops,
                                   epsilon=args.epsilon, index=index)
    cert = paving.dixmier_average_run(problem, seed=args.seed)
    bound = paving.dixmier_count_bound(min(args.epsilon, 1.0))
    print(f"unitary count = {cert.r} (single-element bound {bound}); "
          f"max ratio = {max(cert.per_x_ratio):.6g}; verified = {cert.verified}")
    recipe = {"inclusion": inc_recipe, "epsilon": args.epsilon,
              "index": index, "f": f_recipe}
    obj = serialize.certificate_to_obj(cert, recipe)
    obj["count_bound"] = bound
    _write_json(args, "dixmier_certificate.json", obj)
    return 0 if cert.verified else 1


def cmd_basis(args) -> int:
    inc, inc_recipe = _build_inclusion(args)
    index = args.index if args.index is not None else inc.known_index
    if index is None:
        raise UsageError("no exact index known; pass --index")
    basis = incl.orthonormal_basis(inc, seed=args.seed or 0)
    value = incl.d_ob(inc, basis)
    lo, hi = incl.d_ob_interval(index)
    probes = [alg.random_element(inc.m_shape, alg.SELFADJOINT,
                                 child_seed(args.seed or 0, 3, t))
              for t in range(10)]
    residual = incl._expansion_residual(inc, basis.elements, probes)
    ok = (lo - 1e-8 <= value <= hi + 1e-8) and residual <= 1e-8
    print(f"basis size J = {len(basis.elements)} (dropped {basis.dropped})")
    print(f"d_ob = {value:.12g}, interval [{lo:.6g}, {hi:.6g}]")
    print(f"expansion residual = {residual:.3e}; verified = {ok}")
    report = {"command": "basis", "inclusion": inc_recipe, "J": len(basis.elements),
              "d_ob": value, "interval": [lo, hi],
              "expansion_residual": residual, "verified": ok,
              "meta": serialize.timestamp_meta()}
    _write_json(args, "basis.json", report)
    return 0 if ok else 1


def cmd_spec(args) -> int:
    """Validate an inclusion-spec JSON and echo its normalized weights.

    Weights may come in unnormalized; the M-side weights are rescaled to a
    unit trace and the N-side weights recomputed through the multiplicity
    matrix, so the echoed spec is always trace-compatible if the dimension
    bookkeeping holds.
    """
    with open(args.spec) as handle:
        raw = json.load(handle)
    m_dims = [int(v) for v in raw["m_blocks"]]
    m_weights = [float(v) for v in raw["m_weights"]]
    total = sum(w * d for w, d in zip(m_weights, m_dims))
    if total <= 0:
        raise UsageError("M trace weights must have positive total")
    m_weights = [w / total for w in m_weights]
    lam = [[int(v) for v in row] for row in raw["lambda"]]
    n_dims = [int(v) for v in raw["n_blocks"]]
    for l, ml in enumerate(m_dims):
        filled = sum(lam[k][l] * n_dims[k] for k in range(len(n_dims)))
        if filled != ml:
            raise UsageError(
                f"M-block {l}: multiplicities fill {filled} of {ml} dimensions")
    n_weights = [sum(lam[k][l] * m_weights[l] for l in range(len(m_dims)))
                 for k in range(len(n_dims))]
    spec = incl.InclusionSpec(
        n_shape=alg.AlgebraShape(tuple(n_dims), tuple(n_weights)),
        m_shape=alg.AlgebraShape(tuple(m_dims), tuple(m_weights)),
        inclusion_matrix=tuple(tuple(row) for row in lam))
    obj = serialize.inclusion_spec_to_obj(spec)
    print(serialize.canonical_dumps(obj), end="")
    if args.out:
        _write_json(args, "spec_normalized.json",
                    {**obj, "meta": serialize.timestamp_meta()})
    return 0


def cmd_scan(args) -> int:
    inc, inc_recipe = _build_inclusion(args)
    ops, f_recipe = _build_operators(inc, args)
    index = args.index if args.index is not None else inc.known_index
    if index is None:
        raise UsageError("no exact index known; pass --index")
    grid = _parse_grid(args.grid)
    rows = paving.scan(inc, grid, ops, index, seed=args.seed,
                       r_cap=args.budget or 64)
    csv_rows = [[r["epsilon"], r["r_found"], r["r_verified"], r["theorem_r"],
                 r["lower_bound"], r["seed"]] for r in rows]
    serialize.write_csv(os.path.join(args.out, "scan.csv"),
                        ["epsilon", "r_found", "r_verified", "theorem_r",
                         "lower_bound", "seed"], csv_rows)
    for r in rows:
        print(f"epsilon={r['epsilon']}: r_found={r['r_found']} "
              f"verified={r['r_verified']} theorem_r={r['theorem_r']} "
              f"lower={r['lower_bound']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pavelab",
        description="paving partitions, averaging certificates, and index "
                    "invariants for finite-dimensional inclusions")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required=True):
        p.add_argument("--family", help="builtin: tensor(k,d), scalars-in(n), self(d)")
        p.add_argument("--spec", help="path to an inclusion-spec JSON file")
        p.add_argument("--seed", type=int, required=seed_required)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--index", type=float, default=None,
                       help="override the index used in bounds")

    p = sub.add_parser("index", help="estimate the expectation-inequality index")
    common(p)
    p.add_argument("--trials", type=int, default=2000)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("pave", help="construct/search/verify a paving certificate")
    common(p)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--mode", default="pipeline",
                   choices=["pipeline", "search", "verify", "unitary", "l2"])
    p.add_argument("--f-random", dest="f_random",
                   help="KIND:COUNT with KIND in selfadjoint|positive|projection@THETA")
    p.add_argument("--f-file", dest="f_file", help="JSON file with an elements list")
    p.add_argument("--n-parts", dest="n_parts", type=int, default=None)
    p.add_argument("--m-refine", dest="m_refine", type=int, default=None)
    p.add_argument("--budget", type=int, default=8,
                   help="retry budget (pipeline) / step budget factor (search)")
    p.add_argument("--certificate", help="saved certificate for verify mode")
    p.set_defaults(func=cmd_pave)

    p = sub.add_parser("kesten", help="pinched-norm random-matrix experiment")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--slack", type=float, default=freeness.DEFAULT_SLACK)
    p.add_argument("--defect-len", dest="defect_len", type=int, default=0,
                   help="also compute the freeness defect up to this word length")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_kesten)

    p = sub.add_parser("dixmier", help="averaging certificate by unitary folds")
    common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--f-random", dest="f_random")
    p.add_argument("--f-file", dest="f_file")
    p.set_defaults(func=cmd_dixmier)

    p = sub.add_parser("basis", help="orthonormal basis and its frame-sum norm")
    common(p, seed_required=False)
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("scan", help="profile smallest verified r over an epsilon grid")
    common(p)
    p.add_argument("--grid", required=True, help="comma-separated epsilons")
    p.add_argument("--f-random", dest="f_random")
    p.add_argument("--f-file", dest="f_file")
    p.add_argument("--budget", type=int, default=None, help="largest r to try")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("spec", help="validate a spec JSON and echo normalized weights")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(func=cmd_spec)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if getattr(args, "command", None) == "pave" and args.mode != "verify":
            if args.epsilon is None:
                raise UsageError("pave needs --epsilon")
        return args.func(args)
    except (UsageError, paving.PavingError, incl.InclusionSpecError,
            alg.AlgebraError, incl.ResourceBudgetError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
