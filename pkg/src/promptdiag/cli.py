"""Command-line entry point: ``promptdiag <subcommand> ...``.

Exit codes: 0 success (or DECOUPLED), 2 COUPLED, 1 failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from . import report as rpt
from .anova import decompose
from .errors import PartialRun, PromptDiagError
from .executor import Bonus, Executor, ExecutorConfig, MockParams
from .grid import load_questions, run_grid
from .headroom import PromptScorer, generate_and_rank, headroom_test
from .landscape import analyze_landscape, budget_simulation
from .prompts import load_prompt_list, read_prompt_file
from .prose import EvolutionConfig, evolve
from .tensor import SyntheticSpec, load_tensor_jsonl, save_tensor_jsonl, synth_tensor
from .transform import RuleTransformer

log = logging.getLogger("promptdiag")


# --- configuration ------------------------------------------------------------

def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not cp.read(path, encoding="utf-8"):
            raise FileNotFoundError(f"config file not found: {path}")
    for section in ("executor", "diagnose", "prose"):
        if not cp.has_section(section):
            cp.add_section(section)
    return cp


def executor_config(cp: configparser.ConfigParser, seed: int | None = None) -> ExecutorConfig:
    """``[executor]`` keys map onto ExecutorConfig; ``mock_*`` keys onto MockParams."""
    sec = dict(cp["executor"])
    mock = {k[5:]: v for k, v in sec.items() if k.startswith("mock_")}
    plain = {k: v for k, v in sec.items() if not k.startswith("mock_")}
    mp = {}
    for k, v in mock.items():
        if k == "bonuses":
            mp[k] = tuple(Bonus(**b) for b in json.loads(v))
        elif k in ("seed", "landscape_seed"):
            mp[k] = int(v)
        else:
            mp[k] = float(v)
    if seed is not None and "seed" not in mp:
        mp["seed"] = seed
    plain["mock"] = MockParams(**mp)
    return ExecutorConfig.from_dict(plain)


def _diagnose_opts(cp) -> dict:
    sec = cp["diagnose"]
    return {
        "threshold": sec.getfloat("threshold", rpt.DEFAULT_THRESHOLD),
        "alpha": sec.getfloat("alpha", rpt.ALPHA),
        "price_per_call": sec.getfloat("price_per_call", rpt.DEFAULT_PRICE_PER_CALL),
        "n_candidates": sec.getint("candidates", rpt.DEFAULT_CANDIDATES),
    }


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=2, ensure_ascii=False) if args.json else text)


def _out_dir(args, default: str) -> Path:
    p = Path(args.out or default)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _candidate_texts(path) -> list[str]:
    return load_prompt_list(path)


# --- subcommands --------------------------------------------------------------

def cmd_synth(args, cp) -> int:
    spec = SyntheticSpec(k_a=args.k_a, k_b=args.k_b, n=args.n, question_sd=args.question_sd, a_sd=args.a_sd,
                         b_sd=args.b_sd, interaction_sd=args.interaction_sd, noise_sd=args.noise_sd,
                         base=args.base, seed=args.seed)
    t = synth_tensor(spec)
    path = _out_dir(args, ".") / "tensor.jsonl"
    save_tensor_jsonl(t, path)
    _emit(args, {"path": str(path), "dims": list(t.dims)}, f"wrote {t.dims} tensor to {path}")
    return 0


def cmd_grid(args, cp) -> int:
    ex = Executor(executor_config(cp, args.seed))
    tensor, manifest = run_grid(load_prompt_list(args.prompts_a), load_prompt_list(args.prompts_b),
                                load_questions(args.questions), ex, _out_dir(args, "grid_run"), seed=args.seed)
    _emit(args, {"dims": list(tensor.dims), "cost": manifest.cost, "status": {
        k: v for k, v in manifest.status.items() if k != "cells"}},
        f"grid {tensor.dims} complete; {manifest.cost['calls']} calls this run")
    return 0


def cmd_anova(args, cp) -> int:
    table = decompose(load_tensor_jsonl(args.tensor))
    verdict = rpt.coupling_verdict(table, _diagnose_opts(cp)["alpha"])
    text = rpt.render_anova_table(table, model=args.model, task=args.task) + f"\nVerdict: {verdict}"
    _emit(args, {"anova": table.to_dict(), "verdict": verdict}, text)
    return 2 if verdict == "COUPLED" else 0


def cmd_landscape(args, cp) -> int:
    stats = analyze_landscape(load_tensor_jsonl(args.tensor))
    _emit(args, stats.to_dict(), rpt.render_landscape(stats))
    return 0


def cmd_simulate_budget(args, cp) -> int:
    t = load_tensor_jsonl(args.tensor)
    budgets = [int(b) for b in args.budgets.split(",")] if args.budgets else \
        sorted({max(2, int(f * t.scores.size)) for f in (0.05, 0.1, 0.2, 0.4)})
    curve = budget_simulation(t, budgets, trials=args.trials, seed=args.seed)
    _emit(args, curve.to_dict(), rpt.render_budget_curve(curve))
    return 0


def cmd_headroom(args, cp) -> int:
    opts = _diagnose_opts(cp)
    ex = Executor(executor_config(cp, args.seed))
    baseline = read_prompt_file(args.baseline)
    partner = read_prompt_file(args.partner) if args.partner else None
    questions = load_questions(args.questions)
    if args.candidates:
        cands = _candidate_texts(args.candidates)
    else:
        tr = RuleTransformer()
        cands = [tr.paraphrase(baseline, seed=args.seed * 1000 + i) for i in range(args.generate)]
    rep = headroom_test(baseline, cands, questions, ex, agent=args.agent, partner=partner,
                        threshold=opts["threshold"])
    payload = rep.to_dict()
    text = rep.summary()
    if args.rank and rep.decision == "OPTIMIZE":
        scorer = PromptScorer(ex, questions, agent=args.agent, partner=partner)
        ranked = generate_and_rank(baseline, RuleTransformer(), args.rank, seed=args.seed, scorer=scorer)
        payload["generate_and_rank"] = {"prompt": ranked.prompt, "score": ranked.score,
                                        "baseline_score": ranked.baseline_score}
        text += f"\ngenerate-and-rank best: {ranked.score:.2f} (baseline {ranked.baseline_score:.2f})"
    for w in rep.warnings:
        text += f"\nwarning: {w}"
    _emit(args, payload, text)
    return 0


def cmd_optimize(args, cp) -> int:
    ex = Executor(executor_config(cp, args.seed))
    prose_cfg = dict(cp["prose"])
    prose_cfg["seed"] = args.seed
    if args.budget is not None:
        prose_cfg["budget_cap"] = args.budget
    cfg = EvolutionConfig.from_dict(prose_cfg)
    baseline = read_prompt_file(args.baseline)
    task = read_prompt_file(args.task_desc)
    train = PromptScorer(ex, load_questions(args.train_questions))
    holdout = PromptScorer(ex, load_questions(args.holdout)) if args.holdout else None
    result = evolve(baseline, task, train, cfg, RuleTransformer(task), holdout=holdout)
    out = _out_dir(args, "optimize_run")
    (out / "best_prompt.txt").write_text(result.best.text + "\n", encoding="utf-8")
    (out / "best_prompt.json").write_text(json.dumps(result.best.prompt.to_dict(), indent=2), encoding="utf-8")
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for rec in [result.initial] + result.history:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    payload = {"best_prompt": result.best.text, "structured": result.best.prompt.to_dict(),
               "fitness": result.best.breakdown.to_dict(), "train_score": result.train_score,
               "holdout_score": result.holdout_score, "generations": result.generations,
               "evaluations": result.evaluations, "budget_exhausted": result.budget_exhausted,
               "stop_reason": result.stop_reason}
    held = "" if result.holdout_score is None else f", holdout {result.holdout_score:.2f}"
    text = (f"{result.generations} generations, {result.evaluations} evaluations ({result.stop_reason}); "
            f"train {result.train_score:.2f}{held}\n\n{result.best.text}")
    _emit(args, payload, text)
    return 0


def cmd_diagnose(args, cp) -> int:
    opts = _diagnose_opts(cp)
    ex = Executor(executor_config(cp, args.seed))
    out = _out_dir(args, "diagnose_run")
    heldout = load_questions(args.heldout) if args.heldout else None
    cands = _candidate_texts(args.candidates) if args.candidates else None
    task = read_prompt_file(args.task_desc) if args.task_desc else ""
    rep = rpt.diagnose(load_prompt_list(args.prompts_a), load_prompt_list(args.prompts_b),
                       load_questions(args.questions), ex, out / "grid", heldout=heldout, candidates=cands,
                       task_description=task, seed=args.seed, **opts)
    text = rpt.render_report(rep)
    (out / "report.json").write_text(rep.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(text, encoding="utf-8")
    if args.json:
        print(rep.to_json())
    else:
        sys.stdout.write(text)
    return rep.exit_code


def cmd_report(args, cp) -> int:
    d = json.loads(Path(args.input).read_text(encoding="utf-8"))
    if "stage1" in d:
        rep = rpt.DiagnosisReport.from_dict(d)
        if args.json:
            print(rep.to_json())
        else:
            sys.stdout.write(rpt.render_report(rep))
        code = rep.exit_code
    else:
        from .anova import AnovaTable
        table = AnovaTable.from_dict(d.get("anova", d))
        print(rpt.render_anova_table(table))
        code = 2 if rpt.coupling_verdict(table) == "COUPLED" else 0
    if args.costs:
        print()
        print(rpt.render_cost_table())
    return code


# --- parser -------------------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    def d(value):
        return argparse.SUPPRESS if suppress else value

    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=d(None), help="INI file with [executor], [diagnose] and [prose] sections")
    g.add_argument("--seed", type=int, default=d(0))
    g.add_argument("--out", default=d(None), help="output directory")
    g.add_argument("--json", action="store_true", default=d(False), help="print machine-readable JSON")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return g


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="promptdiag", description=__doc__.splitlines()[0],
                                parents=[_global_flags(suppress=False)])
    # Subcommands accept the global flags too; SUPPRESS keeps their defaults
    # from overwriting values given before the subcommand.
    common = _global_flags(suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic score tensor")
    s.add_argument("--k-a", type=int, default=10)
    s.add_argument("--k-b", type=int, default=10)
    s.add_argument("--n", type=int, default=30)
    for name, default in (("question-sd", 10.0), ("a-sd", 1.0), ("b-sd", 1.0), ("interaction-sd", 0.0),
                          ("noise-sd", 3.0), ("base", 60.0)):
        s.add_argument(f"--{name}", type=float, default=default)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("grid", parents=[common], help="evaluate the full prompt grid")
    s.add_argument("--prompts-a", required=True)
    s.add_argument("--prompts-b", required=True)
    s.add_argument("--questions", required=True)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("anova", parents=[common], help="variance decomposition of a tensor")
    s.add_argument("--tensor", required=True)
    s.add_argument("--model", default="-")
    s.add_argument("--task", default="-")
    s.set_defaults(func=cmd_anova)

    s = sub.add_parser("landscape", parents=[common], help="optimum gap and residual autocorrelation")
    s.add_argument("--tensor", required=True)
    s.set_defaults(func=cmd_landscape)

    s = sub.add_parser("simulate-budget", parents=[common], help="joint vs independent search under a budget")
    s.add_argument("--tensor", required=True)
    s.add_argument("--budgets", help="comma-separated evaluation budgets")
    s.add_argument("--trials", type=int, default=1000)
    s.set_defaults(func=cmd_simulate_budget)

    s = sub.add_parser("headroom", parents=[common], help="best candidate gain over zero-shot")
    s.add_argument("--baseline", required=True)
    s.add_argument("--questions", required=True)
    s.add_argument("--candidates", help="JSON list of candidate prompts")
    s.add_argument("--generate", type=int, default=10, help="paraphrases to generate without --candidates")
    s.add_argument("--agent", default="B", choices=("A", "B"))
    s.add_argument("--partner", help="fixed prompt for the other agent")
    s.add_argument("--rank", type=int, default=0, help="run generate-and-rank with M candidates on OPTIMIZE")
    s.set_defaults(func=cmd_headroom)

    s = sub.add_parser("optimize", parents=[common], help="evolve a single-agent prompt")
    s.add_argument("--baseline", required=True)
    s.add_argument("--task-desc", required=True)
    s.add_argument("--train-questions", required=True)
    s.add_argument("--holdout")
    s.add_argument("--budget", type=int)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("diagnose", parents=[common], help="coupling test, then headroom test")
    s.add_argument("--prompts-a", required=True)
    s.add_argument("--prompts-b", required=True)
    s.add_argument("--questions", required=True)
    s.add_argument("--heldout")
    s.add_argument("--candidates")
    s.add_argument("--task-desc")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("report", parents=[common], help="render a saved report or ANOVA JSON")
    s.add_argument("--input", required=True)
    s.add_argument("--costs", action="store_true", help="append the cost table")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cp = load_config(args.config)
        return args.func(args, cp)
    except PartialRun as exc:
        print(f"error: {exc}; re-run the same command to resume", file=sys.stderr)
        return 1
    except (PromptDiagError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
