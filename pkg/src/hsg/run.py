"""Training driver: builds actors from a config, runs paired rounds, evaluates
on a held-out slice, persists transcript, checkpoints and resume state."""

from __future__ import annotations

import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from hsg import __version__
from hsg.answers import CanonicalChecker, extract_final, get_tokenizer
from hsg.config import BackendConfig, RunConfig
from hsg.data import DatasetRecord, ingest
from hsg.endpoint import EndpointPolicy, load_templates
from hsg.errors import ConfigError, DataError
from hsg.evaluation import classify_error_type, error_type_distribution
from hsg.game import Actors, GameSettings, HideAndSeekGame
from hsg.policies import MockPolicy, Policy, PolicyCorrector, RuleCorrector, ToySoftmaxPolicy, derive_seed
from hsg.toy import ToyDomain, generate_problems
from hsg.transcript import MANIFEST_NAME, SCHEMA_VERSION, TRANSCRIPT_NAME, TranscriptWriter, write_json_atomic

log = logging.getLogger(__name__)

STATE_NAME = "state.json"
RUN_META_NAME = "run.json"


@dataclass
class RunCheckpoint:
    step: int
    snapshot: str  # path relative to the run directory
    acc_corr: float
    stealthiness: float
    is_selected: bool = False
    error_types: dict[str, float] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "snapshot": self.snapshot,
            "acc_corr": self.acc_corr,
            "stealthiness": self.stealthiness,
            "is_selected": self.is_selected,
            "error_types": self.error_types,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> RunCheckpoint:
        return cls(**raw)


def select_checkpoint(checkpoints: Sequence[RunCheckpoint]) -> RunCheckpoint:
    """Minimal held-out ACC_corr; the earliest wins ties. Marks exactly one as selected."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    best = min(range(len(checkpoints)), key=lambda i: (checkpoints[i].acc_corr, i))
    for i, c in enumerate(checkpoints):
        c.is_selected = i == best
    return checkpoints[best]


# --- assembly ------------------------------------------------------------------


@dataclass
class Assembly:
    actors: Actors
    judge: Policy | None
    toy: ToySoftmaxPolicy | None
    domain: ToyDomain | None


def _endpoint(bcfg: BackendConfig, templates: dict[str, str]) -> EndpointPolicy:
    return EndpointPolicy(
        bcfg.base_url, bcfg.model, path=bcfg.path, temperature=bcfg.temperature, top_p=bcfg.top_p,
        max_tokens=bcfg.max_tokens, timeout=bcfg.timeout, retries=bcfg.retries, backoff=bcfg.backoff,
        cache_dir=bcfg.cache_dir, api_key=bcfg.api_key(), templates=templates,
    )


def assemble(config: RunConfig) -> Assembly:
    templates = load_templates(config.templates_dir)
    domain = ToyDomain(config.toy.num_distractors) if config.uses_toy else None
    toy = ToySoftmaxPolicy(domain.support, config.toy.temperature) if domain else None

    def policy(bcfg: BackendConfig, role: str) -> Policy | None:
        if bcfg.kind == "toy":
            if role not in ("sneaky", "diagnosis"):
                raise ConfigError(f"{role}: the toy backend only plays sneaky and diagnosis")
            return toy
        if bcfg.kind == "mock":
            return MockPolicy(list(bcfg.responses), bcfg.logprob)
        if bcfg.kind == "endpoint":
            return _endpoint(bcfg, templates)
        if bcfg.kind == "none" and role == "judge":
            return None
        raise ConfigError(f"{role}: backend kind {bcfg.kind!r} is not usable here")

    sneaky = policy(config.sneaky, "sneaky")
    diagnosis = policy(config.diagnosis, "diagnosis")
    if config.corrector.kind == "rule":
        corrector = RuleCorrector()
    else:
        inner = policy(config.corrector, "corrector")
        corrector = PolicyCorrector(inner, config.corrector.template_id or "correction", config.seed)
    judge = policy(config.judge, "judge")
    return Assembly(Actors(sneaky, diagnosis, corrector), judge, toy, domain)


def settings_for(config: RunConfig) -> GameSettings:
    return GameSettings(
        reward=config.reward,
        grpo=config.grpo,
        tokenizer=get_tokenizer(config.tokenizer),
        checker=CanonicalChecker(),
        formats=config.formats,
        seed=config.seed,
        max_workers=config.max_workers,
        sneaky_template=config.sneaky.template_id or "sneaky",
        diagnosis_template=config.diagnosis.template_id or "diagnosis",
    )


# --- data ----------------------------------------------------------------------


def load_problems(config: RunConfig) -> tuple[list[list[DatasetRecord]], list[float], list[DatasetRecord]]:
    """Training pools with their mixing weights, and the held-out slice."""
    if config.uses_toy and not config.datasets:
        toy = config.toy
        train = [DatasetRecord(**p.to_record("train"))
                 for p in generate_problems(toy.num_train, config.seed, toy.min_ops, toy.max_ops, "train")]
        heldout = [DatasetRecord(**p.to_record("heldout"))
                   for p in generate_problems(config.heldout_size, config.seed, toy.min_ops, toy.max_ops, "heldout")]
        return [train], [1.0], heldout
    if not config.datasets:
        raise ConfigError("no datasets configured")
    pools = [ingest(d.path, d.source) for d in config.datasets]
    weights = [d.weight for d in config.datasets]
    if config.heldout is not None:
        heldout = ingest(config.heldout.path, config.heldout.source)[: config.heldout_size]
        return pools, weights, heldout
    # carve the held-out slice from the end of a seeded shuffle of the mixed pool
    mixed = [r for pool in pools for r in pool]
    order = np.random.default_rng(derive_seed(config.seed, "heldout")).permutation(len(mixed))
    if len(mixed) <= config.heldout_size:
        raise DataError(f"{len(mixed)} records cannot supply a held-out slice of {config.heldout_size}")
    held_ids = {mixed[i].id for i in order[-config.heldout_size:]}
    heldout = [mixed[i] for i in sorted(order[-config.heldout_size:])]
    pools = [[r for r in pool if r.id not in held_ids] for pool in pools]
    kept = [(p, w) for p, w in zip(pools, weights) if p]
    return [p for p, _ in kept], [w for _, w in kept], heldout


def problem_schedule(pools: Sequence[Sequence[DatasetRecord]], weights: Sequence[float], steps: int,
                     seed: int) -> list[DatasetRecord]:
    """One problem per step: pick a pool by weight, walk it in reshuffled epochs.

    The first k entries do not depend on ``steps``.
    """
    rng = np.random.default_rng(derive_seed(seed, "schedule"))
    p = np.asarray(weights, dtype=float)
    p = p / p.sum()
    orders: list[list[int]] = [[] for _ in pools]
    out = []
    for _ in range(steps):
        k = int(rng.choice(len(pools), p=p)) if len(pools) > 1 else 0
        if not orders[k]:
            orders[k] = rng.permutation(len(pools[k])).tolist()
        out.append(pools[k][orders[k].pop(0)])
    return out


# --- held-out evaluation -----------------------------------------------------------


def heldout_eval(game: HideAndSeekGame, problems: Sequence[DatasetRecord], samples: int, seed: int, step: int,
                 domain: ToyDomain | None = None) -> tuple[float, dict[str, float] | None]:
    """ACC_corr of sneaky answers on the held-out slice, and their error-type mix.

    With distribution-exposing (toy) policies the value is the exact
    expectation; otherwise it is a Monte Carlo estimate over ``samples``
    draws per problem. Sneaky answers that were correct and stay correct
    count as corrected.
    """
    sneaky, diagnosis, corrector = game.actors.sneaky, game.actors.diagnosis, game.actors.corrector
    checker = game.settings.checker
    exact = hasattr(sneaky, "distribution") and hasattr(diagnosis, "distribution")
    total = 0.0
    labels, weights = [], []

    def fixed(a_s_text: str, a_d_text: str, reference: str) -> bool:
        final = extract_final(corrector.correct_text(a_s_text, a_d_text))
        return final is not None and checker.equivalent(final, extract_final(reference) or reference)

    for prob in problems:
        ctx = game.sneaky_context(prob)
        if exact:
            draws = sneaky.distribution(ctx)
        else:
            gens = [sneaky.sample(ctx, 1, derive_seed(seed, "eval", step, prob.id, j))[0] for j in range(samples)]
            draws = [(g.text, 1.0 / samples) for g in gens]
        for j, (text_s, ps) in enumerate(draws):
            if ps == 0.0:
                continue
            dctx = game.diagnosis_context(prob, text_s)
            if exact:
                diags = diagnosis.distribution(dctx)
            else:
                diags = [(diagnosis.sample(dctx, 1, derive_seed(seed, "eval-d", step, prob.id, j))[0].text, 1.0)]
            total += ps * sum(pd * fixed(text_s, text_d, prob.reference_answer) for text_d, pd in diags)
            if domain is not None:
                labels.append(classify_error_type(prob.question, text_s, prob.reference_answer, checker,
                                                  domain.verify_steps, domain.detector))
                weights.append(ps)
    acc = total / len(problems)
    return acc, (error_type_distribution(labels, weights) if labels else None)


# --- training ----------------------------------------------------------------------


def _policy_state(asm: Assembly) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if asm.toy is not None:
        out["toy"] = asm.toy.snapshot()
    for name in ("sneaky", "diagnosis"):
        p = getattr(asm.actors, name)
        out[name] = getattr(p, "describe", lambda: {"kind": type(p).__name__})()
    out["corrector"] = asm.actors.corrector.describe()
    return out


def _restore_policies(asm: Assembly, state: dict[str, Any]) -> None:
    if asm.toy is not None and "toy" in state:
        asm.toy.restore(state["toy"])
    for name in ("sneaky", "diagnosis"):
        p = getattr(asm.actors, name)
        if isinstance(p, MockPolicy) and "calls" in state.get(name, {}):
            p.restore_calls(state[name]["calls"])


def recompute_checkpoint_acc(config: RunConfig, snapshot_path: str | Path, step: int) -> float | None:
    """Held-out ACC_corr of a saved toy snapshot, or None when the run's policies are not toy."""
    asm = assemble(config)
    if asm.toy is None or not all(hasattr(p, "distribution") for p in (asm.actors.sneaky, asm.actors.diagnosis)):
        return None
    _restore_policies(asm, json.loads(Path(snapshot_path).read_text())["policies"])
    _, _, heldout = load_problems(config)
    game = HideAndSeekGame(settings_for(config), asm.actors)
    return heldout_eval(game, heldout, config.eval_samples, config.seed, step, asm.domain)[0]


def run_metadata(config: RunConfig) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "hsg",
        "tool_version": __version__,
        "seed": config.seed,
        "tokenizer": config.tokenizer,
        "config": config.to_dict(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def train(config: RunConfig, resume: bool = True, assembly: Assembly | None = None) -> RunCheckpoint:
    """Run (or resume) a training run in ``config.output_dir``; returns the selected checkpoint."""
    run_dir = Path(config.output_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    asm = assembly or assemble(config)
    game = HideAndSeekGame(settings_for(config), asm.actors)
    pools, weights, heldout = load_problems(config)
    schedule = problem_schedule(pools, weights, config.steps, config.seed)
    writer = TranscriptWriter(run_dir / TRANSCRIPT_NAME)
    state_path = run_dir / STATE_NAME
    meta = run_metadata(config)

    checkpoints: list[RunCheckpoint] = []
    start = 0
    if resume and state_path.exists():
        state = json.loads(state_path.read_text())
        previous = json.loads((run_dir / RUN_META_NAME).read_text())["config"]
        if {**previous, "output_dir": ""} != {**meta["config"], "output_dir": ""}:
            raise ConfigError(f"{run_dir} holds a run with a different config; use a fresh output directory")
        start = state["step"]
        writer.truncate(state["transcript_bytes"])
        _restore_policies(asm, state["policies"])
        checkpoints = [RunCheckpoint.from_dict(c) for c in state["checkpoints"]]
        log.info("resuming %s at step %d", run_dir, start)
    else:
        write_json_atomic(run_dir / RUN_META_NAME, meta)
        # the output location is not part of the run; leaving it out keeps transcripts comparable
        header_config = {k: v for k, v in meta["config"].items() if k != "output_dir"}
        writer.start({"config": header_config, "seed": config.seed, "tool_version": __version__})

    def evaluate(step: int) -> None:
        acc, types = heldout_eval(game, heldout, config.eval_samples, config.seed, step, asm.domain)
        snap = f"checkpoints/step-{step:06d}.json"
        write_json_atomic(run_dir / snap, {"step": step, "policies": _policy_state(asm)})
        checkpoints.append(RunCheckpoint(step, snap, acc, 1.0 - acc, error_types=types))
        log.info("step %d: held-out ACC_corr %.4f", step, acc)

    def persist(step: int) -> None:
        write_json_atomic(state_path, {
            "schema_version": SCHEMA_VERSION,
            "step": step,
            "transcript_bytes": writer.size,
            "policies": _policy_state(asm),
            "checkpoints": [c.to_dict() for c in checkpoints],
        })

    if start == 0 and not checkpoints:
        evaluate(0)
        persist(0)
    parity = config.s_round_parity
    for step in range(start, config.steps):
        problem = schedule[step]
        s_rec = game.run_s_round(problem, 2 * step + parity)
        d_rec = game.run_d_round(problem, 2 * step + 1 - parity, s_rec)
        writer.append(s_rec.to_dict())
        writer.append(d_rec.to_dict())
        done = step + 1
        if done % config.eval_interval == 0 or done == config.steps:
            evaluate(done)
        persist(done)

    selected = select_checkpoint(checkpoints)
    write_json_atomic(ckpt_dir / MANIFEST_NAME, {
        "schema_version": SCHEMA_VERSION,
        "selected_step": selected.step,
        "checkpoints": [c.to_dict() for c in checkpoints],
    })
    return selected
