"""Append-only JSON Lines transcript and its replay audit.

The first line is a header carrying the schema version and the full run
config; every following line is one round. Nothing time-dependent is written,
so two runs with the same seed and config produce identical bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from hsg.answers import Answer, AnswerRole, CanonicalChecker, DiagnosticReport, get_tokenizer
from hsg.config import RunConfig
from hsg.errors import DataError
from hsg.grpo import argmax_first, group_advantage
from hsg.rewards import reward_bundle

SCHEMA_VERSION = 1
TRANSCRIPT_NAME = "transcript.jsonl"
MANIFEST_NAME = "manifest.json"


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_json_atomic(path: Path, obj: Any) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


class TranscriptWriter:
    """Single-writer appender. ``size`` is the byte offset after the last full line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def start(self, header: dict[str, Any]) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", encoding="utf-8") as fh:
            fh.write(dumps({"kind": "header", "schema_version": SCHEMA_VERSION, **header}) + "\n")

    def append(self, record: dict[str, Any]) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(dumps({"kind": "round", **record}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    @property
    def size(self) -> int:
        return self.path.stat().st_size

    def truncate(self, size: int) -> None:
        """Drop anything written after ``size`` bytes (a partially persisted step)."""
        with self.path.open("r+b") as fh:
            fh.truncate(size)


def read_transcript(path: str | Path) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read transcript {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty transcript")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise DataError(f"{path}: first line is not a header")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema version {header.get('schema_version')}")
    return header, [json.loads(line) for line in lines[1:]]


@dataclass
class ReplayReport:
    rounds: int = 0
    bundles_checked: int = 0
    checkpoints_checked: int = 0
    checkpoints_recomputed: int = 0
    mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def summary(self) -> str:
        status = "OK" if self.ok else f"{len(self.mismatches)} mismatch(es)"
        return (f"replay: {self.rounds} rounds, {self.bundles_checked} reward bundles, "
                f"{self.checkpoints_checked} checkpoints ({self.checkpoints_recomputed} re-evaluated): {status}")


def _iter_group(record: dict) -> Iterator[tuple[int, dict, dict]]:
    for i, entry in enumerate(record["entries"]):
        a_s = entry["a_s"] if record["role_updated"] == "S" else record["a_s_star"]
        yield i, a_s, entry


def replay(run_dir: str | Path, recompute_checkpoints: bool = True) -> ReplayReport:
    """Recompute every reward, advantage and hardest-sample choice from the transcript alone,
    and check the checkpoint manifest's selection.

    For toy runs each checkpoint's held-out ACC_corr is also re-evaluated from
    its saved snapshot, so the selection is audited against recomputed values.
    """
    run_dir = Path(run_dir)
    header, records = read_transcript(run_dir / TRANSCRIPT_NAME)
    cfg = RunConfig.from_dict(header["config"])
    tok = get_tokenizer(cfg.tokenizer)
    checker = CanonicalChecker()
    report = ReplayReport()
    s_rounds: dict[int, dict] = {}
    for rec in records:
        report.rounds += 1
        where = f"round {rec['round_index']}"
        reference = Answer.from_text(rec["reference"], tok, AnswerRole.REFERENCE)
        rewards = []
        for i, a_s_stored, entry in _iter_group(rec):
            a_s = Answer.from_text(a_s_stored["text"], tok, AnswerRole.SNEAKY)
            a_d = DiagnosticReport.from_text(entry["a_d"]["text"], tok)
            a_c = Answer.from_text(entry["a_c"]["text"], tok, AnswerRole.CORRECTION)
            for name, stored, fresh in (("a_s", a_s_stored, a_s.to_dict()), ("a_d", entry["a_d"], a_d.to_dict()),
                                        ("a_c", entry["a_c"], a_c.to_dict())):
                if stored != fresh:
                    report.mismatches.append(f"{where} entry {i}: {name} fields differ from re-parse")
            bundle = reward_bundle(a_s, a_d, a_c, reference, cfg.reward, checker, cfg.formats).to_dict()
            report.bundles_checked += 1
            if bundle != entry["bundle"]:
                diff = sorted(k for k in bundle if bundle[k] != entry["bundle"].get(k))
                report.mismatches.append(f"{where} entry {i}: reward bundle differs in {diff}")
            rewards.append(bundle["r_s_adv"] if rec["role_updated"] == "S" else bundle["r_d_collab"])
        if rewards != rec["rewards"]:
            report.mismatches.append(f"{where}: consumed rewards differ from recomputation")
        advantages = group_advantage(rewards, cfg.grpo.delta).tolist()
        if advantages != rec["advantages"] or advantages != [e["advantage"] for e in rec["entries"]]:
            report.mismatches.append(f"{where}: advantages differ from recomputation")
        if argmax_first(rewards) != rec["hardest_index"]:
            report.mismatches.append(f"{where}: hardest_index is not the first argmax")
        if rec["role_updated"] == "S":
            s_rounds[rec["round_index"]] = rec
        else:
            src = s_rounds.get(rec["source_round"])
            if src is None:
                report.mismatches.append(f"{where}: source S-round {rec['source_round']} not found")
            else:
                star = src["entries"][src["hardest_index"]]["a_s"]
                if star != rec["a_s_star"]:
                    report.mismatches.append(f"{where}: a_s_star is not the hardest sample of its S-round")
                if rec["a_s_star_reward"] != max(src["rewards"]):
                    report.mismatches.append(f"{where}: a_s_star reward is not the group maximum")
    manifest_path = run_dir / "checkpoints" / MANIFEST_NAME
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        checkpoints = manifest["checkpoints"]
        report.checkpoints_checked = len(checkpoints)
        selected = [c for c in checkpoints if c["is_selected"]]
        if len(selected) != 1:
            report.mismatches.append(f"manifest: {len(selected)} selected checkpoints, expected 1")
        elif any(selected[0]["acc_corr"] > c["acc_corr"] for c in checkpoints):
            report.mismatches.append("manifest: selected checkpoint does not have minimal ACC_corr")
        if manifest.get("selected_step") != (selected[0]["step"] if len(selected) == 1 else None):
            report.mismatches.append("manifest: selected_step disagrees with the flagged checkpoint")
        if recompute_checkpoints:
            from hsg.run import recompute_checkpoint_acc

            for c in checkpoints:
                acc = recompute_checkpoint_acc(cfg, run_dir / c["snapshot"], c["step"])
                if acc is None:
                    break
                report.checkpoints_recomputed += 1
                if acc != c["acc_corr"]:
                    report.mismatches.append(f"checkpoint {c['step']}: stored ACC_corr {c['acc_corr']} "
                                             f"but snapshot evaluates to {acc}")
    return report
