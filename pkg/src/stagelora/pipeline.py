"""Stage orchestration over manifests and checkpoints, and end-to-end evaluation."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

from .checkpoint import Checkpoint
from .errors import CompatibilityError, StateError
from .metrics import EvalPair, EvalReport, check_compatible, evaluate
from .model import DEFAULT_HIDDEN, ClassifierNet, predict
from .parsing import Category, to_prediction
from .prompts import PromptSpec, attach, build_prompt, render_response
from .categories import resolve
from .seeding import derive_seed
from .synth import ExampleRecord, Manifest
from .training import StageConfig, TrainRecord, new_stage_net, run_stage, transition


def _history_entry(config: StageConfig, records: Sequence[TrainRecord], n_examples: int, mode: str) -> dict:
    return {
        "stage_id": config.stage_id,
        "mode": mode,
        "config": config.to_dict(),
        "train_examples": n_examples,
        "records": [[r.epoch, r.mean_loss, r.train_accuracy] for r in records],
    }


def stage_seeds(seed: int) -> dict[str, int]:
    """Named sub-seeds used by the pipeline, all derived from ``seed``."""
    return {name: derive_seed(seed, name) for name in ("data", "init", "stage1", "stage2")}


def train_stage1(
    config: StageConfig,
    data: Sequence[ExampleRecord],
    d_in: int,
    seed: int,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
) -> tuple[Checkpoint, list[TrainRecord]]:
    seeds = stage_seeds(seed)
    net = new_stage_net(config, d_in=d_in, hidden=hidden, base_seed=seeds["init"])
    net, records = run_stage(net, config, data)
    meta = {"seed": seed, "sub_seeds": seeds, "hidden": list(hidden)}
    return Checkpoint(net, 1, [_history_entry(config, records, len(data), "stage1")], meta), records


def train_stage2(
    ckpt: Checkpoint, config: StageConfig, data: Sequence[ExampleRecord]
) -> tuple[Checkpoint, list[TrainRecord]]:
    """Transition a stage-1 checkpoint (if needed) and train stage 2 on ``data``."""
    if ckpt.stage_id == 1:
        net = transition(ckpt.net, config)
    elif ckpt.stage_id == 2 and ckpt.net.active_labels == config.label_set:
        net = ckpt.net
    else:
        raise StateError(f"cannot run stage 2 from a stage-{ckpt.stage_id} checkpoint")
    net, records = run_stage(net, config, data)
    history = ckpt.history + [_history_entry(config, records, len(data), "stage2")]
    return Checkpoint(net, 2, history, dict(ckpt.meta)), records


def transition_checkpoint(ckpt: Checkpoint, config: StageConfig) -> Checkpoint:
    if ckpt.stage_id != 1:
        raise StateError(f"transition needs a stage-1 checkpoint, got stage {ckpt.stage_id}")
    net = transition(ckpt.net, config)
    history = ckpt.history + [_history_entry(replace(config, epochs=0), [], 0, "transition")]
    return Checkpoint(net, 2, history, dict(ckpt.meta))


def train_single_stage(
    config: StageConfig,
    data: Sequence[ExampleRecord],
    d_in: int,
    seed: int,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
) -> tuple[Checkpoint, list[TrainRecord]]:
    """Ablation: fine-tune the base network on ``config.label_set`` directly."""
    seeds = stage_seeds(seed)
    net = new_stage_net(config, d_in=d_in, hidden=hidden, base_seed=seeds["init"])
    net, records = run_stage(net, config, data)
    meta = {"seed": seed, "sub_seeds": seeds, "hidden": list(hidden)}
    return Checkpoint(net, config.stage_id, [_history_entry(config, records, len(data), "single")], meta), records


def classifier_transcript(net: ClassifierNet, record: ExampleRecord, image_ref: str) -> str:
    """Structured answer the toy classifier gives for one prompted input."""
    label = predict(net, record.features)
    return render_response(label, analysis=f"Classifier reading of {image_ref}; strongest evidence for {label}.")


def end_to_end_eval(
    ckpt: Checkpoint,
    manifest: Manifest,
    prompt_spec: PromptSpec | None = None,
    split: str = "test",
    lenient: bool = False,
) -> EvalReport:
    """Evaluate ``ckpt`` on one split of ``manifest``.

    With a prompt spec every prediction goes through the text path: the prompt
    is attached to the record, the classifier answers in the output template,
    and the answer is parsed back into a verdict.
    """
    net = ckpt.net
    check_compatible(net.active_labels, net.d_in, manifest.labels, manifest.dimension)
    records = manifest.split(split)
    if not records:
        raise CompatibilityError(f"manifest has no records in split {split!r}")
    pairs = []
    if prompt_spec is None:
        for r in records:
            pairs.append(EvalPair(r.id, r.label, Category(predict(net, r.features))))
    else:
        unknown = [c for c in net.active_labels if resolve(c, prompt_spec.category_names) is None]
        if unknown:
            raise CompatibilityError(f"prompt spec does not define {unknown}")
        prompt = build_prompt(prompt_spec)
        for r in records:
            request = attach(prompt, r.id)
            transcript = classifier_transcript(net, r, request.image_ref)
            pred, was_lenient = to_prediction(transcript, net.active_labels, lenient=lenient)
            pairs.append(EvalPair(r.id, r.label, pred, was_lenient))
    return evaluate(pairs, net.active_labels)
