"""Multi-stage transfer-learning plans: primary training, the SIC-to-DIC
graft, population adaptation, and per-subject fine-tuning.

A plan is a DAG of named stages (edges via ``source``). All datasets and
splits are built and leak-checked before any training starts; stages then
execute in topological order, checkpointing after each one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .checkpoint import save_checkpoint
from .dataset import (
    SplitPolicy,
    check_disjoint,
    make_examples,
    split_examples,
)
from .errors import ConfigError
from .ioutil import write_text_atomic
from .metrics import MetricsReport, evaluate_metrics, truth_matrix
from .models import ModelGraph, ModelHyper, build_model
from .preprocess import PreprocessConfig
from .recordings import Recording, load_recording
from .training import (
    GraftReport,
    TrainConfig,
    TrainHistory,
    finetune,
    predict_degrees,
    train,
    transfer_sic_to_dic,
)

PRIMARY_TRAIN = "primary_train"
SIC_TO_DIC = "sic_to_dic"
POPULATION_ADAPT = "population_adapt"
SUBJECT_FINETUNE = "subject_finetune"
STAGE_KINDS = (PRIMARY_TRAIN, SIC_TO_DIC, POPULATION_ADAPT, SUBJECT_FINETUNE)

DataSource = Union[str, Path, Recording]


@dataclass
class Stage:
    """One step of the workflow, naming its data, split, and settings."""

    name: str
    kind: str
    scenario: str = "SIC"
    horizon: int = 1
    source: Optional[str] = None
    data: Sequence[DataSource] = field(default_factory=list)
    split: SplitPolicy = field(default_factory=SplitPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    graft_seed: int = 0


@dataclass
class StageArtifacts:
    model: ModelGraph
    history: Optional[TrainHistory] = None
    metrics: Optional[MetricsReport] = None
    graft: Optional[GraftReport] = None
    checkpoint_path: Optional[str] = None


def _clone_model(model: ModelGraph) -> ModelGraph:
    from .autodiff import Tensor

    params = {n: Tensor(p.data.copy(), requires_grad=True, op=n)
              for n, p in model.params.items()}
    clone = ModelGraph(model.scenario, model.hyper, params, dict(model.group_of),
                       target_mean=model.target_mean, target_std=model.target_std,
                       meta=dict(model.meta))
    clone.trainable = dict(model.trainable)
    clone.lr_scale = dict(model.lr_scale)
    return clone


def _topo_order(stages: Sequence[Stage]) -> list[Stage]:
    by_name = {}
    for stage in stages:
        if stage.name in by_name:
            raise ConfigError(f"duplicate stage name {stage.name!r}")
        if stage.kind not in STAGE_KINDS:
            raise ConfigError(f"stage {stage.name!r}: unknown kind {stage.kind!r}")
        by_name[stage.name] = stage
    for stage in stages:
        if stage.kind == PRIMARY_TRAIN:
            if stage.source is not None:
                raise ConfigError(f"stage {stage.name!r}: primary_train takes no source")
        else:
            if stage.source is None:
                raise ConfigError(f"stage {stage.name!r}: kind {stage.kind} needs a source")
            if stage.source not in by_name:
                raise ConfigError(
                    f"stage {stage.name!r}: unknown source {stage.source!r}")

    order: list[Stage] = []
    done: set[str] = set()
    marked: set[str] = set()

    def visit(stage: Stage) -> None:
        if stage.name in done:
            return
        if stage.name in marked:
            raise ConfigError(f"stage plan has a cycle through {stage.name!r}")
        marked.add(stage.name)
        if stage.source is not None:
            visit(by_name[stage.source])
        done.add(stage.name)
        order.append(stage)

    for stage in stages:
        visit(stage)
    return order


def _load_sources(data: Sequence[DataSource]) -> list[Recording]:
    recordings = []
    for src in data:
        recordings.append(src if isinstance(src, Recording) else load_recording(src))
    return recordings


def _stage_examples(stage: Stage, config: PreprocessConfig) -> Optional[dict]:
    if stage.kind == SIC_TO_DIC:
        return None
    if not stage.data:
        raise ConfigError(f"stage {stage.name!r}: kind {stage.kind} needs data")
    examples = []
    for rec in _load_sources(stage.data):
        examples.extend(make_examples(rec, stage.scenario, stage.horizon, config=config))
    parts = split_examples(examples, stage.split)
    grad_key = "finetune" if "finetune" in parts else "train"
    eval_key = "evaluation" if "evaluation" in parts else "validation"
    check_disjoint(parts[grad_key], parts[eval_key])
    return {"gradient": parts[grad_key], "holdout": parts[eval_key]}


def run_stage_plan(
    stages: Sequence[Stage],
    hyper: Optional[ModelHyper] = None,
    preprocess: Optional[PreprocessConfig] = None,
    workdir: Optional[Path] = None,
) -> dict[str, StageArtifacts]:
    """Validate the full plan, then execute every stage in topological order.

    Datasets for all stages are constructed and leak-checked up front, so
    a bad split fails before any training happens. Returns artifacts per
    stage name; with ``workdir`` set, each stage writes its checkpoint,
    history, and metrics there.
    """
    hyper = hyper if hyper is not None else ModelHyper()
    preprocess = preprocess if preprocess is not None else PreprocessConfig()
    if hyper.input_len != preprocess.window.output_samples:
        raise ConfigError(
            f"model input_len {hyper.input_len} != preprocessed window length "
            f"{preprocess.window.output_samples}")
    order = _topo_order(stages)
    datasets = {stage.name: _stage_examples(stage, preprocess) for stage in order}

    artifacts: dict[str, StageArtifacts] = {}
    for stage in order:
        stage_hyper = hyper.with_horizon(stage.horizon)
        data = datasets[stage.name]
        history = metrics = graft = None

        if stage.kind == PRIMARY_TRAIN:
            model = build_model(stage.scenario, stage_hyper, seed=stage.train.seed)
            model, history = train(model, data["gradient"], data["holdout"], stage.train)
        elif stage.kind == SIC_TO_DIC:
            source = artifacts[stage.source].model
            model, graft = transfer_sic_to_dic(source, stage_hyper, stage.graft_seed,
                                               target_scenario=stage.scenario)
        elif stage.kind == POPULATION_ADAPT:
            model = _clone_model(artifacts[stage.source].model)
            model, history = train(model, data["gradient"], data["holdout"], stage.train)
        else:  # SUBJECT_FINETUNE
            model = _clone_model(artifacts[stage.source].model)
            model, metrics, history = finetune(model, data["gradient"],
                                               data["holdout"], stage.train)

        if metrics is None and data is not None:
            preds = predict_degrees(model, data["holdout"])
            metrics = evaluate_metrics(preds, truth_matrix(data["holdout"]))

        provenance = list(model.meta.get("provenance", []))
        provenance.append({"stage": stage.name, "kind": stage.kind,
                           "scenario": stage.scenario, "horizon": stage.horizon,
                           "seed": stage.train.seed})
        model.meta["provenance"] = provenance

        ckpt_path = None
        if workdir is not None:
            workdir = Path(workdir)
            workdir.mkdir(parents=True, exist_ok=True)
            ckpt_path = str(workdir / f"{stage.name}.ckpt")
            save_checkpoint(model, ckpt_path)
            if history is not None:
                write_text_atomic(workdir / f"{stage.name}.history.json",
                                  json.dumps(history.to_dict(), indent=2) + "\n")
            if metrics is not None:
                write_text_atomic(workdir / f"{stage.name}.metrics.json",
                                  metrics.to_json())

        artifacts[stage.name] = StageArtifacts(
            model=model, history=history, metrics=metrics, graft=graft,
            checkpoint_path=ckpt_path)
    return artifacts
