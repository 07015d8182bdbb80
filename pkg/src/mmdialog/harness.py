"""Ablation harness: trains a grid of (feature kind, fusion, data mix)
cells under a fixed step budget and emits a comparable report."""

from __future__ import annotations

from dataclasses import dataclass, field

from .metrics import EvalEntry, EvalReport, perplexity
from .model import ModelConfig, init_params
from .training import TrainConfig, TrainingError, train


@dataclass
class AblationCell:
    feature_kind: str
    fusion: str
    data_mix: str                 # label for the training-data grouping
    datasets: list                # [(role, episodes, weight)]
    val_sets: dict                # dataset label -> episodes
    first_turn_sets: dict = field(default_factory=dict)


def ablation_harness(cells, base_config: ModelConfig, vocab,
                     tcfg: TrainConfig, seed: int = 0,
                     feature_fn=None) -> list[EvalReport]:
    """Train each cell and evaluate it; failed cells are marked, not fatal."""
    reports = []
    for cell in cells:
        config = ModelConfig.from_dict({**base_config.to_dict(),
                                        "fusion": cell.fusion,
                                        "feature_kind": cell.feature_kind})
        report = EvalReport(feature_kind=cell.feature_kind,
                            fusion=cell.fusion, training_data=cell.data_mix)
        try:
            params = init_params(config, seed=seed)
            result = train(params, config, vocab, cell.datasets, [],
                           tcfg, feature_fn=feature_fn)
            if result.diverged:
                raise TrainingError("cell diverged")
            eval_sets = dict(cell.val_sets)
            for name, eps in cell.first_turn_sets.items():
                eval_sets[f"{name}_first_turn"] = eps
            for name, episodes in eval_sets.items():
                feats = None
                if config.fusion != "none":
                    from .training import _episode_features
                    feats = _episode_features(episodes, config, tcfg,
                                              feature_fn)
                ppl = perplexity(result.params, config, vocab, episodes,
                                 features=feats, max_len=tcfg.max_len)
                report.entries.append(EvalEntry(dataset=name, ppl=ppl))
        except (TrainingError, ValueError):
            report.entries.append(
                EvalEntry(dataset="all", ppl=float("nan"), failed=True))
        reports.append(report)
    return reports
