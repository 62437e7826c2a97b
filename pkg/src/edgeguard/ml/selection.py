from __future__ import annotations

import numpy as np

from ..dataset import LabeledTable


def feature_importance(model) -> np.ndarray:
    """Impurity-decrease importance per input feature, normalized to sum 1."""
    return np.asarray(model.feature_importances(), dtype=np.float64)


def selected_features(model) -> list[str]:
    imp = feature_importance(model)
    return [name for name, v in zip(model.feature_names, imp) if v > 0.0]


def select_features(model, table: LabeledTable) -> LabeledTable:
    """Keep the columns with nonzero importance, in their original order."""
    keep = set(selected_features(model))
    names = [c for c in table.schema if c in keep]
    return table.select_columns(names)
