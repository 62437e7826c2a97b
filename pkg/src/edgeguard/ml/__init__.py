from .ensemble import ForestConfig, ForestModel, GbmConfig, GbmModel, train_forest, train_gbm
from .metrics import Metrics, auc_one_vs_rest, confusion_matrix, evaluate, summarize_confusion
from .modelio import deserialize_model, load_model, save_model, serialize_model
from .selection import feature_importance, select_features, selected_features
from .tree import CartConfig, Split, TreeModel, best_split, gini, leaf_tree, predict_label, train_cart

__all__ = [
    "CartConfig", "ForestConfig", "ForestModel", "GbmConfig", "GbmModel", "Metrics", "Split",
    "TreeModel", "auc_one_vs_rest", "best_split", "confusion_matrix", "deserialize_model",
    "evaluate", "feature_importance", "gini", "leaf_tree", "load_model", "predict_label",
    "save_model", "select_features", "selected_features", "serialize_model",
    "summarize_confusion", "train_cart", "train_forest", "train_gbm",
]
