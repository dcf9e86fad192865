"""Model persistence: a self-describing, versioned flat file.

JSON with sorted keys and fixed separators; floats round-trip exactly through
Python's repr, so save -> load -> save is byte-identical and reloaded models
predict bit-identically.
"""

from __future__ import annotations

import json

import numpy as np

from .boosting import BoostedTrees, Tree
from .catt import GbtCattModel, LinearCattModel
from .exceptions import SpecValidationError

FORMAT = "hetdid-model"
VERSION = 1


def _floats(arr) -> list:
    return [float(v) for v in np.asarray(arr).ravel()]


def _tree_to_dict(tree: Tree) -> dict:
    return {
        "feature": [int(v) for v in tree.feature],
        "bin_threshold": [int(v) for v in tree.bin_threshold],
        "threshold": _floats(tree.threshold),
        "left": [int(v) for v in tree.left],
        "right": [int(v) for v in tree.right],
        "value": _floats(tree.value),
    }


def _tree_from_dict(d: dict) -> Tree:
    return Tree(
        feature=np.asarray(d["feature"], dtype=np.int32),
        bin_threshold=np.asarray(d["bin_threshold"], dtype=np.int32),
        threshold=np.asarray(d["threshold"], dtype=float),
        left=np.asarray(d["left"], dtype=np.int32),
        right=np.asarray(d["right"], dtype=np.int32),
        value=np.asarray(d["value"], dtype=float),
    )


def model_to_dict(model) -> dict:
    meta = getattr(model, "metadata", {}) or {}
    common = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.final_kind,
        "n_features": int(model.n_features_in_),
        "x_cols": [int(c) for c in getattr(model, "x_cols", ()) or ()],
        "x_names": list(meta.get("x_names", [])),
        "training_loss": float(model.training_loss_),
        "metadata": {k: v for k, v in meta.items()
                     if isinstance(v, (str, int, float, bool, type(None)))},
    }
    if model.final_kind == "linear":
        common["basis"] = model.basis
        common["penalty"] = None if model.penalty is None else float(model.penalty)
        common["coef"] = _floats(model.coef_)
        return common
    booster = model.booster_
    common["boosting"] = {
        "init_value": float(booster.init_value_),
        "learning_rate": float(booster.learning_rate),
        "n_rounds": int(model.n_rounds),
        "max_depth": int(model.max_depth),
        "min_samples_leaf": int(model.min_samples_leaf),
        "seed": int(model.seed),
        "trees": [_tree_to_dict(t) for t in booster.trees_],
    }
    return common


def model_from_dict(data: dict):
    if data.get("format") != FORMAT:
        raise SpecValidationError("not a hetdid model file")
    if data.get("version") != VERSION:
        raise SpecValidationError(f"unsupported model version {data.get('version')!r}")
    kind = data["kind"]
    if kind == "linear":
        model = LinearCattModel(basis=data["basis"], penalty=data["penalty"])
        model.coef_ = np.asarray(data["coef"], dtype=float)
    elif kind == "gbt":
        b = data["boosting"]
        model = GbtCattModel(
            n_rounds=b["n_rounds"], learning_rate=b["learning_rate"],
            max_depth=b["max_depth"], min_samples_leaf=b["min_samples_leaf"],
            seed=b["seed"],
        )
        booster = BoostedTrees(
            n_rounds=b["n_rounds"], learning_rate=b["learning_rate"],
            max_depth=b["max_depth"], min_samples_leaf=b["min_samples_leaf"],
        )
        booster.init_value_ = float(b["init_value"])
        booster.trees_ = [_tree_from_dict(t) for t in b["trees"]]
        model.booster_ = booster
    else:
        raise SpecValidationError(f"unknown model kind {kind!r}")
    model.n_features_in_ = int(data["n_features"])
    model.training_loss_ = float(data["training_loss"])
    model.x_cols = tuple(data.get("x_cols", []))
    model.metadata = dict(data.get("metadata", {}))
    if data.get("x_names"):
        model.metadata["x_names"] = list(data["x_names"])
    return model


def dumps_model(model) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(model))
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
