"""JSON / CSV serialization of networks, masks, trained models and reports."""

from __future__ import annotations

import base64
import csv
import json
from pathlib import Path

import numpy as np

from .model import (FinalNetWeights, LayerParams, ModelConfig, MixtureState, NetworkParams)


def _arr(a: np.ndarray) -> list:
    return np.asarray(a, dtype=float).tolist()


def params_to_dict(theta: NetworkParams, cfg: ModelConfig | None = None) -> dict:
    layers = []
    for L in theta.layers:
        heads = [{"wq": _arr(L.wq[s]), "wk": _arr(L.wk[s]), "wv": _arr(L.wv[s])}
                 for s in range(L.wq.shape[0])]
        layers.append({"heads": heads,
                       "ffn": {"w1": _arr(L.w1), "b1": _arr(L.b1),
                               "w2": _arr(L.w2), "b2": _arr(L.b2)}})
    out = {"layers": layers,
           "final": {"v1": _arr(theta.final.v1), "v0_slope": _arr(theta.final.v0_slope),
                     "v0_bias": _arr(theta.final.v0_bias)}}
    if cfg is not None:
        out["config"] = cfg.to_dict()
    return out


def params_from_dict(data: dict) -> NetworkParams:
    layers = []
    for Ld in data["layers"]:
        heads = Ld["heads"]
        f = Ld["ffn"]
        layers.append(LayerParams(
            wq=np.array([hd["wq"] for hd in heads], dtype=float),
            wk=np.array([hd["wk"] for hd in heads], dtype=float),
            wv=np.array([hd["wv"] for hd in heads], dtype=float),
            w1=np.array(f["w1"], dtype=float), b1=np.array(f["b1"], dtype=float),
            w2=np.array(f["w2"], dtype=float), b2=np.array(f["b2"], dtype=float)))
    fd = data["final"]
    final = FinalNetWeights(np.array(fd["v1"], dtype=float), np.array(fd["v0_slope"], dtype=float),
                            np.array(fd["v0_bias"], dtype=float))
    return NetworkParams(layers, final)


def _pack(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=bool)
    return {"shape": list(a.shape),
            "bits": base64.b64encode(np.packbits(a.ravel()).tobytes()).decode("ascii")}


def _unpack(d: dict) -> np.ndarray:
    shape = tuple(d["shape"])
    raw = np.frombuffer(base64.b64decode(d["bits"]), dtype=np.uint8)
    size = int(np.prod(shape)) if shape else 1
    return np.unpackbits(raw)[:size].astype(bool).reshape(shape)


def mask_to_dict(mask: NetworkParams) -> dict:
    return {"arrays": [_pack(a) for a in mask.arrays()]}


def mask_from_dict(data: dict, cfg: ModelConfig) -> NetworkParams:
    arrays = iter(_unpack(d) for d in data["arrays"])
    return NetworkParams.zeros(cfg, bool).map(lambda _: next(arrays))


def _np_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    """Pretty-printed JSON with sorted keys."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_np_default) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def save_params(path, theta: NetworkParams, cfg: ModelConfig, mask: NetworkParams | None = None) -> None:
    doc = params_to_dict(theta, cfg)
    if mask is not None:
        doc["mask"] = mask_to_dict(mask)
    write_json(path, doc)


def load_params(path) -> tuple[NetworkParams, ModelConfig, NetworkParams | None]:
    doc = read_json(path)
    cfg = ModelConfig.from_dict(doc["config"])
    mask = mask_from_dict(doc["mask"], cfg) if "mask" in doc else None
    return params_from_dict(doc), cfg, mask


def trained_to_dict(model) -> dict:
    return {
        "config": model.cfg.to_dict(),
        "w": _arr(model.w_hat.w),
        "t_hat": int(model.t_hat),
        "networks": [params_to_dict(th) for th in model.thetas_hat],
        "masks": [mask_to_dict(m) for m in model.masks],
        "loss_trace": [float(v) for v in model.loss_trace],
    }


def trained_from_dict(data: dict):
    from .optimizer import TrainedModel

    cfg = ModelConfig.from_dict(data["config"])
    return TrainedModel(
        cfg=cfg,
        w_hat=MixtureState(np.array(data["w"], dtype=float)),
        thetas_hat=[params_from_dict(d) for d in data["networks"]],
        t_hat=int(data["t_hat"]),
        loss_trace=[float(v) for v in data["loss_trace"]],
        masks=[mask_from_dict(m, cfg) for m in data.get("masks", [])],
    )


def fmt(x) -> str:
    """Shortest round-trip text for floats; plain str otherwise."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_loss_trace(path, trace) -> None:
    write_csv(path, ["step", "empirical_loss"], [(t, float(v)) for t, v in enumerate(trace)])
