"""EEG time-series classification: SSA decomposition, 1D attention CNNs,
Markov-field imaging and a 2D residual network with split attention.

Submodules are imported lazily so that ``steam_eeg.cli`` can cap numerical
library threads before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "parse_ts": "dataio", "Dataset": "dataio", "MultichannelSeries": "dataio",
    "export_image": "dataio", "export_csv": "dataio",
    "SsaConfig": "ssa", "decompose": "ssa", "svd": "ssa",
    "MtfConfig": "mtf", "belief_propagation": "mtf", "build_region_graph": "mtf",
    "NetConfig": "model", "SteamModel": "model", "prepare_inputs": "model",
    "RunConfig": "config", "TrainConfig": "config",
    "fit": "train", "evaluate": "train", "ablate": "train",
    "save_checkpoint": "train", "load_checkpoint": "train",
    "frequency_dataset": "synthetic",
}


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = sorted(_EXPORTS)
