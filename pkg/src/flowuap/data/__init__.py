from .io import LoadStats, RawTable, load_csv
from .preprocess import (
    ATTACK,
    BENIGN,
    FlowDataset,
    PreparedData,
    encode,
    prepare,
    preprocess,
    reconcile,
    stratified_split,
    undersample,
)
from .schema import MF, RF, UF, FeatureDesc, FeatureGroups, FeatureSchema, get_profile, make_profile
from .synth import SynthConfig, synth_generate, write_csv

__all__ = [
    "ATTACK", "BENIGN", "MF", "RF", "UF", "FeatureDesc", "FeatureGroups", "FeatureSchema",
    "FlowDataset", "LoadStats", "PreparedData", "RawTable", "SynthConfig", "encode",
    "get_profile", "load_csv", "make_profile", "prepare", "preprocess", "reconcile",
    "stratified_split", "synth_generate", "undersample", "write_csv",
]
