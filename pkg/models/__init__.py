"""Models package: data loading, SOM, labeling, convolutional and spiking extractors."""
from .errors import LabError, StageError
from .schemas import ExperimentConfig, ExperimentReport, Extractor, SweepAxis

__all__ = [
    'LabError',
    'StageError',
    'ExperimentConfig',
    'ExperimentReport',
    'Extractor',
    'SweepAxis'
]
