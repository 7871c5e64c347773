"""
Configuration and Report Models
Pydantic models for every hyper-parameter set, the experiment configuration file,
the machine-readable reports and the HTTP API payloads.
"""

import math
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

REPORT_SCHEMA_VERSION = 1


class Extractor(str, Enum):
    """Feature source feeding the SOM."""
    RAW = "raw"      # raw pixels
    SCAE = "scae"    # sparse convolutional auto-encoder
    CAE = "cae"      # same auto-encoder without sparsity constraints
    SNN = "snn"      # STDP-trained spiking network
    CNN = "cnn"      # supervised CNN trunk (upper bound)


class SweepAxis(str, Enum):
    """Configuration axis varied by a sweep."""
    FEATURE_MAPS = "feature_maps"
    SOM_NEURONS = "som_neurons"
    LABEL_FRACTION = "label_fraction"


# ==================== DATA ====================

class SubsetSpec(BaseModel):
    """Seeded request for a labeled subset of a dataset."""
    model_config = ConfigDict(frozen=True)

    fraction: float = Field(..., description="Fraction of the source dataset to draw, in (0, 1]", examples=[0.01])
    seed: int = Field(0, ge=0, lt=2**64, description="64-bit sampling seed")
    stratified: bool = Field(False, description="Draw per-class quotas instead of a uniform sample")

    @model_validator(mode="after")
    def _check_fraction(self) -> "SubsetSpec":
        if not (0.0 < self.fraction <= 1.0) or math.isnan(self.fraction):
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        return self


class DataConfig(BaseModel):
    """Locations of the four MNIST IDX files and optional desk-scale limits."""
    train_images: str = Field("data/train-images-idx3-ubyte", description="Training images IDX file")
    train_labels: str = Field("data/train-labels-idx1-ubyte", description="Training labels IDX file")
    test_images: str = Field("data/t10k-images-idx3-ubyte", description="Test images IDX file")
    test_labels: str = Field("data/t10k-labels-idx1-ubyte", description="Test labels IDX file")
    train_limit: Optional[int] = Field(None, ge=1, description="Use only the first N training items (file order)")
    test_limit: Optional[int] = Field(None, ge=1, description="Use only the first N test items (file order)")


# ==================== SOM ====================

class SomHyperParams(BaseModel):
    """Learning-rate / neighborhood schedules and activity width of the SOM."""
    epsilon_i: float = Field(1.0, gt=0, description="Initial learning rate")
    epsilon_f: float = Field(0.01, gt=0, description="Final learning rate")
    sigma_i: float = Field(10.0, gt=0, description="Initial neighborhood width")
    sigma_f: float = Field(0.01, gt=0, description="Final neighborhood width")
    alpha: float = Field(1.0, gt=0, description="Width of the Gaussian activity kernel")
    epochs: int = Field(10, ge=1, description="Number of passes over the training data (t_f)")

    @model_validator(mode="after")
    def _check_schedules(self) -> "SomHyperParams":
        if self.epsilon_i < self.epsilon_f:
            raise ValueError("epsilon_i must be >= epsilon_f")
        if self.sigma_i < self.sigma_f:
            raise ValueError("sigma_i must be >= sigma_f")
        return self


class SomConfig(BaseModel):
    """Size and training settings of the SOM."""
    neurons: int = Field(256, ge=1, description="Number of neurons k")
    width: Optional[int] = Field(None, ge=1, description="Grid width (squarest factorization of k when omitted)")
    height: Optional[int] = Field(None, ge=1, description="Grid height")
    hyper: SomHyperParams = Field(default_factory=SomHyperParams)
    labeling_alpha: float = Field(1.0, gt=0, description="Activity width used by the labeling phase")
    normalize_features: bool = Field(False, description="Min-max scale features (fit on train) before the SOM")

    @model_validator(mode="after")
    def _check_shape(self) -> "SomConfig":
        if self.width is not None and self.height is not None and self.width * self.height != self.neurons:
            raise ValueError(f"width x height ({self.width}x{self.height}) must equal neurons ({self.neurons})")
        return self


# ==================== GRADIENT MODELS ====================

class AdadeltaParams(BaseModel):
    """Adadelta optimizer settings."""
    rho: float = Field(0.95, gt=0, lt=1, description="Decay of both moving averages")
    epsilon: float = Field(1e-7, gt=0, description="Numerical floor inside the RMS terms")
    learning_rate: float = Field(1.0, gt=0, description="Multiplier applied to the Adadelta step")


class ScaeConfig(BaseModel):
    """Auto-encoder topology and training settings."""
    feature_maps: int = Field(32, ge=1, description="X, maps of the code convolution")
    hidden_maps: int = Field(64, ge=1, description="Maps of the first convolution")
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(64, ge=1)
    train_limit: Optional[int] = Field(10000, ge=1, description="Training images used by the auto-encoder")
    lambda_weights: float = Field(1e-4, ge=0, description="L2 weight penalty rate")
    lambda_activity: float = Field(1e-4, ge=0, description="L1 activity penalty rate on the code convolution")
    optimizer: AdadeltaParams = Field(default_factory=AdadeltaParams)


class CnnConfig(BaseModel):
    """Supervised CNN baseline settings."""
    feature_maps: int = Field(32, ge=1)
    hidden_maps: int = Field(64, ge=1)
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(64, ge=1)
    train_limit: Optional[int] = Field(10000, ge=1)
    optimizer: AdadeltaParams = Field(default_factory=AdadeltaParams)


# ==================== SPIKING MODEL ====================

class StdpConfig(BaseModel):
    """Simplified multiplicative STDP with winner-take-all."""
    a_plus: float = Field(0.004, description="Potentiation rate (> 0)")
    a_minus: float = Field(-0.003, description="Depression rate (< 0)")
    kwta: int = Field(5, ge=1, description="Winners per stimulus")
    inhibition_radius: int = Field(3, ge=0)
    convergence_threshold: float = Field(0.01, gt=0, description="Stop when mean w(1-w) falls below")
    max_passes: int = Field(2, ge=0, description="Maximum passes over the training images per layer")
    adaptive_rate: bool = Field(True, description="Double a_plus every rate_update_interval stimuli")
    rate_update_interval: int = Field(500, ge=1)
    a_plus_max: float = Field(0.15, gt=0)

    @model_validator(mode="after")
    def _check_rates(self) -> "StdpConfig":
        if not (self.a_plus > 0 > self.a_minus):
            raise ValueError("STDP rates must satisfy a_plus > 0 > a_minus")
        return self


class SnnConfig(BaseModel):
    """Spiking feature extractor topology and encoding."""
    feature_maps: int = Field(64, ge=1, description="X, maps of the second convolution")
    hidden_maps: int = Field(64, ge=1)
    time_steps: int = Field(15, ge=1)
    dog_size: int = Field(7, ge=3)
    dog_sigmas: Tuple[float, float] = Field((1.0, 2.0))
    dog_threshold: float = Field(50.0, ge=0, description="DoG response below this never spikes (0-255 pixel scale)")
    conv1_threshold: float = Field(15.0, gt=0)
    conv2_train_threshold: float = Field(10.0, gt=0, description="Firing threshold of conv2 while it learns")
    weight_mean: float = Field(0.8, ge=0, le=1)
    weight_std: float = Field(0.05, ge=0)
    pooling_scheme: Literal["first_spike", "single"] = "first_spike"
    train_limit: Optional[int] = Field(10000, ge=1, description="Images presented to STDP")
    stdp: StdpConfig = Field(default_factory=StdpConfig)


# ==================== EXPERIMENT ====================

class ExperimentConfig(BaseModel):
    """A complete, replayable experiment description (stored as JSON)."""
    name: str = Field("experiment")
    extractor: Extractor = Extractor.RAW
    data: DataConfig = Field(default_factory=DataConfig)
    som: SomConfig = Field(default_factory=SomConfig)
    scae: ScaeConfig = Field(default_factory=ScaeConfig)
    cnn: CnnConfig = Field(default_factory=CnnConfig)
    snn: SnnConfig = Field(default_factory=SnnConfig)
    label_fraction: float = Field(0.01, gt=0, le=1, description="Fraction of the training set used for labeling")
    stratified_labels: bool = False
    repetitions: int = Field(10, ge=1)
    seed: int = Field(0, ge=0, lt=2**64, description="Master seed")
    output_dir: str = Field("runs")
    cache_features: bool = Field(True, description="Reuse feature dumps found in the output directory")
    dump_images: bool = Field(False, description="Save PNG grids of prototypes and kernels")

    def with_axis_value(self, axis: SweepAxis, value: float) -> "ExperimentConfig":
        """Return a copy with one sweep axis set to value."""
        if axis == SweepAxis.SOM_NEURONS:
            som = self.som.model_copy(update={"neurons": int(value), "width": None, "height": None})
            return self.model_copy(update={"som": som})
        if axis == SweepAxis.LABEL_FRACTION:
            return self.model_copy(update={"label_fraction": float(value)})
        section = {
            Extractor.SCAE: "scae", Extractor.CAE: "scae",
            Extractor.CNN: "cnn", Extractor.SNN: "snn",
        }.get(self.extractor)
        if section is None:
            raise ValueError("feature_maps sweep needs a convolutional extractor")
        updated = getattr(self, section).model_copy(update={"feature_maps": int(value)})
        return self.model_copy(update={section: updated})

    def validated(self) -> "ExperimentConfig":
        """Re-run validation (model_copy skips it)."""
        return ExperimentConfig.model_validate(self.model_dump())


class RepetitionResult(BaseModel):
    """Outcome of one SOM training + labeling + evaluation repetition."""
    index: int
    seed: int
    accuracy: float
    quantization_error: float
    labeled_neurons: int
    label_samples: int
    grid: Dict[str, Any] = Field(default_factory=dict, description="Shape, dimension and init seed of the trained SOM")


class ExperimentReport(BaseModel):
    """Versioned result of run_experiment."""
    schema_version: int = REPORT_SCHEMA_VERSION
    config: ExperimentConfig
    extractor_info: Dict[str, Any] = Field(default_factory=dict)
    data_info: Dict[str, Any] = Field(default_factory=dict, description="Summaries of the train and test splits")
    repetitions: List[RepetitionResult] = Field(default_factory=list)
    mean: float = 0.0
    std: float = 0.0
    wall_clock_seconds: float = 0.0
    artifacts: Dict[str, str] = Field(default_factory=dict)

    def numbers(self) -> Dict[str, Any]:
        """Every reported number except wall-clock, for determinism checks."""
        return {
            "mean": self.mean,
            "std": self.std,
            "repetitions": [r.model_dump() for r in self.repetitions],
        }


class SweepPoint(BaseModel):
    """One row of sweep.csv."""
    axis: SweepAxis
    value: float
    mean: Optional[float] = None
    std: Optional[float] = None
    reps: int = 0
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None


class GridSearchRow(BaseModel):
    """One evaluated SOM hyper-parameter combination."""
    params: Dict[str, float]
    accuracy: Optional[float] = None
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None


class GridSearchResult(BaseModel):
    """Best combination and the full evaluation table."""
    best: Optional[Dict[str, float]] = None
    rows: List[GridSearchRow] = Field(default_factory=list)


# ==================== API ====================

class APIInfoResponse(BaseModel):
    """Response model for API root endpoint."""
    message: str = Field(..., description="API welcome message")
    version: str = Field(..., description="API version")
    status: str = Field(..., description="API status")
    endpoints: Dict[str, str] = Field(..., description="Available endpoints and their descriptions")


class ErrorResponse(BaseModel):
    """Response model for error messages."""
    detail: str = Field(..., description="Error message describing what went wrong")

    model_config = ConfigDict(json_schema_extra={"example": {"detail": "Job with ID 1a2b3c4d not found"}})


class JobSubmitRequest(BaseModel):
    """Request body for submitting an experiment job."""
    preset: Optional[str] = Field(None, description="Preset to start from", examples=["desk-raw"])
    config: Dict[str, Any] = Field(default_factory=dict, description="Overrides merged over the preset")


class JobResponse(BaseModel):
    """Status of a queued, running or finished experiment job."""
    job_id: str = Field(..., description="Unique job identifier", examples=["1a2b3c4d"])
    status: str = Field(..., description="pending, running, completed, failed or cancelled")
    name: str = Field(..., description="Experiment name")
    created_at: str
    started_at: Optional[str] = None
    completed_at: Optional[str] = None
    duration: Optional[float] = None
    error: Optional[str] = None
    mean_accuracy: Optional[float] = None
