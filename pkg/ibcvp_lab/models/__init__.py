from .grid import BoundaryGrid, CornerGrid, GridParams, make_grid
from .fields import ConnectionCoefficients, MetricField, TensorField, inverse_metric
from .frame import BoundaryFrame, LocalizationReport
from .target import BoundaryEvolutionState, CornerDataReport, TargetData
from .gauge import GaugeCauchyData, GaugeState
from .reports import (
    ConstraintResidual, DecayReport, EnergySeries, FieldHistory, IterationTrace,
    ResidualReport, StageRecord, VerificationReport, WaveProblemSpec,
)
from .cylinder import CylinderDiagnostics, CylinderTrajectory, FamilyRow, FamilyScan
from .iteration import IterationOptions, PatchChart
from .scenario import RunArtifacts, ScenarioConfig, SCENARIOS
