"""tripflow: OD trip-table estimation, forecasting and incident analysis."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NoPathError, NumericalError, TripflowError
from .network import (
    Link,
    Network,
    Node,
    Path,
    TimeGrid,
    TravelTimeTable,
    Zone,
    load_network,
    time_dependent_shortest_path,
)
from .simulator import (
    AssignConfig,
    AssignmentProportions,
    ODMatrixSeries,
    PathFlowBundle,
    SimulationResult,
    assign,
    compute_relative_gap,
    dynamic_network_loading,
)
from .estimation import (
    EstimationConfig,
    EstimationResult,
    LinkCountSeries,
    bilevel_estimate,
    objective_gradient,
    objective_value,
    upper_level_solve,
)
from .metrics import FitReport, fit_report, nrmse, r_squared, rmse
from .forecast import (
    ArimaModel,
    ArimaSpec,
    DemandSeries,
    SelectionReport,
    acf,
    difference,
    fit_arima,
    fit_fleet,
    forecast,
    integrate,
    naive_forecast,
    pacf,
    select_model,
)
from .incident import (
    IncidentScenario,
    ScenarioOutcome,
    apply_incident,
    duration_sweep,
    run_incident_analysis,
)
