"""Panel assembly, OLS with robust errors, model specs and tables."""

from .ols import (
    INTERCEPT,
    SE_TYPES,
    RegressionResult,
    RobustOLS,
    design_matrix,
    fit_ols,
    fit_spec,
    star_codes,
)
from .panel import PANEL_COLUMNS, PanelConfig, build_panel, drop_missing, quantile_flag
from .specs import (
    EQ3_COLUMNS,
    EQ4_COLUMNS,
    ModelSpec,
    model_eq3,
    model_eq4,
    table_specs,
)
from .tables import (
    correlation_table,
    fmt_num,
    parse_table,
    regression_frame,
    render_table,
    term_label,
    write_regression_csv,
)

__all__ = [
    "EQ3_COLUMNS",
    "EQ4_COLUMNS",
    "INTERCEPT",
    "PANEL_COLUMNS",
    "SE_TYPES",
    "ModelSpec",
    "PanelConfig",
    "RegressionResult",
    "RobustOLS",
    "build_panel",
    "correlation_table",
    "design_matrix",
    "drop_missing",
    "fit_ols",
    "fit_spec",
    "fmt_num",
    "model_eq3",
    "model_eq4",
    "parse_table",
    "quantile_flag",
    "regression_frame",
    "render_table",
    "star_codes",
    "table_specs",
    "term_label",
    "write_regression_csv",
]
