import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.core.exceptions import DataError, ReportIOError
from app.data.schemas import (
    ColumnType,
    Dataset,
    DatasetSchema,
    IngestReport,
    Role,
    SampleView,
    Selector,
)

logger = logging.getLogger(__name__)

ColumnOverride = Union[np.ndarray, float, int]


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


class DataService:
    @staticmethod
    def ingest_csv(path: Union[str, Path], schema: DatasetSchema) -> Tuple[Dataset, IngestReport]:
        """Read a CSV, keep the declared columns, apply the missing-data policy
        and return a validated Dataset with its ingestion report."""
        path = Path(path)
        if not path.is_file():
            raise ReportIOError(f"Data file not found: {path}", path=str(path))
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
        except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
            raise ReportIOError(f"Could not read data file: {e}", path=str(path))

        declared = [c.name for c in schema.columns]
        missing_cols = [name for name in declared if name not in frame.columns]
        if missing_cols:
            raise DataError(
                f"Declared columns missing from file header: {', '.join(missing_cols)}",
                details={"missing": missing_cols},
            )

        frame = frame[declared].apply(lambda s: s.str.strip())
        rows_read = len(frame)
        blank = (frame == "") | frame.isin(["NA", "NaN", "nan"])
        incomplete = blank.any(axis=1)
        if incomplete.any():
            if schema.missing == "reject":
                first = int(np.flatnonzero(incomplete.to_numpy())[0])
                raise DataError(
                    f"{int(incomplete.sum())} rows have missing values (first at data row {first + 1})",
                    details={"rows_with_missing": int(incomplete.sum())},
                )
            frame = frame.loc[~incomplete].reset_index(drop=True)
            logger.warning(f"Dropped {int(incomplete.sum())} of {rows_read} rows with missing values")

        columns: Dict[str, np.ndarray] = {}
        levels: Dict[str, Tuple[str, ...]] = {}
        roles: Dict[str, Role] = {}
        for col in schema.columns:
            raw = frame[col.name]
            roles[col.name] = col.role
            if col.type == ColumnType.CATEGORICAL and col.role not in (Role.EXPOSURE, Role.OUTCOME):
                seen = list(dict.fromkeys(raw.tolist()))
                order = list(col.levels) if col.levels else seen
                unknown = [v for v in seen if v not in order]
                if unknown:
                    raise DataError(
                        f"Column '{col.name}' has values outside its declared levels: {unknown}",
                        details={"column": col.name, "values": unknown},
                    )
                levels[col.name] = tuple(order)
                columns[col.name] = raw.to_numpy(dtype=object)
                continue
            if col.type == ColumnType.CATEGORICAL:
                # Binary exposure/outcome declared categorical: normalize to 0/1
                order = list(col.levels) if col.levels else list(dict.fromkeys(raw.tolist()))
                if len(order) != 2 or not set(raw.unique()) <= set(order):
                    raise DataError(
                        f"Column '{col.name}' must have exactly two levels to be used as {col.role.value}",
                        details={"column": col.name},
                    )
                columns[col.name] = (raw == order[1]).to_numpy(dtype=float)
                continue
            try:
                values = pd.to_numeric(raw, errors="raise").to_numpy(dtype=float)
            except (ValueError, TypeError):
                parsed = pd.to_numeric(raw, errors="coerce")
                row = int(np.flatnonzero(parsed.isna().to_numpy())[0])
                raise DataError(
                    f"Unparseable numeric cell in column '{col.name}' at data row {row + 1}: '{raw.iloc[row]}'",
                    details={"column": col.name, "row": row + 1},
                )
            if col.type == ColumnType.BINARY and not np.all((values == 0) | (values == 1)):
                raise DataError(
                    f"Column '{col.name}' is declared binary but has values outside {{0, 1}}",
                    details={"column": col.name},
                )
            columns[col.name] = values

        ds = DataService.build(columns, roles, levels, dropped_rows=rows_read - len(frame))
        report = IngestReport(
            rows_read=rows_read,
            rows_kept=ds.n,
            rows_dropped=ds.dropped_rows,
            treated=len(ds.treated_index),
            control=len(ds.control_index),
        )
        logger.info(
            f"Ingested {path.name}: {ds.n} rows ({report.treated} treated, {report.control} control)"
        )
        return ds, report

    @staticmethod
    def build(
        columns: Mapping[str, np.ndarray],
        roles: Mapping[str, Role],
        levels: Optional[Mapping[str, Sequence[str]]] = None,
        obs_weights: Optional[np.ndarray] = None,
        dropped_rows: int = 0,
    ) -> Dataset:
        """Assemble a Dataset from arrays and check its invariants."""
        levels = {k: tuple(v) for k, v in (levels or {}).items()}
        cols: Dict[str, np.ndarray] = {}
        for name, values in columns.items():
            arr = np.asarray(values, dtype=object if name in levels else float).copy()
            cols[name] = _frozen(arr)
        lengths = {len(v) for v in cols.values()}
        if len(lengths) > 1:
            raise DataError("Columns have unequal lengths", details={"lengths": sorted(lengths)})
        n = lengths.pop() if lengths else 0
        b = np.ones(n) if obs_weights is None else np.asarray(obs_weights, dtype=float).copy()
        ds = Dataset(
            columns=cols,
            levels=levels,
            roles=dict(roles),
            obs_weights=_frozen(b),
            dropped_rows=dropped_rows,
        )
        DataService.validate(ds)
        return ds

    @staticmethod
    def validate(ds: Dataset) -> None:
        unknown = [name for name in ds.roles if name not in ds.columns]
        if unknown:
            raise DataError(f"Roles declared for unknown columns: {unknown}")
        counts = {role: sum(1 for r in ds.roles.values() if r == role) for role in Role}
        if counts[Role.EXPOSURE] != 1:
            raise DataError(f"Exactly one exposure column required, found {counts[Role.EXPOSURE]}")
        if counts[Role.OUTCOME] != 1:
            raise DataError(f"Exactly one outcome column required, found {counts[Role.OUTCOME]}")
        if counts[Role.COVARIATE] < 1:
            raise DataError("At least one covariate is required")
        if counts[Role.MEDIATOR] < 1:
            raise DataError("At least one mediator is required")
        if ds.n == 0:
            raise DataError("Dataset is empty")

        a = ds.columns[ds.exposure]
        if not np.all((a == 0.0) | (a == 1.0)):
            bad = sorted(set(np.unique(a[(a != 0.0) & (a != 1.0)]).tolist()))
            raise DataError(
                f"Exposure '{ds.exposure}' is not binary; found values {bad[:5]}",
                details={"column": ds.exposure, "values": bad[:5]},
            )
        if not np.any(a == 1.0):
            raise DataError("Treated subsample is empty")
        if not np.any(a == 0.0):
            raise DataError("Control subsample is empty")

        for name, values in ds.columns.items():
            if name in ds.levels:
                bad_levels = set(values.tolist()) - set(ds.levels[name])
                if bad_levels:
                    raise DataError(f"Column '{name}' has undeclared levels {sorted(bad_levels)}")
            elif not np.all(np.isfinite(values)):
                raise DataError(f"Column '{name}' contains missing or non-finite values")
        b = ds.obs_weights
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            raise DataError("Observation weights must be finite and non-negative")

    @staticmethod
    def subsample(ds: Dataset, which: Union[str, Selector]) -> SampleView:
        selector = Selector(which)
        if selector == Selector.FULL:
            raise DataError("subsample expects 'treated' or 'control'")
        return SampleView(ds, selector)

    @staticmethod
    def full(ds: Dataset, weights: Optional[np.ndarray] = None) -> SampleView:
        return SampleView(ds, Selector.FULL, weights)

    @staticmethod
    def with_columns(ds: Dataset, updates: Mapping[str, ColumnOverride]) -> Dataset:
        """Return a copy with numeric columns added or replaced.

        Scalars broadcast to every row. New columns get no role.
        Invariants are not re-checked: derived datasets (counterfactual
        exposure settings, simulated mediators) legitimately break them.
        """
        cols = dict(ds.columns)
        levels = dict(ds.levels)
        for name, value in updates.items():
            arr = np.broadcast_to(np.asarray(value, dtype=float), (ds.n,)).copy()
            cols[name] = _frozen(arr)
            levels.pop(name, None)
        return Dataset(
            columns=cols,
            levels=levels,
            roles=ds.roles,
            obs_weights=ds.obs_weights,
            dropped_rows=ds.dropped_rows,
        )

    @staticmethod
    def with_obs_weights(ds: Dataset, obs_weights: np.ndarray) -> Dataset:
        b = np.asarray(obs_weights, dtype=float).copy()
        if b.shape != (ds.n,):
            raise DataError("Observation weights must have one entry per row")
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            raise DataError("Observation weights must be finite and non-negative")
        return Dataset(
            columns=ds.columns,
            levels=ds.levels,
            roles=ds.roles,
            obs_weights=_frozen(b),
            dropped_rows=ds.dropped_rows,
        )

    @staticmethod
    def stack(parts: Sequence[Tuple[SampleView, Mapping[str, ColumnOverride]]]) -> SampleView:
        """Concatenate views of one base Dataset into a single weighted view.

        Each part may override numeric columns on its own rows (substituted
        outcomes, arm indicators). Observation weights and analysis weights
        are carried over row by row.
        """
        if not parts:
            raise DataError("Nothing to stack")
        base = parts[0][0].base
        override_names: List[str] = []
        for _, overrides in parts:
            for name in overrides:
                if name not in override_names:
                    override_names.append(name)

        cols: Dict[str, np.ndarray] = {}
        for name in list(base.columns) + [c for c in override_names if c not in base.columns]:
            pieces = []
            for view, overrides in parts:
                if name in overrides:
                    pieces.append(np.broadcast_to(np.asarray(overrides[name], dtype=float), (view.n,)))
                elif name in base.columns:
                    pieces.append(view.column(name))
                else:
                    pieces.append(np.zeros(view.n))
            dtype = object if (name in base.levels and name not in override_names) else float
            cols[name] = _frozen(np.concatenate(pieces).astype(dtype))

        levels = {k: v for k, v in base.levels.items() if k not in override_names}
        b = np.concatenate([base.obs_weights[view.index] for view, _ in parts])
        w = np.concatenate([
            view.weights if view.weights is not None else np.ones(view.n) for view, _ in parts
        ])
        stacked = Dataset(columns=cols, levels=levels, roles=base.roles, obs_weights=_frozen(b))
        return SampleView(stacked, Selector.FULL, w)

    @staticmethod
    def to_frame(ds: Dataset) -> pd.DataFrame:
        return pd.DataFrame({name: values for name, values in ds.columns.items()})
