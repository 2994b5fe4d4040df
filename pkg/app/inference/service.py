import logging
from typing import Callable, Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed

from app.core.config import settings
from app.core.exceptions import AppException
from app.core.rng import child_seed, substream
from app.data.schemas import Dataset
from app.data.service import DataService
from app.inference.schemas import BootstrapConfig, BootstrapScheme, IntervalReport, IntervalRow

logger = logging.getLogger(__name__)

# (dataset, seed) -> {"<estimator>|<effect>": value}; NaN marks a failed value
Pipeline = Callable[[Dataset, int], Dict[str, float]]


def draw_bootstrap_weights(n: int, scheme: BootstrapScheme, rng: np.random.Generator) -> np.ndarray:
    """Replicate observation weights summing to n.

    Dirichlet weights are normalized standard exponentials times n, so every
    unit keeps a positive weight (mean 1, variance (n-1)/(n+1)).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    scheme = BootstrapScheme(scheme)
    if scheme == BootstrapScheme.DIRICHLET:
        e = rng.standard_exponential(n)
        return e / e.sum() * n
    return rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)


def _replicate(pipeline: Pipeline, ds: Dataset, cfg: BootstrapConfig, r: int) -> Optional[Dict[str, float]]:
    w = draw_bootstrap_weights(ds.n, cfg.scheme, substream(cfg.seed, "bootstrap", r))
    try:
        replicate = DataService.with_obs_weights(ds, ds.obs_weights * w)
        return pipeline(replicate, child_seed(cfg.seed, "bootstrap", r, "pipeline"))
    except (AppException, np.linalg.LinAlgError) as e:
        logger.debug(f"Bootstrap replicate {r} failed: {e}")
        return None


def percentile_interval(values: np.ndarray, level: float):
    alpha = 1.0 - level
    lower, upper = np.quantile(values, [alpha / 2, 1 - alpha / 2], method="linear")
    return float(lower), float(upper)


class InferenceService:
    @staticmethod
    def bootstrap_ci(
        pipeline: Pipeline,
        ds: Dataset,
        cfg: BootstrapConfig,
        workers: int = 1,
        point: Optional[Dict[str, float]] = None,
    ) -> IntervalReport:
        """Percentile intervals from re-running the whole pipeline under
        replicate observation weights.

        Replicate r draws from its own substream of ``cfg.seed``, so results
        do not depend on ``workers``.
        """
        if point is None:
            point = pipeline(ds, cfg.seed)
        logger.info(
            f"Bootstrap: {cfg.replicates} {cfg.scheme.value} replicates on n={ds.n} with {workers} worker(s)"
        )
        results: List[Optional[Dict[str, float]]] = Parallel(n_jobs=workers)(
            delayed(_replicate)(pipeline, ds, cfg, r) for r in range(cfg.replicates)
        )

        limit = settings.BOOTSTRAP_FAILURE_LIMIT
        report = IntervalReport(level=cfg.level, replicates=cfg.replicates, scheme=cfg.scheme, seed=cfg.seed)
        for key, estimate in point.items():
            values = np.array([
                res.get(key, np.nan) if res is not None else np.nan for res in results
            ], dtype=float)
            ok = values[np.isfinite(values)]
            failures = cfg.replicates - len(ok)
            reliable = failures <= limit * cfg.replicates
            lower = upper = None
            if len(ok):
                lower, upper = percentile_interval(ok, cfg.level)
            if not reliable:
                logger.warning(f"Bootstrap interval for {key} unreliable: {failures}/{cfg.replicates} replicates failed")
            estimator, _, effect = key.rpartition("|")
            report.rows.append(IntervalRow(
                key=key,
                estimator=estimator,
                effect=effect,
                estimate=None if not np.isfinite(estimate) else float(estimate),
                lower=lower,
                upper=upper,
                failures=failures,
                reliable=reliable,
            ))
        return report
