from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # App
    APP_NAME: str = "Mediation Menu"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Run defaults (overridable per run config / CLI flags)
    DEFAULT_SEED: int = 20240101
    DEFAULT_WORKERS: int = 1

    # Bootstrap
    BOOTSTRAP_REPLICATES: int = 1000
    BOOTSTRAP_LEVEL: float = 0.95
    BOOTSTRAP_FAILURE_LIMIT: float = 0.2  # share of failed replicates that marks an interval unreliable

    # Mediator simulation
    MSIM_REPLICATES: int = 100

    # IRLS / GLM
    IRLS_MAX_ITER: int = 100
    IRLS_COEF_TOL: float = 1e-8
    IRLS_DEVIANCE_TOL: float = 1e-10
    SEPARATION_THRESHOLD: float = 30.0  # max-abs logit coefficient
    MEAN_RECOVERY_TOL: float = 1e-6

    # Probabilities
    PROBABILITY_CLIP: float = 1e-12
    POSITIVITY_WARN: float = 1e-12

    # Truth oracle
    TRUTH_DRAWS: int = 200_000
    TRUTH_MIN_DRAWS: int = 100_000

    # Reports
    CSV_FLOAT_FORMAT: str = "%.12g"

    class Config:
        env_file = ".env"
        case_sensitive = True


settings = Settings()
