import logging

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    app_env: str = "dev"
    log_level: str = "INFO"
    output_root: str = "./data/results"

    # Monte Carlo engine. chunk_size fixes the random-stream layout, so it is part of
    # the reproducibility contract; workers only changes wall-clock time.
    workers: int = 4
    chunk_size: int = 65536
    default_trials: int = 1_000_000
    max_sync_trials: int = 200_000

    # Numerical evaluators
    imhof_tolerance: float = 1e-9
    laguerre_max_terms: int = 500
    laguerre_tolerance: float = 1e-9
    # term budget of the tuned fallbacks for widely spread weights
    laguerre_term_cap: int = 1_000_000
    analytic_points: int = 32  # per-axis attacker quadrature for semi-analytic MDR

    job_timeout_sec: int = 3600

    telegram_bot_token: str = ""
    telegram_chat_id: str = ""


settings = Settings()


def configure_logging() -> None:
    root = logging.getLogger()
    if any(getattr(h, "_pla_handler", False) for h in root.handlers):
        return
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    handler._pla_handler = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel(settings.log_level.upper())
