from pathlib import Path
from dotenv import load_dotenv
from pydantic_settings import BaseSettings

load_dotenv()  # load .env

class _Settings(BaseSettings):
    # Grid defaults
    n: int = 2                    # spatial dimension
    dt: float = 0.05
    dx: float = 0.1
    t_max: float = 1.0
    l1: float = 1.0               # depth of the slab in -x1
    la: float = 1.0               # half-width in each x^A
    cfl_bound: float = 0.5

    # Background
    alpha_max: float = 2.0
    eps_max: float = 0.1          # largest admissible localization epsilon
    eps_k_max: int = 1            # derivative order used for the solve pre-check

    # Tolerances
    corner_tol: float = 1e-8      # tau_c
    complex_step: float = 1e-30
    first_order_factor: float = 10.0   # first-order corner checks use factor*dx**2

    # Iteration
    m_max: int = 6
    iter_tol: float = 1e-10
    stall_ratio: float = 0.9
    stall_count: int = 3

    # Cylinder family
    r_min: float = 1e-6
    r_bound: float = 1e3
    h_ode: float = 1e-3

    # Runtime
    max_concurrency: int = 4      # parallel patch solves
    output_dir: Path = Path("runs")
    log_level: str = "INFO"

    class Config:
        env_file = ".env"
        case_sensitive = False

settings = _Settings()           # singleton
