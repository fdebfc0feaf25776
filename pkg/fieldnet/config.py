import os
import pathlib

import dotenv

dotenv.load_dotenv()


def _optional_int(name: str) -> int | None:
    value = os.environ.get(name)
    return int(value) if value else None


class Config:
    # Default relative tolerance for circuit-vs-FIT trace comparisons
    FIELDNET_TOL = float(os.environ.get("FIELDNET_TOL", "0.01"))

    # Resonance detection
    FIELDNET_PEAK_THRESHOLD = float(os.environ.get("FIELDNET_PEAK_THRESHOLD", "5.0"))

    # FIT runs on the circuit time axis with every interval split into this many steps
    FIELDNET_TIME_REFINEMENT = int(os.environ.get("FIELDNET_TIME_REFINEMENT", "3"))

    # Thread pool for frequency sweeps; unset means cli.default_workers()
    FIELDNET_WORKERS = _optional_int("FIELDNET_WORKERS")

    # Behavioural source iteration
    FIELDNET_NEWTON_MAXITER = int(os.environ.get("FIELDNET_NEWTON_MAXITER", "50"))
    FIELDNET_NEWTON_TOL = float(os.environ.get("FIELDNET_NEWTON_TOL", "1e-10"))

    # Gauging material value for tree-cotree decomposition
    FIELDNET_SIGMA_GAUGE = float(os.environ.get("FIELDNET_SIGMA_GAUGE", "1.0"))

    FIELDNET_FIXTURES = pathlib.Path(
        os.environ.get("FIELDNET_FIXTURES", pathlib.Path(__file__).parent / "fixtures")
    )
