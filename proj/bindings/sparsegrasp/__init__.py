from ._sparsegrasp import *  # noqa: F401,F403
