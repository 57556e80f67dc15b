from ._bolt import *  # noqa: F401,F403
