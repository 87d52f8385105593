from ._teachgen import *  # noqa: F401,F403
from ._teachgen import TeachgenError, DEFAULT_SYSTEM_PROMPT  # noqa: F401
