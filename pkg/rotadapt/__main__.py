"""Allow `python -m rotadapt`."""

import sys

from .cli import main

sys.exit(main())
